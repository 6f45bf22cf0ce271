"""Higher-order quantum reservoir computing toolkit.

Classical simulation of ensembles of small quantum reservoirs with linear
feedback, ridge readouts and an echo-state-network baseline, for
autoregressive forecasting of modal-compressed gridded time series.
"""

from .data import GriddedSeries, LandMask, RegionSpec, SplitSpec, synth_series
from .esn import EsnConfig, EsnState, esn_forecast, esn_init, esn_step, esn_train
from .experiment import (
    CompressedDataset,
    ExperimentConfig,
    ForecastResult,
    TrainedModel,
    ensemble_forecast,
    prepare_dataset,
    run_forecast,
    run_train,
    sweep,
)
from .metrics import MetricReport, ensemble_average, reconstruction_floor, rmnse, rmse
from .pod import ModalSeries, PODBasis, fit_pod, project, reconstruct, scale, unscale
from .quantum import (
    IsingParams,
    UnitaryPropagator,
    build_hamiltonian,
    embed_pauli,
    evolve,
    inject_input,
    maximally_mixed,
    measure,
    partial_trace_first,
    propagator,
    sigma_z_observables,
    validate_density_matrix,
)
from .readout import (
    ReadoutWeights,
    TrainingMatrix,
    clip_unit,
    predict,
    replicate_weights,
    ridge_fit,
)
from .reservoir import HigherOrderReservoir, QuantumReservoir

__version__ = "0.1.0"

"""Quantum reservoirs with temporal multiplexing and the coupled ensemble.

A single reservoir injects one scalar per time step, evolves through ``V``
substeps of length ``tau / V`` and reads all qubit ``sigma_z`` expectations
after each substep, yielding ``V * N`` signals per step ordered
qubit-major: signal index ``i = (j - 1) V + v`` holds observable ``j`` at
substep ``v`` (both counted from 1).

The higher-order ensemble runs ``n_reservoirs`` such systems side by side.
Each receives a convex mix of an external input component (chosen by a fixed
block tiling) and a random, row-stochastic linear feedback of the whole
ensemble state.  The concatenated signals, affinely mapped from ``[-1, 1]``
to ``[0, 1]``, form the feature vector ``z`` consumed by the readout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantum import (
    IsingParams,
    UnitaryPropagator,
    build_hamiltonian,
    evolve,
    inject_input,
    maximally_mixed,
    measure,
    propagator,
    sigma_z_observables,
    trace_renormalize,
)
from .readout import ReadoutWeights, clip_unit

_DT_TOL = 1e-12


@dataclass
class QuantumReservoir:
    """One multiplexed reservoir: Hamiltonian parameters, substep propagator
    and the current density matrix."""

    params: IsingParams
    tau: float
    v_nodes: int
    propagator: UnitaryPropagator
    observables: np.ndarray
    state: np.ndarray

    def __post_init__(self):
        if self.v_nodes < 1:
            raise ValueError("v_nodes must be at least 1")
        if abs(self.propagator.dt * self.v_nodes - self.tau) > _DT_TOL:
            raise ValueError(
                f"propagator dt {self.propagator.dt} times V {self.v_nodes} "
                f"does not reproduce tau {self.tau}")

    @classmethod
    def create(cls, params: IsingParams, tau: float, v_nodes: int,
               prop: UnitaryPropagator | None = None) -> "QuantumReservoir":
        """Build a reservoir in the maximally mixed state.

        ``prop`` lets callers share one precomputed substep propagator across
        reservoirs with identical Hamiltonians.
        """
        if prop is None:
            prop = propagator(build_hamiltonian(params), tau / v_nodes)
        return cls(params=params, tau=float(tau), v_nodes=int(v_nodes),
                   propagator=prop,
                   observables=sigma_z_observables(params.n_qubits),
                   state=maximally_mixed(params.n_qubits))

    @property
    def n_qubits(self) -> int:
        return self.params.n_qubits

    @property
    def n_signals(self) -> int:
        return self.n_qubits * self.v_nodes

    def reset(self) -> None:
        self.state = maximally_mixed(self.n_qubits)

    def substep_evolve(self, u: float) -> np.ndarray:
        """Inject ``u``, evolve through the V substeps, read after each one.

        Updates the stored state to the end of the interval (with its trace
        renormalized against round-off drift) and returns the ``V * N`` raw
        signals in qubit-major order.
        """
        rho = inject_input(self.state, u)
        signals = np.empty((self.v_nodes, self.n_qubits))
        for v in range(self.v_nodes):
            rho = evolve(rho, self.propagator)
            signals[v] = measure(rho, self.observables)
        self.state = trace_renormalize(rho)
        return signals.T.reshape(-1)


@dataclass
class HigherOrderReservoir:
    """Ensemble of quantum reservoirs coupled by fixed linear feedback.

    ``w_con`` (``(n_reservoirs, n_total)``) is row-stochastic so that the
    feedback term is a convex average of ``z`` and stays inside ``[0, 1]``.
    ``tiling[l]`` is the external input component reservoir ``l`` listens
    to.  ``z`` holds the scaled ensemble readout; a fresh ensemble starts at
    the scaled zero-signal vector, i.e. 0.5 everywhere, which is also what
    the maximally mixed initial states would measure.
    """

    reservoirs: list[QuantumReservoir]
    w_con: np.ndarray
    alpha: float
    n_in: int
    tiling: np.ndarray
    z: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n_total = sum(r.n_signals for r in self.reservoirs)
        if self.w_con.shape != (len(self.reservoirs), n_total):
            raise ValueError(
                f"w_con shape {self.w_con.shape} does not match "
                f"({len(self.reservoirs)}, {n_total})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("connection strength alpha must lie in [0, 1]")
        if np.any(self.w_con < 0.0) or np.max(np.abs(self.w_con.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("w_con rows must be non-negative and sum to 1")
        if len(self.reservoirs) % self.n_in != 0:
            raise ValueError(
                f"n_in {self.n_in} must divide the number of reservoirs "
                f"{len(self.reservoirs)}")
        if self.z is None:
            self.z = np.full(n_total, 0.5)

    @property
    def n_qrc(self) -> int:
        return len(self.reservoirs)

    @property
    def n_total(self) -> int:
        return self.z.shape[0]

    @classmethod
    def build(cls, *, n_qubits: int, n_reservoirs: int, n_in: int,
              coupling_j: float, tau: float, v_nodes: int, alpha: float,
              seed: int, shared_hamiltonian: bool = True) -> "HigherOrderReservoir":
        """Draw a complete ensemble from one master seed.

        Stream definition: a PCG64 generator seeded with ``seed`` draws
        ``n_reservoirs + 1`` integer sub-seeds; the first seeds the feedback
        matrix, the rest seed the per-reservoir Hamiltonian draws.  With
        ``shared_hamiltonian`` (the default) every reservoir uses the first
        Hamiltonian sub-seed, so all systems share one propagator.
        """
        if n_reservoirs % n_in != 0:
            raise ValueError(f"n_in {n_in} must divide n_reservoirs {n_reservoirs}")
        master = np.random.default_rng(seed)
        subseeds = master.integers(0, 2 ** 63, size=n_reservoirs + 1)

        n_total = n_reservoirs * n_qubits * v_nodes
        raw = np.random.default_rng(int(subseeds[0])).random((n_reservoirs, n_total))
        w_con = raw / raw.sum(axis=1, keepdims=True)

        reservoirs = []
        shared = None
        for l in range(n_reservoirs):
            ham_seed = int(subseeds[1]) if shared_hamiltonian else int(subseeds[1 + l])
            if shared_hamiltonian and shared is not None:
                params, prop = shared
            else:
                params = IsingParams.random(n_qubits, coupling_j, ham_seed)
                prop = propagator(build_hamiltonian(params), tau / v_nodes)
                if shared_hamiltonian:
                    shared = (params, prop)
            reservoirs.append(QuantumReservoir.create(params, tau, v_nodes, prop))

        tiling = np.array([(l * n_in) // n_reservoirs for l in range(n_reservoirs)])
        return cls(reservoirs=reservoirs, w_con=w_con, alpha=float(alpha),
                   n_in=int(n_in), tiling=tiling)

    def reset(self) -> None:
        """Return to the fresh state: mixed reservoirs, z at 0.5."""
        for res in self.reservoirs:
            res.reset()
        self.z = np.full(self.n_total, 0.5)

    def mix_input_open(self, u_k: np.ndarray) -> np.ndarray:
        """Teacher-forced mixed input ``(1 - a) W_in u + a W_con z``.

        ``u_k`` is tiled onto the reservoirs; the result is clipped to
        ``[0, 1]`` so it is always a valid injection amplitude (external
        inputs slightly outside the unit range, e.g. scaled test
        coefficients, are tolerated and clipped here).
        """
        u_k = np.asarray(u_k, dtype=float)
        if u_k.shape != (self.n_in,):
            raise ValueError(f"input shape {u_k.shape} does not match n_in {self.n_in}")
        mixed = (1.0 - self.alpha) * u_k[self.tiling] + self.alpha * (self.w_con @ self.z)
        return clip_unit(mixed)

    def mix_input_closed(self, weights: ReadoutWeights,
                         offset: np.ndarray | None = None) -> np.ndarray:
        """Autoregressive mixed input ``(1 - a) W'_out [1; z] + a W_con z``.

        Requires replicated readout weights (the bias row participates).
        ``offset`` optionally perturbs the raw readout per input component
        before mixing; it is the hook used by the sensitivity study.
        """
        if weights.replicated is None:
            raise RuntimeError("closed-loop mixing needs replicated readout weights; "
                               "call replicate_weights after training")
        if weights.replicated.shape[0] != self.n_total + 1:
            raise ValueError(
                f"replicated weights expect state of length "
                f"{weights.replicated.shape[0] - 1}, ensemble has {self.n_total}")
        fed_back = weights.replicated[0] + self.z @ weights.replicated[1:]
        if offset is not None:
            fed_back = fed_back + np.asarray(offset, dtype=float)[self.tiling]
        mixed = (1.0 - self.alpha) * fed_back + self.alpha * (self.w_con @ self.z)
        return clip_unit(mixed)

    def step(self, u_mixed: np.ndarray) -> np.ndarray:
        """Advance every reservoir one interval and refresh ``z``.

        The reservoirs are independent given ``u_mixed`` (safe to evaluate
        concurrently); signals are concatenated reservoir-major and scaled
        via ``z -> (z + 1) / 2``, clipped against round-off so ``z`` stays in
        ``[0, 1]`` exactly.
        """
        u_mixed = np.asarray(u_mixed, dtype=float)
        if u_mixed.shape != (self.n_qrc,):
            raise ValueError(f"mixed input shape {u_mixed.shape} does not match "
                             f"n_reservoirs {self.n_qrc}")
        raw = np.concatenate([res.substep_evolve(u_mixed[l])
                              for l, res in enumerate(self.reservoirs)])
        self.z = np.clip(0.5 * (raw + 1.0), 0.0, 1.0)
        return self.z.copy()

    def washout(self, inputs: np.ndarray, dl: int) -> None:
        """Run ``dl`` teacher-forced steps and discard the signals."""
        inputs = np.asarray(inputs, dtype=float)
        if dl > len(inputs):
            raise ValueError(f"washout length {dl} exceeds available inputs {len(inputs)}")
        for k in range(dl):
            self.step(self.mix_input_open(inputs[k]))

    def run_open_loop(self, inputs: np.ndarray) -> np.ndarray:
        """Teacher-forced run; returns one ``z`` row per consumed input."""
        inputs = np.asarray(inputs, dtype=float)
        states = np.empty((len(inputs), self.n_total))
        for k in range(len(inputs)):
            states[k] = self.step(self.mix_input_open(inputs[k]))
        return states

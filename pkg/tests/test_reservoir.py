"""Reservoir stepping tests: degenerate cases, manual composition oracles,
ensemble decomposition and washout contraction."""

import numpy as np
import pytest

from hqrc.quantum import (
    IsingParams,
    build_hamiltonian,
    evolve,
    inject_input,
    maximally_mixed,
    measure,
    propagator,
    sigma_z_observables,
)
from hqrc.readout import ReadoutWeights, replicate_weights
from hqrc.reservoir import HigherOrderReservoir, QuantumReservoir


def make_reservoir(n_qubits=2, tau=1.2, v_nodes=3, seed=4, coupling_j=1.0):
    params = IsingParams.random(n_qubits, coupling_j, seed=seed)
    return QuantumReservoir.create(params, tau, v_nodes)


def make_ensemble(**kwargs):
    defaults = dict(n_qubits=2, n_reservoirs=2, n_in=1, coupling_j=1.0,
                    tau=1.0, v_nodes=2, alpha=0.5, seed=7)
    defaults.update(kwargs)
    return HigherOrderReservoir.build(**defaults)


# ---------------------------------------------------------------------------
# substep_evolve
# ---------------------------------------------------------------------------


def test_v1_reduces_to_single_step():
    res = make_reservoir(v_nodes=1, tau=0.8)
    initial = res.state.copy()
    signals = res.substep_evolve(0.3)
    rho = evolve(inject_input(initial, 0.3), propagator(build_hamiltonian(res.params), 0.8))
    expected = measure(rho, sigma_z_observables(2))
    assert np.max(np.abs(signals - expected)) <= 1e-12


def test_zero_hamiltonian_repeats_post_injection_signals():
    params = IsingParams(2, 0.0, np.zeros((2, 2)), np.zeros(2))
    res = QuantumReservoir.create(params, tau=2.0, v_nodes=2)
    signals = res.substep_evolve(0.2)
    after_injection = measure(inject_input(maximally_mixed(2), 0.2),
                              sigma_z_observables(2))
    # Ordering is qubit-major: (q1 v1, q1 v2, q2 v1, q2 v2).
    expected = np.repeat(after_injection, 2)
    assert np.max(np.abs(signals - expected)) <= 1e-12


def test_substeps_match_manual_composition():
    res = make_reservoir(n_qubits=2, tau=1.5, v_nodes=3, seed=11)
    u_prop = res.propagator
    obs = res.observables
    rho = inject_input(res.state.copy(), 0.6)
    expected = np.empty((3, 2))
    for v in range(3):
        rho = evolve(rho, u_prop)
        expected[v] = measure(rho, obs)
    signals = res.substep_evolve(0.6)
    # x_{ki} ordering: i = (j - 1) V + v.
    for j in range(2):
        for v in range(3):
            assert signals[j * 3 + v] == pytest.approx(expected[v, j], abs=1e-13)


def test_signals_within_physical_range():
    res = make_reservoir(seed=2)
    for u in np.linspace(0, 1, 7):
        signals = res.substep_evolve(u)
        assert np.all(signals >= -1.0 - 1e-12) and np.all(signals <= 1.0 + 1e-12)


def test_state_stays_valid_over_many_steps(rng):
    res = make_reservoir(n_qubits=3, tau=4.0, v_nodes=2, seed=3, coupling_j=2.0)
    for u in rng.uniform(0, 1, 200):
        res.substep_evolve(u)
        assert abs(np.trace(res.state).real - 1.0) <= 1e-12


def test_propagator_dt_consistency_enforced():
    params = IsingParams.random(2, 1.0, seed=1)
    prop = propagator(build_hamiltonian(params), 0.25)
    with pytest.raises(ValueError):
        QuantumReservoir(params=params, tau=1.0, v_nodes=2, propagator=prop,
                         observables=sigma_z_observables(2),
                         state=maximally_mixed(2))


# ---------------------------------------------------------------------------
# ensemble construction
# ---------------------------------------------------------------------------


def test_build_shapes_and_invariants():
    hqr = make_ensemble(n_reservoirs=4, n_in=2, v_nodes=3)
    assert hqr.n_total == 4 * 2 * 3
    assert hqr.w_con.shape == (4, hqr.n_total)
    assert np.all(hqr.w_con >= 0)
    assert np.max(np.abs(hqr.w_con.sum(axis=1) - 1.0)) <= 1e-12
    assert np.array_equal(hqr.tiling, [0, 0, 1, 1])
    assert np.all(hqr.z == 0.5)


def test_build_rejects_bad_tiling():
    with pytest.raises(ValueError):
        make_ensemble(n_reservoirs=3, n_in=2)


def test_shared_hamiltonian_flag():
    shared = make_ensemble(n_reservoirs=3, n_in=1, seed=5)
    assert all(np.array_equal(r.params.couplings_h,
                              shared.reservoirs[0].params.couplings_h)
               for r in shared.reservoirs)
    independent = make_ensemble(n_reservoirs=3, n_in=1, seed=5,
                                shared_hamiltonian=False)
    h0 = independent.reservoirs[0].params.couplings_h
    h1 = independent.reservoirs[1].params.couplings_h
    assert not np.array_equal(h0, h1)


def test_build_deterministic():
    a = make_ensemble(seed=9)
    b = make_ensemble(seed=9)
    assert np.array_equal(a.w_con, b.w_con)
    assert np.array_equal(a.reservoirs[0].params.fields_g,
                          b.reservoirs[0].params.fields_g)


# ---------------------------------------------------------------------------
# input mixing
# ---------------------------------------------------------------------------


def test_mix_open_alpha_zero_is_pure_tiling():
    hqr = make_ensemble(n_reservoirs=4, n_in=2, alpha=0.0)
    mixed = hqr.mix_input_open(np.array([0.25, 0.75]))
    assert np.array_equal(mixed, [0.25, 0.25, 0.75, 0.75])


def test_mix_open_alpha_one_is_feedback_only(rng):
    hqr = make_ensemble(alpha=1.0)
    hqr.z = rng.uniform(0, 1, hqr.n_total)
    mixed = hqr.mix_input_open(np.array([0.9]))
    assert np.max(np.abs(mixed - hqr.w_con @ hqr.z)) <= 1e-15
    assert np.all(mixed >= 0) and np.all(mixed <= 1)


def test_mix_open_hand_case():
    hqr = make_ensemble(n_reservoirs=2, n_in=1, alpha=0.5)
    hqr.z = np.linspace(0.1, 0.8, hqr.n_total)
    u = np.array([0.4])
    expected = 0.5 * 0.4 + 0.5 * (hqr.w_con @ hqr.z)
    assert np.max(np.abs(hqr.mix_input_open(u) - expected)) <= 1e-15


def test_mix_open_clips_out_of_range_external():
    hqr = make_ensemble(alpha=0.0)
    assert np.array_equal(hqr.mix_input_open(np.array([1.4])), [1.0, 1.0])


def test_mix_open_dimension_mismatch():
    hqr = make_ensemble()
    with pytest.raises(ValueError):
        hqr.mix_input_open(np.array([0.1, 0.2]))


def test_mix_closed_alpha_one_ignores_readout(rng):
    hqr = make_ensemble(alpha=1.0)
    weights = ReadoutWeights(w=rng.standard_normal((hqr.n_total + 1, 1)), beta=0.0)
    weights = replicate_weights(weights, hqr.tiling)
    assert np.max(np.abs(hqr.mix_input_closed(weights) - hqr.w_con @ hqr.z)) <= 1e-15


def test_mix_closed_zero_weights_alpha_zero():
    hqr = make_ensemble(alpha=0.0)
    weights = ReadoutWeights(w=np.zeros((hqr.n_total + 1, 1)), beta=0.0)
    weights = replicate_weights(weights, hqr.tiling)
    assert np.array_equal(hqr.mix_input_closed(weights), np.zeros(2))


def test_mix_closed_matches_explicit_arithmetic(rng):
    hqr = make_ensemble(n_reservoirs=2, n_in=1, n_qubits=1, v_nodes=2, alpha=0.3)
    assert hqr.n_total == 4
    hqr.z = rng.uniform(0, 1, 4)
    weights = ReadoutWeights(w=rng.standard_normal((5, 1)), beta=0.0)
    weights = replicate_weights(weights, hqr.tiling)
    feat = np.concatenate(([1.0], hqr.z))
    expected = np.clip(0.7 * (weights.replicated.T @ feat) + 0.3 * (hqr.w_con @ hqr.z),
                       0.0, 1.0)
    assert np.max(np.abs(hqr.mix_input_closed(weights) - expected)) <= 1e-15


def test_mix_closed_requires_replicated(rng):
    hqr = make_ensemble()
    weights = ReadoutWeights(w=rng.standard_normal((hqr.n_total + 1, 1)), beta=0.0)
    with pytest.raises(RuntimeError):
        hqr.mix_input_closed(weights)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def test_step_zero_hamiltonian_scaled_measurements():
    params = IsingParams(1, 0.0, np.zeros((1, 1)), np.zeros(1))
    prop = propagator(build_hamiltonian(params), 0.5)
    reservoirs = [QuantumReservoir.create(params, 1.0, 2, prop) for _ in range(2)]
    w_con = np.full((2, 4), 0.25)
    hqr = HigherOrderReservoir(reservoirs=reservoirs, w_con=w_con, alpha=0.0,
                               n_in=1, tiling=np.zeros(2, dtype=int))
    z = hqr.step(np.array([0.2, 0.8]))
    # sigma_z expectation after injecting u is 1 - 2u; scaling gives 1 - u.
    assert np.allclose(z, [0.8, 0.8, 0.2, 0.2], atol=1e-12)


def test_single_reservoir_reduces_to_plain_qrc(rng):
    hqr = make_ensemble(n_reservoirs=1, n_in=1, alpha=0.0, seed=13)
    solo = QuantumReservoir.create(hqr.reservoirs[0].params, 1.0, 2)
    drive = rng.uniform(0, 1, 20)
    for u in drive:
        z = hqr.step(hqr.mix_input_open(np.array([u])))
        raw = solo.substep_evolve(u)
        assert np.max(np.abs(z - 0.5 * (raw + 1.0))) <= 1e-12


def test_ensemble_decomposition_alpha_zero(rng):
    hqr = make_ensemble(n_reservoirs=2, n_in=2, alpha=0.0, seed=21,
                        shared_hamiltonian=False)
    solos = [QuantumReservoir.create(r.params, r.tau, r.v_nodes)
             for r in hqr.reservoirs]
    drive = rng.uniform(0, 1, size=(15, 2))
    for u in drive:
        z = hqr.step(hqr.mix_input_open(u))
        parts = [solo.substep_evolve(u[hqr.tiling[l]]) for l, solo in enumerate(solos)]
        expected = 0.5 * (np.concatenate(parts) + 1.0)
        assert np.max(np.abs(z - expected)) <= 1e-12


def test_z_stays_in_unit_interval(rng):
    hqr = make_ensemble(n_qubits=3, v_nodes=3, alpha=0.7, seed=17)
    for u in rng.uniform(0, 1, 50):
        z = hqr.step(hqr.mix_input_open(np.array([u])))
        assert np.all(z >= 0.0) and np.all(z <= 1.0)


def test_trajectory_bit_identical_per_seed(rng):
    drive = rng.uniform(0, 1, size=(30, 1))

    def run():
        hqr = make_ensemble(seed=23)
        return np.array([hqr.step(hqr.mix_input_open(u)) for u in drive])

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------------------
# washout
# ---------------------------------------------------------------------------


def test_washout_zero_is_noop():
    hqr = make_ensemble()
    z0 = hqr.z.copy()
    states0 = [r.state.copy() for r in hqr.reservoirs]
    hqr.washout(np.empty((0, 1)), 0)
    assert np.array_equal(hqr.z, z0)
    for saved, res in zip(states0, hqr.reservoirs):
        assert np.array_equal(saved, res.state)


def test_washout_consumes_requested_steps(rng):
    drive = rng.uniform(0, 1, size=(40, 1))
    a = make_ensemble(seed=3)
    a.washout(drive, 40)
    b = make_ensemble(seed=3)
    for u in drive:
        b.step(b.mix_input_open(u))
    assert np.array_equal(a.z, b.z)


def test_washout_insufficient_inputs():
    hqr = make_ensemble()
    with pytest.raises(ValueError):
        hqr.washout(np.zeros((5, 1)), 10)


def test_washout_contracts_initial_condition_difference(rng):
    drive = rng.uniform(0, 1, size=(40, 1))
    a = make_ensemble(seed=31, n_qubits=2, v_nodes=2, alpha=0.3)
    b = make_ensemble(seed=31, n_qubits=2, v_nodes=2, alpha=0.3)
    for res in b.reservoirs:  # start b from a pure state instead
        pure = np.zeros_like(res.state)
        pure[0, 0] = 1.0
        res.state = pure

    za = a.step(a.mix_input_open(drive[0]))
    zb = b.step(b.mix_input_open(drive[0]))
    initial_gap = np.linalg.norm(za - zb)
    for u in drive[1:]:
        za = a.step(a.mix_input_open(u))
        zb = b.step(b.mix_input_open(u))
    final_gap = np.linalg.norm(za - zb)
    assert final_gap < initial_gap

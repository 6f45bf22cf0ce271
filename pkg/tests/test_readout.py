"""Ridge readout tests, including the independent normal-equations oracle
(pivoted LU, a different route than the library's Cholesky solve)."""

import numpy as np
import pytest
import scipy.linalg

from hqrc.readout import (
    ReadoutWeights,
    TrainingMatrix,
    clip_unit,
    linear_output,
    load_weights,
    predict,
    replicate_weights,
    ridge_fit,
    save_weights,
)


def normal_equations_oracle(x, y, beta):
    gram = x.T @ x + beta * np.eye(x.shape[1])
    return scipy.linalg.solve(gram, x.T @ y)


def make_matrix(rng, k, features, n_out=1):
    states = rng.standard_normal((k, features))
    targets = rng.standard_normal((k, n_out))
    return TrainingMatrix.from_states(states, targets)


# ---------------------------------------------------------------------------
# TrainingMatrix
# ---------------------------------------------------------------------------


def test_training_matrix_prepends_bias(rng):
    tm = make_matrix(rng, 5, 3)
    assert tm.entries.shape == (5, 4)
    assert np.all(tm.entries[:, 0] == 1.0)


def test_training_matrix_rejects_bad_bias():
    with pytest.raises(ValueError):
        TrainingMatrix(entries=np.zeros((3, 2)), targets=np.zeros((3, 1)))


def test_training_matrix_rejects_row_mismatch(rng):
    with pytest.raises(ValueError):
        TrainingMatrix.from_states(rng.standard_normal((4, 2)), np.zeros((3, 1)))


# ---------------------------------------------------------------------------
# ridge_fit
# ---------------------------------------------------------------------------


def test_interpolation_recovers_indicator():
    # Two points, features = identity; with beta=0 and the target equal to
    # one feature column the fit recovers that column's indicator weights.
    states = np.eye(2)
    targets = states[:, [1]]
    weights = ridge_fit(TrainingMatrix.from_states(states, targets), beta=0.0)
    prediction = weights.w[0] + states @ weights.w[1:]
    assert np.max(np.abs(prediction - targets)) <= 1e-12


def test_huge_beta_shrinks_to_zero(rng):
    tm = make_matrix(rng, 30, 4)
    weights = ridge_fit(tm, beta=1e14)
    assert np.max(np.abs(weights.w)) <= 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_matches_normal_equations_oracle(seed):
    rng = np.random.default_rng(seed)
    tm = make_matrix(rng, 50, 7, n_out=2)
    weights = ridge_fit(tm, beta=1e-5)
    expected = normal_equations_oracle(tm.entries, tm.targets, 1e-5)
    scale = np.max(np.abs(expected))
    assert np.max(np.abs(weights.w - expected)) <= 1e-8 * scale


def test_singular_beta_zero_raises():
    # Targets living in a numerically-lost direction of X make the residual
    # contract unattainable without regularization.
    rng = np.random.default_rng(0)
    base = np.hstack([np.ones((6, 1)), rng.standard_normal((6, 2))])
    q, _ = np.linalg.qr(base)
    entries = np.hstack([np.ones((6, 1)), q[:, [1]], q[:, [1]] + 1e-17 * q[:, [2]]])
    targets = q[:, [2]]
    tm = TrainingMatrix(entries=entries, targets=targets)
    with pytest.raises(np.linalg.LinAlgError, match="beta"):
        ridge_fit(tm, beta=0.0)


def test_residual_contract(rng):
    tm = make_matrix(rng, 80, 12, n_out=3)
    beta = 1e-7
    weights = ridge_fit(tm, beta)
    gram = tm.entries.T @ tm.entries + beta * np.eye(tm.entries.shape[1])
    rhs = tm.entries.T @ tm.targets
    residual = np.linalg.norm(gram @ weights.w - rhs)
    assert residual <= 1e-8 * np.linalg.norm(rhs)


def test_negative_beta_rejected(rng):
    with pytest.raises(ValueError):
        ridge_fit(make_matrix(rng, 10, 2), beta=-1.0)


def test_objective_is_minimized(rng):
    tm = make_matrix(rng, 40, 5, n_out=1)
    beta = 1e-3
    weights = ridge_fit(tm, beta)

    def objective(w):
        return (np.sum((tm.entries @ w - tm.targets) ** 2)
                + beta * np.sum(w ** 2))

    base = objective(weights.w)
    for idx in range(weights.w.shape[0]):
        for delta in (1e-3, -1e-3):
            bumped = weights.w.copy()
            bumped[idx, 0] += delta
            assert objective(bumped) >= base


def test_scale_equivariance_power_of_two(rng):
    states = rng.standard_normal((25, 6))
    targets = rng.standard_normal((25, 2))
    w1 = ridge_fit(TrainingMatrix.from_states(states, targets), beta=1e-4).w
    w4 = ridge_fit(TrainingMatrix.from_states(states, 4.0 * targets), beta=1e-4).w
    assert np.array_equal(w4, 4.0 * w1)


def test_scale_equivariance_general(rng):
    states = rng.standard_normal((25, 6))
    targets = rng.standard_normal((25, 2))
    w1 = ridge_fit(TrainingMatrix.from_states(states, targets), beta=1e-4).w
    w3 = ridge_fit(TrainingMatrix.from_states(states, 3.0 * targets), beta=1e-4).w
    assert np.max(np.abs(w3 - 3.0 * w1)) <= 1e-12 * np.max(np.abs(w3))


# ---------------------------------------------------------------------------
# predict / clip_unit
# ---------------------------------------------------------------------------


def test_predict_zero_weights_returns_clipped_bias():
    w = np.zeros((4, 2))
    w[0] = [0.4, 1.7]
    weights = ReadoutWeights(w=w, beta=0.0)
    assert np.allclose(predict(weights, np.zeros(3)), [0.4, 1.0], atol=0)


def test_predict_hand_dot_product():
    w = np.array([[0.5], [1.0], [-2.0], [0.25]])
    weights = ReadoutWeights(w=w, beta=0.0)
    z = np.array([0.2, 0.1, 0.4])
    expected = 0.5 + 1.0 * 0.2 - 2.0 * 0.1 + 0.25 * 0.4
    assert abs(linear_output(weights, z)[0] - expected) <= 1e-15
    assert abs(predict(weights, z)[0] - expected) <= 1e-15


def test_predict_output_in_unit_interval(rng):
    weights = ReadoutWeights(w=rng.standard_normal((6, 3)) * 5, beta=0.0)
    out = predict(weights, rng.standard_normal(5))
    assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_clip_unit_piecewise():
    assert np.array_equal(clip_unit(np.array([-0.2, 0.5, 1.3])), [0.0, 0.5, 1.0])


def test_clip_unit_identity_in_range(rng):
    x = rng.uniform(0, 1, size=10)
    assert np.array_equal(clip_unit(x), x)


def test_clip_unit_idempotent(rng):
    x = rng.standard_normal(50) * 3
    once = clip_unit(x)
    assert np.array_equal(clip_unit(once), once)
    assert np.all(once >= 0.0) and np.all(once <= 1.0)


def test_clip_unit_rejects_nan():
    with pytest.raises(ValueError):
        clip_unit(np.array([0.5, np.nan]))


# ---------------------------------------------------------------------------
# replicate_weights
# ---------------------------------------------------------------------------


def test_replicate_identity_tiling(rng):
    weights = ReadoutWeights(w=rng.standard_normal((5, 3)), beta=1.0)
    rep = replicate_weights(weights, np.arange(3))
    assert np.array_equal(rep.replicated, weights.w)


def test_replicate_single_input_three_reservoirs(rng):
    weights = ReadoutWeights(w=rng.standard_normal((5, 1)), beta=1.0)
    rep = replicate_weights(weights, np.zeros(3, dtype=int))
    for col in range(3):
        assert np.array_equal(rep.replicated[:, col], weights.w[:, 0])


def test_replicate_block_tiling(rng):
    weights = ReadoutWeights(w=rng.standard_normal((5, 2)), beta=1.0)
    rep = replicate_weights(weights, np.array([0, 0, 1, 1]))
    assert np.array_equal(rep.replicated,
                          weights.w[:, [0, 0, 1, 1]])


def test_replicate_rejects_bad_tiling(rng):
    weights = ReadoutWeights(w=rng.standard_normal((5, 2)), beta=1.0)
    with pytest.raises(ValueError):
        replicate_weights(weights, np.array([0, 1, 2, 0]))
    with pytest.raises(ValueError):
        replicate_weights(weights, np.array([0, 1, 0]))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_weights_round_trip(tmp_path, rng):
    weights = ReadoutWeights(w=rng.standard_normal((7, 2)), beta=1e-6)
    weights = replicate_weights(weights, np.array([0, 0, 1, 1]))
    path = tmp_path / "weights.bin"
    save_weights(path, weights)
    loaded = load_weights(path)
    assert np.array_equal(loaded.w, weights.w)
    assert np.array_equal(loaded.replicated, weights.replicated)
    assert loaded.beta == weights.beta


def test_weights_round_trip_without_replication(tmp_path, rng):
    weights = ReadoutWeights(w=rng.standard_normal((4, 1)), beta=0.5)
    path = tmp_path / "weights.bin"
    save_weights(path, weights)
    loaded = load_weights(path)
    assert np.array_equal(loaded.w, weights.w)
    assert loaded.replicated is None


def test_weights_truncated_file_rejected(tmp_path, rng):
    path = tmp_path / "weights.bin"
    save_weights(path, ReadoutWeights(w=rng.standard_normal((4, 1)), beta=0.5))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        load_weights(path)

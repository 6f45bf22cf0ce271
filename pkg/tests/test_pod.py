"""Modal decomposition tests: rank recovery, the residual/eigenvalue
identity against a full spatial-covariance eigendecomposition oracle, and
scaler round trips."""

import numpy as np
import pytest

from hqrc.pod import (
    ModalSeries,
    fit_pod,
    load_basis,
    project,
    reconstruct,
    save_basis,
    scale,
    unscale,
)


def low_rank_field(rng, n_points, n_snaps, rank):
    patterns, _ = np.linalg.qr(rng.standard_normal((n_points, rank)))
    courses = rng.standard_normal((n_snaps, rank)) * (3.0 ** -np.arange(rank))
    background = rng.standard_normal(n_points)
    return background[:, None] + patterns @ courses.T


def spatial_covariance_eigenvalues(data):
    """Oracle: full eigendecomposition of the n x n spatial matrix S S^T."""
    centered = data - data.mean(axis=1)[:, None]
    evals = np.linalg.eigvalsh(centered @ centered.T)
    return np.sort(evals)[::-1]


# ---------------------------------------------------------------------------
# fit_pod
# ---------------------------------------------------------------------------


def test_rank_one_field_recovered(rng):
    pattern = rng.standard_normal(12)
    course = rng.standard_normal(30)
    data = np.outer(pattern, course)
    basis, modal = fit_pod(data, 1)
    centered = data - data.mean(axis=1)[:, None]
    residual = centered - basis.modes @ modal.coeffs.T
    assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(centered)
    # The single mode is proportional to the spatial pattern.
    cosine = abs(pattern @ basis.modes[:, 0]) / np.linalg.norm(pattern)
    assert cosine == pytest.approx(1.0, abs=1e-10)


def test_complete_basis_zero_residual(rng):
    data = low_rank_field(rng, 15, 25, rank=4)
    basis, modal = fit_pod(data, 4)
    recon = reconstruct(basis, modal.coeffs)
    assert np.linalg.norm(recon - data) <= 1e-8 * np.linalg.norm(data)


def test_residual_equals_discarded_eigenvalues(rng):
    data = rng.standard_normal((20, 30))
    basis, modal = fit_pod(data, 5)
    centered = data - data.mean(axis=1)[:, None]
    residual_sq = np.linalg.norm(centered - basis.modes @ modal.coeffs.T) ** 2
    discarded = spatial_covariance_eigenvalues(data)[5:].sum()
    assert residual_sq == pytest.approx(discarded, rel=1e-8)


def test_eigenvalues_match_spatial_oracle(rng):
    data = rng.standard_normal((20, 30))
    basis, _ = fit_pod(data, 6)
    oracle = spatial_covariance_eigenvalues(data)[:6]
    assert np.max(np.abs(basis.eigenvalues - oracle)) <= 1e-8 * oracle[0]


def test_modes_orthonormal(rng):
    data = rng.standard_normal((40, 25))
    basis, _ = fit_pod(data, 8)
    gram = basis.modes.T @ basis.modes
    assert np.max(np.abs(gram - np.eye(8))) <= 1e-8


def test_residual_monotone_in_mode_count(rng):
    data = rng.standard_normal((18, 22))
    centered = data - data.mean(axis=1)[:, None]
    residuals = []
    for m in (2, 4, 8, 12):
        basis, modal = fit_pod(data, m)
        residuals.append(np.linalg.norm(centered - basis.modes @ modal.coeffs.T))
    assert all(a >= b - 1e-12 for a, b in zip(residuals, residuals[1:]))


def test_mode_sign_convention(rng):
    data = rng.standard_normal((30, 20))
    basis, _ = fit_pod(data, 5)
    for m in range(5):
        anchor = np.argmax(np.abs(basis.modes[:, m]))
        assert basis.modes[anchor, m] > 0


def test_constant_field_all_zero_eigenvalues():
    data = np.full((10, 8), 3.7)
    basis, modal = fit_pod(data, 3)
    assert np.all(basis.eigenvalues == 0.0)
    assert np.all(modal.coeffs == 0.0)
    # Degenerate scaler maps everything to the midpoint.
    assert np.all(scale(modal, modal.coeffs) == 0.5)


def test_too_many_modes_rejected(rng):
    with pytest.raises(ValueError):
        fit_pod(rng.standard_normal((5, 9)), 6)


# ---------------------------------------------------------------------------
# project / reconstruct
# ---------------------------------------------------------------------------


def test_project_mean_is_zero(rng):
    data = rng.standard_normal((12, 16))
    basis, _ = fit_pod(data, 3)
    assert np.max(np.abs(project(basis, basis.mean))) <= 1e-10


def test_project_recovers_mode_coefficient(rng):
    data = rng.standard_normal((12, 16))
    basis, _ = fit_pod(data, 4)
    snapshot = basis.mean + 3.0 * basis.modes[:, 0]
    coeffs = project(basis, snapshot)
    assert coeffs == pytest.approx([3.0, 0.0, 0.0, 0.0], abs=1e-10)


def test_project_reconstruct_idempotent(rng):
    data = rng.standard_normal((12, 16))
    basis, _ = fit_pod(data, 4)
    snapshot = rng.standard_normal(12)
    once = project(basis, snapshot)
    twice = project(basis, reconstruct(basis, once))
    assert np.max(np.abs(once - twice)) <= 1e-10


def test_reconstruct_zero_coeffs_gives_mean(rng):
    basis, _ = fit_pod(rng.standard_normal((9, 11)), 2)
    assert np.array_equal(reconstruct(basis, np.zeros(2)), basis.mean)


def test_reconstruct_matches_loop_oracle(rng):
    basis, _ = fit_pod(rng.standard_normal((9, 11)), 3)
    coeffs = rng.standard_normal(3)
    expected = basis.mean.copy()
    for j in range(3):
        expected += coeffs[j] * basis.modes[:, j]
    assert np.max(np.abs(reconstruct(basis, coeffs) - expected)) <= 1e-12


def test_matrix_shapes_round_trip(rng):
    data = rng.standard_normal((10, 14))
    basis, _ = fit_pod(data, 3)
    coeffs = project(basis, data)
    assert coeffs.shape == (14, 3)
    recon = reconstruct(basis, coeffs)
    assert recon.shape == (10, 14)


def test_dimension_mismatches(rng):
    basis, _ = fit_pod(rng.standard_normal((10, 14)), 3)
    with pytest.raises(ValueError):
        project(basis, rng.standard_normal(9))
    with pytest.raises(ValueError):
        reconstruct(basis, rng.standard_normal(4))


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


def test_scale_extremes_map_to_unit_interval(rng):
    _, modal = fit_pod(rng.standard_normal((10, 20)), 3)
    scaled = scale(modal, modal.coeffs)
    assert np.all(scaled >= 0.0) and np.all(scaled <= 1.0)
    assert np.max(np.abs(scaled.min(axis=0))) <= 1e-15
    assert np.max(np.abs(scaled.max(axis=0) - 1.0)) <= 1e-15


def test_scale_round_trip(rng):
    _, modal = fit_pod(rng.standard_normal((10, 20)), 3)
    coeffs = rng.standard_normal((7, 3))
    assert np.max(np.abs(unscale(modal, scale(modal, coeffs)) - coeffs)) <= 1e-12


def test_out_of_range_passes_through_unclipped(rng):
    _, modal = fit_pod(rng.standard_normal((10, 20)), 2)
    beyond = modal.scaler_max + 1.0
    scaled = scale(modal, beyond)
    assert np.all(scaled > 1.0)


def test_unfitted_scaler_raises(rng):
    series = ModalSeries(coeffs=rng.standard_normal((5, 2)))
    with pytest.raises(RuntimeError):
        scale(series, series.coeffs)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_basis_round_trip(tmp_path, rng):
    basis, modal = fit_pod(rng.standard_normal((11, 13)), 4)
    path = tmp_path / "basis.podb"
    save_basis(path, basis, modal.scaler_min, modal.scaler_max)
    loaded, smin, smax = load_basis(path)
    assert np.array_equal(loaded.mean, basis.mean)
    assert np.array_equal(loaded.modes, basis.modes)
    assert np.array_equal(loaded.eigenvalues, basis.eigenvalues)
    assert np.array_equal(smin, modal.scaler_min)
    assert np.array_equal(smax, modal.scaler_max)


def test_basis_truncated_file_rejected(tmp_path, rng):
    basis, modal = fit_pod(rng.standard_normal((11, 13)), 4)
    path = tmp_path / "basis.podb"
    save_basis(path, basis, modal.scaler_min, modal.scaler_max)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError):
        load_basis(path)

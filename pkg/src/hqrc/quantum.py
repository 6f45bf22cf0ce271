"""Dense simulation primitives for small driven spin systems.

Everything here works on explicit ``2^N x 2^N`` complex matrices: Pauli
operators embedded into the full register, transverse-field Ising
Hamiltonians, unitary propagators obtained by Hermitian eigendecomposition,
the trace-preserving input-injection channel acting on the first qubit, and
Pauli-z readout.

Density matrices are plain ``(dim, dim)`` complex ``numpy`` arrays.  A valid
state is Hermitian, unit-trace and positive semidefinite;
:func:`validate_density_matrix` checks that contract and every routine in
this module preserves it (up to round-off, which :func:`trace_renormalize`
corrects).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}
IDENTITY_2 = np.eye(2, dtype=complex)

# Default tolerances for the density-matrix contract.
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-9


def _kron_chain(factors):
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def embed_pauli(n_qubits: int, site: int, axis: str) -> np.ndarray:
    """Return the Pauli operator for one qubit embedded in the full register.

    ``site`` counts from 1 and addresses the leftmost Kronecker factor first,
    so ``embed_pauli(3, 2, "y")`` is ``I (x) sigma_y (x) I``.
    """
    if axis not in PAULI:
        raise ValueError(f"unknown Pauli axis {axis!r}; expected one of x, y, z")
    if not 1 <= site <= n_qubits:
        raise ValueError(f"site {site} out of range for {n_qubits} qubit(s)")
    factors = [PAULI[axis] if k == site - 1 else IDENTITY_2 for k in range(n_qubits)]
    return _kron_chain(factors)


@dataclass(frozen=True)
class IsingParams:
    """Parameters of a fully connected transverse-field Ising Hamiltonian.

    ``couplings_h`` is the symmetric zero-diagonal pair-coupling matrix and
    ``fields_g`` the per-site longitudinal field vector; both live in
    ``[-1, 1]`` and are multiplied by the overall energy scale
    ``coupling_j``.  ``rng_seed`` records the stream the values were drawn
    from (or -1 for hand-built parameters).
    """

    n_qubits: int
    coupling_j: float
    couplings_h: np.ndarray
    fields_g: np.ndarray
    rng_seed: int = -1

    def __post_init__(self):
        h = np.array(self.couplings_h, dtype=float)
        g = np.array(self.fields_g, dtype=float)
        n = self.n_qubits
        if n < 1:
            raise ValueError("n_qubits must be at least 1")
        if h.shape != (n, n):
            raise ValueError(f"couplings_h must be ({n}, {n}), got {h.shape}")
        if g.shape != (n,):
            raise ValueError(f"fields_g must be ({n},), got {g.shape}")
        if np.max(np.abs(h - h.T)) > 0.0:
            raise ValueError("couplings_h must be symmetric")
        if np.any(np.diag(h) != 0.0):
            raise ValueError("couplings_h must have a zero diagonal")
        if np.max(np.abs(h)) > 1.0 or np.max(np.abs(g)) > 1.0:
            raise ValueError("couplings_h and fields_g entries must lie in [-1, 1]")
        object.__setattr__(self, "couplings_h", h)
        object.__setattr__(self, "fields_g", g)

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @classmethod
    def random(cls, n_qubits: int, coupling_j: float, seed: int) -> "IsingParams":
        """Draw pair couplings and fields uniformly from ``[-1, 1]``.

        Stream definition (PCG64 seeded with ``seed``): first the strict
        upper triangle of ``couplings_h`` row-major, then ``fields_g``.  The
        lower triangle mirrors the upper one.
        """
        rng = np.random.default_rng(seed)
        upper = rng.uniform(-1.0, 1.0, size=n_qubits * (n_qubits - 1) // 2)
        g = rng.uniform(-1.0, 1.0, size=n_qubits)
        h = np.zeros((n_qubits, n_qubits))
        iu = np.triu_indices(n_qubits, k=1)
        h[iu] = upper
        h = h + h.T
        return cls(n_qubits=n_qubits, coupling_j=float(coupling_j),
                   couplings_h=h, fields_g=g, rng_seed=int(seed))


def build_hamiltonian(params: IsingParams) -> np.ndarray:
    """Assemble ``J * sum_{i != j} h_ij X_i X_j + J * sum_j g_j Z_j``.

    The double sum runs over ordered pairs, so with symmetric ``h`` each
    unordered pair contributes twice (effective pair coupling ``2 J h_ij``).
    """
    n = params.n_qubits
    dim = params.dim
    j = params.coupling_j
    h = params.couplings_h
    out = np.zeros((dim, dim), dtype=complex)
    for a in range(n):
        for b in range(a + 1, n):
            if h[a, b] == 0.0:
                continue
            factors = [PAULI["x"] if k in (a, b) else IDENTITY_2 for k in range(n)]
            out += (2.0 * j * h[a, b]) * _kron_chain(factors)
    for a in range(n):
        out += (j * params.fields_g[a]) * embed_pauli(n, a + 1, "z")
    return out


@dataclass(frozen=True)
class UnitaryPropagator:
    """Unitary ``exp(-i H dt)`` together with the substep length ``dt``."""

    entries: np.ndarray
    dt: float

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def unitarity_defect(self) -> float:
        """Max elementwise deviation of ``U^dagger U`` from the identity."""
        u = self.entries
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))


def propagator(hamiltonian: np.ndarray, dt: float) -> UnitaryPropagator:
    """Exponentiate a Hermitian matrix: ``U = Q exp(-i L dt) Q^dagger``.

    Asymmetry up to ``1e-12`` (elementwise) is tolerated and symmetrized
    away; anything larger is rejected.  Uses the eigendecomposition route,
    which is exact for Hermitian input and amortizes to a single cost for a
    fixed Hamiltonian.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    asym = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if asym > 1e-12:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.2e} > 1e-12)")
    h = 0.5 * (h + h.conj().T)
    evals, q = np.linalg.eigh(h)
    u = (q * np.exp(-1.0j * evals * dt)) @ q.conj().T
    return UnitaryPropagator(entries=u, dt=float(dt))


def maximally_mixed(n_qubits: int) -> np.ndarray:
    """The state ``I / 2^N``: the bias-free reservoir initialization."""
    dim = 2 ** n_qubits
    return np.eye(dim, dtype=complex) / dim


def inject_input(rho: np.ndarray, u: float) -> np.ndarray:
    """Write a classical amplitude onto the first qubit.

    Replaces the first qubit with ``(1-u)|0><0| + u|1><1|`` while keeping the
    rest of the register in its reduced state: ``rho_u (x) Tr_1[rho]``.  This
    is a trace-preserving channel; ``u`` must already lie in ``[0, 1]``
    (callers clip before injection).
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"injection amplitude {u!r} outside [0, 1]; clip before injecting")
    rho_u = np.array([[1.0 - u, 0.0], [0.0, u]], dtype=complex)
    if rho.shape[0] == 2:
        # Single-qubit register: the partial trace is the scalar trace.
        return rho_u * np.trace(rho)
    return np.kron(rho_u, partial_trace_first(rho))


def partial_trace_first(rho: np.ndarray) -> np.ndarray:
    """Trace out the first qubit, halving the Hilbert-space dimension."""
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or dim & (dim - 1):
        raise ValueError(f"density matrix must be square with power-of-two size, got {rho.shape}")
    if dim < 4:
        raise ValueError("partial trace over the first qubit needs at least 2 qubits")
    half = dim // 2
    return rho.reshape(2, half, 2, half).trace(axis1=0, axis2=2)


def evolve(rho: np.ndarray, u: UnitaryPropagator) -> np.ndarray:
    """Conjugate by the propagator: ``U rho U^dagger``."""
    if rho.shape != (u.dim, u.dim):
        raise ValueError(f"state shape {rho.shape} does not match propagator dim {u.dim}")
    return u.entries @ rho @ u.entries.conj().T


def sigma_z_observables(n_qubits: int) -> np.ndarray:
    """Stack of the ``sigma_z`` readout operators, shape ``(N, dim, dim)``."""
    return np.stack([embed_pauli(n_qubits, j + 1, "z") for j in range(n_qubits)])


def measure(rho: np.ndarray, observables: np.ndarray) -> np.ndarray:
    """Expectation values ``Tr[rho O_k]`` for a stack of Hermitian operators.

    The imaginary residue of each trace (round-off only, for Hermitian
    inputs) is discarded.
    """
    obs = np.asarray(observables)
    if obs.ndim != 3 or obs.shape[1:] != rho.shape:
        raise ValueError(f"observable stack {obs.shape} does not match state {rho.shape}")
    return np.einsum("kij,ji->k", obs, rho).real


def trace_renormalize(rho: np.ndarray) -> np.ndarray:
    """Divide by the trace to undo round-off drift.

    This is the only state correction applied during stepping; eigenvalues
    are never clamped because the injection/evolution maps preserve
    positivity analytically.
    """
    t = np.trace(rho).real
    if t <= 0.0:
        raise ValueError(f"state trace {t!r} is not positive; cannot renormalize")
    return rho / t


def validate_density_matrix(rho: np.ndarray, *, trace_tol: float = TRACE_TOL,
                            herm_tol: float = HERMITICITY_TOL,
                            psd_tol: float = POSITIVITY_TOL) -> dict:
    """Check the Hermitian / unit-trace / PSD contract.

    Returns the measured defects (``trace_error``, ``hermiticity_error``,
    ``min_eigenvalue``) and raises ``ValueError`` if any exceeds its
    tolerance.
    """
    trace_error = abs(np.trace(rho).real - 1.0)
    hermiticity_error = float(np.max(np.abs(rho - rho.conj().T)))
    min_eigenvalue = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    defects = {
        "trace_error": trace_error,
        "hermiticity_error": hermiticity_error,
        "min_eigenvalue": min_eigenvalue,
    }
    if trace_error > trace_tol:
        raise ValueError(f"trace deviates from 1 by {trace_error:.3e} (tol {trace_tol:.1e})")
    if hermiticity_error > herm_tol:
        raise ValueError(f"Hermiticity defect {hermiticity_error:.3e} (tol {herm_tol:.1e})")
    if min_eigenvalue < -psd_tol:
        raise ValueError(f"negative eigenvalue {min_eigenvalue:.3e} (tol {psd_tol:.1e})")
    return defects

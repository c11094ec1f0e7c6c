"""Dense matrix algebra for finite-dimensional open quantum systems.

Basis convention for qubits: index 0 is the excited state ``|e>``, index 1
the ground state ``|g>``, so that ``sigma_z |e> = |e>`` and
``sigma_minus = |g><e|``.

Matrices are plain complex ``numpy`` arrays.  Functions that act on states
also accept a stack of shape ``(n, d, d)`` where noted.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateStateError,
    DimensionMismatchError,
    NumericalConsistencyError,
    PositivityViolationError,
)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
EIGEN_TOL = 1e-8
IMAG_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()
KET_E = np.array([1, 0], dtype=complex)
KET_G = np.array([0, 1], dtype=complex)


def projector(ket):
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def dagger(A):
    return np.swapaxes(np.conj(A), -1, -2)


def as_matrix(A, name="matrix"):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    return A


def _same_dim(*mats):
    dims = {m.shape[-1] for m in mats}
    if len(dims) != 1:
        raise DimensionMismatchError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def hermiticity_error(A):
    return float(np.max(np.abs(A - dagger(A)))) if A.size else 0.0


def check_hermitian(A, name="matrix", tol=HERMITIAN_TOL):
    """Validate that ``A`` is Hermitian; returns it as a complex array."""
    A = as_matrix(A, name)
    err = hermiticity_error(A)
    if err > tol:
        raise NumericalConsistencyError(f"{name} hermiticity: deviation {err:.3e} exceeds {tol:.0e}")
    return A


def check_density(rho, name="rho"):
    rho = check_hermitian(rho, name)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise NumericalConsistencyError(f"{name} trace: {tr:.12g} differs from 1 by more than {TRACE_TOL:.0e}")
    lam = np.linalg.eigvalsh(rho).min()
    if lam < -EIGEN_TOL:
        raise NumericalConsistencyError(f"{name} positivity: min eigenvalue {lam:.3e} below -{EIGEN_TOL:.0e}")
    return rho


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Hamiltonian ``H``, coupling ``L`` and initial state ``rho0`` of one system."""

    H: np.ndarray
    L: np.ndarray
    rho0: np.ndarray

    def __post_init__(self):
        H = check_hermitian(self.H, "H")
        L = as_matrix(self.L, "L")
        rho0 = check_density(self.rho0, "rho0")
        _same_dim(H, L, rho0)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "rho0", rho0)

    @property
    def dim(self):
        return self.H.shape[0]

    def with_rho0(self, rho0):
        return SystemModel(self.H, self.L, rho0)


def decaying_qubit(rho0=None, omega=0.0):
    """Qubit with ``L = sigma_minus`` and ``H = omega/2 sigma_x``, excited by default."""
    if rho0 is None:
        rho0 = projector(KET_E)
    return SystemModel(0.5 * omega * SIGMA_X, SIGMA_MINUS, rho0)


def commutator(A, B):
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape[-2:] != B.shape[-2:]:
        raise DimensionMismatchError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return A @ B - B @ A


def anticommutator(A, B):
    return A @ B + B @ A


def lindblad_generator(m, X):
    """Heisenberg-picture generator ``i[H,X] + L*XL - (L*L X + X L*L)/2``."""
    X = as_matrix(X, "X")
    _same_dim(m.H, X)
    Ld = m.L.conj().T
    LdL = Ld @ m.L
    return 1j * commutator(m.H, X) + Ld @ X @ m.L - 0.5 * anticommutator(LdL, X)


def adjoint_generator(m, rho):
    """Schrodinger-picture generator ``-i[H,rho] + L rho L* - {L*L, rho}/2``.

    Accepts a single matrix or a stack ``(n, d, d)``.
    """
    rho = np.asarray(rho, dtype=complex)
    _same_dim(m.H, rho)
    L = m.L
    Ld = L.conj().T
    LdL = Ld @ L
    return -1j * commutator(m.H, rho) + L @ rho @ Ld - 0.5 * anticommutator(LdL, rho)


def expectation(rho, X):
    """``tr(rho X)`` as a float; raises if the imaginary part exceeds 1e-10."""
    rho = np.asarray(rho, dtype=complex)
    X = np.asarray(X, dtype=complex)
    _same_dim(rho, X)
    val = np.einsum("...ij,ji->...", rho, X)
    imag = np.max(np.abs(np.imag(val))) if np.size(val) else 0.0
    if imag > IMAG_TOL:
        raise NumericalConsistencyError(f"tr(rho X) has imaginary part {imag:.3e}")
    val = np.real(val)
    return float(val) if np.ndim(val) == 0 else val


def purity(rho):
    rho = np.asarray(rho, dtype=complex)
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


def min_eigenvalues(rhos):
    """Smallest eigenvalue of each Hermitian matrix in a stack ``(n, d, d)``."""
    rhos = np.asarray(rhos)
    if rhos.shape[-1] == 2:
        a = rhos[..., 0, 0].real
        d = rhos[..., 1, 1].real
        b = rhos[..., 0, 1]
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(b) ** 2)
    return np.linalg.eigvalsh(rhos)[..., 0]


def repair_states(rhos, tol):
    """Vectorised :func:`repair_state` over a stack ``(n, d, d)``.

    Raises :class:`PositivityViolationError` with ``step`` set to the index of
    the first offending matrix.
    """
    rhos = np.asarray(rhos, dtype=complex)
    herm = np.max(np.abs(rhos - dagger(rhos)), axis=(-2, -1))
    if np.any(herm >= tol):
        k = int(np.argmax(herm >= tol))
        raise NumericalConsistencyError(f"matrix {k} not Hermitian: deviation {herm[k]:.3e} >= {tol:.1e}")
    out = 0.5 * (rhos + dagger(rhos))
    lam = min_eigenvalues(out)
    bad = lam < -tol
    if np.any(bad):
        k = int(np.argmax(bad))
        raise PositivityViolationError(lam[k], tol, step=k)
    neg = lam < 0
    if np.any(neg):
        w, v = np.linalg.eigh(out[neg])
        w = np.clip(w, 0.0, None)
        out[neg] = (v * w[..., None, :]) @ dagger(v)
    tr = np.real(np.trace(out, axis1=-2, axis2=-1))
    if np.any(tr < tol):
        k = int(np.argmin(tr))
        raise DegenerateStateError(f"matrix {k} has trace {tr[k]:.3e} below {tol:.1e}")
    return out / tr[..., None, None]


def repair_state(rho, tol):
    """Symmetrise, clip slightly negative eigenvalues, renormalise the trace."""
    rho = as_matrix(rho, "rho")
    return repair_states(rho[None], tol)[0]


class Superoperators:
    """Row-major vectorised forms of the linear maps used by the SDE steps.

    With ``v = rho.reshape(n, d*d)`` each map acts as ``v @ M.T`` and each
    trace functional ``tr(A rho)`` as ``(v @ a).real``.
    """

    def __init__(self, m):
        d = m.dim
        I = np.eye(d)
        H, L = m.H, m.L
        Ld = L.conj().T
        LdL = Ld @ L

        def sandwich(A, B):
            # vec(A rho B) = kron(A, B^T) vec(rho)
            return np.kron(A, B.T)

        self.dim = d
        self.hamiltonian = -1j * (sandwich(H, I) - sandwich(I, H))
        self.jump = sandwich(L, Ld)
        self.anti = -0.5 * (sandwich(LdL, I) + sandwich(I, LdL))
        self.drift = self.hamiltonian + self.jump + self.anti
        self.no_jump = self.hamiltonian + self.anti
        # rho -> L rho + rho L*
        self.gain = sandwich(L, I) + sandwich(I, Ld)
        self.tr_homodyne = (L + Ld).T.reshape(-1)
        self.tr_rate = LdL.T.reshape(-1)

    def functional(self, A):
        return np.asarray(A, dtype=complex).T.reshape(-1)

    def vec(self, rhos):
        rhos = np.asarray(rhos, dtype=complex)
        return rhos.reshape(rhos.shape[:-2] + (self.dim * self.dim,))

    def unvec(self, v):
        return v.reshape(v.shape[:-1] + (self.dim, self.dim))

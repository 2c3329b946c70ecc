"""Pauli-basis representation of states, measurements, and quantum channels.

Everything downstream works in the chi (process matrix) picture: a channel
acts as ``E(rho) = sum_{ab} chi[a, b] E_a rho E_b^dag`` where ``E_a`` ranges
over the tensor-product Pauli basis. With that convention a CPTP channel has
a Hermitian, positive semidefinite chi with unit trace, plus the affine
trace-preservation constraint ``sum_{ab} chi[a, b] E_b^dag E_a = I``.

Vectorization is column-stacking with the Hilbert-Schmidt inner product,
so ``Tr(A^dag B) == vectorize(A).conj() @ vectorize(B)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SIGMA_I = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

_PAULI_1Q = {"I": SIGMA_I, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}

MAX_QUBITS = 3


class ConvergenceError(RuntimeError):
    """Iterative routine exceeded its iteration budget.

    Carries the last residual / update norm so callers can report how far
    from converged the run was.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PauliBasis:
    """Ordered tensor-product Pauli basis for ``n_qubits``.

    ``elements[0]`` is the identity; element ``a`` is the Kronecker product
    of single-qubit Paulis indexed by the base-4 digits of ``a`` (first
    qubit is the most significant digit). Orthogonality:
    ``Tr(E_j^dag E_k) = 2**n_qubits * delta_jk``.
    """

    n_qubits: int
    labels: tuple
    elements: np.ndarray  # (4**n, 2**n, 2**n) complex

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @property
    def size(self) -> int:
        return 4 ** self.n_qubits


@lru_cache(maxsize=None)
def pauli_basis(n_qubits: int) -> PauliBasis:
    """Build the ordered n-qubit Pauli basis (cached)."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(
            f"n_qubits must be between 1 and {MAX_QUBITS}, got {n_qubits}")
    labels = []
    mats = []
    for combo in itertools.product("IXYZ", repeat=n_qubits):
        label = "".join(combo)
        m = _PAULI_1Q[combo[0]]
        for c in combo[1:]:
            m = np.kron(m, _PAULI_1Q[c])
        labels.append(label)
        mats.append(m)
    elements = np.stack(mats).astype(complex)
    elements.setflags(write=False)
    return PauliBasis(n_qubits=n_qubits, labels=tuple(labels), elements=elements)


def vectorize(op: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix into a vector."""
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {op.shape}")
    return op.flatten(order="F")


def devectorize(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec)
    dim = int(round(np.sqrt(vec.size)))
    if dim * dim != vec.size:
        raise ValueError(f"vector of length {vec.size} is not a square matrix")
    return vec.reshape((dim, dim), order="F")


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product Tr(a^dag b)."""
    return complex(np.vdot(vectorize(a), vectorize(b)))


def rotation_unitary(axis: str, theta: float) -> np.ndarray:
    """Single-qubit rotation exp(-i theta sigma_axis / 2)."""
    try:
        sigma = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}[axis]
    except KeyError:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}") from None
    return np.cos(theta / 2) * SIGMA_I - 1j * np.sin(theta / 2) * sigma


# ----------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------

def _check_square(mat: np.ndarray, dim: int, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (dim, dim):
        raise ValueError(f"{what} must have shape ({dim}, {dim}), got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{what} contains non-finite entries")
    return mat


@dataclass(frozen=True)
class ProcessMatrix:
    """Chi matrix of a channel in the Pauli basis, shape (4**n, 4**n)."""

    n_qubits: int
    chi: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "chi", _check_square(self.chi, 4 ** self.n_qubits, "chi"))

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits,
                "re": self.chi.real.tolist(),
                "im": self.chi.imag.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessMatrix":
        chi = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(n_qubits=int(data["n_qubits"]), chi=chi)


@dataclass(frozen=True)
class QuantumState:
    """Density operator, shape (2**n, 2**n)."""

    n_qubits: int
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rho", _check_square(self.rho, 2 ** self.n_qubits, "rho"))

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits,
                "re": self.rho.real.tolist(),
                "im": self.rho.imag.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "QuantumState":
        rho = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(n_qubits=int(data["n_qubits"]), rho=rho)


@dataclass(frozen=True)
class MeasOperator:
    """POVM effect, shape (2**n, 2**n), labelled by its outcome bitstring."""

    n_qubits: int
    m: np.ndarray
    outcome_label: str

    def __post_init__(self):
        object.__setattr__(
            self, "m", _check_square(self.m, 2 ** self.n_qubits, "m"))

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits,
                "re": self.m.real.tolist(),
                "im": self.m.imag.tolist(),
                "outcome_label": self.outcome_label}

    @classmethod
    def from_dict(cls, data: dict) -> "MeasOperator":
        m = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        return cls(n_qubits=int(data["n_qubits"]), m=m,
                   outcome_label=str(data["outcome_label"]))


@dataclass(frozen=True)
class CptpReport:
    """Raw CPTP diagnostics; the caller decides pass/fail against a tolerance."""

    hermiticity_residual: float
    min_eigenvalue: float
    tp_residual: float
    trace: complex

    def ok(self, tol: float = 1e-8) -> bool:
        return (self.hermiticity_residual <= tol
                and self.min_eigenvalue >= -tol
                and self.tp_residual <= tol
                and abs(self.trace - 1.0) <= tol)


# ----------------------------------------------------------------------
# Channel constructors and application
# ----------------------------------------------------------------------

def _n_from_dim(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2 ** n != dim or not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"operator dimension {dim} is not 2**n for supported n")
    return n


def pauli_coefficients(op: np.ndarray) -> np.ndarray:
    """Expansion coefficients c with op = sum_a c[a] E_a."""
    op = np.asarray(op, dtype=complex)
    n = _n_from_dim(op.shape[0])
    basis = pauli_basis(n)
    return np.einsum("aij,ji->a", basis.elements, op) / basis.dim


def unitary_to_chi(u: np.ndarray, tol: float = 1e-10) -> ProcessMatrix:
    """Rank-1 chi matrix of the unitary channel rho -> u rho u^dag."""
    u = np.asarray(u, dtype=complex)
    n = _n_from_dim(u.shape[0])
    if np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])) > tol:
        raise ValueError("input matrix is not unitary within tolerance")
    c = pauli_coefficients(u)
    return ProcessMatrix(n_qubits=n, chi=np.outer(c, c.conj()))


def kraus_to_chi(kraus, tol: float = 1e-8) -> ProcessMatrix:
    """Chi matrix of the channel with the given Kraus operators.

    The operators must satisfy the trace-preservation condition
    ``sum_i K_i^dag K_i = I`` within ``tol``.
    """
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    dim = kraus[0].shape[0]
    n = _n_from_dim(dim)
    gram = sum(k.conj().T @ k for k in kraus)
    if np.linalg.norm(gram - np.eye(dim)) > tol:
        raise ValueError("Kraus set violates trace preservation")
    coeffs = np.stack([pauli_coefficients(k) for k in kraus])
    chi = coeffs.T @ coeffs.conj()
    return ProcessMatrix(n_qubits=n, chi=chi)


def chi_to_kraus(chi: ProcessMatrix, tol: float = 1e-12):
    """Kraus operators of a (Hermitian PSD) chi matrix via eigendecomposition."""
    basis = pauli_basis(chi.n_qubits)
    herm = (chi.chi + chi.chi.conj().T) / 2
    vals, vecs = np.linalg.eigh(herm)
    ops = []
    for w, v in zip(vals, vecs.T):
        if w > tol:
            ops.append(np.sqrt(w) * np.einsum("a,aij->ij", v, basis.elements))
    return ops


def apply_channel(chi: ProcessMatrix, rho: QuantumState) -> QuantumState:
    """Apply the channel with matrix chi to a density operator."""
    if chi.n_qubits != rho.n_qubits:
        raise ValueError(
            f"qubit-count mismatch: chi has {chi.n_qubits}, state has {rho.n_qubits}")
    out = apply_chi_matrix(chi.chi, rho.rho)
    return QuantumState(n_qubits=rho.n_qubits, rho=out)


def apply_chi_matrix(chi: np.ndarray, op: np.ndarray) -> np.ndarray:
    """Raw-array version of :func:`apply_channel`; also usable on effects."""
    n = _n_from_dim(op.shape[0])
    e = pauli_basis(n).elements
    return np.einsum("ab,aij,jk,blk->il", chi, e, op, e.conj(), optimize=True)


def adjoint_chi(chi: np.ndarray) -> np.ndarray:
    """Chi matrix of the adjoint map (Heisenberg picture).

    ``Tr(M E(rho)) == Tr(E^adj(M) rho)`` for all Hermitian M, rho. In the
    Pauli basis the adjoint map's chi is the elementwise conjugate.
    """
    return np.asarray(chi).conj().copy()


def tp_image(chi: np.ndarray) -> np.ndarray:
    """The operator sum_{ab} chi[a, b] E_b^dag E_a (equals I for TP maps)."""
    n = _n_from_dim(int(round(np.sqrt(chi.shape[0]))) )
    e = pauli_basis(n).elements
    return np.einsum("ab,bki,akj->ij", chi, e.conj(), e, optimize=True)


def is_cptp(chi: ProcessMatrix, tol: float = 1e-8) -> CptpReport:
    """Diagnostic residuals for the CPTP conditions of a chi matrix.

    ``tol`` is recorded for the caller's convenience via ``report.ok(tol)``;
    the residuals themselves are raw numbers.
    """
    del tol  # report is tolerance-free; see CptpReport.ok
    mat = chi.chi
    herm = np.linalg.norm(mat - mat.conj().T)
    sym = (mat + mat.conj().T) / 2
    min_eig = float(np.linalg.eigvalsh(sym)[0])
    dim = 2 ** chi.n_qubits
    tp_res = float(np.linalg.norm(tp_image(mat) - np.eye(dim)))
    return CptpReport(hermiticity_residual=float(herm),
                      min_eigenvalue=min_eig,
                      tp_residual=tp_res,
                      trace=complex(np.trace(mat)))


def identity_chi(n_qubits: int) -> ProcessMatrix:
    """Chi matrix of the identity channel: a single 1 in the (0, 0) entry."""
    size = 4 ** n_qubits
    chi = np.zeros((size, size), dtype=complex)
    chi[0, 0] = 1.0
    return ProcessMatrix(n_qubits=n_qubits, chi=chi)


# ----------------------------------------------------------------------
# CPTP projections
# ----------------------------------------------------------------------

def project_psd(mat: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: Hermitize, then clip negative eigenvalues."""
    herm = (mat + mat.conj().T) / 2
    vals, vecs = np.linalg.eigh(herm)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.conj().T


@lru_cache(maxsize=None)
def _tp_projector(n_qubits: int):
    """Constraint matrix L with L @ chi.flatten() == vectorize(I) iff TP,
    plus its pseudo-inverse for the affine projection."""
    basis = pauli_basis(n_qubits)
    e = basis.elements
    size = basis.size
    dim = basis.dim
    # L[(i, j), (a, b)] = (E_b^dag E_a)[i, j], column index flattened row-major.
    prods = np.einsum("bki,akj->abij", e.conj(), e)
    lmat = prods.reshape(size * size, dim * dim).T.copy()
    lpinv = np.linalg.pinv(lmat)
    bvec = np.eye(dim, dtype=complex).reshape(-1)
    lmat.setflags(write=False)
    lpinv.setflags(write=False)
    return lmat, lpinv, bvec


def project_tp(chi: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the trace-preservation affine set.

    Preserves Hermiticity, and forces Tr(chi) = 1 as a side effect (the TP
    set only contains unit-trace matrices).
    """
    n = _n_from_dim(int(round(np.sqrt(chi.shape[0]))))
    lmat, lpinv, bvec = _tp_projector(n)
    x = chi.reshape(-1)
    return (x - lpinv @ (lmat @ x - bvec)).reshape(chi.shape)


def project_cptp(chi: np.ndarray, tol: float = 1e-10,
                 max_iterations: int = 5000) -> tuple:
    """Dykstra alternating projections onto the PSD cone and the TP set.

    Returns ``(chi_projected, iterations)``. Raises :class:`ConvergenceError`
    if the Frobenius update is still above ``tol`` after ``max_iterations``.
    """
    x = np.asarray(chi, dtype=complex)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for it in range(1, max_iterations + 1):
        y = project_psd(x + p)
        p = x + p - y
        x_new = project_tp(y + q)
        q = y + q - x_new
        change = np.linalg.norm(x_new - x)
        x = x_new
        if change < tol:
            return x, it
    raise ConvergenceError("CPTP projection did not converge", float(change))


# ----------------------------------------------------------------------
# Cholesky parameterization
# ----------------------------------------------------------------------

def cholesky_build(params: np.ndarray, dim: int, eps: float) -> np.ndarray:
    """Hermitian PSD matrix L L^dag + eps I from a real parameter vector.

    Packing: the first ``dim`` entries are the (real) diagonal of the lower
    triangular L; the remaining ``dim*(dim-1)`` entries are (re, im) pairs
    for the strictly-lower entries, row by row. Every eigenvalue of the
    result is at least ``eps``.
    """
    params = np.asarray(params, dtype=float)
    if params.size != dim * dim:
        raise ValueError(
            f"expected {dim * dim} parameters for dim {dim}, got {params.size}")
    lower = np.zeros((dim, dim), dtype=complex)
    lower[np.diag_indices(dim)] = params[:dim]
    k = dim
    for i in range(1, dim):
        for j in range(i):
            lower[i, j] = params[k] + 1j * params[k + 1]
            k += 2
    return lower @ lower.conj().T + eps * np.eye(dim)

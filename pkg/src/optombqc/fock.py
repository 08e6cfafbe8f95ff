"""Truncated Fock-space linear algebra.

Mode ordering is fixed: index 0 is the cavity, indices 1..N are the
mechanical oscillators, and Kronecker products follow that order (the
cavity is the most significant index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionError

HERMITIAN_TOL = 1e-12
PURE_NORM_TOL = 1e-9
TRACE_TOL = 1e-9
MIN_EIG_TOL = 1e-9
# eigvalsh on larger matrices is too slow to run on every construction
POSITIVITY_CHECK_MAX_DIM = 512
# builders return CSR-backed operators above this total dimension
SPARSE_MIN_DIM = 1024


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TensorSpace:
    """Ordered list of Fock cutoffs defining a composite Hilbert space."""

    cutoffs: tuple[int, ...]
    mode_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in self.cutoffs)
        if not cutoffs:
            raise DimensionError("a TensorSpace needs at least one mode")
        if any(c < 1 for c in cutoffs):
            raise DimensionError(f"cutoffs must be positive, got {cutoffs}")
        labels = tuple(self.mode_labels) or default_labels(len(cutoffs))
        if len(labels) != len(cutoffs):
            raise DimensionError("mode_labels and cutoffs differ in length")
        object.__setattr__(self, "cutoffs", cutoffs)
        object.__setattr__(self, "mode_labels", labels)

    @classmethod
    def cavity_mechanics(cls, cavity_cutoff: int, mech_cutoffs: Sequence[int]):
        return cls((cavity_cutoff, *mech_cutoffs))

    @property
    def dim(self) -> int:
        return int(np.prod(self.cutoffs))

    @property
    def n_modes(self) -> int:
        return len(self.cutoffs)

    def subspace(self, keep: Sequence[int]) -> "TensorSpace":
        keep = list(keep)
        return TensorSpace(
            tuple(self.cutoffs[k] for k in keep),
            tuple(self.mode_labels[k] for k in keep),
        )


def default_labels(n: int) -> tuple[str, ...]:
    return ("cavity",) + tuple(f"mech{j}" for j in range(1, n))


def single_mode(cutoff: int, label: str = "mode") -> TensorSpace:
    return TensorSpace((cutoff,), (label,))


def _fro(m) -> float:
    return float(sp.linalg.norm(m) if sp.issparse(m) else np.linalg.norm(m))


@dataclass(frozen=True, eq=False)
class QOperator:
    """Complex matrix acting on a :class:`TensorSpace`.

    ``matrix`` is a read-only ndarray, or a CSR matrix for operators built on
    spaces larger than ``SPARSE_MIN_DIM``. Use :meth:`dense` when an ndarray is
    required regardless of storage.
    """

    space: TensorSpace
    matrix: np.ndarray | sp.csr_matrix

    def __post_init__(self):
        m = self.matrix
        if sp.issparse(m):
            m = sp.csr_matrix(m, dtype=complex)
        else:
            m = _frozen(m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        if m.shape[0] != self.space.dim:
            raise DimensionError(
                f"operator dimension {m.shape[0]} != space dimension {self.space.dim}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    @cached_property
    def sparse(self) -> sp.csr_matrix:
        """CSR view used for operator-times-matrix products."""
        return self.matrix if self.is_sparse else sp.csr_matrix(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def dag(self) -> "QOperator":
        return QOperator(self.space, self.matrix.conj().T)

    def hermiticity_error(self) -> float:
        """Relative Frobenius norm of the anti-Hermitian part."""
        norm = _fro(self.matrix)
        if norm == 0:
            return 0.0
        return _fro(self.matrix - self.matrix.conj().T) / norm

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermiticity_error() <= tol

    def _check(self, other: "QOperator"):
        if other.space.cutoffs != self.space.cutoffs:
            raise DimensionError(
                f"space mismatch: {self.space.cutoffs} vs {other.space.cutoffs}"
            )

    def _pair(self, other: "QOperator"):
        self._check(other)
        if self.is_sparse and other.is_sparse:
            return self.matrix, other.matrix
        return self.dense(), other.dense()

    def __add__(self, other):
        if isinstance(other, QOperator):
            x, y = self._pair(other)
            return QOperator(self.space, x + y)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, QOperator):
            x, y = self._pair(other)
            return QOperator(self.space, x - y)
        return NotImplemented

    def __neg__(self):
        return QOperator(self.space, -self.matrix)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return QOperator(self.space, self.matrix * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return QOperator(self.space, self.matrix / scalar)

    def __matmul__(self, other):
        if isinstance(other, QOperator):
            x, y = self._pair(other)
            return QOperator(self.space, x @ y)
        return NotImplemented

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"QOperator(cutoffs={self.space.cutoffs}, {kind})"


@dataclass(frozen=True, eq=False)
class QState:
    """Pure state vector or density matrix on a :class:`TensorSpace`.

    ``truncation_loss`` records weight discarded when the state was cut
    to the Fock cutoff (before renormalization).
    """

    space: TensorSpace
    data: np.ndarray
    kind: str = "pure"
    truncation_loss: float = 0.0
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        data = _frozen(self.data)
        d = self.space.dim
        if self.kind == "pure":
            if data.shape != (d,):
                raise DimensionError(f"pure state needs shape ({d},), got {data.shape}")
            if self.validate:
                norm = np.linalg.norm(data)
                if abs(norm - 1.0) > PURE_NORM_TOL:
                    raise ValueError(f"state vector norm {norm!r} is not 1")
        elif self.kind == "mixed":
            if data.shape != (d, d):
                raise DimensionError(f"density matrix needs shape ({d},{d}), got {data.shape}")
            if self.validate:
                _check_density(data)
        else:
            raise ValueError(f"kind must be 'pure' or 'mixed', got {self.kind!r}")
        object.__setattr__(self, "data", data)

    @classmethod
    def pure(cls, space: TensorSpace, vec, normalize: bool = False, **kw) -> "QState":
        vec = np.asarray(vec, dtype=complex)
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(space, vec, "pure", **kw)

    @classmethod
    def mixed(cls, space: TensorSpace, rho, normalize: bool = False, **kw) -> "QState":
        rho = np.asarray(rho, dtype=complex)
        if normalize:
            rho = 0.5 * (rho + rho.conj().T)
            rho = rho / np.trace(rho).real
        return cls(space, rho, "mixed", **kw)

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def dm(self) -> np.ndarray:
        """Density matrix (outer product for pure states)."""
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def to_mixed(self) -> "QState":
        if not self.is_pure:
            return self
        return QState(self.space, self.dm(), "mixed", self.truncation_loss)

    def __repr__(self):
        return f"QState(kind={self.kind!r}, cutoffs={self.space.cutoffs})"


def _check_density(rho: np.ndarray):
    scale = max(1.0, float(np.linalg.norm(rho)))
    herm = np.linalg.norm(rho - rho.conj().T) / scale
    if herm > HERMITIAN_TOL:
        raise ValueError(f"density matrix is not Hermitian (error {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr!r} is not 1")
    if rho.shape[0] <= POSITIVITY_CHECK_MAX_DIM:
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        if lam < -MIN_EIG_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {lam:.3g}")


def basis(cutoff: int, n: int) -> np.ndarray:
    v = np.zeros(cutoff, dtype=complex)
    v[n] = 1.0
    return v


def annihilation(cutoff: int) -> QOperator:
    """Single-mode lowering operator with ``<n-1|b|n> = sqrt(n)``."""
    if cutoff < 2:
        raise DimensionError(f"cutoff must be >= 2, got {cutoff}")
    m = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1)
    return QOperator(single_mode(cutoff), m)


def creation(cutoff: int) -> QOperator:
    return annihilation(cutoff).dag()


def number(cutoff: int) -> QOperator:
    if cutoff < 1:
        raise DimensionError(f"cutoff must be positive, got {cutoff}")
    return QOperator(single_mode(cutoff), np.diag(np.arange(cutoff, dtype=float)))


def identity(space: TensorSpace) -> QOperator:
    return QOperator(space, np.eye(space.dim))


def zero(space: TensorSpace) -> QOperator:
    return QOperator(space, np.zeros((space.dim, space.dim)))


def quadratures(cutoff: int) -> tuple[QOperator, QOperator]:
    """Return ``(q, p)`` with ``q = (b + b†)/√2`` and ``p = (b − b†)/(i√2)``."""
    b = annihilation(cutoff).matrix
    bd = b.conj().T
    space = single_mode(cutoff)
    return (
        QOperator(space, (b + bd) / np.sqrt(2)),
        QOperator(space, (b - bd) / (1j * np.sqrt(2))),
    )


def rotated_quadrature(cutoff: int, phi: float) -> QOperator:
    """``q cos(phi) + p sin(phi)``."""
    q, p = quadratures(cutoff)
    return QOperator(q.space, np.cos(phi) * q.matrix + np.sin(phi) * p.matrix)


def embed(op: QOperator, mode: int, space: TensorSpace) -> QOperator:
    """Lift a single-mode operator onto ``space``, acting on ``mode``."""
    if not 0 <= mode < space.n_modes:
        raise DimensionError(f"mode {mode} out of range for {space.n_modes} modes")
    if op.dim != space.cutoffs[mode]:
        raise DimensionError(
            f"operator dimension {op.dim} != cutoff {space.cutoffs[mode]} of mode {mode}"
        )
    left = int(np.prod(space.cutoffs[:mode]))
    right = int(np.prod(space.cutoffs[mode + 1:]))
    m = sp.kron(sp.kron(sp.identity(left), op.sparse), sp.identity(right), format="csr")
    return QOperator(space, m if space.dim > SPARSE_MIN_DIM else m.toarray())


def tensor(*ops: QOperator) -> QOperator:
    """Kronecker product, first argument most significant."""
    m = ops[0].dense()
    cutoffs, labels = list(ops[0].space.cutoffs), list(ops[0].space.mode_labels)
    for op in ops[1:]:
        m = np.kron(m, op.dense())
        cutoffs += op.space.cutoffs
        labels += op.space.mode_labels
    if len(set(labels)) != len(labels):
        labels = list(default_labels(len(cutoffs)))
    return QOperator(TensorSpace(tuple(cutoffs), tuple(labels)), m)


def matrix_exp(op: QOperator, scale: complex = 1.0) -> QOperator:
    """``exp(scale * op)``.

    Hermitian and anti-Hermitian generators go through an eigendecomposition;
    anything else falls back to scaling and squaring.
    """
    m = op.dense()
    if not np.all(np.isfinite(m)) or not np.isfinite(scale):
        raise ValueError("matrix_exp needs finite entries")
    norm = np.linalg.norm(m)
    if norm == 0:
        return identity(op.space)
    tol = 1e-13 * norm
    if np.linalg.norm(m - m.conj().T) <= tol:
        lam, vec = scipy.linalg.eigh(0.5 * (m + m.conj().T))
        out = (vec * np.exp(scale * lam)) @ vec.conj().T
    elif np.linalg.norm(m + m.conj().T) <= tol:
        k = -0.5j * (m - m.conj().T)  # m = i k
        lam, vec = scipy.linalg.eigh(k)
        out = (vec * np.exp(1j * scale * lam)) @ vec.conj().T
    else:
        out = scipy.linalg.expm(scale * m)
    return QOperator(op.space, out)


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Normalized Hermite functions ``psi_n(x)`` for ``n < n_max``.

    Convention matches ``q = (b + b†)/√2``: ``psi_0(x) = pi**-0.25 exp(-x²/2)``.
    Returned array has shape ``(n_max,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if n_max > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, n_max - 1):
        out[n + 1] = (np.sqrt(2.0) * x * out[n] - np.sqrt(n) * out[n - 1]) / np.sqrt(n + 1)
    return out


def quadrature_eigenvector(m: float, phi: float, cutoff: int) -> np.ndarray:
    """Fock components of the improper eigenvector ``|m>_phi`` of ``q cos phi + p sin phi``.

    Components are ``exp(i n phi) psi_n(m)``; the vector is not normalized.
    An array ``m`` gives one column per value.
    """
    if cutoff < 2:
        raise DimensionError(f"cutoff must be >= 2, got {cutoff}")
    psi = hermite_functions(cutoff, m)
    n = np.arange(cutoff).reshape((cutoff,) + (1,) * (psi.ndim - 1))
    return np.exp(1j * n * phi) * psi


@lru_cache(maxsize=64)
def _quadrature_eigh(cutoff: int, phi: float) -> tuple[np.ndarray, np.ndarray]:
    lam, vec = scipy.linalg.eigh(rotated_quadrature(cutoff, phi).matrix)
    lam.flags.writeable = False
    vec.flags.writeable = False
    return lam, vec


def quadrature_eigh(cutoff: int, phi: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Cached eigendecomposition of the truncated rotated quadrature.

    For ``phi = 0`` the eigenvalues are the Gauss-Hermite nodes.
    """
    return _quadrature_eigh(int(cutoff), float(phi))


def quadrature_function(cutoff: int, func, phi: float = 0.0) -> np.ndarray:
    """Matrix of ``func(Q_phi)`` built from the truncated quadrature's spectrum."""
    lam, vec = quadrature_eigh(cutoff, phi)
    return (vec * func(lam)) @ vec.conj().T


def apply_on_mode(matrix: np.ndarray, vec: np.ndarray, mode: int, cutoffs: Sequence[int]) -> np.ndarray:
    """Apply a single-mode matrix to one tensor factor of a state vector."""
    psi = np.asarray(vec).reshape(cutoffs)
    psi = np.tensordot(matrix, psi, axes=([1], [mode]))
    psi = np.moveaxis(psi, 0, mode)
    return psi.reshape(-1)

"""Hamiltonian builders, drive linearization, stability and RWA checks.

Couplings are expressed in units of a reference rate (usually ``g1`` or
``beta``); time is measured in the inverse of that rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, DomainError, NumericalError, StabilityError
from .fock import SPARSE_MIN_DIM, QOperator, TensorSpace, annihilation, rotated_quadrature

CUBIC_PREFACTOR = -3j / (2 * np.sqrt(2))


@dataclass(frozen=True, eq=False)
class DriveSet:
    """Complex couplings ``g1..g5`` for each mechanical mode.

    ``g`` has shape ``(N, 5)``; column ``k`` holds ``g_{k+1}``.
    """

    g: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.array(self.g, dtype=complex))
        if g.ndim != 2 or g.shape[1] != 5:
            raise DomainError(f"DriveSet needs shape (N, 5), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DomainError("couplings must be finite")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    @classmethod
    def single(cls, g1=0, g2=0, g3=0, g4=0, g5=0) -> "DriveSet":
        return cls([[g1, g2, g3, g4, g5]])

    @classmethod
    def zeros(cls, n_modes: int) -> "DriveSet":
        return cls(np.zeros((n_modes, 5)))

    @property
    def n_modes(self) -> int:
        return self.g.shape[0]

    def mode(self, j: int) -> np.ndarray:
        """Couplings of mechanical mode ``j`` (0-based) as ``[g1, ..., g5]``."""
        return self.g[j]

    def scaled(self, factor: complex) -> "DriveSet":
        return DriveSet(self.g * factor)

    def __repr__(self):
        return f"DriveSet(n_modes={self.n_modes})"


@dataclass(frozen=True)
class PhysicalParams:
    """Physical rates; per-mode fields are broadcast to the mode count."""

    kappa: float
    Omega: Sequence[float] = (1.0,)
    Gamma_m: Sequence[float] = (0.0,)
    nbar: Sequence[float] = (0.0,)
    G_L: Sequence[float] = (0.0,)
    G_Q: Sequence[float] = (0.0,)

    def __post_init__(self):
        n = max(len(np.atleast_1d(getattr(self, f))) for f in ("Omega", "Gamma_m", "nbar", "G_L", "G_Q"))
        for name in ("Omega", "Gamma_m", "nbar", "G_L", "G_Q"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if len(arr) == 1:
                arr = np.repeat(arr, n)
            if len(arr) != n:
                raise DomainError(f"{name} has {len(arr)} entries, expected {n}")
            object.__setattr__(self, name, tuple(float(x) for x in arr))
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")
        if any(o <= 0 for o in self.Omega):
            raise DomainError("mechanical frequencies must be positive")
        if any(x < 0 for x in self.Gamma_m) or any(x < 0 for x in self.nbar):
            raise DomainError("damping rates and occupations must be non-negative")

    @property
    def n_modes(self) -> int:
        return len(self.Omega)

    @property
    def R(self) -> tuple[float, ...]:
        """Linear to quadratic coupling ratio per mode (``nan`` where undefined)."""
        return tuple(gl / gq if gq else float("nan") for gl, gq in zip(self.G_L, self.G_Q))


@dataclass(frozen=True)
class StabilityReport:
    drift: np.ndarray
    eigen_real_parts: np.ndarray
    stable_rh: bool
    stable_eig: bool
    rh_value: float  # R1 R2 + I1 I2


def _mech_blocks(cutoff: int):
    b = annihilation(cutoff).matrix
    bd = b.conj().T
    return b, bd, b @ b, bd @ bd, b @ bd + bd @ b


def mode_coupling(g: Sequence[complex], cutoff: int) -> np.ndarray:
    """Single-mode ``g1 b + g2 b† + g3 b² + g4 b†² + g5 {b, b†}``."""
    blocks = _mech_blocks(cutoff)
    return sum(gk * blk for gk, blk in zip(g, blocks))


def _check_cavity_space(space: TensorSpace, n_mech: int):
    if space.n_modes != n_mech + 1:
        raise DimensionError(
            f"space has {space.n_modes - 1} mechanical modes, drives have {n_mech}"
        )


def _lift_mech(m: np.ndarray, j: int, space: TensorSpace) -> sp.csr_matrix:
    """Embed a matrix acting on mechanical mode ``j`` (1-based mode index)."""
    left = int(np.prod(space.cutoffs[1:j]))
    right = int(np.prod(space.cutoffs[j + 1:]))
    return sp.kron(sp.kron(sp.identity(left), sp.csr_matrix(m)), sp.identity(right), format="csr")


def _storage(m: sp.spmatrix, space: TensorSpace):
    return m.tocsr() if space.dim > SPARSE_MIN_DIM else m.toarray()


def cavity_coupling(mech_op: sp.spmatrix, space: TensorSpace):
    """Matrix of ``a† ⊗ M + H.c.`` for a mechanical-space operator ``M``.

    Dense for small spaces, CSR above ``SPARSE_MIN_DIM``.
    """
    a = sp.csr_matrix(annihilation(space.cutoffs[0]).matrix)
    term = sp.kron(a.conj().T, mech_op, format="csr")
    return _storage(term + term.conj().T, space)


def rwa_hamiltonian(drives: DriveSet, space: TensorSpace) -> QOperator:
    """``a† Σ_j (g1 b_j + g2 b_j† + g3 b_j² + g4 b_j†² + g5 {b_j, b_j†}) + H.c.``"""
    _check_cavity_space(space, drives.n_modes)
    mech_dim = int(np.prod(space.cutoffs[1:]))
    m = sp.csr_matrix((mech_dim, mech_dim), dtype=complex)
    for j in range(drives.n_modes):
        gj = drives.mode(j)
        if np.any(gj != 0):
            m = m + _lift_mech(mode_coupling(gj, space.cutoffs[j + 1]), j + 1, space)
    return QOperator(space, cavity_coupling(m, space))


def beam_splitter(beta: float, mode: int, space: TensorSpace) -> QOperator:
    """Red-sideband cooling Hamiltonian ``beta (a† b_mode + H.c.)`` (``mode`` 1-based)."""
    g = np.zeros((space.n_modes - 1, 5), dtype=complex)
    g[mode - 1, 0] = beta
    return rwa_hamiltonian(DriveSet(g), space)


def s_of_r(r: float) -> float:
    """Steady-state squeezing ``sqrt((1 + r)/(1 - r))`` for blue/red ratio ``r``."""
    if not 0 <= r < 1:
        raise DomainError(f"r must lie in [0, 1), got {r}")
    return float(np.sqrt((1 + r) / (1 - r)))


def r_of_s(s: float) -> float:
    """Inverse of :func:`s_of_r`."""
    if not s >= 1:
        raise DomainError(f"s must be >= 1, got {s}")
    return (s**2 - 1) / (s**2 + 1)


def cubic_drive_couplings(g1: float, r: float, gamma: float) -> DriveSet:
    """Couplings whose steady state is the cubic phase state ``|gamma, s(r)>``.

    ``g2 = -r g1`` and ``g3 = g4 = g5 = -(3i / 2√2) gamma (1 + r) g1``.
    """
    if not g1 > 0:
        raise DomainError(f"g1 must be positive, got {g1}")
    if not 0 <= r < 1:
        raise StabilityError(f"r = {r} gives unstable dynamics; need 0 <= r < 1")
    quad = CUBIC_PREFACTOR * gamma * (1 + r) * g1
    return DriveSet.single(g1, -r * g1, quad, quad, quad)


def measurement_hamiltonian(beta: float, phi: float, mode: int, space: TensorSpace) -> QOperator:
    """QND coupling ``2 beta X Q_phi`` between the cavity and mechanical ``mode`` (1-based)."""
    if not 1 <= mode < space.n_modes:
        raise DimensionError(f"mode {mode} is not a mechanical mode")
    a = annihilation(space.cutoffs[0]).matrix
    x = (a + a.conj().T) / np.sqrt(2)
    qphi = rotated_quadrature(space.cutoffs[mode], phi).matrix
    m = sp.kron(sp.csr_matrix(x), _lift_mech(qphi, mode, space))
    return QOperator(space, _storage(2 * beta * m, space))


# --- classical steady state ---------------------------------------------------


def classical_steady_state(
    eps: Sequence[complex],
    Delta: Sequence[float],
    params: PhysicalParams,
    damping: float = 0.5,
    max_iter: int = 10_000,
    tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Self-consistent mean fields ``(Q0_j, alpha_k)`` of the driven cavity.

    Solves, by damped fixed-point iteration on the tone amplitudes,

        Q0_j    = -gL_j S / (Omega_j + 2 gQ_j S),   S = Σ_k |alpha_k|²
        alpha_k = -i eps_k / (kappa/2 + i(-Delta_k + Σ_j gL_j Q0_j + gQ_j Q0_j²))

    with ``params.G_L``/``params.G_Q`` taken as the bare couplings ``gL``/``gQ``.
    Assumes the weak-coupling regime where these equations are contractive.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=complex))
    Delta = np.atleast_1d(np.asarray(Delta, dtype=float))
    if eps.shape != Delta.shape:
        raise DomainError("eps and Delta must have the same length")
    gl = np.asarray(params.G_L)
    gq = np.asarray(params.G_Q)
    om = np.asarray(params.Omega)

    def positions(alpha):
        s = np.sum(np.abs(alpha) ** 2)
        return -gl * s / (om + 2 * gq * s)

    def amplitudes(q0):
        shift = np.sum(gl * q0 + gq * q0**2)
        return -1j * eps / (params.kappa / 2 + 1j * (-Delta + shift))

    alpha = amplitudes(np.zeros_like(om))
    residual = np.inf
    for _ in range(max_iter):
        new = amplitudes(positions(alpha))
        residual = float(np.max(np.abs(new - alpha), initial=0.0))
        alpha = (1 - damping) * alpha + damping * new
        if residual < tol:
            break
    q0 = positions(alpha)
    residual = float(np.max(np.abs(amplitudes(q0) - alpha), initial=0.0))
    if not residual < tol:
        raise NumericalError(f"classical steady state did not converge (residual {residual:.3g})", residual)
    return q0, alpha


# --- stability ----------------------------------------------------------------


def drift_matrix(drives: DriveSet, kappa: float, Gamma: float = 0.0) -> StabilityReport:
    """Drift matrix of ``(x, y, q, p)`` fluctuations for a single mechanical mode."""
    if drives.n_modes != 1:
        raise DimensionError("drift_matrix is defined for a single mechanical mode")
    g1, g2 = drives.mode(0)[:2]
    r1, i1 = (g1 + g2).real, (g1 + g2).imag
    r2, i2 = (g1 - g2).real, (g1 - g2).imag
    a = np.array(
        [
            [-kappa / 2, 0.0, i1, r2],
            [0.0, -kappa / 2, -r1, i2],
            [-i2, r2, 0.0, 0.0],
            [-r1, -i1, 0.0, -Gamma],
        ]
    )
    re = np.linalg.eigvals(a).real
    return StabilityReport(
        drift=a,
        eigen_real_parts=np.sort(re),
        stable_rh=bool(abs(g1) > abs(g2)),
        stable_eig=bool(np.all(re < 0)),
        rh_value=float(r1 * r2 + i1 * i2),
    )


# --- rotating wave approximation ----------------------------------------------


@dataclass(frozen=True)
class RWAReport:
    ratio: float
    margin: float
    passed: bool
    worst_term: str


def rwa_validity(drives: DriveSet, R: float, Omega: float, margin: float = 0.1) -> RWAReport:
    """Largest of ``|g_j|``, ``|R g_mu|`` (mu=3,4,5), ``|g_nu|/R`` (nu=1,2) over ``Omega``."""
    if not Omega > 0 or not R > 0:
        raise DomainError("Omega and R must be positive")
    candidates = {}
    for j, gj in enumerate(drives.g):
        for k in range(5):
            candidates[f"|g{k + 1}| (mode {j + 1})"] = abs(gj[k])
        for k in (2, 3, 4):
            candidates[f"|R g{k + 1}| (mode {j + 1})"] = R * abs(gj[k])
        for k in (0, 1):
            candidates[f"|g{k + 1}/R| (mode {j + 1})"] = abs(gj[k]) / R
    worst = max(candidates, key=candidates.get)
    ratio = candidates[worst] / Omega
    return RWAReport(ratio=ratio, margin=margin, passed=bool(ratio < margin), worst_term=worst)


@dataclass(frozen=True, eq=False)
class TimeDependentHamiltonian:
    """``H(t) = static + Σ_k (B_k e^{i w_k t} + B_k† e^{-i w_k t})``.

    Blocks are built once; evaluation only rescales them.
    """

    static: QOperator
    blocks: tuple[QOperator, ...] = ()
    frequencies: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.blocks) != len(self.frequencies):
            raise ValueError("one frequency per block required")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "frequencies", tuple(float(w) for w in self.frequencies))

    @property
    def space(self) -> TensorSpace:
        return self.static.space

    @property
    def max_frequency(self) -> float:
        return max((abs(w) for w in self.frequencies), default=0.0)

    def phases(self, t: float) -> np.ndarray:
        return np.exp(1j * np.asarray(self.frequencies) * t)

    def __call__(self, t: float) -> QOperator:
        m = np.array(self.static.dense())
        for blk, ph in zip(self.blocks, self.phases(t)):
            d = blk.dense()
            m += ph * d + np.conj(ph) * d.conj().T
        return QOperator(self.static.space, m)


def counter_rotating_blocks(drives: DriveSet, R: float, space: TensorSpace) -> tuple[QOperator, ...]:
    """The four single-mode counter-rotating blocks ``H^(1)..H^(4)``.

    The full rotating-frame Hamiltonian is
    ``H_RWA + Σ_l H^(l) e^{i l Omega t} + H.c.``.
    """
    if drives.n_modes != 1:
        raise DimensionError("counter-rotating terms are implemented for one mechanical mode")
    _check_cavity_space(space, 1)
    g1, g2, g3, g4, g5 = drives.mode(0)
    a = sp.csr_matrix(annihilation(space.cutoffs[0]).matrix)
    ad = a.conj().T.tocsr()
    b, bd, _, bd2, anti = (sp.csr_matrix(x) for x in _mech_blocks(space.cutoffs[1]))

    def cav(x, y):
        # x a† + y a
        return x * ad + y * a

    h1 = (
        R * sp.kron(cav(g3, np.conj(g4)), b)
        + R * sp.kron(cav(g5, np.conj(g5)), bd)
        + sp.kron(cav(g2, np.conj(g1)), bd2) / R
        + sp.kron(cav(g1, np.conj(g2)), anti) / R
    )
    h2 = (
        sp.kron(cav(g1, np.conj(g2)), bd)
        + sp.kron(cav(g5, np.conj(g5)), bd2)
        + sp.kron(cav(g3, np.conj(g4)), anti)
    )
    h3 = R * sp.kron(cav(g3, np.conj(g4)), bd) + sp.kron(cav(g1, np.conj(g2)), bd2) / R
    h4 = sp.kron(cav(g3, np.conj(g4)), bd2)
    return tuple(QOperator(space, _storage(h, space)) for h in (h1, h2, h3, h4))


def full_hamiltonian(drives: DriveSet, R: float, Omega: float, space: TensorSpace) -> TimeDependentHamiltonian:
    """RWA Hamiltonian plus counter-rotating terms, as a time callback."""
    blocks = counter_rotating_blocks(drives, R, space)
    return TimeDependentHamiltonian(
        static=rwa_hamiltonian(drives, space),
        blocks=blocks,
        frequencies=tuple(l * Omega for l in range(1, 5)),
    )


def counter_rotating_hamiltonian(drives: DriveSet, R: float, Omega: float, t: float, space: TensorSpace) -> QOperator:
    """``Σ_l H^(l) e^{i l Omega t} + H.c.`` at time ``t``."""
    blocks = counter_rotating_blocks(drives, R, space)
    m = np.zeros((space.dim, space.dim), dtype=complex)
    for l, blk in enumerate(blocks, start=1):
        ph = np.exp(1j * l * Omega * t)
        d = blk.dense()
        m += ph * d + np.conj(ph) * d.conj().T
    return QOperator(space, m)

"""Constructors for squeezed, cubic phase, thermal and cluster states."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, ResourceError, TruncationError
from .fock import QState, TensorSpace, apply_on_mode, quadrature_eigh, single_mode

DEFAULT_TOL = 1e-6
# complex128 entries of a pure cluster vector
DEFAULT_MAX_DIM = 2**22


@dataclass(frozen=True, eq=False)
class ClusterSpec:
    """Target cluster ``E(A) Γ(γ) S(s)|0>`` on N mechanical modes."""

    adjacency: np.ndarray
    squeezing: np.ndarray
    cubic: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        s = np.atleast_1d(np.asarray(self.squeezing, dtype=float))
        g = np.atleast_1d(np.asarray(self.cubic, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n):
            raise DomainError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise DomainError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise DomainError("adjacency must have zero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise DomainError("weighted graphs are not supported; entries must be 0 or 1")
        if s.shape != (n,) or g.shape != (n,):
            raise DomainError(f"need {n} squeezing and cubic parameters")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise DomainError("squeezing parameters must be positive")
        if not np.all(np.isfinite(g)):
            raise DomainError("cubic parameters must be finite")
        for name, arr in (("adjacency", a), ("squeezing", s), ("cubic", g)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_modes(self) -> int:
        return len(self.squeezing)

    @classmethod
    def linear(cls, squeezing, cubic) -> "ClusterSpec":
        """Path graph 1-2-...-N."""
        n = len(squeezing)
        a = np.zeros((n, n))
        for j in range(n - 1):
            a[j, j + 1] = a[j + 1, j] = 1
        return cls(a, squeezing, cubic)


def default_cutoff(s: float, gamma: float = 0.0) -> int:
    return max(20, math.ceil(10 * s**2 + 200 * gamma**2))


def squeezed_amplitudes(s: float, cutoff: int) -> tuple[np.ndarray, float]:
    """Fock amplitudes of ``S(s)|0>`` truncated to ``cutoff`` and the discarded weight."""
    if not s > 0 or not np.isfinite(s):
        raise DomainError(f"squeezing s must be positive, got {s}")
    r = math.log(s)
    amp = np.zeros(cutoff, dtype=complex)
    if r == 0:
        amp[0] = 1.0
        return amp, 0.0
    t = math.tanh(r)
    n = np.arange((cutoff + 1) // 2)
    log_mag = (
        -0.5 * math.log(math.cosh(r))
        + n * math.log(abs(t))
        + 0.5 * gammaln(2 * n + 1)
        - n * math.log(2.0)
        - gammaln(n + 1)
    )
    amp[2 * n] = np.sign(t) ** n * np.exp(log_mag)
    loss = max(0.0, 1.0 - float(np.sum(np.abs(amp) ** 2)))
    return amp, loss


def squeezed_vacuum(s: float, cutoff: int, tol: float = DEFAULT_TOL) -> QState:
    """Momentum-squeezed vacuum with ``Var(q) = s²/2`` and ``Var(p) = 1/(2 s²)``.

    Raises :class:`TruncationError` when more than ``tol`` of the probability
    lies above the cutoff.
    """
    amp, loss = squeezed_amplitudes(s, cutoff)
    if loss > tol:
        raise TruncationError(
            f"cutoff {cutoff} loses {loss:.3g} of squeezed vacuum s={s}", loss
        )
    return QState.pure(single_mode(cutoff, "mech1"), amp, normalize=True, truncation_loss=loss)


def _cubic_vector(gamma: float, s: float, cutoff: int) -> tuple[np.ndarray, float]:
    amp, loss = squeezed_amplitudes(s, cutoff)
    amp = amp / np.linalg.norm(amp)
    if gamma != 0:
        x, o = quadrature_eigh(cutoff, 0.0)
        amp = o @ (np.exp(1j * gamma * x**3) * (o.conj().T @ amp))
    return amp, loss


def cubic_phase_state(gamma: float, s: float, cutoff: int, tol: float = DEFAULT_TOL, pad: int = 0) -> QState:
    """Finitely squeezed cubic phase state ``exp(i γ q³) S(s)|0>``.

    With ``pad == 0`` the cubic gate is the exponential of the cubed truncated
    position matrix at ``cutoff``. A positive ``pad`` builds the state at
    ``cutoff + pad`` and truncates, which is closer to the untruncated state.
    ``truncation_loss`` is the weight above ``cutoff`` of a padded build.
    """
    if pad < 0:
        raise DomainError("pad must be non-negative")
    probe = max(pad, 10, cutoff // 2)
    big, sq_loss = _cubic_vector(gamma, s, cutoff + probe)
    loss = float(np.sum(np.abs(big[cutoff:]) ** 2)) + sq_loss
    if loss > tol:
        raise TruncationError(
            f"cutoff {cutoff} loses {loss:.3g} of cubic phase state (gamma={gamma}, s={s})",
            loss,
        )
    if pad:
        vec, _ = _cubic_vector(gamma, s, cutoff + pad)
        vec = vec[:cutoff]
    else:
        vec, _ = _cubic_vector(gamma, s, cutoff)
    return QState.pure(single_mode(cutoff, "mech1"), vec, normalize=True, truncation_loss=loss)


def thermal_state(nbar: float, cutoff: int, tol: float = DEFAULT_TOL, allow_truncation: bool = False) -> QState:
    """Thermal state with occupation ``nbar``, renormalized after truncation.

    The discarded geometric tail ``(nbar/(1+nbar))**cutoff`` is stored in
    ``truncation_loss``. It must stay below ``tol`` unless ``allow_truncation``.
    """
    if nbar < 0 or not np.isfinite(nbar):
        raise DomainError(f"nbar must be non-negative, got {nbar}")
    space = single_mode(cutoff, "mech1")
    if nbar == 0:
        rho = np.zeros((cutoff, cutoff))
        rho[0, 0] = 1.0
        return QState.mixed(space, rho)
    x = nbar / (1.0 + nbar)
    tail = x**cutoff
    if tail > tol and not allow_truncation:
        raise TruncationError(
            f"thermal nbar={nbar} needs a larger cutoff than {cutoff} (tail {tail:.3g})", tail
        )
    pops = x ** np.arange(cutoff)
    pops /= pops.sum()
    return QState.mixed(space, np.diag(pops), truncation_loss=tail)


def vacuum(space: TensorSpace) -> QState:
    v = np.zeros(space.dim, dtype=complex)
    v[0] = 1.0
    return QState.pure(space, v)


def fock_state(cutoff: int, n: int) -> QState:
    v = np.zeros(cutoff, dtype=complex)
    v[n] = 1.0
    return QState.pure(single_mode(cutoff), v)


def product_state(states: Sequence[QState], labels: Sequence[str] | None = None) -> QState:
    """Tensor product; pure if every factor is pure."""
    cutoffs = tuple(c for st in states for c in st.space.cutoffs)
    space = TensorSpace(cutoffs, tuple(labels) if labels else ())
    loss = 1.0 - float(np.prod([1.0 - st.truncation_loss for st in states]))
    if all(st.is_pure for st in states):
        v = states[0].data
        for st in states[1:]:
            v = np.kron(v, st.data)
        return QState.pure(space, v, normalize=True, truncation_loss=loss)
    rho = states[0].dm()
    for st in states[1:]:
        rho = np.kron(rho, st.dm())
    return QState.mixed(space, rho, normalize=True, truncation_loss=loss, validate=space.dim <= 4096)


def cluster_state(
    spec: ClusterSpec,
    cutoffs: int | Sequence[int],
    tol: float = DEFAULT_TOL,
    max_dim: int = DEFAULT_MAX_DIM,
) -> QState:
    """Pure cluster state ``E(A) Γ(γ) S(s)|0>`` on the mechanical modes.

    ``CZ`` and cubic gates are diagonal in the eigenbasis of the truncated
    position operators, so they are applied there.
    """
    n = spec.n_modes
    if np.isscalar(cutoffs):
        cutoffs = [int(cutoffs)] * n
    cutoffs = tuple(int(c) for c in cutoffs)
    if len(cutoffs) != n:
        raise DomainError(f"need {n} cutoffs, got {len(cutoffs)}")
    dim = int(np.prod(cutoffs))
    if dim > max_dim:
        raise ResourceError(f"cluster dimension {dim} exceeds budget {max_dim}")
    loss = 0.0
    factors = []
    for j in range(n):
        amp, lj = squeezed_amplitudes(spec.squeezing[j], cutoffs[j])
        factors.append(amp / np.linalg.norm(amp))
        loss = 1.0 - (1.0 - loss) * (1.0 - lj)
    if loss > tol:
        raise TruncationError(f"cutoffs {cutoffs} lose {loss:.3g} of the squeezed inputs", loss)
    psi = factors[0]
    for f in factors[1:]:
        psi = np.kron(psi, f)

    # to the position eigenbasis of each mode
    nodes = []
    for j in range(n):
        x, o = quadrature_eigh(cutoffs[j], 0.0)
        nodes.append(x)
        psi = apply_on_mode(o.conj().T, psi, j, cutoffs)
    grids = np.meshgrid(*nodes, indexing="ij")
    phase = np.zeros(cutoffs)
    for j in range(n):
        phase += spec.cubic[j] * grids[j] ** 3
        for k in range(j + 1, n):
            if spec.adjacency[j, k]:
                phase += grids[j] * grids[k]
    psi = (psi.reshape(cutoffs) * np.exp(1j * phase)).reshape(-1)
    for j in range(n):
        _, o = quadrature_eigh(cutoffs[j], 0.0)
        psi = apply_on_mode(o, psi, j, cutoffs)
    labels = tuple(f"mech{j}" for j in range(1, n + 1))
    return QState.pure(TensorSpace(cutoffs, labels), psi, normalize=True, truncation_loss=loss)

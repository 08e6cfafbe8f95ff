"""Fidelities, Wigner functions, squeezing in dB and truncation diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, UnsupportedOperationError
from .fock import QState, hermite_functions
from .lindblad import _uhlmann

TAIL_THRESHOLD = 1e-4
WIGNER_POINTS = 201
WIGNER_EXTENT = 6.0


def fidelity_pure_target(target: QState, rho: QState) -> float:
    """``sqrt(<psi|rho|psi>)`` for a pure target ``psi``; ``|<psi|phi>|`` if ``rho`` is pure too."""
    if not target.is_pure:
        raise UnsupportedOperationError("fidelity against a mixed target is not supported; use uhlmann_fidelity")
    if target.space.cutoffs != rho.space.cutoffs:
        raise DimensionError(f"target cutoffs {target.space.cutoffs} != state cutoffs {rho.space.cutoffs}")
    psi = target.data
    if rho.is_pure:
        return float(abs(np.vdot(psi, rho.data)))
    return float(np.sqrt(max(np.vdot(psi, rho.data @ psi).real, 0.0)))


def uhlmann_fidelity(rho: QState, sigma: QState) -> float:
    """General fidelity ``tr sqrt(sqrt(rho) sigma sqrt(rho))`` between two states."""
    if rho.space.cutoffs != sigma.space.cutoffs:
        raise DimensionError(f"cutoffs differ: {rho.space.cutoffs} vs {sigma.space.cutoffs}")
    if rho.is_pure:
        return fidelity_pure_target(rho, sigma)
    if sigma.is_pure:
        return fidelity_pure_target(sigma, rho)
    return _uhlmann(rho.data, sigma.data)


def squeezing_db(s: float) -> float:
    """Squeezing ``10 log10(s²)`` in dB."""
    if not s > 0:
        raise DomainError(f"s must be positive, got {s}")
    return 10.0 * math.log10(s * s)


@dataclass(frozen=True)
class WignerGrid:
    """Wigner function samples; ``values[i, j]`` is ``W(q_axis[i], p_axis[j])``."""

    q_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.p_axis, axis=1), self.q_axis))

    def marginal_q(self) -> np.ndarray:
        return np.trapezoid(self.values, self.p_axis, axis=1)

    def marginal_p(self) -> np.ndarray:
        return np.trapezoid(self.values, self.q_axis, axis=0)

    @property
    def min(self) -> float:
        return float(self.values.min())


def wigner(
    rho: QState,
    q_axis: np.ndarray | None = None,
    p_axis: np.ndarray | None = None,
    coverage_tol: float = 0.02,
) -> WignerGrid:
    """Wigner function of a single-mode state.

    Evaluates ``W(q, p) = (1/π) ∫ dy <q+y|rho|q-y> e^{-2ipy}`` with the
    position wavefunctions expanded in Hermite functions and the ``y``
    integral done by the trapezoid rule on a grid fine enough for the
    cutoff and the largest ``|p|``. Warns when the grid integral deviates
    from one by more than ``coverage_tol``.
    """
    if rho.space.n_modes != 1:
        raise DimensionError("wigner needs a single-mode state")
    if q_axis is None:
        q_axis = np.linspace(-WIGNER_EXTENT, WIGNER_EXTENT, WIGNER_POINTS)
    if p_axis is None:
        p_axis = np.linspace(-WIGNER_EXTENT, WIGNER_EXTENT, WIGNER_POINTS)
    q_axis = np.asarray(q_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    dm = rho.dm()
    n = dm.shape[0]
    support = math.sqrt(2 * n + 1) + 4.0
    k_max = 2 * math.sqrt(2 * n + 1) + 2 * float(np.max(np.abs(p_axis)))
    dy = math.pi / (2 * k_max)
    n_y = 2 * int(math.ceil(support / dy)) + 1
    y = np.linspace(-support, support, n_y)
    weights = np.full(n_y, y[1] - y[0])
    weights[[0, -1]] *= 0.5
    phase = np.exp(-2j * np.outer(p_axis, y)) * weights  # (n_p, n_y)
    kernel = np.empty((len(q_axis), n_y), dtype=complex)
    for i, q in enumerate(q_axis):
        plus = hermite_functions(n, q + y)
        minus = hermite_functions(n, q - y)
        kernel[i] = np.sum(plus * (dm @ minus), axis=0)
    values = np.real(kernel @ phase.T) / math.pi
    grid = WignerGrid(q_axis, p_axis, values)
    if len(q_axis) > 1 and len(p_axis) > 1:
        total = grid.integral()
        if abs(total - 1.0) > coverage_tol:
            warnings.warn(f"Wigner grid integrates to {total:.4f}; the state is not contained in the grid", RuntimeWarning)
    return grid


@dataclass(frozen=True)
class TruncationReport:
    """Population in the top two Fock levels of each mode."""

    labels: tuple[str, ...]
    cutoffs: tuple[int, ...]
    tails: tuple[float, ...]
    threshold: float = TAIL_THRESHOLD

    @property
    def converged(self) -> bool:
        return all(t < self.threshold for t in self.tails)

    def as_dict(self) -> dict:
        return {
            "cutoffs": dict(zip(self.labels, self.cutoffs)),
            "tails": dict(zip(self.labels, self.tails)),
            "threshold": self.threshold,
            "converged": self.converged,
        }


def fock_populations(state: QState) -> list[np.ndarray]:
    """Number-state populations of every mode."""
    if state.is_pure:
        diag = np.abs(state.data) ** 2
    else:
        diag = np.real(np.diag(state.data))
    diag = diag.reshape(state.space.cutoffs)
    out = []
    for k in range(state.space.n_modes):
        axes = tuple(j for j in range(state.space.n_modes) if j != k)
        out.append(diag.sum(axis=axes) if axes else diag)
    return out


def truncation_report(state: QState, threshold: float = TAIL_THRESHOLD) -> TruncationReport:
    tails = tuple(float(p[-2:].sum()) for p in fock_populations(state))
    return TruncationReport(state.space.mode_labels, state.space.cutoffs, tails, threshold)

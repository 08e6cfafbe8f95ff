"""Master-equation dynamics on truncated Fock spaces.

The Liouvillian is applied matrix-free as

    drho/dt = -i (H_eff rho - rho H_eff†) + Σ_k rate_k c_k rho c_k†,
    H_eff   = H - (i/2) Σ_k rate_k c_k† c_k,

which needs one product for the Hamiltonian part (rho is Hermitian) and two
per collapse operator. Only the steady-state solvers build a superoperator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, NumericalError
from .fock import QOperator, QState, TensorSpace, _fro, annihilation, embed
from ._kernels import HAVE_NUMBA, SparseRHS
from .model import TimeDependentHamiltonian

log = logging.getLogger(__name__)

# dense products beat CSR below this dimension
DENSE_MAX_DIM = 200
# dense superoperator only up to this Hilbert-space dimension
DIRECT_MAX_DIM = 64
# matrix-free GMRES keeps a few dense d x d work arrays per Krylov vector
ITERATIVE_MAX_DIM = 1500

Hamiltonian = Union[QOperator, TimeDependentHamiltonian]


def _as_matrix(m, dense: bool):
    if dense:
        return np.asarray(m.toarray() if sp.issparse(m) else m, dtype=complex)
    return sp.csr_matrix(m, dtype=complex)


def _norm_bound(m) -> float:
    """Upper bound on the spectral norm, ``sqrt(||m||_1 ||m||_inf)``."""
    a = abs(m) if sp.issparse(m) else np.abs(m)
    n1 = float(np.max(a.sum(axis=0)))
    ninf = float(np.max(a.sum(axis=1)))
    return float(np.sqrt(n1 * ninf))


def _hermitian_norm(m) -> float:
    """Spectral norm of a Hermitian matrix (slightly inflated when iterative)."""
    if m.shape[0] <= DENSE_MAX_DIM or not sp.issparse(m):
        a = m.toarray() if sp.issparse(m) else np.asarray(m)
        if a.shape[0] > 4 * DENSE_MAX_DIM:
            return _norm_bound(a)
        lam = scipy.linalg.eigvalsh(0.5 * (a + a.conj().T))
        return float(np.max(np.abs(lam))) if lam.size else 0.0
    if m.nnz == 0:
        return 0.0
    try:
        lam = spla.eigsh(0.5 * (m + m.conj().T), k=1, which="LM", tol=1e-4, return_eigenvectors=False)
        return 1.02 * float(np.max(np.abs(lam)))
    except spla.ArpackNoConvergence:
        return _norm_bound(m)


@dataclass(frozen=True, eq=False)
class OpenSystem:
    """Hamiltonian plus weighted collapse operators sharing one space."""

    hamiltonian: Hamiltonian
    collapse_ops: tuple[tuple[QOperator, float], ...] = ()

    def __post_init__(self):
        ops = tuple((op, float(rate)) for op, rate in self.collapse_ops)
        for op, rate in ops:
            if rate < 0:
                raise ValueError(f"collapse rate must be non-negative, got {rate}")
            if op.space.cutoffs != self.space.cutoffs:
                raise DimensionError("collapse operator lives on a different space")
        object.__setattr__(self, "collapse_ops", tuple((op, r) for op, r in ops if r > 0))
        dense = self.space.dim <= DENSE_MAX_DIM
        object.__setattr__(self, "_dense", dense)
        cs = [_as_matrix(np.sqrt(r) * op.matrix, dense) for op, r in self.collapse_ops]
        object.__setattr__(self, "_c", cs)
        decay = sum((c.conj().T @ c for c in cs), start=_as_matrix(np.zeros((self.space.dim,) * 2), dense))
        object.__setattr__(self, "_decay", decay)
        h = self.hamiltonian
        if isinstance(h, TimeDependentHamiltonian):
            static = _as_matrix(h.static.matrix, dense)
            blocks = [_as_matrix(b.matrix, dense) for b in h.blocks]
            object.__setattr__(self, "_blocks", [(bk, bk.conj().T) for bk in blocks])
        else:
            static = _as_matrix(h.matrix, dense)
            object.__setattr__(self, "_blocks", [])
        object.__setattr__(self, "_heff_static", static - 0.5j * decay)
        kernel = None
        if not dense and not self._blocks and HAVE_NUMBA:
            kernel = SparseRHS(sp.csr_matrix(self._heff_static), cs)
        object.__setattr__(self, "_kernel", kernel)

    @property
    def space(self) -> TensorSpace:
        h = self.hamiltonian
        return h.space

    @property
    def time_dependent(self) -> bool:
        return isinstance(self.hamiltonian, TimeDependentHamiltonian)

    def h_eff(self, t: float):
        if not self._blocks:
            return self._heff_static
        m = self._heff_static
        for (bk, bkd), ph in zip(self._blocks, self.hamiltonian.phases(t)):
            m = m + ph * bk + np.conj(ph) * bkd
        return m

    def rhs(self, t: float, rho: np.ndarray) -> np.ndarray:
        """``drho/dt`` for a Hermitian density matrix (no checks)."""
        if self._kernel is not None:
            return self._kernel(rho)
        x = self.h_eff(t) @ rho
        out = -1j * (x - x.conj().T)
        for c in self._c:
            y = c @ rho
            out += c @ y.conj().T
        return np.asarray(out)

    def rate_bound(self) -> float:
        """Bound on the Liouvillian's spectral radius.

        ``2 ||H|| + ||Σ c†c|| + Σ ||c||²`` with spectral norms of the Hermitian
        pieces, plus ``2 Σ ||B_l||`` (a cheaper norm bound) for oscillating blocks.
        """
        h = self.hamiltonian
        static = h.static.matrix if isinstance(h, TimeDependentHamiltonian) else h.matrix
        hn = _hermitian_norm(static)
        if self._blocks:
            hn += 2 * sum(_norm_bound(bk) for bk, _ in self._blocks)
        jumps = sum(_hermitian_norm(c.conj().T @ c) for c in self._c)
        return 2 * hn + _hermitian_norm(self._decay) + jumps

    def superoperator(self, sparse: bool = True):
        """Column-stacking superoperator ``L`` with ``vec(drho/dt) = L vec(rho)``.

        Only for time-independent Hamiltonians.
        """
        if self.time_dependent:
            raise ValueError("superoperator needs a constant Hamiltonian")
        d = self.space.dim
        eye = sp.identity(d, format="csr", dtype=complex)
        heff = sp.csr_matrix(self._heff_static)
        # vec(A X B) = (B^T kron A) vec(X)
        L = -1j * (sp.kron(eye, heff) - sp.kron(heff.conj(), eye))
        for c in self._c:
            c = sp.csr_matrix(c)
            L = L + sp.kron(c.conj(), c)
        L = L.tocsc()
        return L if sparse else L.toarray()


def optomech_system(
    hamiltonian: Hamiltonian,
    kappa: float,
    gamma_m: float | Sequence[float] = 0.0,
    nbar: float | Sequence[float] = 0.0,
) -> OpenSystem:
    """Cavity decay ``kappa D[a]`` plus thermal baths on every mechanical mode."""
    space = hamiltonian.space
    n_mech = space.n_modes - 1
    gamma_m = np.broadcast_to(np.asarray(gamma_m, dtype=float), (n_mech,))
    nbar = np.broadcast_to(np.asarray(nbar, dtype=float), (n_mech,))
    ops = [(embed(annihilation(space.cutoffs[0]), 0, space), kappa)]
    for j in range(1, space.n_modes):
        b = embed(annihilation(space.cutoffs[j]), j, space)
        gm, nb = gamma_m[j - 1], nbar[j - 1]
        ops.append((b, gm * (nb + 1)))
        ops.append((b.dag(), gm * nb))
    return OpenSystem(hamiltonian, tuple(ops))


def liouvillian_apply(sys: OpenSystem, rho: QState, t: float = 0.0) -> np.ndarray:
    """``-i[H, rho] + Σ rate D[c] rho`` as a dense matrix."""
    if rho.space.cutoffs != sys.space.cutoffs:
        raise DimensionError("state and system live on different spaces")
    return sys.rhs(t, rho.dm())


# --- time evolution -----------------------------------------------------------

Observable = Union[QOperator, Callable[[np.ndarray], complex]]


@dataclass
class EvolutionResult:
    """Final state, sampled observable table and integrator diagnostics."""

    final: QState
    times: np.ndarray
    values: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    def table(self) -> list[dict]:
        """Rows ``{"t": ..., name: value, ...}``."""
        return [
            {"t": float(t), **{k: v[i] for k, v in self.values.items()}}
            for i, t in enumerate(self.times)
        ]


def _rk4(sys: OpenSystem, t: float, rho: np.ndarray, h: float) -> np.ndarray:
    k1 = sys.rhs(t, rho)
    k2 = sys.rhs(t + h / 2, rho + (h / 2) * k1)
    k3 = sys.rhs(t + h / 2, rho + (h / 2) * k2)
    k4 = sys.rhs(t + h, rho + h * k3)
    return rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + rho.conj().T)


def _min_eig(rho: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(rho, subset_by_index=[0, 0])[0])


def default_step(sys: OpenSystem, safety: float = 2.0, points_per_period: int = 20) -> float:
    """Fixed RK4 step: ``safety / rate_bound``, also resolving the fastest drive frequency.

    RK4 is stable for ``|h λ| < 2.6`` near the imaginary axis, so the default
    ``safety = 2`` keeps every Liouvillian eigenvalue inside the region.
    """
    h = safety / max(sys.rate_bound(), 1e-300)
    if sys.time_dependent and sys.hamiltonian.max_frequency > 0:
        h = min(h, 2 * np.pi / (sys.hamiltonian.max_frequency * points_per_period))
    return h


def _trace_product(op: QOperator, rho: np.ndarray) -> complex:
    """``tr(op rho)`` without forming the product."""
    if op.is_sparse:
        return complex(op.matrix.multiply(rho.T).sum())
    return complex(np.sum(op.matrix.T * rho))


def _evaluate(observables: Mapping[str, Observable], rho: np.ndarray) -> dict[str, complex]:
    out = {}
    for name, obs in observables.items():
        if isinstance(obs, QOperator):
            out[name] = _trace_product(obs, rho)
        else:
            out[name] = obs(rho)
    return out


def evolve(
    sys: OpenSystem,
    rho0: QState,
    t_final: float,
    observables: Mapping[str, Observable] | Sequence[QOperator] = (),
    *,
    dt: float | None = None,
    adaptive: bool = False,
    rtol: float = 1e-8,
    n_samples: int = 101,
    t0: float = 0.0,
    positivity_checks: bool | None = None,
    max_trace_drift: float = 1e-4,
    min_step: float = 1e-12,
) -> EvolutionResult:
    """Integrate the master equation from ``t0`` to ``t0 + t_final``.

    Fixed-step RK4 by default (step from :func:`default_step`), or adaptive
    step doubling with relative tolerance ``rtol``. Observables are sampled on
    ``n_samples`` equally spaced times including both ends. ``rho`` is
    re-symmetrized after every step; a trace drift beyond ``max_trace_drift``
    raises :class:`NumericalError`.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    if rho0.space.cutoffs != sys.space.cutoffs:
        raise DimensionError("initial state and system live on different spaces")
    if not isinstance(observables, Mapping):
        observables = {f"obs{i}": op for i, op in enumerate(observables)}
    if positivity_checks is None:
        positivity_checks = sys.space.dim <= 512
    rho = rho0.dm()
    sample_times = t0 + np.linspace(0.0, t_final, max(n_samples, 2))
    values: dict[str, list] = {k: [] for k in observables}
    min_eig = np.inf
    max_drift = 0.0
    steps = 0
    rejected = 0
    h = dt if dt is not None else default_step(sys)
    t = t0

    def record(r):
        nonlocal min_eig
        for k, v in _evaluate(observables, r).items():
            values[k].append(v)
        if positivity_checks:
            min_eig = min(min_eig, _min_eig(r))

    record(rho)
    for t_next in sample_times[1:]:
        while t < t_next - 1e-12 * max(1.0, abs(t_next)):
            step = min(h, t_next - t)
            if adaptive:
                full = _rk4(sys, t, rho, step)
                half = _rk4(sys, t, rho, step / 2)
                half = _rk4(sys, t + step / 2, half, step / 2)
                err = np.linalg.norm(half - full) / 15.0
                scale = rtol * max(np.linalg.norm(half), 1.0)
                if err > scale:
                    rejected += 1
                    h = step * max(0.2, 0.9 * (scale / err) ** 0.2)
                    if h < min_step:
                        raise NumericalError(f"step size underflow at t={t:.6g}", err)
                    continue
                rho = half
                grow = 0.9 * (scale / err) ** 0.2 if err > 0 else 5.0
                if step == h:
                    h = step * min(5.0, grow)
            else:
                rho = _rk4(sys, t, rho, step)
            rho = _hermitize(rho)
            t += step
            steps += 1
            drift = abs(np.trace(rho).real - 1.0)
            max_drift = max(max_drift, drift)
            if drift > max_trace_drift or not np.isfinite(drift):
                raise NumericalError(f"trace drift {drift:.3g} at t={t:.6g}", drift)
        record(rho)
    final_min = _min_eig(rho) if (positivity_checks or sys.space.dim <= 2048) else np.nan
    diagnostics = {
        "steps": steps,
        "rejected": rejected,
        "trace_drift": max_drift,
        "min_eig": float(min(min_eig, final_min)) if np.isfinite(final_min) else float(min_eig),
        "dt": h,
    }
    final = QState.mixed(sys.space, rho / np.trace(rho).real, validate=False)
    return EvolutionResult(
        final=final,
        times=sample_times,
        values={k: np.asarray(v) for k, v in values.items()},
        diagnostics=diagnostics,
    )


# --- steady state -------------------------------------------------------------


def _solve_with_trace(L, d: int, sparse: bool) -> np.ndarray:
    """Solve ``L vec(rho) = 0`` with ``tr rho = 1`` by replacing the ``rho_00`` row."""
    trace_row = np.zeros(d * d, dtype=complex)
    trace_row[:: d + 1] = 1.0
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    if sparse:
        L = sp.lil_matrix(L)
        L[0, :] = trace_row
        x = spla.spsolve(sp.csc_matrix(L), rhs)
    else:
        L = np.array(L)
        L[0, :] = trace_row
        x = scipy.linalg.solve(L, rhs)
    rho = x.reshape(d, d, order="F")
    rho = _hermitize(rho)
    return rho / np.trace(rho).real


def _solve_iterative(sys: OpenSystem, rho0: np.ndarray | None, rtol: float, restart: int, maxiter: int) -> np.ndarray:
    """GMRES on ``L(X) + |0><0| tr X = |0><0|`` with a Sylvester preconditioner.

    The preconditioner inverts the no-jump part ``X -> -i (H_eff X - X H_eff†)``
    exactly, using the complex Schur form of ``H_eff`` and LAPACK ``trsyl``.
    """
    d = sys.space.dim
    heff = _as_matrix(sys._heff_static, dense=True)
    cs = [_as_matrix(c, dense=True) for c in sys._c]
    T, Q = scipy.linalg.schur(heff, output="complex")
    Qh = Q.conj().T
    trsyl = scipy.linalg.get_lapack_funcs("trsyl", (T,))
    u = np.zeros((d, d), dtype=complex)
    u[0, 0] = 1.0

    def apply(x):
        X = x.reshape(d, d)
        Y = -1j * (heff @ X - X @ heff.conj().T)
        for c in cs:
            Y += c @ X @ c.conj().T
        Y[0, 0] += np.trace(X)
        return Y.reshape(-1)

    def precondition(y):
        C = 1j * (Qh @ y.reshape(d, d) @ Q)
        X, scale, info = trsyl(T, T, C, trana="N", tranb="C", isgn=-1)
        if info < 0:
            raise NumericalError(f"trsyl failed with info={info}", float("nan"))
        return (Q @ (X / scale) @ Qh).reshape(-1)

    A = spla.LinearOperator((d * d, d * d), matvec=apply, dtype=complex)
    M = spla.LinearOperator((d * d, d * d), matvec=precondition, dtype=complex)
    x0 = None if rho0 is None else np.asarray(rho0, dtype=complex).reshape(-1)
    x, info = spla.gmres(A, u.reshape(-1), x0=x0, M=M, rtol=rtol, restart=restart, maxiter=maxiter)
    if info != 0:
        log.warning("GMRES stopped without convergence (info=%d)", info)
    rho = _hermitize(x.reshape(d, d))
    return rho / np.trace(rho).real


def _uhlmann(rho: np.ndarray, sigma: np.ndarray) -> float:
    lam, v = scipy.linalg.eigh(_hermitize(rho))
    sq = (v * np.sqrt(np.clip(lam, 0, None))) @ v.conj().T
    mid = scipy.linalg.eigvalsh(_hermitize(sq @ sigma @ sq))
    return float(np.sum(np.sqrt(np.clip(mid, 0, None))))


def steady_state(
    sys: OpenSystem,
    method: str = "auto",
    *,
    tol: float = 1e-8,
    rho0: QState | None = None,
    check_interval: float | None = None,
    max_time: float = 1e4,
    change_tol: float = 1e-9,
    restart: int = 600,
    maxiter: int = 5000,
) -> QState:
    """Steady state of a time-independent system.

    ``method``:
      * ``"direct"``: dense superoperator solve (total dimension <= 64)
      * ``"sparse"``: sparse LU of the superoperator
      * ``"iterative"``: preconditioned GMRES, never materializing ``L``;
        ``rho0`` is used as the initial guess
      * ``"integrate"``: RK4 until ``||L rho||_F < tol ||H||_F`` and the
        Frobenius distance between checkpoints is below ``change_tol``
      * ``"auto"``: ``direct`` when small enough, then ``iterative``, then ``sparse``

    The residual ``||L rho||_F`` is stored on the result as ``residual`` in
    ``steady_state.last_info``.
    """
    if sys.time_dependent:
        raise ValueError("steady_state needs a constant Hamiltonian")
    d = sys.space.dim
    h_norm = _fro(sys.hamiltonian.matrix)
    scale = h_norm if h_norm > 0 else 1.0
    if method == "auto":
        if d <= DIRECT_MAX_DIM:
            method = "direct"
        else:
            method = "iterative" if d <= ITERATIVE_MAX_DIM else "sparse"
    if method == "direct":
        if d > DIRECT_MAX_DIM:
            raise ValueError(f"direct method limited to dimension {DIRECT_MAX_DIM}, got {d}")
        rho = _solve_with_trace(sys.superoperator(sparse=False), d, sparse=False)
    elif method == "sparse":
        rho = _solve_with_trace(sys.superoperator(sparse=True), d, sparse=True)
    elif method == "iterative":
        guess = None if rho0 is None else rho0.dm()
        rho = _solve_iterative(sys, guess, min(1e-10, 1e-2 * tol), restart, maxiter)
    elif method == "integrate":
        rho = _integrate_to_steady(sys, rho0, tol * scale, check_interval, max_time, change_tol)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")
    residual = float(np.linalg.norm(sys.rhs(0.0, rho)))
    steady_state.last_info = {"method": method, "residual": residual, "relative": residual / scale}
    if not np.isfinite(residual) or residual > max(tol * scale, 1e-6):
        raise NumericalError(f"steady state residual {residual:.3g} too large", residual)
    return QState.mixed(sys.space, rho, validate=False)


steady_state.last_info = {}


def _integrate_to_steady(sys, rho0, tol, check_interval, max_time, change_tol):
    if rho0 is None:
        v = np.zeros(sys.space.dim, dtype=complex)
        v[0] = 1.0
        rho = np.outer(v, v)
    else:
        rho = rho0.dm()
    if check_interval is None:
        rates = [r for _, r in sys.collapse_ops if r > 0]
        check_interval = 10.0 / max(rates) if rates else 10.0
    h = default_step(sys)
    n_per = max(1, int(np.ceil(check_interval / h)))
    h = check_interval / n_per
    t = 0.0
    prev = rho
    while t < max_time:
        for _ in range(n_per):
            rho = _hermitize(_rk4(sys, t, rho, h))
            t += h
        res = np.linalg.norm(sys.rhs(t, rho))
        if res < tol:
            # a fidelity difference is too noisy near rank deficiency to resolve 1e-9
            change = float(np.linalg.norm(rho - prev))
            log.debug("t=%.3g residual=%.3g change=%.3g", t, res, change)
            if change < change_tol:
                return rho / np.trace(rho).real
        prev = rho
    raise NumericalError(f"steady state not reached within t={max_time}", float(np.linalg.norm(sys.rhs(t, rho))))


# --- reduced states and expectations ---------------------------------------


def partial_trace(rho: QState, keep: Sequence[int]) -> QState:
    """Reduced state on the modes in ``keep`` (order preserved as given, sorted)."""
    keep = sorted(set(int(k) for k in keep))
    n = rho.space.n_modes
    if not keep or any(k < 0 or k >= n for k in keep):
        raise DimensionError(f"bad mode indices {keep} for {n} modes")
    sub = rho.space.subspace(keep)
    if len(keep) == n:
        return rho
    dims = rho.space.cutoffs
    drop = [k for k in range(n) if k not in keep]
    dk = sub.dim
    if rho.is_pure:
        psi = rho.data.reshape(dims).transpose(keep + drop).reshape(dk, -1)
        red = psi @ psi.conj().T
    else:
        r = rho.data.reshape(dims + dims)
        perm = keep + drop + [n + k for k in keep] + [n + k for k in drop]
        dd = rho.dim // dk
        r = r.transpose(perm).reshape(dk, dd, dk, dd)
        red = np.einsum("ajbj->ab", r)
    red = _hermitize(red)
    return QState.mixed(sub, red / np.trace(red).real, truncation_loss=rho.truncation_loss, validate=False)


def expectation(op: QOperator, rho: QState) -> complex:
    """``tr(op rho)`` or ``<psi|op|psi>``."""
    if op.space.cutoffs != rho.space.cutoffs:
        raise DimensionError("operator and state live on different spaces")
    if rho.is_pure:
        return complex(np.vdot(rho.data, op.matrix @ rho.data))
    return _trace_product(op, rho.data)

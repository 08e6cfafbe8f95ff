"""Cluster preparation by Hamiltonian switching, homodyne measurement and the
measurement-based cubic phase gate.

Gate conventions used throughout::

    X(m) = exp(-i m p)      Z(θ) = exp(i θ q)
    P(θ) = exp(i θ q²)      F    = exp(i π n / 2)

With these, measuring ``p = m`` on the first node of the two-node cluster
``CZ · (S(s1)|0> ⊗ e^{iγq³} S(s2)|0>)`` leaves the second node in
``X(m) P(3γm) Z(3γm²) F e^{-iγp³} S(s1)|0>`` up to finite-squeezing distortion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, GridError, RareOutcomeError, StabilityError
from .fock import (
    QOperator,
    QState,
    TensorSpace,
    annihilation,
    embed,
    matrix_exp,
    number,
    quadrature_eigenvector,
    quadratures,
    single_mode,
)
from .lindblad import EvolutionResult, OpenSystem, default_step, evolve, optomech_system, partial_trace
from .model import (
    CUBIC_PREFACTOR,
    DriveSet,
    PhysicalParams,
    beam_splitter,
    cubic_drive_couplings,
    drift_matrix,
    rwa_hamiltonian,
    s_of_r,
)
from .states import (
    ClusterSpec,
    cluster_state,
    cubic_phase_state,
    product_state,
    squeezed_amplitudes,
    thermal_state,
    vacuum,
)

log = logging.getLogger(__name__)

UNDERFLOW_DENSITY = 1e-12
GRID_POINTS = 1001
GRID_WIDTH = 8.0
MAX_TAIL_MASS = 1e-4


# --- single-mode cubic steady state ------------------------------------------------


@dataclass(frozen=True, eq=False)
class CubicSteadySetup:
    """Open system whose mechanical steady state should be ``|gamma, s(r)>``.

    ``target`` is that state as seen in the simulation frame: the cubic phase
    state itself in the lab frame, the mechanical vacuum in the cubic frame.
    """

    system: OpenSystem
    target: QState
    frame: str


def cubic_steady_setup(
    g1: float,
    r: float,
    gamma: float,
    kappa: float,
    cutoffs: Sequence[int],
    gamma_m: float = 0.0,
    nbar: float = 0.0,
    frame: str = "lab",
    target_tol: float = 1.0,
) -> CubicSteadySetup:
    """Cavity plus one oscillator driven by :func:`cubic_drive_couplings`.

    ``frame="cubic"`` applies the exact unitary ``W = e^{iγq³} S(s)`` to the
    whole problem. There the Hamiltonian is the beam splitter
    ``g1 sqrt(1 - r²) (a† b + H.c.)``, the bath operators become
    ``W† b W = μ b + ν b† + (3iγ s²/√2) q²`` with ``μ = cosh ln s`` and
    ``ν = sinh ln s``, and the target is the vacuum. Fidelities are
    frame independent; the cubic frame needs far smaller cutoffs.
    """
    cav, n = (int(c) for c in cutoffs)
    space = TensorSpace((cav, n))
    drives = cubic_drive_couplings(g1, r, gamma)
    s = s_of_r(r)
    if frame == "lab":
        H = rwa_hamiltonian(drives, space)
        sys = optomech_system(H, kappa, gamma_m, nbar)
        target = cubic_phase_state(gamma, s, n, tol=target_tol)
        return CubicSteadySetup(sys, target, frame)
    if frame != "cubic":
        raise DomainError(f"frame must be 'lab' or 'cubic', got {frame!r}")
    mu = 0.5 * (s + 1 / s)
    nu = 0.5 * (s - 1 / s)
    b = annihilation(n).matrix
    q, _ = quadratures(n)
    jump = mu * b + nu * b.conj().T + (3j * gamma * s * s / np.sqrt(2)) * (q.matrix @ q.matrix)
    J = embed(QOperator(single_mode(n), jump), 1, space)
    H = beam_splitter(g1 * np.sqrt(1 - r * r), 1, space)
    a = embed(annihilation(cav), 0, space)
    sys = OpenSystem(H, ((a, kappa), (J, gamma_m * (nbar + 1)), (J.dag(), gamma_m * nbar)))
    return CubicSteadySetup(sys, vacuum(single_mode(n, "mech1")), frame)


def mechanical_fidelity(target: QState, rho: QState) -> float:
    """Fidelity of the traced-out mechanical state with a pure target."""
    red = _mech_reduce(rho.dm(), rho.space.cutoffs[0])
    psi = target.data
    return float(np.sqrt(max(np.vdot(psi, red @ psi).real, 0.0)))


# --- switching ------------------------------------------------------------------


def switching_matrices(spec: ClusterSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``U, V, W`` with ``d_l = Σ_j U_lj b_j + V_lj b_j† + W_lj (b_j + b_j†)²``."""
    s = spec.squeezing
    d_plus = np.diag(0.5 * (s + 1 / s))
    d_minus = np.diag(0.5 * (s - 1 / s))
    mix = (d_plus + d_minus) @ spec.adjacency
    U = d_plus - 0.5j * mix
    V = -d_minus - 0.5j * mix
    W = CUBIC_PREFACTOR * np.diag(spec.cubic) @ (d_plus + d_minus)
    return U.astype(complex), V.astype(complex), W.astype(complex)


@dataclass(frozen=True, eq=False)
class SwitchingPlan:
    """N-step switching schedule for a target cluster.

    Step ``l`` runs ``beta (a† d_l + H.c.)`` for ``step_duration``. With
    ``precool`` each mechanical mode is first cooled by ``beta (a† b_j + H.c.)``
    for ``cool_duration``.
    """

    spec: ClusterSpec
    beta: float
    step_duration: float
    precool: bool = False
    cool_duration: float = 0.0
    U: np.ndarray = field(init=False, repr=False)
    V: np.ndarray = field(init=False, repr=False)
    W: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if not self.step_duration > 0:
            raise DomainError("step_duration must be positive")
        if self.precool and not self.cool_duration > 0:
            raise DomainError("pre-cooling needs a positive cool_duration")
        U, V, W = switching_matrices(self.spec)
        for name, arr in (("U", U), ("V", V), ("W", W)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_total_time(cls, spec: ClusterSpec, beta: float, tau: float, **kw) -> "SwitchingPlan":
        """Split a total switching time ``tau`` evenly over the N steps."""
        return cls(spec, beta, tau / spec.n_modes, **kw)

    @property
    def n_steps(self) -> int:
        return self.spec.n_modes


def step_drives(plan: SwitchingPlan, step: int) -> DriveSet:
    """Couplings for step ``step`` (1-based): ``g1 = βU_lj, g2 = βV_lj, g3 = g4 = g5 = βW_lj``."""
    if not 1 <= step <= plan.n_steps:
        raise DomainError(f"step must lie in 1..{plan.n_steps}, got {step}")
    row = step - 1
    g = np.zeros((plan.n_steps, 5), dtype=complex)
    g[:, 0] = plan.beta * plan.U[row]
    g[:, 1] = plan.beta * plan.V[row]
    w = plan.beta * plan.W[row]
    g[:, 2] = g[:, 3] = g[:, 4] = w
    return DriveSet(g)


def collective_mode(plan: SwitchingPlan, step: int, space: TensorSpace) -> QOperator:
    """The transformed annihilation operator ``d_l`` embedded in ``space``."""
    row = step - 1
    out = None
    for j in range(plan.n_steps):
        cutoff = space.cutoffs[j + 1]
        b = annihilation(cutoff).matrix
        x = b + b.conj().T
        m = plan.U[row, j] * b + plan.V[row, j] * b.conj().T + plan.W[row, j] * (x @ x)
        term = embed(QOperator(single_mode(cutoff), m), j + 1, space)
        out = term if out is None else out + term
    return out


def _mech_reduce(rho: np.ndarray, cavity: int) -> np.ndarray:
    """Trace out the cavity (most significant index) of a dense density matrix."""
    m = rho.shape[0] // cavity
    r = rho.reshape(cavity, m, cavity, m)
    return np.einsum("iaib->ab", r)


def _fidelity_observable(target: np.ndarray, cavity: int):
    def fid(rho: np.ndarray) -> float:
        red = _mech_reduce(rho, cavity)
        return float(np.sqrt(max(np.vdot(target, red @ target).real, 0.0)))

    return fid


@dataclass
class SwitchingResult:
    """Concatenated trace of a switching run.

    ``stages`` lists ``(label, t_start, t_end)``; ``fidelity`` is sampled at
    ``times`` against the target cluster; ``occupation`` holds ``<d_l† d_l>``
    during step ``l`` (``nan`` during cooling).
    """

    final: QState
    times: np.ndarray
    fidelity: np.ndarray
    occupation: np.ndarray
    stage: np.ndarray
    stages: list[tuple[str, float, float]]
    target: QState
    runs: list[EvolutionResult]

    def table(self) -> list[dict]:
        return [
            {"t": float(t), "stage": str(s), "fidelity": float(f), "occupation": float(o)}
            for t, s, f, o in zip(self.times, self.stage, self.fidelity, self.occupation)
        ]

    def stage_slice(self, label: str) -> slice:
        idx = np.flatnonzero(self.stage == label)
        return slice(int(idx[0]), int(idx[-1]) + 1)


def precool(
    params: PhysicalParams,
    mode: int,
    beta: float,
    duration: float,
    rho: QState,
    *,
    n_samples: int = 51,
    dt: float | None = None,
) -> EvolutionResult:
    """Red-sideband cooling of mechanical ``mode`` (1-based) with all dissipators on."""
    if not duration > 0:
        raise DomainError("cooling duration must be positive")
    space = rho.space
    H = beam_splitter(beta, mode, space)
    sys = optomech_system(H, params.kappa, params.Gamma_m, params.nbar)
    b = embed(annihilation(space.cutoffs[mode]), mode, space)
    return evolve(sys, rho, duration, {"n": b.dag() @ b}, dt=dt, n_samples=n_samples)


def _initial_state(initial: QState | None, n_mech: int, cutoffs: Sequence[int]) -> QState:
    space = TensorSpace(tuple(cutoffs))
    if initial is None:
        return vacuum(space)
    if initial.space.n_modes == n_mech:
        cav = np.zeros(cutoffs[0], dtype=complex)
        cav[0] = 1.0
        if initial.is_pure:
            return QState.pure(space, np.kron(cav, initial.data), truncation_loss=initial.truncation_loss)
        return QState.mixed(space, np.kron(np.outer(cav, cav), initial.data), validate=False,
                            truncation_loss=initial.truncation_loss)
    if initial.space.cutoffs != space.cutoffs:
        raise DimensionError(f"initial state cutoffs {initial.space.cutoffs} != {tuple(cutoffs)}")
    return initial


def run_switching(
    plan: SwitchingPlan,
    params: PhysicalParams,
    cutoffs: Sequence[int],
    initial: QState | None = None,
    *,
    samples_per_step: int = 51,
    dt: float | None = None,
    target_tol: float = 1e-6,
) -> SwitchingResult:
    """Evolve the switching protocol and trace the fidelity with the target cluster.

    ``cutoffs`` lists the cavity cutoff followed by one cutoff per mechanical
    mode. ``initial`` is either a full state or a mechanical state (the cavity
    then starts in vacuum); ``None`` means global vacuum.
    """
    n = plan.n_steps
    cutoffs = tuple(int(c) for c in cutoffs)
    if len(cutoffs) != n + 1:
        raise DimensionError(f"need {n + 1} cutoffs (cavity first), got {len(cutoffs)}")
    if params.n_modes not in (1, n):
        raise DimensionError(f"physical parameters describe {params.n_modes} modes, plan has {n}")
    space = TensorSpace(cutoffs)
    target = cluster_state(plan.spec, cutoffs[1:], tol=target_tol)
    fid = _fidelity_observable(target.data, cutoffs[0])
    state = _initial_state(initial, n, cutoffs)

    stages: list[tuple[str, float, float, EvolutionResult]] = []
    t = 0.0
    obs_nan = {"fidelity": fid}
    if plan.precool:
        for j in range(1, n + 1):
            H = beam_splitter(plan.beta, j, space)
            sys = optomech_system(H, params.kappa, params.Gamma_m, params.nbar)
            res = evolve(sys, state, plan.cool_duration, obs_nan, dt=dt, n_samples=samples_per_step, t0=t)
            stages.append((f"cool{j}", t, t + plan.cool_duration, res))
            t += plan.cool_duration
            state = res.final

    for step in range(1, n + 1):
        drives = step_drives(plan, step)
        lin = drives.mode(step - 1)
        report = drift_matrix(DriveSet.single(lin[0], lin[1]), params.kappa)
        if not report.stable_rh:
            raise StabilityError(f"step {step} has |g1| <= |g2|; the linear dynamics are unstable")
        H = rwa_hamiltonian(drives, space)
        sys = optomech_system(H, params.kappa, params.Gamma_m, params.nbar)
        d = collective_mode(plan, step, space)
        obs = {"fidelity": fid, "occupation": d.dag() @ d}
        h = dt if dt is not None else default_step(sys)
        log.info("switching step %d: dim %d, dt %.3g", step, space.dim, h)
        res = evolve(sys, state, plan.step_duration, obs, dt=h, n_samples=samples_per_step, t0=t)
        stages.append((f"step{step}", t, t + plan.step_duration, res))
        t += plan.step_duration
        state = res.final

    times, fidelity, occupation, labels = [], [], [], []
    for k, (label, _, _, res) in enumerate(stages):
        sl = slice(0 if k == 0 else 1, None)  # stage boundaries are shared
        times.append(res.times[sl])
        fidelity.append(np.real(res.values["fidelity"][sl]))
        occ = res.values.get("occupation")
        occupation.append(np.real(occ[sl]) if occ is not None else np.full(len(res.times[sl]), np.nan))
        labels.append(np.full(len(res.times[sl]), label))
    return SwitchingResult(
        final=state,
        times=np.concatenate(times),
        fidelity=np.concatenate(fidelity),
        occupation=np.concatenate(occupation),
        stage=np.concatenate(labels),
        stages=[(label, a, b) for label, a, b, _ in stages],
        target=target,
        runs=[res for *_, res in stages],
    )


def thermal_mechanics(nbar: Sequence[float], cutoffs: Sequence[int], allow_truncation: bool = True) -> QState:
    """Product of thermal states, one per mechanical mode."""
    parts = [thermal_state(nb, c, allow_truncation=allow_truncation) for nb, c in zip(nbar, cutoffs)]
    labels = [f"mech{j}" for j in range(1, len(parts) + 1)]
    return product_state(parts, labels)


# --- homodyne measurement -------------------------------------------------------


@dataclass(frozen=True)
class MeasurementRecord:
    mode: int
    phi: float
    outcome: float
    density: float


def _trivial_space() -> TensorSpace:
    return TensorSpace((1,), ("traced",))


def homodyne_project(
    rho: QState,
    mode: int,
    phi: float,
    m: float,
    underflow: float = UNDERFLOW_DENSITY,
) -> tuple[QState, float]:
    """Project ``mode`` onto ``|m>_phi``.

    Returns the normalized posterior on the remaining modes and the outcome
    density ``tr[(<m| ⊗ I) rho (|m> ⊗ I)]`` per unit ``m``. Measuring the only
    mode leaves a one-dimensional placeholder state.
    """
    dims = rho.space.cutoffs
    n = len(dims)
    if not 0 <= mode < n:
        raise DimensionError(f"mode {mode} out of range for {n} modes")
    bra = quadrature_eigenvector(m, phi, dims[mode]).conj()
    rest = [k for k in range(n) if k != mode]
    space = rho.space.subspace(rest) if rest else _trivial_space()
    if rho.is_pure:
        psi = np.tensordot(bra, rho.data.reshape(dims), axes=([0], [mode])).reshape(-1)
        density = float(np.vdot(psi, psi).real)
    else:
        r = rho.data.reshape(dims + dims)
        r = np.tensordot(bra, r, axes=([0], [mode]))
        r = np.tensordot(r, bra.conj(), axes=([n - 1 + mode], [0]))
        d = space.dim
        r = r.reshape(d, d)
        density = float(np.trace(r).real)
    if not density > underflow:
        raise RareOutcomeError(f"outcome m={m} has density {density:.3g} below {underflow:g}")
    if rho.is_pure:
        return QState.pure(space, psi / np.sqrt(density)), density
    r = r / density
    return QState.mixed(space, 0.5 * (r + r.conj().T), validate=False), density


def _mode_state(rho: QState, mode: int) -> np.ndarray:
    if rho.space.n_modes == 1:
        return rho.dm()
    return partial_trace(rho, [mode]).data


def marginal_density(rho: QState, mode: int, phi: float, grid: np.ndarray) -> np.ndarray:
    """Quadrature marginal ``<m|rho_mode|m>`` on ``grid``."""
    red = _mode_state(rho, mode)
    v = quadrature_eigenvector(np.asarray(grid), phi, red.shape[0])
    v = v if v.ndim == 2 else v[:, None]
    return np.real(np.sum(v.conj() * (red @ v), axis=0))


def homodyne_grid(rho: QState, mode: int, phi: float, n_points: int = GRID_POINTS, width: float = GRID_WIDTH) -> np.ndarray:
    """``n_points`` over ``mean ± width·σ`` of the measured quadrature."""
    red = _mode_state(rho, mode)
    cutoff = red.shape[0]
    b = annihilation(cutoff).matrix
    q_op = (np.exp(-1j * phi) * b + np.exp(1j * phi) * b.conj().T) / np.sqrt(2)
    mean = float(np.trace(q_op @ red).real)
    var = float(np.trace(q_op @ q_op @ red).real) - mean**2
    sigma = np.sqrt(max(var, 1e-12))
    return np.linspace(mean - width * sigma, mean + width * sigma, n_points)


def sample_homodyne(
    rho: QState,
    mode: int,
    phi: float,
    rng_seed,
    grid: np.ndarray | None = None,
    max_tail: float = MAX_TAIL_MASS,
) -> MeasurementRecord:
    """Draw one homodyne outcome by inverse-CDF sampling of the grid marginal.

    ``rng_seed`` is anything accepted by :func:`numpy.random.default_rng`.
    Raises :class:`GridError` when more than ``max_tail`` of the probability
    lies outside the grid.
    """
    if grid is None:
        grid = homodyne_grid(rho, mode, phi)
    grid = np.asarray(grid, dtype=float)
    dens = np.clip(marginal_density(rho, mode, phi, grid), 0.0, None)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    total = cdf[-1]
    if 1.0 - total > max_tail:
        raise GridError(f"grid misses {1.0 - total:.3g} of the marginal (limit {max_tail:g})")
    u = np.random.default_rng(rng_seed).random() * total
    k = int(np.clip(np.searchsorted(cdf, u), 1, len(grid) - 1))
    lo, hi = grid[k - 1], grid[k]
    # invert the trapezoid CDF on [lo, hi] with linear density
    f0, f1 = dens[k - 1], dens[k]
    width = hi - lo
    need = u - cdf[k - 1]
    slope = (f1 - f0) / width
    if abs(slope) * width < 1e-12 * max(f0, 1e-300):
        x = need / f0 if f0 > 0 else 0.5 * width
    else:
        x = (-f0 + np.sqrt(max(f0 * f0 + 2 * slope * need, 0.0))) / slope
    m = float(lo + np.clip(x, 0.0, width))
    density = float(marginal_density(rho, mode, phi, np.array([m]))[0])
    return MeasurementRecord(mode=mode, phi=float(phi), outcome=m, density=density)


# --- cubic phase gate -------------------------------------------------------------


def _gate_ops(cutoff: int):
    q, p = quadratures(cutoff)
    return q, p, q @ q


def gate_target(input_s: float, gamma: float, m: float, cutoff: int, pad: int = 40) -> QState:
    """``X(m) P(3γm) Z(3γm²) F e^{-iγp³} S(s)|0>`` truncated to ``cutoff``.

    The gates are exponentials of truncated quadrature polynomials built at
    ``cutoff + pad`` to keep edge effects out of the kept levels.
    """
    big = cutoff + pad
    amp, _ = squeezed_amplitudes(input_s, big)
    psi = amp / np.linalg.norm(amp)
    q, p, q2 = _gate_ops(big)
    space = q.space
    gates = [
        matrix_exp(p @ p @ p, -1j * gamma),
        matrix_exp(number(big), 0.5j * np.pi),
        matrix_exp(q, 3j * gamma * m**2),
        matrix_exp(q2, 3j * gamma * m),
        matrix_exp(p, -1j * m),
    ]
    for g in gates:
        psi = g.matrix @ psi
    psi = psi[:cutoff]
    return QState.pure(single_mode(cutoff), psi, normalize=True, truncation_loss=max(0.0, 1 - float(np.vdot(psi, psi).real)))


@dataclass
class GateResult:
    average: float
    fidelities: np.ndarray
    records: list[MeasurementRecord]

    def table(self) -> list[dict]:
        return [
            {"sample": k, "m": r.outcome, "density": r.density, "fidelity": float(f)}
            for k, (r, f) in enumerate(zip(self.records, self.fidelities))
        ]


def _fidelity(target: np.ndarray, post: QState) -> float:
    if post.is_pure:
        return float(abs(np.vdot(target, post.data)))
    return float(np.sqrt(max(np.vdot(target, post.data @ target).real, 0.0)))


def sample_streams(rng_seed, n_samples: int) -> list[np.random.Generator]:
    """Independent per-sample generators: ``SeedSequence(rng_seed).spawn(n_samples)``."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(rng_seed).spawn(n_samples)]


def cubic_gate_pipeline(
    input_s: float | Sequence[float],
    gamma: float,
    n_samples: int,
    rng_seed: int,
    *,
    cutoffs: Sequence[int],
    params: PhysicalParams | None = None,
    beta: float = 1.0,
    tau: float = 20.0,
    precool_duration: float | None = None,
    target_pad: int = 40,
) -> GateResult:
    """Average fidelity of the measurement-based cubic phase gate.

    The two-node cluster has squeezings ``input_s`` (one value for both nodes
    or a pair) and cubic parameters ``(0, gamma)``. Without ``params`` it is
    built directly; otherwise it is prepared by :func:`run_switching` from
    thermal mechanics (``cutoffs`` then includes the cavity first). Node 1 is
    measured in ``p``; sample ``k`` draws its outcome from stream ``k`` of
    :func:`sample_streams`.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    s = np.broadcast_to(np.asarray(input_s, dtype=float), (2,))
    spec = ClusterSpec.linear(s, [0.0, gamma])
    cutoffs = tuple(int(c) for c in cutoffs)
    if params is None:
        if len(cutoffs) != 2:
            raise DimensionError("noiseless pipeline needs two mechanical cutoffs")
        state = cluster_state(spec, cutoffs)
    else:
        if len(cutoffs) != 3:
            raise DimensionError("switching pipeline needs cavity and two mechanical cutoffs")
        nbar = np.broadcast_to(np.asarray(params.nbar), (2,))
        init = thermal_mechanics(nbar, cutoffs[1:]) if np.any(nbar > 0) else None
        plan = SwitchingPlan.from_total_time(
            spec, beta, tau, precool=precool_duration is not None, cool_duration=precool_duration or 0.0
        )
        res = run_switching(plan, params, cutoffs, init, target_tol=1.0)
        state = partial_trace(res.final, [1, 2])
    out_cutoff = state.space.cutoffs[1]
    phi = np.pi / 2
    grid = homodyne_grid(state, 0, phi)
    records, fids = [], []
    for rng in sample_streams(rng_seed, n_samples):
        rec = sample_homodyne(state, 0, phi, rng, grid)
        post, _ = homodyne_project(state, 0, phi, rec.outcome)
        target = gate_target(s[0], gamma, rec.outcome, out_cutoff, pad=target_pad)
        records.append(rec)
        fids.append(_fidelity(target.data, post))
    fids = np.asarray(fids)
    return GateResult(average=float(np.mean(fids)), fidelities=fids, records=records)

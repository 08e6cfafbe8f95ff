"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The summary printed at the end of the session lists every criterion with
the measured numbers. Tolerances are pinned here as module constants.
"""

import numpy as np
import pytest

from optombqc.analysis import uhlmann_fidelity
from optombqc.cli import resolve_config
from optombqc.experiments import rwa_comparison, run_noise_sweep, run_two_node_cluster
from optombqc.fock import TensorSpace, single_mode
from optombqc.lindblad import optomech_system, partial_trace, steady_state
from optombqc.model import DriveSet, cubic_drive_couplings, drift_matrix, rwa_hamiltonian, s_of_r
from optombqc.protocols import (
    SwitchingPlan,
    cubic_gate_pipeline,
    cubic_steady_setup,
    mechanical_fidelity,
    step_drives,
    switching_matrices,
)
from optombqc.states import ClusterSpec, default_cutoff, product_state, thermal_state, vacuum

# criterion 1, 2: operating point shared with the RWA check
G1, KAPPA, R_RATIO, GAMMA = 1.0, 10.0, 0.33, 0.05 * 2 * np.sqrt(2)
CAVITY_CUTOFF = 4
MECH_CUTOFF = 30
STEADY_MIN = 0.99
CUTOFF_STEP_CHANGE = 1e-3
UNIQUENESS_MIN = 0.999

# criterion 3
SWEEP_TOL = 1e-3
CORNER_MIN = 0.98

# criterion 4
MONOTONE_TOL = 1e-4
CLUSTER_MIN = 0.99
DESK_MIN = 0.995

# criterion 6
RWA_FULL_MIN = 0.99
RWA_REDUCED_MIN = 0.95

# criterion 7, 8
N_DRIVES = 500
RH_MARGIN = 1e-9
N_SPECS = 100
ALGEBRA_TOL = 1e-10

# criterion 9
GATE_MIN = 0.95
GATE_CONTROL_MIN = 0.99
GATE_SAMPLES = 200

# criterion 10
CROSS_MIN = 1 - 1e-6


def switching_runs():
    """Cache for the desk-scale switching runs shared by criteria 4 and 5."""
    cache = switching_runs.cache
    if not cache:
        for name in ("switching-desk", "switching-thermal", "switching-precool"):
            out = run_two_node_cluster(resolve_config(name))
            t = np.array([r[0] for r in out.rows])
            stage = np.array([r[1] for r in out.rows])
            f = np.array([r[2] for r in out.rows])
            cache[name] = (t, stage, f)
    return cache


switching_runs.cache = {}


def per_step_drops(stage, fidelity):
    """Largest decrease between consecutive samples inside each switching step."""
    worst = 0.0
    for label in ("step1", "step2"):
        f = fidelity[stage == label]
        worst = max(worst, float(np.max(-np.diff(f), initial=0.0)))
    return worst


def test_1_cubic_steady_state(acceptance):
    fids = {}
    for n in (MECH_CUTOFF, MECH_CUTOFF + 10):
        setup = cubic_steady_setup(G1, R_RATIO, GAMMA, KAPPA, (CAVITY_CUTOFF, n))
        fids[n] = mechanical_fidelity(setup.target, steady_state(setup.system, method="sparse"))
    change = abs(fids[MECH_CUTOFF + 10] - fids[MECH_CUTOFF])
    ok = fids[MECH_CUTOFF] >= STEADY_MIN and change < CUTOFF_STEP_CHANGE
    acceptance(1, ok, f"F(cutoff {MECH_CUTOFF}) = {fids[MECH_CUTOFF]:.6f}, change at +10 = {change:.2e}")
    assert ok


def test_2_unique_steady_state(acceptance):
    setup = cubic_steady_setup(G1, R_RATIO, GAMMA, KAPPA, (CAVITY_CUTOFF, MECH_CUTOFF))
    sys = setup.system
    a = steady_state(sys, method="integrate", rho0=vacuum(sys.space))
    start = product_state([vacuum(single_mode(CAVITY_CUTOFF)).to_mixed(), thermal_state(0.5, MECH_CUTOFF)])
    b = steady_state(sys, method="integrate", rho0=start)
    f = uhlmann_fidelity(partial_trace(a, [1]), partial_trace(b, [1]))
    ok = f >= UNIQUENESS_MIN
    acceptance(2, ok, f"mutual fidelity of vacuum and thermal starts = {f:.9f}")
    assert ok


def test_3_noise_sweep_surface(acceptance):
    cfg = resolve_config("noise-sweep")
    out = run_noise_sweep(cfg)
    nb, gm = cfg.sweep["nbar"], cfg.sweep["gamma_m"]
    assert nb == [0.0, 0.5, 1.0, 1.5, 2.0] and gm == [0.0, 0.005, 0.01, 0.05, 0.1]
    grid = np.array([r[2] for r in out.rows]).reshape(len(nb), len(gm))
    rise = max(np.max(np.diff(grid, axis=0)), np.max(np.diff(grid, axis=1)))
    ok = rise <= SWEEP_TOL and grid[0, 0] > CORNER_MIN
    acceptance(3, ok, f"largest adjacent increase = {rise:.2e}, F(0, 0) = {grid[0, 0]:.6f}, F(2, 0.1) = {grid[-1, -1]:.4f}")
    assert ok


def test_4a_switching_desk_variant(acceptance):
    _, stage, f = switching_runs()["switching-desk"]
    drop = per_step_drops(stage, f)
    ok = drop <= MONOTONE_TOL and f[-1] >= DESK_MIN
    acceptance("4a", ok, f"s = 1.41, gamma2 = 0.05: final F = {f[-1]:.5f} (need {DESK_MIN}), largest in-step drop = {drop:.1e}")
    assert drop <= MONOTONE_TOL
    assert f[-1] >= DESK_MIN


@pytest.mark.slow
def test_4b_switching_full_squeezing(acceptance):
    out = run_two_node_cluster(resolve_config("switching"))
    stage = np.array([r[1] for r in out.rows])
    f = np.array([r[2] for r in out.rows])
    drop = per_step_drops(stage, f)
    ok = drop <= MONOTONE_TOL and f[-1] >= CLUSTER_MIN
    acceptance("4b", ok, f"s = 1.78, gamma2 = 0.1, cutoffs {out.cutoffs['all']}: final F = {f[-1]:.5f} (need {CLUSTER_MIN}), "
               f"largest in-step drop = {drop:.1e}")
    assert drop <= MONOTONE_TOL
    assert f[-1] >= CLUSTER_MIN


def test_5_noise_ordering(acceptance):
    runs = switching_runs()
    t0, _, f0 = runs["switching-desk"]
    t1, _, f1 = runs["switching-thermal"]
    t2, _, f2 = runs["switching-precool"]
    # the pre-cooled run switches after the cooling stages; align on switching time
    t2, f2 = t2[-len(t0):] - t2[-len(t0)], f2[-len(t0):]
    assert np.allclose(t0, t1) and np.allclose(t0, t2)
    peak_plain, peak_cool = f1.max(), f2.max()
    # dominance is checked at every sample; no transient needs excluding
    margin = min(np.min(f0 - f1), np.min(f0 - f2))
    ok = peak_cool > peak_plain and margin >= 0
    acceptance(5, ok, f"peak F precooled = {peak_cool:.5f} vs plain = {peak_plain:.5f}; "
               f"noiseless minus noisy >= {margin:.2e} at every sample")
    assert peak_cool > peak_plain
    assert margin >= 0


def test_6a_rwa_reduced(acceptance):
    cfg = resolve_config("rwa-check")
    p, nm = cfg.physics, cfg.numerics
    res = rwa_comparison(p["g1"], p["kappa"], p["r"], p["gamma"], p["R"], p["Omega"],
                         (nm["cavity_cutoff"], nm["mech_cutoff"]), nm["duration"], samples=21, trace_rwa=False)
    ok = res["mutual"] > RWA_REDUCED_MIN
    acceptance("6a", ok, f"g1 = kappa = {p['g1']} Omega, R = {p['R']}: RWA vs full fidelity = {res['mutual']:.5f}")
    assert ok


@pytest.mark.slow
def test_6b_rwa_full(acceptance):
    cfg = resolve_config("rwa-check-hifi")
    p, nm = cfg.physics, cfg.numerics
    res = rwa_comparison(p["g1"], p["kappa"], p["r"], p["gamma"], p["R"], p["Omega"],
                         (nm["cavity_cutoff"], nm["mech_cutoff"]), nm["duration"], samples=21, trace_rwa=False)
    ok = res["mutual"] > RWA_FULL_MIN
    acceptance("6b", ok, f"g1 = kappa = {p['g1']} Omega, R = {p['R']}: RWA vs full fidelity = {res['mutual']:.5f}")
    assert ok


def test_7_stability_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    checked = agree = 0
    for _ in range(N_DRIVES):
        g1, g2 = rng.normal(size=2) + 1j * rng.normal(size=2)
        rep = drift_matrix(DriveSet.single(g1, g2), kappa=rng.uniform(0.1, 10))
        if abs(rep.rh_value) <= RH_MARGIN:
            continue
        checked += 1
        agree += rep.stable_eig == rep.stable_rh
    ok = agree == checked and checked > 0.9 * N_DRIVES
    acceptance(7, ok, f"{agree}/{checked} non-marginal drive sets agree")
    assert ok


def test_8_switching_algebra(acceptance):
    rng = np.random.default_rng(7)
    worst_comm = worst_offdiag = 0.0
    for _ in range(N_SPECS):
        n = int(rng.integers(1, 5))
        a = np.triu(rng.integers(0, 2, (n, n)), 1)
        s = rng.uniform(0.5, 3.0, n)
        g = rng.uniform(-0.3, 0.3, n)
        U, V, W = switching_matrices(ClusterSpec(a + a.T, s, np.zeros(n)))
        worst_comm = max(worst_comm, np.max(np.abs(U @ U.conj().T - V @ V.conj().T - np.eye(n))))
        _, _, W = switching_matrices(ClusterSpec(a + a.T, s, g))
        worst_offdiag = max(worst_offdiag, np.max(np.abs(W - np.diag(np.diag(W)))))
    worst_recipe = 0.0
    # the single-node recipe covers 0 <= r < 1, that is s >= 1
    for s, g in zip(rng.uniform(1.0, 3.0, 20), rng.uniform(-0.3, 0.3, 20)):
        plan = SwitchingPlan(ClusterSpec(np.zeros((1, 1)), [s], [g]), 1.0, 1.0)
        r = (s * s - 1) / (s * s + 1)
        g1 = (s + 1 / s) / 2
        space = TensorSpace((2, 6))
        a_ = rwa_hamiltonian(step_drives(plan, 1), space).dense()
        b_ = rwa_hamiltonian(cubic_drive_couplings(g1, r, g), space).dense()
        worst_recipe = max(worst_recipe, np.max(np.abs(a_ - b_)), abs(s_of_r(r) - s))
    ok = max(worst_comm, worst_offdiag, worst_recipe) < ALGEBRA_TOL
    acceptance(8, ok, f"|UU^dag - VV^dag - I| = {worst_comm:.1e}, off-diagonal W = {worst_offdiag:.1e}, "
               f"single-node recipe mismatch = {worst_recipe:.1e}")
    assert ok


def _gate_cutoff(s, gamma):
    return default_cutoff(s, gamma) + 10


def test_9_cubic_phase_gate(acceptance):
    gamma = 0.05
    avgs = {}
    for s in (1.78, 2.5, 3.5):
        n = _gate_cutoff(s, gamma)
        avgs[s] = cubic_gate_pipeline(s, gamma, GATE_SAMPLES, 0, cutoffs=(n, n)).average
    n = _gate_cutoff(2.5, 0.0)
    control = cubic_gate_pipeline(2.5, 0.0, GATE_SAMPLES, 0, cutoffs=(n, n)).average
    monotone = avgs[1.78] < avgs[2.5] < avgs[3.5]
    ok = avgs[2.5] >= GATE_MIN and monotone and control >= GATE_CONTROL_MIN
    listing = ", ".join(f"s={s}: {v:.5f}" for s, v in avgs.items())
    acceptance(9, ok, f"average fidelity {listing}; gamma = 0 control at s = 2.5: {control:.5f}")
    assert ok


def _small_systems():
    """Every open system used in the cross-check; all have dimension <= 48."""
    out = []
    for cav, n in ((2, 12), (3, 16), (4, 12)):
        for r, gamma, gm, nb in ((0.33, GAMMA, 0.0, 0.0), (0.52, 0.2, 0.01, 0.5), (0.1, 0.0, 0.05, 1.0)):
            out.append(cubic_steady_setup(1.0, r, gamma, 10.0, (cav, n), gamma_m=gm, nbar=nb).system)
            out.append(cubic_steady_setup(1.0, r, gamma, 10.0, (cav, n), gamma_m=gm, nbar=nb, frame="cubic").system)
    spec = ClusterSpec.linear([1.3, 1.3], [0.0, 0.05])
    plan = SwitchingPlan(spec, 1.0, 1.0)
    for cutoffs in ((2, 4, 4), (3, 4, 4)):
        space = TensorSpace(cutoffs)
        for step in (1, 2):
            out.append(optomech_system(rwa_hamiltonian(step_drives(plan, step), space), 10.0, 0.01, [0.5, 0.2]))
    return out


def test_10_solver_cross_validation(acceptance):
    systems = _small_systems()
    worst = 1.0
    for sys in systems:
        assert sys.space.dim <= 48
        a = steady_state(sys, method="direct")
        b = steady_state(sys, method="integrate")
        worst = min(worst, uhlmann_fidelity(a, b))
    ok = worst >= CROSS_MIN
    acceptance(10, ok, f"{len(systems)} systems, worst null-space vs integrated fidelity = 1 - {1 - worst:.1e}")
    assert ok

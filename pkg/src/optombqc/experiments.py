"""Experiment runners behind the command line.

Each runner takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentOutput` with CSV columns, rows and metadata. Grid points of
sweeps are independent and go through :func:`parallel_map`.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import truncation_report, uhlmann_fidelity
from .config import ExperimentConfig
from .fock import TensorSpace
from .lindblad import evolve, optomech_system, partial_trace, steady_state
from .model import DriveSet, PhysicalParams, cubic_drive_couplings, drift_matrix, full_hamiltonian, rwa_hamiltonian, s_of_r
from .protocols import (
    ClusterSpec,
    SwitchingPlan,
    _fidelity_observable,
    cubic_gate_pipeline,
    cubic_steady_setup,
    mechanical_fidelity,
    run_switching,
    thermal_mechanics,
)
from .states import cubic_phase_state, vacuum

WORKERS_ENV = "OPTOMBQC_WORKERS"


@dataclass
class ExperimentOutput:
    columns: list[str]
    rows: list[list]
    cutoffs: dict
    truncation: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(func: Callable, items: list) -> list:
    """``[func(x) for x in items]``, in a process pool when ``OPTOMBQC_WORKERS > 1``.

    Results keep the order of ``items``.
    """
    n = min(worker_count(), len(items))
    if n <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def _worst_tail(reports: list[dict]) -> list[dict]:
    return sorted(reports, key=lambda r: -max(r["tails"].values()))[:1]


# --- cubic steady state ---------------------------------------------------------


def _cubic_point(args):
    phys, cav, n, frame, method, gamma_m, nbar = args
    setup = cubic_steady_setup(
        phys["g1"], phys["r"], phys["gamma"], phys["kappa"], (cav, n),
        gamma_m=gamma_m, nbar=nbar, frame=frame,
    )
    rho = steady_state(setup.system, method=method)
    info = dict(steady_state.last_info)
    fid = mechanical_fidelity(setup.target, rho)
    mech = partial_trace(rho, [1])
    return fid, info["relative"], setup.target.truncation_loss, truncation_report(mech).as_dict(), truncation_report(rho).as_dict()


def run_cubic_steady(cfg: ExperimentConfig) -> ExperimentOutput:
    p, nm = cfg.physics, cfg.numerics
    points = [
        (p, nm["cavity_cutoff"], n, nm["frame"], nm["method"], p["gamma_m"], p["nbar"])
        for n in nm["mech_cutoffs"]
    ]
    results = parallel_map(_cubic_point, points)
    rows = []
    reports = []
    for n, (fid, res, loss, mech_rep, full_rep) in zip(nm["mech_cutoffs"], results):
        rows.append([n, fid, res, loss, mech_rep["tails"]["mech1"]])
        reports.append(full_rep)
    return ExperimentOutput(
        columns=["mech_cutoff", "fidelity", "relative_residual", "target_truncation_loss", "mech_tail"],
        rows=rows,
        cutoffs={"cavity": nm["cavity_cutoff"], "mech": nm["mech_cutoffs"]},
        truncation=reports,
        extra={"s": s_of_r(p["r"]), "frame": nm["frame"]},
    )


def run_noise_sweep(cfg: ExperimentConfig) -> ExperimentOutput:
    p, nm, sw = cfg.physics, cfg.numerics, cfg.sweep
    grid = [(nb, gm) for nb in sw["nbar"] for gm in sw["gamma_m"]]
    points = [(p, nm["cavity_cutoff"], nm["mech_cutoff"], nm["frame"], nm["method"], gm, nb) for nb, gm in grid]
    results = parallel_map(_cubic_point, points)
    rows = [[nb, gm, r[0], r[1], r[3]["tails"]["mech1"]] for (nb, gm), r in zip(grid, results)]
    return ExperimentOutput(
        columns=["nbar", "gamma_m", "fidelity", "relative_residual", "mech_tail"],
        rows=rows,
        cutoffs={"cavity": nm["cavity_cutoff"], "mech": nm["mech_cutoff"]},
        truncation=_worst_tail([r[4] for r in results]),
        extra={"s": s_of_r(p["r"]), "frame": nm["frame"]},
    )


# --- two-node cluster -------------------------------------------------------------


def _cluster_spec(p: dict) -> ClusterSpec:
    if p["adjacency"] is None:
        return ClusterSpec.linear(p["s"], p["gamma"])
    return ClusterSpec(np.asarray(p["adjacency"]), p["s"], p["gamma"])


def run_two_node_cluster(cfg: ExperimentConfig) -> ExperimentOutput:
    p, nm = cfg.physics, cfg.numerics
    spec = _cluster_spec(p)
    n = spec.n_modes
    nbar = np.broadcast_to(np.asarray(p["nbar"], dtype=float), (n,))
    params = PhysicalParams(kappa=p["kappa"], Omega=[1.0] * n, Gamma_m=[p["gamma_m"]] * n, nbar=list(nbar))
    plan = SwitchingPlan.from_total_time(
        spec, p["beta"], p["tau"], precool=p["precool"], cool_duration=p["cool_duration"]
    )
    cutoffs = nm["cutoffs"]
    initial = thermal_mechanics(nbar, cutoffs[1:]) if p["initial"] == "thermal" else None
    res = run_switching(plan, params, cutoffs, initial, samples_per_step=nm["samples_per_step"], dt=nm["dt"], target_tol=1.0)
    rows = [[float(t), str(st), float(f), float(o)] for t, st, f, o in zip(res.times, res.stage, res.fidelity, res.occupation)]
    return ExperimentOutput(
        columns=["t", "stage", "fidelity", "occupation"],
        rows=rows,
        cutoffs={"all": list(cutoffs)},
        truncation=[truncation_report(res.final).as_dict()],
        extra={
            "final_fidelity": float(res.fidelity[-1]),
            "peak_fidelity": float(np.max(res.fidelity)),
            "target_truncation_loss": res.target.truncation_loss,
            "initial_truncation_loss": initial.truncation_loss if initial is not None else 0.0,
            "steps": [r.diagnostics["steps"] for r in res.runs],
        },
    )


# --- RWA check --------------------------------------------------------------------


def rwa_comparison(g1, kappa, r, gamma, R, Omega, cutoffs, duration, samples=201, dt=None, trace_rwa=True):
    """Compare the RWA steady state with the long-time state of the full model.

    Both start in vacuum; the full model keeps the counter-rotating blocks.
    Returns a dict with sample ``times``, fidelity traces ``F_full`` and
    (when ``trace_rwa``) ``F_rwa`` against ``|gamma, s(r)>``, the RWA steady
    state ``rho_rwa``, the final full-model state ``rho_full`` and their
    general fidelity ``mutual``.
    """
    space = TensorSpace(tuple(cutoffs))
    drives = cubic_drive_couplings(g1, r, gamma)
    target = cubic_phase_state(gamma, s_of_r(r), cutoffs[1], tol=1.0)
    fid = _fidelity_observable(target.data, cutoffs[0])
    rho0 = vacuum(space)
    rwa_sys = optomech_system(rwa_hamiltonian(drives, space), kappa)
    full_sys = optomech_system(full_hamiltonian(drives, R, Omega, space), kappa)
    out = {}
    res_full = evolve(full_sys, rho0, duration, {"F": fid}, n_samples=samples, dt=dt)
    out["times"] = res_full.times
    out["F_full"] = np.real(res_full.values["F"])
    if trace_rwa:
        res_rwa = evolve(rwa_sys, rho0, duration, {"F": fid}, n_samples=samples, dt=dt)
        out["F_rwa"] = np.real(res_rwa.values["F"])
    out["rho_rwa"] = steady_state(rwa_sys)
    out["rho_full"] = res_full.final
    out["mutual"] = uhlmann_fidelity(partial_trace(out["rho_rwa"], [1]), partial_trace(res_full.final, [1]))
    out["F_rwa_steady"] = mechanical_fidelity(target, out["rho_rwa"])
    out["steps"] = res_full.diagnostics["steps"]
    return out


def run_rwa_check(cfg: ExperimentConfig) -> ExperimentOutput:
    p, nm = cfg.physics, cfg.numerics
    cutoffs = (nm["cavity_cutoff"], nm["mech_cutoff"])
    res = rwa_comparison(
        p["g1"], p["kappa"], p["r"], p["gamma"], p["R"], p["Omega"], cutoffs,
        nm["duration"], nm["samples"], nm["dt"],
    )
    rows = [[float(t), float(x), float(y)] for t, x, y in zip(res["times"], res["F_rwa"], res["F_full"])]
    return ExperimentOutput(
        columns=["t", "fidelity_rwa", "fidelity_full"],
        rows=rows,
        cutoffs={"cavity": cutoffs[0], "mech": cutoffs[1]},
        truncation=[truncation_report(res["rho_rwa"]).as_dict(), truncation_report(res["rho_full"]).as_dict()],
        extra={
            "rwa_full_fidelity": res["mutual"],
            "rwa_steady_fidelity": res["F_rwa_steady"],
            "steps": res["steps"],
        },
    )


# --- cubic phase gate ---------------------------------------------------------------


def _gate_point(args):
    p, nm, nbar, gamma_m = args
    params = None
    if nbar is not None:
        params = PhysicalParams(kappa=p["kappa"], Omega=[1.0, 1.0], Gamma_m=[gamma_m] * 2, nbar=[nbar] * 2)
    res = cubic_gate_pipeline(
        p["s"], p["gamma"], nm["n_samples"], nm["seed"], cutoffs=nm["cutoffs"], params=params,
        beta=p["beta"], tau=p["tau"], precool_duration=p["cool_duration"] if p["precool"] else None,
        target_pad=nm["target_pad"],
    )
    return res


def run_cubic_gate(cfg: ExperimentConfig) -> ExperimentOutput:
    p, nm, sw = cfg.physics, cfg.numerics, cfg.sweep
    if sw.get("nbar") is None and sw.get("gamma_m") is None:
        res = _gate_point((p, nm, None, None))
        rows = [[r["sample"], r["m"], r["density"], r["fidelity"]] for r in res.table()]
        return ExperimentOutput(
            columns=["sample", "m", "density", "fidelity"],
            rows=rows,
            cutoffs={"mech": nm["cutoffs"]},
            extra={"average_fidelity": res.average},
        )
    grid = [(nb, gm) for nb in (sw["nbar"] or [0.0]) for gm in (sw["gamma_m"] or [0.0])]
    results = parallel_map(_gate_point, [(p, nm, nb, gm) for nb, gm in grid])
    rows = [[nb, gm, r.average, float(np.std(r.fidelities))] for (nb, gm), r in zip(grid, results)]
    return ExperimentOutput(
        columns=["nbar", "gamma_m", "average_fidelity", "std_fidelity"],
        rows=rows,
        cutoffs={"all": nm["cutoffs"]},
    )


# --- stability scan ---------------------------------------------------------------


def run_stability_scan(cfg: ExperimentConfig) -> ExperimentOutput:
    p, sw = cfg.physics, cfg.sweep
    rows = []
    for ratio in sw["ratio"]:
        for phase in sw["phase"]:
            g1 = p["g1"]
            g2 = ratio * g1 * np.exp(1j * phase)
            rep = drift_matrix(DriveSet.single(g1, g2), p["kappa"], p["Gamma"])
            rows.append([ratio, phase, int(rep.stable_rh), int(rep.stable_eig), float(np.max(rep.eigen_real_parts)), rep.rh_value])
    return ExperimentOutput(
        columns=["ratio", "phase", "stable_rh", "stable_eig", "max_real_part", "rh_value"],
        rows=rows,
        cutoffs={},
    )


RUNNERS = {
    "cubic-steady": run_cubic_steady,
    "cubic-noise-sweep": run_noise_sweep,
    "two-node-cluster": run_two_node_cluster,
    "rwa-check": run_rwa_check,
    "cubic-gate": run_cubic_gate,
    "stability-scan": run_stability_scan,
}

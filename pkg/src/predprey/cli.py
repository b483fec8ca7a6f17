"""Scenario runner: simulate, detect steady or travelling regimes, export.

Usage::

    predprey run initial1 --method both --out out/initial1
    predprey run my_config.json --method fv --t-final 20 --out out/custom
    predprey run all --jobs 2 --out out
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import fv, particles, steady
from .density import (
    SpeciesPair,
    density_from_particles,
    pseudo_inverse,
    quantile_positions,
    wasserstein,
    write_snapshot,
)
from .scenarios import ConfigError, Scenario, builtin, builtin_scenarios, load_scenario

log = logging.getLogger("predprey")

STEADY_WINDOW = 5.0
STEADY_TOL = 1e-4
WAVE_R2 = 0.99
WAVE_SPEED_MATCH = 0.05
WAVE_MIN_SPEED = 1e-3

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_BOUNDARY = 4


class EmptyRun(RuntimeError):
    """A report without any recorded state cannot be exported."""


@dataclass
class WaveFit:
    speed_rho: float
    speed_eta: float
    r2_rho: float
    r2_eta: float
    detected: bool

    def to_dict(self) -> dict:
        return {
            "speed_rho": self.speed_rho,
            "speed_eta": self.speed_eta,
            "r2_rho": self.r2_rho,
            "r2_eta": self.r2_eta,
            "detected": self.detected,
        }


def fit_wave(times, cm_rho, cm_eta) -> WaveFit:
    """Linear fits of both centres of mass over the last half of the run."""
    t = np.asarray(times, dtype=float)
    keep = t >= 0.5 * t[-1]
    if keep.sum() < 3:
        raise ValueError("need at least three reports in the last half of the run")
    fits = [stats.linregress(t[keep], np.asarray(c, dtype=float)[keep]) for c in (cm_rho, cm_eta)]
    speeds = [float(f.slope) for f in fits]
    # a perfectly flat series has undefined correlation; treat it as no fit
    r2 = [float(f.rvalue**2) if np.isfinite(f.rvalue) else 0.0 for f in fits]
    fast = min(abs(v) for v in speeds) >= WAVE_MIN_SPEED
    match = abs(speeds[0] - speeds[1]) <= WAVE_SPEED_MATCH * max(abs(v) for v in speeds)
    return WaveFit(speeds[0], speeds[1], r2[0], r2[1], bool(fast and match and min(r2) >= WAVE_R2))


@dataclass
class MethodResult:
    method: str
    times: list[float]
    diagnostics: list[dict]
    finals: SpeciesPair
    steady_time: float | None
    wave: WaveFit | None
    n_steps: int
    trajectory: object = field(repr=False, default=None)

    def masses(self) -> dict:
        first, last = self.diagnostics[0], self.diagnostics[-1]
        drift = max(
            max(abs(d[f"mass_{s}"] - first[f"mass_{s}"]) / first[f"mass_{s}"] for d in self.diagnostics)
            for s in ("rho", "eta")
        )
        return {
            "rho_initial": first["mass_rho"],
            "rho_final": last["mass_rho"],
            "eta_initial": first["mass_eta"],
            "eta_final": last["mass_eta"],
            "max_relative_drift": drift,
        }

    def cm_alpha_drift(self) -> dict:
        c0 = self.diagnostics[0]["cm_alpha"]
        worst = max(abs(d["cm_alpha"] - c0) for d in self.diagnostics)
        span = self.times[-1] - self.times[0]
        return {"max_abs": worst, "per_unit_time": worst / span if span > 0 else 0.0}


@dataclass
class RunReport:
    scenario: Scenario
    results: dict[str, MethodResult]
    classification: steady.Classification | None
    w1_rho: float | None = None
    w1_eta: float | None = None
    analysis: dict | None = None

    @property
    def steady_time(self) -> dict:
        return {m: r.steady_time for m, r in self.results.items()}

    @property
    def wave(self) -> dict:
        return {m: None if r.wave is None else r.wave.to_dict() for m, r in self.results.items()}

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "classification": None if self.classification is None else str(self.classification),
            "bumps": None
            if self.classification is None
            else {"rho": self.classification.n_rho, "eta": self.classification.n_eta},
            "steady_time": self.steady_time,
            "wave": self.wave,
            "w1_rho": self.w1_rho,
            "w1_eta": self.w1_eta,
            "masses": {m: r.masses() for m, r in self.results.items()},
            "cm_alpha_drift": {m: r.cm_alpha_drift() for m, r in self.results.items()},
            "steps": {m: r.n_steps for m, r in self.results.items()},
        }


def _series(diags, key):
    return [d[key] for d in diags]


def _wave(times, diags) -> WaveFit | None:
    """Wave fit, or None when the run is too short to have one."""
    try:
        return fit_wave(times, _series(diags, "cm_rho"), _series(diags, "cm_eta"))
    except ValueError:
        return None


def run_fv(s: Scenario) -> MethodResult:
    w = fv.FvWorkspace(s.grid, s.kernels, s.alpha, s.d)
    traj = fv.simulate(w, s.initial_pair(), s.t_final, report_dt=s.report_dt)
    levels = 2 * s.n_cells
    q = np.array([np.concatenate((quantile_positions(p.rho, levels), quantile_positions(p.eta, levels))) for p in traj.states])
    t_steady = particles.steady_detect(traj.times, q, STEADY_WINDOW, STEADY_TOL, scale=s.length)
    wave = _wave(traj.times, traj.diagnostics)
    return MethodResult("fv", traj.times, traj.diagnostics, traj.final, t_steady, wave, traj.n_steps, traj)


def initial_particles(s: Scenario) -> particles.ParticleState:
    pair = s.initial_pair()
    n = s.particles
    return particles.ParticleState(pseudo_inverse(pair.rho, n), pseudo_inverse(pair.eta, n), s.alpha, s.d)


def particle_densities(s: Scenario, state: particles.ParticleState) -> SpeciesPair:
    g = s.grid
    return SpeciesPair(density_from_particles(state.X_rho, g), density_from_particles(state.X_eta, g), s.alpha, s.d)


def run_particles(s: Scenario) -> MethodResult:
    traj = particles.integrate_rk23(initial_particles(s), s.kernels, s.t_final, report_dt=s.report_dt)
    t_steady = particles.steady_detect(traj.times, traj.position_matrix(), STEADY_WINDOW, STEADY_TOL, scale=s.length)
    wave = _wave(traj.times, traj.diagnostics)
    final = particle_densities(s, traj.final)
    return MethodResult("particles", traj.times, traj.diagnostics, final, t_steady, wave, traj.n_accepted, traj)


def analyze_state(pair: SpeciesPair, s: Scenario) -> dict:
    """Equilibrium centres seeded from the support components of ``pair``."""
    seed = steady.layout_from_state(pair)
    out = {"seed": seed.to_dict(s.alpha)}
    try:
        layout = steady.solve_centers(seed, s.kernels, s.alpha, seed.joint_center(s.alpha))
    except steady.ConvergenceError as exc:
        out["error"] = str(exc)
        return out
    out["layout"] = layout.to_dict(s.alpha)
    out["analysis"] = steady.analyze(layout, s.kernels, s.alpha).to_dict(layout)
    return out


def run(s: Scenario, method: str | None = None, analyze: bool = False) -> RunReport:
    method = method or s.method
    results = {}
    if method in ("fv", "both"):
        results["fv"] = run_fv(s)
    if method in ("particles", "both"):
        results["particles"] = run_particles(s)
    primary = results.get("fv") or results.get("particles")
    report = RunReport(s, results, steady.classify(primary.finals))
    if len(results) == 2:
        a, b = results["fv"].finals, results["particles"].finals
        report.w1_rho = wasserstein(a.rho, b.rho, 1.0)
        report.w1_eta = wasserstein(a.eta, b.eta, 1.0)
    if analyze:
        report.analysis = analyze_state(primary.finals, s)
    return report


# ---------------------------------------------------------------- export


def _fmt(x) -> str:
    return "" if x is None else f"{x:.17g}"


def _snapshot_times(times, t_final, snapshot_dt):
    step = t_final / 10.0 if snapshot_dt is None else snapshot_dt
    keep = []
    for k, t in enumerate(times):
        q = t / step
        if abs(q - round(q)) < 1e-9 or k == len(times) - 1:
            keep.append(k)
    return keep


DIAG_COLUMNS = ("mass_rho", "mass_eta", "cm_rho", "cm_eta", "cm_alpha", "energy", "clipped_mass")


def export(report: RunReport, out_dir) -> list[Path]:
    """Write diagnostics, snapshots, particle paths and ``report.json``."""
    if not report.results or any(len(r.times) == 0 for r in report.results.values()):
        raise EmptyRun("report has no recorded states")
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "diagnostics.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("method", "t") + DIAG_COLUMNS)
            for m, r in report.results.items():
                for t, d in zip(r.times, r.diagnostics):
                    writer.writerow([m, _fmt(t)] + [_fmt(d.get(c)) for c in DIAG_COLUMNS])
        written.append(path)

        s = report.scenario
        for m, r in report.results.items():
            for k in _snapshot_times(r.times, s.t_final, s.snapshot_dt):
                if m == "fv":
                    pair = r.trajectory.states[k]
                else:
                    pair = particle_densities(s, r.trajectory.state(k))
                path = out / f"snap_{m}_t{r.times[k]:010.4f}.csv"
                write_snapshot(path, pair)
                written.append(path)
            if m == "particles":
                path = out / "particles.csv"
                with path.open("w", newline="") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow(("t", "species", "index", "position"))
                    for k in _snapshot_times(r.times, s.t_final, s.snapshot_dt):
                        for species, arr in (("rho", r.trajectory.rho[k]), ("eta", r.trajectory.eta[k])):
                            for i, x in enumerate(arr):
                                writer.writerow((_fmt(r.times[k]), species, i, _fmt(x)))
                written.append(path)

        path = out / "report.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
        if report.analysis is not None:
            path = out / "layout.json"
            path.write_text(json.dumps(report.analysis, indent=2, sort_keys=True) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write {exc.filename or out}: {exc.strerror or exc}") from exc
    return written


# ---------------------------------------------------------------- command line


def resolve(target: str) -> list[Scenario]:
    if target == "all":
        return builtin_scenarios()
    if Path(target).suffix == ".json" or Path(target).exists():
        return [load_scenario(target)]
    return [builtin(target)]


def _run_one(s: Scenario, method: str | None, analyze: bool, out_dir: Path) -> dict:
    t0 = time.perf_counter()
    report = run(s, method, analyze)
    export(report, out_dir)
    summary = {
        "name": s.name,
        "classification": str(report.classification),
        "steady_time": report.steady_time,
        "wave": {m: w and w["detected"] for m, w in report.wave.items()},
        "w1": [report.w1_rho, report.w1_eta],
    }
    log.info("%s finished in %.1f s -> %s", s.name, time.perf_counter() - t0, out_dir)
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predprey", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a builtin scenario, a JSON config, or 'all' builtins")
    p.add_argument("target", help="builtin name, path to a JSON config, or 'all'")
    p.add_argument("--method", choices=("fv", "particles", "both"), default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--t-final", type=float, default=None)
    p.add_argument("--report-dt", type=float, default=None)
    p.add_argument("--analyze", action="store_true", help="also solve for the equilibrium bump layout")
    p.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel when several are given")

    sub.add_parser("list", help="list builtin scenarios")

    p = sub.add_parser("show", help="print a builtin scenario as JSON config")
    p.add_argument("name")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "list":
        for s in builtin_scenarios():
            print(f"{s.name:18s} alpha={s.alpha:<5g} d={s.d:<4g} N={s.n_cells:<4d} {s.description}")
        return EXIT_OK
    try:
        if args.command == "show":
            print(json.dumps(builtin(args.name).to_dict(), indent=2))
            return EXIT_OK
        scenarios = [
            s.with_overrides(t_final=args.t_final, report_dt=args.report_dt) for s in resolve(args.target)
        ]
        for s in scenarios:
            s.__post_init__()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    dirs = [out / s.name if len(scenarios) > 1 else out for s in scenarios]
    try:
        if args.jobs > 1 and len(scenarios) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_run_one, s, args.method, args.analyze, d) for s, d in zip(scenarios, dirs)]
                summaries = [f.result() for f in futures]
        else:
            summaries = [_run_one(s, args.method, args.analyze, d) for s, d in zip(scenarios, dirs)]
    except fv.BoundaryContactError as exc:
        print(f"boundary contact: {exc}", file=sys.stderr)
        return EXIT_BOUNDARY
    except (fv.StepRejected, particles.OrderingError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Configuration-driven entry point: verify | solve | sweep | compare.

Configuration is flat dotted-key text (one ``section.key = value`` per
line, ``#`` comments), layered as defaults < --preset < --config file <
--override flags; --out replaces run.out last.  The fully resolved
mapping, defaults included, is echoed under "config" in every JSON a
subcommand writes, so any report reproduces its run.  Sampling is seeded
from run.seed and everything downstream is deterministic, so identical
configs give bitwise-identical artifacts.

verify   hypothesis checks on the potential bundle (exit 1 on failure)
solve    constrained descent, release, field + diagnostics on disk
sweep    solve over sweep.R_list, scaling table with per-member flags
compare  collar-length constants search and radial profile exports
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import comparison as cp
from . import coxeter as cx
from . import diagnostics as dg
from . import flow as fl
from . import grid as gr
from . import potential as pt


class ConfigError(ValueError):
    """Malformed, unknown, or mutually inconsistent configuration keys."""


N_INVARIANCE_SAMPLES = 10_000
N_MONOTONICITY_SAMPLES = 10_000
TOL_INVARIANCE = 1e-12
TOL_MINIMA = 1e-10
TOL_MONOTONICITY = -1e-9
TOL_POLAR = -1e-9

_DEFAULTS = {
    "run.group": "dihedral-3",
    "run.roots": "",               # semicolon-separated vectors: custom group
    "run.potential": "triple-well-2d",
    "run.q": "radial",
    "run.a1": "",                  # empty: the potential's distinguished minimum
    "run.seed": "0",
    "run.out": "out",
    "flow.R": "16.0",
    "flow.h": "0.1",
    "flow.dt": "",                 # empty: 0.2 h^2 / dim
    "flow.qbar": "",               # empty: 0.8 r0
    "flow.L": "",                  # empty: min(R/4, 0.495 clearance)
    "flow.x0": "",                 # empty: along a1
    "flow.tol_residual": "1e-6",
    "flow.max_steps": "500000",
    "flow.projection_period": "",  # empty: 1 in 1D, 10 otherwise
    "flow.t_release": "",          # empty: 50 dt
    "flow.stepper": "explicit",
    "solve.polish": "auto",        # auto | on | off
    "solve.report": "full",        # full | smoke
    "solve.checkpoint_every": "0",
    "sweep.R_list": "8,12,16",
    "compare.c": "",               # empty: sampled convexity constant at a1
    "compare.qbar": "",            # empty: the flow cap
    "compare.b": "",               # empty: smallest gap between minima
    "compare.d_eff": "",           # empty: the potential dimension
    "compare.lam": "0.25",
}

_PRESETS = {
    "heteroclinic-1d": {
        "run.group": "Z2-line",
        "run.potential": "double-well-1d",
        "flow.R": "10.0",
        "flow.h": "0.01",
        "flow.dt": "0.02",
        "flow.qbar": "0.3",
        "flow.L": "2.0",
        "flow.tol_residual": "1e-8",
        "flow.stepper": "semi-implicit",
    },
    "triple-junction-2d": {
        "run.group": "dihedral-3",
        "run.potential": "triple-well-2d",
        "flow.R": "16.0",
        "flow.h": "0.1",
        "flow.qbar": "0.3",
    },
    "quadruple-junction-3d": {
        "run.group": "A3-tetrahedral",
        "run.potential": "quadruple-well-3d",
        "flow.R": "8.0",
        "flow.h": "0.25",
        "flow.qbar": "0.3",
        "solve.polish": "off",
        "solve.report": "smoke",
    },
}


# ---------------------------------------------------------------------------
# configuration resolution


def parse_config_text(text: str) -> dict[str, str]:
    """Flat dotted-key assignments; unknown keys are rejected by name."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def resolve_config(preset=None, config_path=None, overrides=(), out=None) -> dict[str, str]:
    """Layer defaults, preset, file, and overrides into one flat mapping."""
    cfg = dict(_DEFAULTS)
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(_PRESETS)}")
        cfg.update(_PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg.update(parse_config_text(path.read_text()))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"unknown override key {key!r}")
        cfg[key] = value.strip()
    if out is not None:
        cfg["run.out"] = str(out)
    return cfg


def _parse_float(raw: dict, key: str) -> float:
    try:
        return float(raw[key])
    except ValueError as exc:
        raise ConfigError(f"{key} = {raw[key]!r} is not a number") from exc


def _parse_int(raw: dict, key: str) -> int:
    try:
        return int(raw[key])
    except ValueError as exc:
        raise ConfigError(f"{key} = {raw[key]!r} is not an integer") from exc


def _parse_vector(text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{key} = {text!r} is not a comma-separated vector") from exc


@dataclass(frozen=True)
class RunConfig:
    """Objects resolved from the flat mapping, cross-validated."""

    raw: dict
    group: cx.ReflectionGroup
    potential: pt.Potential
    Q: pt.QFunction
    D: cx.Cone
    a1: np.ndarray
    seed: int
    out: Path
    flow: fl.FlowConfig
    polish: bool | None
    report_level: str
    checkpoint_every: int


def _build_group(raw: dict) -> cx.ReflectionGroup:
    if raw["run.roots"]:
        roots = [
            _parse_vector(part, "run.roots")
            for part in raw["run.roots"].split(";")
            if part.strip()
        ]
        try:
            return cx.generate_group(roots)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        return cx.builtin_group(raw["run.group"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_flow(raw: dict, W: pt.Potential, D: cx.Cone, a1: np.ndarray) -> fl.FlowConfig:
    overrides: dict = {"x0": a1}
    if raw["flow.x0"]:
        overrides["x0"] = _parse_vector(raw["flow.x0"], "flow.x0")
    for key, name, conv in (
        ("flow.dt", "dt", float),
        ("flow.qbar", "qbar", float),
        ("flow.L", "L", float),
        ("flow.t_release", "t_release", float),
        ("flow.projection_period", "projection_period", int),
    ):
        if raw[key]:
            overrides[name] = conv(raw[key])
    overrides["tol_residual"] = _parse_float(raw, "flow.tol_residual")
    overrides["max_steps"] = _parse_int(raw, "flow.max_steps")
    overrides["stepper"] = raw["flow.stepper"]
    try:
        return fl.default_config(
            W, D, R=_parse_float(raw, "flow.R"), h=_parse_float(raw, "flow.h"),
            **overrides,
        )
    except fl.FlowError as exc:
        raise ConfigError(str(exc)) from exc


def build_run_config(raw: dict) -> RunConfig:
    """Resolve the flat mapping into validated objects."""
    W = _builtin_potential(raw["run.potential"])
    G = _build_group(raw)
    if G.dim != W.dim:
        raise ConfigError(
            f"group dimension {G.dim} and potential dimension {W.dim} differ"
        )
    a1 = W.a1
    if raw["run.a1"]:
        a1 = _parse_vector(raw["run.a1"], "run.a1")
        if a1.shape != (W.dim,):
            raise ConfigError(f"run.a1 has {a1.size} entries; potential wants {W.dim}")
        gaps = np.linalg.norm(W.minima - a1, axis=1)
        if gaps.min() > 1e-8:
            raise ConfigError("run.a1 must coincide with a minimum of the potential")
        a1 = W.minima[int(gaps.argmin())]
    if not cx.fundamental_cone(G).contains(a1):
        raise ConfigError("a1 lies outside the closed fundamental region")
    if raw["run.q"] != "radial":
        raise ConfigError(f"unknown gauge {raw['run.q']!r}; known: ['radial']")
    Q = pt.radial_q(a1)
    D = cx.region_D(G, a1)
    flow_cfg = _build_flow(raw, W, D, a1)
    if flow_cfg.qbar >= W.r0:
        raise ConfigError(
            f"qbar = {flow_cfg.qbar:g} must stay below the well radius {W.r0:g}"
        )
    try:
        flow_cfg.validate(W, D)
    except fl.FlowError as exc:
        raise ConfigError(str(exc)) from exc
    polish_key = raw["solve.polish"]
    if polish_key not in ("auto", "on", "off"):
        raise ConfigError(f"solve.polish = {polish_key!r}; expected auto, on, or off")
    report_level = raw["solve.report"]
    if report_level not in ("full", "smoke"):
        raise ConfigError(f"solve.report = {report_level!r}; expected full or smoke")
    return RunConfig(
        raw=dict(raw),
        group=G,
        potential=W,
        Q=Q,
        D=D,
        a1=np.asarray(a1, float),
        seed=_parse_int(raw, "run.seed"),
        out=Path(raw["run.out"]),
        flow=flow_cfg,
        polish={"auto": None, "on": True, "off": False}[polish_key],
        report_level=report_level,
        checkpoint_every=_parse_int(raw, "solve.checkpoint_every"),
    )


def _builtin_potential(name: str) -> pt.Potential:
    try:
        return pt.builtin_potential(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# seeded sample clouds for the hypothesis checks


def _ball_cloud(dim: int, n: int, radius: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, dim))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    radii = radius * rng.random(n) ** (1.0 / dim)
    return dirs * radii[:, None]


def _cone_ball_cloud(cone, center, radius, n, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chunks = []
    total = 0
    for _ in range(200):
        pts = center + (rng.random((4 * n, center.size)) * 2.0 - 1.0) * radius
        d = np.linalg.norm(pts - center, axis=1)
        pts = pts[(d <= radius) & (d > 1e-8)]
        pts = pts[cone.contains(pts)]
        chunks.append(pts)
        total += len(pts)
        if total >= n:
            break
    pts = np.vstack(chunks)
    if len(pts) < n:
        raise ConfigError("could not sample the region; is a1 inside it?")
    return pts[:n]


# ---------------------------------------------------------------------------
# output helpers


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(value: float) -> str:
    return f"{value:.17g}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(rc: RunConfig) -> int:
    """Hypothesis checks on the configured bundle; exit 0 iff all pass."""
    W, G, D, Q, a1 = rc.potential, rc.group, rc.D, rc.Q, rc.a1
    checks: dict[str, dict] = {}

    inv_samples = _ball_cloud(W.dim, N_INVARIANCE_SAMPLES, W.bound_radius, rc.seed)
    inv = pt.check_invariance(W, G, samples=inv_samples)
    checks["invariance"] = {"value": inv, "tol": TOL_INVARIANCE,
                            "passed": bool(inv <= TOL_INVARIANCE)}

    orbit = cx.orbit_and_stabilizer(G, a1)
    w_vals = np.abs(W.w(orbit.orbit))
    g_vals = np.linalg.norm(W.grad(orbit.orbit), axis=1)
    worst = float(max(w_vals.max(), g_vals.max()))
    checks["minima_vanish"] = {"value": worst, "tol": TOL_MINIMA,
                               "passed": bool(worst <= TOL_MINIMA)}

    est = pt.estimate_c(W, a1, W.r0)
    checks["convexity"] = {"value": est.c, "r0_max": est.r0_max,
                           "passed": bool(not est.degenerate)}

    mono_samples = _cone_ball_cloud(D, a1, 3.0, N_MONOTONICITY_SAMPLES, rc.seed + 1)
    mono = pt.check_q_monotonicity(W, Q, D, samples=mono_samples)
    checks["q_monotonicity"] = {"value": mono, "tol": TOL_MONOTONICITY,
                                "passed": bool(mono >= TOL_MONOTONICITY)}

    polar = pt.check_polar_form(pt.polar_map(Q, a1))
    checks["polar_form"] = {"value": polar, "tol": TOL_POLAR,
                            "passed": bool(polar >= TOL_POLAR)}

    passed = all(entry["passed"] for entry in checks.values())
    _write_json(rc.out / "verify.json",
                {"passed": passed, "checks": checks, "config": rc.raw})
    for name, entry in checks.items():
        print(f"{name}: value={entry['value']:.6e} "
              f"{'pass' if entry['passed'] else 'FAIL'}")
    if not passed:
        failing = [name for name, entry in checks.items() if not entry["passed"]]
        print(f"failed checks: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


def _run_pipeline(rc: RunConfig, cfg: fl.FlowConfig, out: Path | None):
    kwargs: dict = {}
    if out is not None:
        kwargs["log_file"] = out / "flow.log"
        if rc.checkpoint_every > 0:
            kwargs["checkpoint_every"] = rc.checkpoint_every
            kwargs["checkpoint_dir"] = out / "checkpoints"
    solved = fl.solve_constrained(cfg, rc.potential, rc.Q, rc.group, rc.D, **kwargs)
    if out is not None:
        kwargs["log_file"] = out / "release.log"
    released = fl.release_and_flow(solved, cfg, rc.potential, rc.group,
                                   polish=rc.polish, **kwargs)
    return released


def _smoke_report(result, G) -> dict:
    """Positivity and connection only: the cheap checks that need no fit."""
    f = result.field
    D = result.region
    margin = (
        cx.positivity_by_roots(f.grid.nodes, f.values, D.walls).worst
        if D.walls else 0.0
    )
    conn = dg.check_connection(f, cx.orbit_and_stabilizer(G, result.qfun.base), 0.7)
    return {
        "level": "smoke",
        "positivity_margin": float(margin),
        "connection_errors": [float(e) for e in conn],
    }


def cmd_solve(rc: RunConfig) -> int:
    """Constrained descent, release, artifacts under run.out."""
    out = rc.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        released = _run_pipeline(rc, rc.flow, out)
    except fl.FlowError as exc:
        _write_json(out / "solve.json",
                    {"converged": False, "error": str(exc), "config": rc.raw})
        print(str(exc), file=sys.stderr)
        return 1
    summary = {
        "converged": bool(released.converged),
        "constraint_active_final": bool(released.constraint_active_final),
        "steps_taken": int(released.steps_taken),
        "residual": float(released.residual_history[-1]),
        "action": float(released.action_history[-1]),
        "config": rc.raw,
    }
    gr.save_field(released.field, out / "field")
    if not released.converged:
        _write_json(out / "solve.json", summary)
        print("flow did not converge within max_steps", file=sys.stderr)
        return 1
    if rc.report_level == "smoke":
        report = _smoke_report(released, rc.group)
        _write_json(out / "report.json", report)
    else:
        report = dg.report_to_dict(dg.build_report(released, rc.potential, rc.group))
        report["level"] = "full"
        _write_json(out / "report.json", report)
    summary["report"] = report
    _write_json(out / "solve.json", summary)
    print(f"converged in {summary['steps_taken']} steps; "
          f"residual {summary['residual']:.3e}; artifacts in {out}")
    return 0


def cmd_sweep(rc: RunConfig, R_list) -> int:
    """Scaling table over domain radii; failures flag their row."""
    out = rc.out
    out.mkdir(parents=True, exist_ok=True)
    n = rc.potential.dim
    rows = []
    failures = 0
    for R in R_list:
        raw = dict(rc.raw)
        raw["flow.R"] = _fmt(R)
        row: dict = {"R": R}
        try:
            cfg = _build_flow(raw, rc.potential, rc.D, rc.a1)
            if cfg.qbar >= rc.potential.r0:
                raise ConfigError(
                    f"qbar = {cfg.qbar:g} must stay below the well radius"
                )
            released = _run_pipeline(rc, cfg, None)
            if not released.converged:
                raise fl.FlowError("flow did not converge within max_steps")
            report = dg.build_report(released, rc.potential, rc.group)
            row.update(
                J=report.action,
                J_scaled=report.action / R ** (n - 1),
                k=report.decay.k,
                K=report.decay.K,
                collar=report.collar_width,
                status="ok",
            )
        except (ConfigError, fl.FlowError, dg.DiagnosticsError) as exc:
            failures += 1
            msg = str(exc).replace(",", ";")
            row.update(J=None, J_scaled=None, k=None, K=None, collar=None,
                       status=f"failed: {msg}")
        rows.append(row)
    lines = ["R,J,J_scaled,k,K,collar,status"]
    for row in rows:
        cells = [_fmt(row["R"])]
        for key in ("J", "J_scaled", "k", "K", "collar"):
            cells.append("" if row[key] is None else _fmt(row[key]))
        cells.append(row["status"])
        lines.append(",".join(cells))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "sweep.json", {"rows": rows, "config": rc.raw})
    print("\n".join(lines))
    return 1 if failures else 0


def cmd_compare(rc: RunConfig) -> int:
    """Collar constants search; JSON report plus profile CSV exports."""
    raw = rc.raw
    W, a1 = rc.potential, rc.a1
    out = rc.out
    out.mkdir(parents=True, exist_ok=True)
    c = _parse_float(raw, "compare.c") if raw["compare.c"] else (
        pt.estimate_c(W, a1, W.r0).c
    )
    qbar = _parse_float(raw, "compare.qbar") if raw["compare.qbar"] else rc.flow.qbar
    if raw["compare.b"]:
        b = _parse_float(raw, "compare.b")
    else:
        gaps = np.linalg.norm(W.minima[:, None] - W.minima[None, :], axis=2)
        b = float(gaps[gaps > 0].min())
    if raw["compare.d_eff"]:
        d_list = [int(part) for part in raw["compare.d_eff"].split(",")]
    else:
        d_list = [W.dim]
    lam = _parse_float(raw, "compare.lam")
    results = {}
    try:
        for d_eff in d_list:
            report = cp.step2_report(c, qbar, b, d_eff, lam=lam)
            L0, delta = report["L0"], report["delta"]
            core = cp.solve_psi1(c, qbar, L0, d_eff,
                                 n_steps=cp.N_STEPS + cp.N_STEPS // 10,
                                 r_max=1.1 * L0)
            collar = cp.solve_psi2(qbar, b, L0, L0, d_eff)
            bridge = cp.solve_psi3(core, collar, L0, delta, d_eff)
            cp.save_profile(core, out / f"psi1_d{d_eff}.csv")
            cp.save_profile(collar, out / f"psi2_d{d_eff}.csv")
            cp.save_profile(bridge, out / f"psi3_d{d_eff}.csv")
            results[str(d_eff)] = report
    except cp.ComparisonError as exc:
        _write_json(out / "constants.json",
                    {"error": str(exc), "results": results, "config": raw})
        print(str(exc), file=sys.stderr)
        return 1
    _write_json(out / "constants.json", {"results": results, "config": raw})
    for d_eff, report in results.items():
        print(f"d_eff={d_eff}: L0={report['L0']:.6g} delta={report['delta']:.6g} "
              f"margin={report['margin']:.6g}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="flat dotted-key config file")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (replaces run.out)")
    parser.add_argument("--preset", default=None, choices=sorted(_PRESETS),
                        help="named parameter bundle applied before the file")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="single-key override, repeatable")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="junctionflow",
        description="equivariant multi-well gradient flow runs and reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("verify", "hypothesis checks for the configured bundle"),
        ("solve", "constrained descent and release with diagnostics"),
        ("sweep", "action-scaling table over sweep.R_list"),
        ("compare", "collar constants search and radial profiles"),
    ):
        _add_common(sub.add_parser(name, help=text))
    args = parser.parse_args(argv)
    try:
        raw = resolve_config(preset=args.preset, config_path=args.config,
                             overrides=args.override, out=args.out)
        rc = build_run_config(raw)
        if args.command == "verify":
            return cmd_verify(rc)
        if args.command == "solve":
            return cmd_solve(rc)
        if args.command == "sweep":
            R_list = [float(part) for part in raw["sweep.R_list"].split(",")]
            return cmd_sweep(rc, R_list)
        return cmd_compare(rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

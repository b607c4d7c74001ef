"""Command-line interface.

Subcommands: predict, simulate, validate, sweep, geodesic. Runs are
described by a JSON config with sections model, domain, problem and
optionally mc and output; all artifacts are CSV files (plus rendered
figures for the report-style commands) written to the output
directory.

Exit codes: 0 success, 2 config error, 3 regularity or validation
failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hj, mc, plots, validate
from .errors import ConfigError, EvaluationError, NumericsError, RsrError, SharpBridgeError
from .geometry import geodesic_bvp, van_vleck_H, work_integral_A
from .model import (BridgeProblem, DiffusionModel, HalfSpaceDomain, brownian,
                    ornstein_uhlenbeck, parse_scalar_expression, scalar_sigma)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

_MC_DEFAULTS = {"paths": 100_000, "steps": 64, "delta": 0.05, "seed": 0,
                "workers": 1, "crossing_correction": True}


@dataclass
class RunConfig:
    """Parsed and validated run description (JSON-typed fields)."""

    kind: str
    dim: int
    matrix: list | None
    sigma: str | None
    drift: str | None
    potential: str | None
    v_bar: list
    k: float
    x: list
    y: list
    s: float
    t_grid: list
    t_was_scalar: bool
    paths: int
    steps: int
    delta: float
    seed: int
    workers: int
    crossing_correction: bool
    out_dir: str
    out_format: str

    def model(self) -> DiffusionModel:
        if self.kind == "brownian":
            return brownian(self.dim)
        if self.kind == "ou":
            return ornstein_uhlenbeck(np.array(self.matrix, dtype=float))
        return scalar_sigma(self.sigma, drift=self.drift,
                            potential=self.potential)

    def domain(self) -> HalfSpaceDomain:
        return HalfSpaceDomain(normal=np.array(self.v_bar, dtype=float),
                               level=self.k)

    def problem(self, t: float) -> BridgeProblem:
        return BridgeProblem(model=self.model(), domain=self.domain(),
                             x=np.array(self.x, dtype=float),
                             y=np.array(self.y, dtype=float),
                             s=self.s, t=t)

    def mc_config(self) -> mc.McConfig:
        return mc.McConfig(paths=self.paths, steps=self.steps,
                           delta=self.delta, seed=self.seed,
                           workers=self.workers,
                           crossing_correction=self.crossing_correction)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(section: str, obj: dict, allowed: set[str]) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{section}: unknown key {key!r}")


def _float_list(section: str, key: str, val) -> list:
    _require(isinstance(val, list) and len(val) > 0
             and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                     for v in val),
             f"{section}.{key}: expected a non-empty list of numbers")
    return [float(v) for v in val]


def _scalar(section: str, key: str, val, kind=float):
    ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    if kind is int:
        ok = isinstance(val, int) and not isinstance(val, bool)
    _require(ok, f"{section}.{key}: expected a number")
    return kind(val)


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a JSON run configuration.

    Sections model, domain and problem are required; mc and output are
    optional with documented defaults. Unknown sections or keys are
    rejected, the domain normal is renormalized (with a warning) when
    off unit length by at most 1e-6, and both endpoints must lie
    strictly inside the domain.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(data, dict), "config must be a JSON object")
    _check_keys("config", data, {"model", "domain", "problem", "mc", "output"})
    for section in ("model", "domain", "problem"):
        _require(section in data, f"missing section {section!r}")
        _require(isinstance(data[section], dict),
                 f"section {section!r} must be an object")

    # model section
    msec = data["model"]
    _check_keys("model", msec, {"kind", "dim", "M", "sigma", "drift",
                                "potential"})
    _require("kind" in msec, "model.kind is required")
    kind = msec["kind"]
    _require(kind in ("brownian", "ou", "scalar-sigma"),
             f"model.kind: unknown model {kind!r}")
    matrix = sigma = drift = potential = None
    if kind == "brownian":
        _require("dim" in msec, "model.dim is required for kind 'brownian'")
        dim = _scalar("model", "dim", msec["dim"], int)
        _require(dim >= 1, "model.dim must be positive")
        for key in ("M", "sigma", "drift", "potential"):
            _require(key not in msec,
                     f"model.{key} is not accepted for kind 'brownian'")
    elif kind == "ou":
        _require("M" in msec, "model.M is required for kind 'ou'")
        M = msec["M"]
        _require(isinstance(M, list) and len(M) > 0
                 and all(isinstance(r, list) and len(r) == len(M) for r in M),
                 "model.M must be a square matrix (list of rows)")
        matrix = [[float(_scalar("model", "M", v)) for v in row] for row in M]
        dim = len(matrix)
        if "dim" in msec:
            _require(_scalar("model", "dim", msec["dim"], int) == dim,
                     "model.dim disagrees with the shape of model.M")
        for key in ("sigma", "drift", "potential"):
            _require(key not in msec,
                     f"model.{key} is not accepted for kind 'ou'")
    else:
        _require("sigma" in msec, "model.sigma is required for kind 'scalar-sigma'")
        _require(isinstance(msec["sigma"], str), "model.sigma must be a string")
        sigma = msec["sigma"]
        parse_scalar_expression(sigma)
        dim = 1
        if "dim" in msec:
            _require(_scalar("model", "dim", msec["dim"], int) == 1,
                     "model.dim must be 1 for kind 'scalar-sigma'")
        if "drift" in msec:
            _require(isinstance(msec["drift"], str), "model.drift must be a string")
            drift = msec["drift"]
            parse_scalar_expression(drift)
        if "potential" in msec:
            _require(isinstance(msec["potential"], str),
                     "model.potential must be a string")
            potential = msec["potential"]
            parse_scalar_expression(potential)
        _require("M" not in msec, "model.M is not accepted for kind 'scalar-sigma'")

    # domain section
    dsec = data["domain"]
    _check_keys("domain", dsec, {"v_bar", "k"})
    _require("v_bar" in dsec, "domain.v_bar is required")
    _require("k" in dsec, "domain.k is required")
    v_bar = _float_list("domain", "v_bar", dsec["v_bar"])
    _require(len(v_bar) == dim,
             f"domain.v_bar has length {len(v_bar)}, model dimension is {dim}")
    k = _scalar("domain", "k", dsec["k"])
    nrm = float(np.linalg.norm(v_bar))
    _require(nrm > 0.0, "domain.v_bar must be nonzero")
    if abs(nrm - 1.0) > 1e-6:
        raise ConfigError(
            f"domain.v_bar must be a unit vector (|v_bar| = {nrm!r})")
    if nrm != 1.0:
        warnings.warn(f"domain.v_bar renormalized from |v| = {nrm!r}")
    v_bar = [v / nrm for v in v_bar]

    # problem section
    psec = data["problem"]
    _check_keys("problem", psec, {"x", "y", "s", "t", "t_grid"})
    _require("x" in psec and "y" in psec, "problem.x and problem.y are required")
    x = _float_list("problem", "x", psec["x"])
    y = _float_list("problem", "y", psec["y"])
    _require(len(x) == dim and len(y) == dim,
             "problem.x and problem.y must match the model dimension")
    s = _scalar("problem", "s", psec.get("s", 0.0))
    _require(0.0 <= s < 1.0, f"problem.s must lie in [0, 1), got {s}")
    _require(("t" in psec) != ("t_grid" in psec),
             "problem needs exactly one of 't' or 't_grid'")
    if "t" in psec:
        t_grid = [_scalar("problem", "t", psec["t"])]
        t_was_scalar = True
    else:
        t_grid = _float_list("problem", "t_grid", psec["t_grid"])
        t_was_scalar = False
    _require(all(t > 0 for t in t_grid), "conditioning times must be positive")
    gap_x = k - float(np.dot(v_bar, x))
    gap_y = k - float(np.dot(v_bar, y))
    _require(gap_x > 0, "start outside domain")
    _require(gap_y > 0, "conditioning point outside domain")

    # mc section
    mcsec = data.get("mc", {})
    _require(isinstance(mcsec, dict), "section 'mc' must be an object")
    _check_keys("mc", mcsec, set(_MC_DEFAULTS))
    mc_vals = dict(_MC_DEFAULTS)
    for key in ("paths", "steps", "seed", "workers"):
        if key in mcsec:
            mc_vals[key] = _scalar("mc", key, mcsec[key], int)
    if "delta" in mcsec:
        mc_vals["delta"] = _scalar("mc", "delta", mcsec["delta"])
    if "crossing_correction" in mcsec:
        _require(isinstance(mcsec["crossing_correction"], bool),
                 "mc.crossing_correction must be a boolean")
        mc_vals["crossing_correction"] = mcsec["crossing_correction"]

    # output section
    osec = data.get("output", {})
    _require(isinstance(osec, dict), "section 'output' must be an object")
    _check_keys("output", osec, {"dir", "format"})
    out_dir = osec.get("dir", "out")
    _require(isinstance(out_dir, str), "output.dir must be a string")
    out_format = osec.get("format", "csv")
    _require(out_format == "csv", f"output.format: only 'csv' is supported, "
                                  f"got {out_format!r}")

    cfg = RunConfig(kind=kind, dim=dim, matrix=matrix, sigma=sigma,
                    drift=drift, potential=potential, v_bar=v_bar, k=k,
                    x=x, y=y, s=s, t_grid=t_grid, t_was_scalar=t_was_scalar,
                    out_dir=out_dir, out_format=out_format, **mc_vals)
    cfg.mc_config()  # final range validation of the mc block
    return cfg


def serialize_config(config: RunConfig) -> str:
    """Canonical JSON text; parse_config inverts it exactly."""
    model: dict = {"kind": config.kind}
    if config.kind == "brownian":
        model["dim"] = config.dim
    elif config.kind == "ou":
        model["M"] = config.matrix
    else:
        model["sigma"] = config.sigma
        if config.drift is not None:
            model["drift"] = config.drift
        if config.potential is not None:
            model["potential"] = config.potential
    problem: dict = {"x": config.x, "y": config.y, "s": config.s}
    if config.t_was_scalar:
        problem["t"] = config.t_grid[0]
    else:
        problem["t_grid"] = config.t_grid
    data = {
        "model": model,
        "domain": {"v_bar": config.v_bar, "k": config.k},
        "problem": problem,
        "mc": {"paths": config.paths, "steps": config.steps,
               "delta": config.delta, "seed": config.seed,
               "workers": config.workers,
               "crossing_correction": config.crossing_correction},
        "output": {"dir": config.out_dir, "format": config.out_format},
    }
    return json.dumps(data, indent=2)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "True" if value else "False"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _route_for(config: RunConfig) -> str:
    return "closed" if config.kind in ("brownian", "ou") else "variational"


def _predict_rows(config: RunConfig):
    problem = config.problem(config.t_grid[0])
    est = hj.sharp_estimate(problem, route=_route_for(config))
    rows = [[t, est.u_value, est.w_value, est.prefactor, est.q_hat(t),
             est.characteristic.t_star, est.rsr_ok] for t in config.t_grid]
    return est, rows


def cmd_predict(config: RunConfig, out: Path) -> int:
    _, rows = _predict_rows(config)
    _write_csv(out / "sharp_estimate.csv",
               ["t", "ell", "w", "c", "q_hat", "t_star", "rsr_ok"], rows)
    return EXIT_OK


def _simulate_rows(config: RunConfig):
    cfg = config.mc_config()
    rows = []
    for t in config.t_grid:
        est = mc.exit_probability(config.problem(t), cfg)
        rows.append([t, est.p_hat, est.half_width, est.n_paths,
                     cfg.delta, cfg.crossing_correction])
    return rows


def cmd_simulate(config: RunConfig, out: Path) -> int:
    rows = _simulate_rows(config)
    _write_csv(out / "mc.csv",
               ["t", "p_hat", "ci_half_width", "n_paths", "delta", "corrected"],
               rows)
    return EXIT_OK


def cmd_validate(config: RunConfig | None, out: Path) -> int:
    rows = validate.run_battery()
    _write_csv(out / "validate_report.csv",
               ["check", "passed", "error", "tolerance"],
               [[r.check, r.passed, r.error, r.tolerance] for r in rows])
    failures = [r for r in rows if not r.passed]
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.check}: error {r.error:.3e} "
              f"(tolerance {r.tolerance:.3e})")
    if failures:
        print(f"{len(failures)} validation check(s) failed", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_sweep(config: RunConfig, out: Path) -> int:
    est, pred_rows = _predict_rows(config)
    sim_rows = _simulate_rows(config)
    joined = []
    plot_rows = []
    for prow, srow in zip(pred_rows, sim_rows):
        t = prow[0]
        q_hat = prow[4]
        p_hat = srow[1]
        joined.append(prow + srow[1:])
        with np.errstate(divide="ignore"):
            plot_rows.append([1.0 / t, float(np.log(q_hat)),
                              float(np.log(p_hat)) if p_hat > 0 else -np.inf])
    _write_csv(out / "sweep.csv",
               ["t", "ell", "w", "c", "q_hat", "t_star", "rsr_ok",
                "p_hat", "ci_half_width", "n_paths", "delta", "corrected"],
               joined)
    _write_csv(out / "sweep_plotdata.csv",
               ["inv_t", "log_q_hat", "log_p_hat"], plot_rows)
    plots.sweep_figure(out / "sweep.png",
                       [(r[0], r[4]) for r in pred_rows],
                       [(r[0], r[1], r[2]) for r in sim_rows])
    return EXIT_OK


def cmd_geodesic(config: RunConfig, out: Path) -> int:
    model = config.model()
    x = np.array(config.x, dtype=float)
    y = np.array(config.y, dtype=float)
    geo = geodesic_bvp(model, x, y)
    h_factor = van_vleck_H(model, x, y, geodesic=geo)
    work = work_integral_A(model, geo)
    times = np.linspace(0.0, 1.0, geo.nodes.shape[0])
    header = (["index", "time"] + [f"z{j}" for j in range(model.dim)]
              + ["distance", "H", "A"])
    rows = [[i, times[i]] + [geo.nodes[i, j] for j in range(model.dim)]
            + [geo.length, h_factor, work] for i in range(geo.nodes.shape[0])]
    _write_csv(out / "geodesic.csv", header, rows)
    plots.geodesic_figure(out / "geodesic.png", times, geo.nodes,
                          domain=config.domain())
    return EXIT_OK


_COMMANDS = {
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
    "geodesic": cmd_geodesic,
}


def run_command(name: str, config: RunConfig | None,
                out_dir: str | None = None) -> int:
    """Execute one subcommand; returns the process exit status."""
    if name not in _COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    if name != "validate" and config is None:
        raise ConfigError(f"command {name!r} requires a config file")
    out = Path(out_dir if out_dir is not None
               else (config.out_dir if config is not None else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return _COMMANDS[name](config, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sharpbridge",
        description="Sharp small-time exit estimates for diffusion bridges "
                    "and their Monte Carlo validation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("predict", "write the sharp estimate table"),
            ("simulate", "Monte Carlo exit probabilities"),
            ("validate", "run the oracle battery"),
            ("sweep", "predictions joined with simulation over the t grid"),
            ("geodesic", "geodesic path, H factor and work integral")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       required=(name != "validate"))
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = None
        if args.config is not None:
            path = Path(args.config)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            config = parse_config(path.read_text(encoding="utf-8"))
            if args.seed is not None:
                config.seed = args.seed
            workers = args.workers
            if workers is None and os.environ.get("SHARP_BRIDGE_WORKERS"):
                try:
                    workers = int(os.environ["SHARP_BRIDGE_WORKERS"])
                except ValueError as exc:
                    raise ConfigError(
                        "SHARP_BRIDGE_WORKERS must be an integer") from exc
            if workers is not None:
                config.workers = workers
            if args.paths is not None:
                config.paths = args.paths
            config.mc_config()
        return run_command(args.command, config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RsrError as exc:
        print(f"regularity failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericsError, EvaluationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SharpBridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

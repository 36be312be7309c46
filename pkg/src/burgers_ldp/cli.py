"""Command-line interface: ``burgers-ldp {simulate,skeleton,mam,tails,sample-invariant}``.

Exit codes: 0 success, 1 configuration error, 2 solver blow-up,
3 minimum-action search did not converge (best value still written).
Every run leaves exactly one ``manifest.json`` in its output directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .action import LadderConfig, linear_quasipotential, quasipotential
from .experiments import (ExperimentConfig, TailReport, convolution_tails, invariant_tails,
                          level_seed, linear_mode_tails, moment_summary, sample_invariant,
                          time_averaged_tails)
from .fileio import (ConfigError, config_hash, fmt_float, load_config, path_csv_text,
                     version_string, write_json_atomic, write_path_binary, write_text_atomic)
from .noise import DeltaSchedule, NoiseSpec
from .solver import BlowUpError, SolverConfig, TrajectoryPath, simulate_sbe, solve_skeleton, time_grid
from .spectral import SpectralField

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_NOT_CONVERGED = 0, 1, 2, 3
MANIFEST = "manifest.json"

PRESETS = {
    "zero": [],
    "e1": [1.0],
    "0.5e1": [0.5],
    "e2": [0.0, 1.0],
    "e1+0.5e2": [1.0, 0.5],
}

_NOISE_KEYS = {"noise.alpha", "noise.beta", "noise.delta", "noise.epsilon", "noise.n_modes",
               "schedule.theta"}
_SOLVER_KEYS = {"solver.h", "solver.scheme", "solver.m_grid", "solver.nonlinear"}
_RUN_KEYS = {"run.T", "run.seed", "run.out"}
_EXPERIMENT_FIELDS = {
    "epsilons": list, "alpha": float, "beta": float, "theta": float, "delta": float,
    "n_modes": int, "h": float, "scheme": str, "nonlinear": bool, "n_chains": int,
    "burn_in": float, "horizon": float, "spacing": float, "radius_grid": list,
    "sigma_small": float, "seed": int,
}


class NotConverged(RuntimeError):
    pass


class Config:
    """Typed access to a flat config; every error names the offending key."""

    def __init__(self, flat: dict, allowed: set):
        unknown = sorted(set(flat) - allowed)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config key")
        self.flat = flat

    def has(self, key):
        return key in self.flat

    def get(self, key, kind, default=...):
        if key not in self.flat:
            if default is ...:
                raise ConfigError(f"{key}: required key missing")
            return default
        v = self.flat[key]
        ok = {
            float: isinstance(v, (int, float)) and not isinstance(v, bool),
            int: isinstance(v, int) and not isinstance(v, bool),
            bool: isinstance(v, bool),
            str: isinstance(v, str),
            list: isinstance(v, list),
        }[kind]
        if not ok:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {v!r}")
        return float(v) if kind is float else v

    def numbers(self, key, default=...):
        v = self.get(key, list, default)
        if v is default and default is not ...:
            return v
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"{key}: expected a list of numbers, got {v!r}")
        if not all(math.isfinite(x) for x in v):
            raise ConfigError(f"{key}: coefficients must be finite")
        return [float(x) for x in v]

    def field(self, section, n_modes, default="zero") -> SpectralField:
        """``section.coeffs`` (list) or ``section.preset`` (name), padded to ``n_modes``."""
        ck, pk = f"{section}.coeffs", f"{section}.preset"
        if self.has(ck) and self.has(pk):
            raise ConfigError(f"{section}: give either coeffs or preset, not both")
        if self.has(ck):
            coeffs = self.numbers(ck)
        else:
            name = self.get(pk, str, default)
            if name not in PRESETS:
                raise ConfigError(f"{pk}: unknown preset {name!r} (known: {', '.join(PRESETS)})")
            coeffs = PRESETS[name]
        if len(coeffs) > n_modes:
            raise ConfigError(f"{section}: {len(coeffs)} coefficients exceed n_modes = {n_modes}")
        out = np.zeros(n_modes)
        out[: len(coeffs)] = coeffs
        return SpectralField(out)


def _wrap(key_prefix, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ValueError, TypeError) as err:
        if isinstance(err, ConfigError):
            raise
        msg = str(err)
        raise ConfigError(msg if msg.startswith(key_prefix) else f"{key_prefix}: {msg}") from None


def _noise(c: Config) -> NoiseSpec:
    alpha = c.get("noise.alpha", float, 0.0)
    beta = c.get("noise.beta", float, 0.75)
    eps = c.get("noise.epsilon", float)
    n = c.get("noise.n_modes", int)
    if c.has("noise.delta") and c.has("schedule.theta"):
        raise ConfigError("noise.delta: give either noise.delta or schedule.theta, not both")
    if c.has("noise.delta"):
        return _wrap("noise", NoiseSpec, alpha, beta, c.get("noise.delta", float), eps, n)
    # validate the noise constants first so the reported constraint is the primary one
    _wrap("noise", NoiseSpec, alpha, beta, 0.0, eps, n)
    if c.has("schedule.theta"):
        sched = _wrap("schedule", DeltaSchedule, c.get("schedule.theta", float), alpha, beta)
    else:
        sched = DeltaSchedule.default(alpha, beta)
    return _wrap("schedule", sched.spec, eps, n)


def _solver(c: Config, n_modes: int, nonlinear_key="solver.nonlinear") -> SolverConfig:
    return _wrap("solver", SolverConfig, h=c.get("solver.h", float, 1e-3),
                 scheme=c.get("solver.scheme", str, "exponential-euler"), n_modes=n_modes,
                 m_grid=c.get("solver.m_grid", int, None),
                 nonlinear=c.get(nonlinear_key, bool, True))


def _horizon(c: Config) -> float:
    T = c.get("run.T", float)
    if not T > 0:
        raise ConfigError(f"run.T: horizon must be positive (T = {T})")
    return T


def _experiment(c: Config, seed) -> ExperimentConfig:
    kw = {}
    for name, kind in _EXPERIMENT_FIELDS.items():
        key = f"experiment.{name}"
        if c.has(key):
            kw[name] = tuple(c.numbers(key)) if kind is list else c.get(key, kind)
    if seed is not None:
        kw["seed"] = seed
    return _wrap("experiment", ExperimentConfig, **kw)


# --- commands ------------------------------------------------------------------

def cmd_simulate(c: Config, out: Path, seed: int, info: dict) -> list:
    spec = _noise(c)
    cfg = _solver(c, spec.n_modes)
    T = _horizon(c)
    x = c.field("initial", spec.n_modes)
    info.update(n_modes=spec.n_modes, scheme=cfg.scheme, h=cfg.h, noise=spec.to_dict(),
                cfl_guard=cfg.h * (spec.n_modes * math.pi) ** 2)
    path = simulate_sbe(x, spec, cfg, T, seed)
    write_text_atomic(out / "trajectory.csv", path_csv_text(path))
    outputs = ["trajectory.csv"]
    if c.get("output.binary", bool, False):
        write_path_binary(out / "trajectory.bin", path)
        outputs.append("trajectory.bin")
    return outputs


def cmd_skeleton(c: Config, out: Path, seed: int, info: dict) -> list:
    n = c.get("control.n_modes", int)
    if n < 1:
        raise ConfigError(f"control.n_modes: must be positive (n_modes = {n})")
    alpha = c.get("control.alpha", float, 0.0)
    cfg = _solver(c, n)
    T = _horizon(c)
    x = c.field("initial", n)
    f = c.field("control", n)
    n_steps, h = time_grid(T, cfg.h)
    ctrl = TrajectoryPath.uniform(T, np.tile(f.coeffs, (n_steps + 1, 1)), {"kind": "control"})
    info.update(n_modes=n, scheme=cfg.scheme, h=h, alpha=alpha)
    path = _wrap("control", solve_skeleton, x, ctrl, alpha, cfg, T)
    write_text_atomic(out / "skeleton.csv", path_csv_text(path))
    return ["skeleton.csv"]


def cmd_mam(c: Config, out: Path, seed: int, info: dict) -> list:
    if c.has("target.coeffs"):
        n = c.get("target.n_modes", int, max(1, len(c.numbers("target.coeffs"))))
    else:
        n = c.get("target.n_modes", int)
    if n < 1:
        raise ConfigError(f"target.n_modes: must be positive (n_modes = {n})")
    phi = c.field("target", n)
    alpha = c.get("action.alpha", float, 0.0)
    if not 0.0 <= alpha < 0.5:
        raise ConfigError(f"action.alpha: constraint 0 <= alpha < 1/2 violated (alpha = {alpha})")
    nonlinear = c.get("action.nonlinear", bool, True)
    lad = _wrap("ladder", LadderConfig,
                T0=c.get("ladder.T0", float, 1.0),
                steps_per_unit=c.get("ladder.steps_per_unit", int, 64),
                rel_tol=c.get("ladder.rel_tol", float, 1e-3),
                max_rungs=c.get("ladder.max_rungs", int, 6),
                tol=c.get("ladder.tol", float, 1e-8),
                max_iter=c.get("ladder.max_iter", int, 5000),
                nonlinear=nonlinear)
    info.update(n_modes=n, scheme="midpoint action / preconditioned L-BFGS", alpha=alpha)
    res = quasipotential(phi, alpha, lad)
    rec = res.record()
    rec.update(alpha=alpha, nonlinear=nonlinear, n_modes=n, target=phi.coeffs.tolist(),
               message=res.message)
    if not nonlinear:
        rec["linear_oracle"] = linear_quasipotential(phi, alpha)
    write_json_atomic(out / "result.json", rec)
    write_text_atomic(out / "instanton.csv", path_csv_text(res.path))
    write_text_atomic(out / "control.csv", path_csv_text(res.control))
    outputs = ["result.json", "instanton.csv", "control.csv"]
    if not res.converged:
        raise NotConverged(outputs, f"minimum-action search did not converge ({res.message}); "
                                    f"best value {res.value!r} written")
    return outputs


def tails_csv_text(rep: TailReport) -> str:
    buf = io.StringIO()
    buf.write(f"# {rep.kind}: {rep.note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "R", "p_hat", "se", "diagnostic", "hits", "n"])
    for r in rep.rows:
        cells = ["censored"] * 3 if r.censored else [fmt_float(r.p_hat), fmt_float(r.se),
                                                      fmt_float(r.diagnostic)]
        w.writerow([fmt_float(r.epsilon), fmt_float(r.radius)] + cells + [r.hits, r.n])
    return buf.getvalue()


def cmd_tails(c: Config, out: Path, seed: int, info: dict) -> list:
    cfg = _experiment(c, seed)
    kind = c.get("tails.kind", str, "invariant")
    r = c.get("tails.sobolev_index", float, None)
    if kind not in ("invariant", "time_average", "convolution", "linear_mode"):
        raise ConfigError(f"tails.kind: unknown kind {kind!r}")
    if kind != "linear_mode" and not cfg.radius_grid:
        raise ConfigError("experiment.radius_grid: required for this tails kind")
    if kind == "invariant":
        rep = invariant_tails(cfg, r=r)
    elif kind == "time_average":
        rep = time_averaged_tails(cfg, n_blocks=c.get("tails.n_blocks", int, 20),
                                  skip=c.get("tails.skip", float, 0.0))
    elif kind == "convolution":
        rep = convolution_tails(cfg, c.get("tails.t", float), c.get("tails.n_samples", int), r)
    else:
        key = "tails.n_samples"
        n = c.numbers(key) if isinstance(c.flat.get(key), list) else c.get(key, int)
        if np.any(np.asarray(n) < 1):
            raise ConfigError(f"{key}: sample counts must be positive")
        radius = c.get("tails.radius", float)
        rep = _wrap("tails", linear_mode_tails, cfg.epsilons, radius, n, cfg.seed)
    info.update(n_modes=rep.meta.get("n_modes", cfg.n_modes), scheme=cfg.scheme, h=cfg.h,
                tails_kind=kind, tails_meta=rep.meta)
    write_text_atomic(out / "tails.csv", tails_csv_text(rep))
    return ["tails.csv"]


def cmd_sample_invariant(c: Config, out: Path, seed: int, info: dict) -> list:
    cfg = _experiment(c, seed)
    n = cfg.n_modes
    s_buf, m_buf = io.StringIO(), io.StringIO()
    sw = csv.writer(s_buf, lineterminator="\n")
    mw = csv.writer(m_buf, lineterminator="\n")
    sw.writerow(["epsilon", "chain", "index", "t"] + [f"u_{k}" for k in range(1, n + 1)])
    cols = ["epsilon", "delta", "h_mean", "h_se", "h1_mean", "h1_se", "h1_budget", "n_samples"]
    mw.writerow(cols)
    for j, eps in enumerate(cfg.epsilons):
        smp = sample_invariant(cfg, eps, level_seed(cfg.seed, j))
        for ch in range(smp.states.shape[0]):
            for i, row in enumerate(smp.states[ch]):
                sw.writerow([fmt_float(eps), ch, i, fmt_float(smp.burn_in + i * smp.spacing)]
                            + [fmt_float(v) for v in row])
        m = moment_summary(smp)
        mw.writerow([m[k] if k == "n_samples" else fmt_float(m[k]) for k in cols])
    info.update(n_modes=n, scheme=cfg.scheme, h=cfg.h)
    write_text_atomic(out / "samples.csv", s_buf.getvalue())
    write_text_atomic(out / "moments.csv", m_buf.getvalue())
    return ["samples.csv", "moments.csv"]


COMMANDS = {
    "simulate": (cmd_simulate, _NOISE_KEYS | _SOLVER_KEYS | _RUN_KEYS
                 | {"initial.coeffs", "initial.preset", "output.binary"}),
    "skeleton": (cmd_skeleton, _SOLVER_KEYS | _RUN_KEYS
                 | {"initial.coeffs", "initial.preset", "control.coeffs", "control.preset",
                    "control.n_modes", "control.alpha"}),
    "mam": (cmd_mam, {"run.seed", "run.out", "target.coeffs", "target.preset", "target.n_modes",
                      "action.alpha", "action.nonlinear", "ladder.T0", "ladder.steps_per_unit",
                      "ladder.rel_tol", "ladder.max_rungs", "ladder.tol", "ladder.max_iter"}),
    "tails": (cmd_tails, {"run.out"} | {f"experiment.{k}" for k in _EXPERIMENT_FIELDS}
              | {"tails.kind", "tails.sobolev_index", "tails.n_blocks", "tails.skip", "tails.t",
                 "tails.n_samples", "tails.radius"}),
    "sample-invariant": (cmd_sample_invariant,
                         {"run.out"} | {f"experiment.{k}" for k in _EXPERIMENT_FIELDS}),
}


# --- driver --------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="burgers-ldp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="flat key = value config file")
        s.add_argument("--out", type=Path, help="output directory (overrides run.out)")
        s.add_argument("--seed", type=int, help="master seed, unsigned 64-bit (overrides config)")
        s.add_argument("--force", action="store_true", help="overwrite an existing manifest")
    return p


def _err(msg):
    print(f"burgers-ldp: error: {msg}", file=sys.stderr)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    fn, allowed = COMMANDS[args.command]
    start = time.time()
    t0 = time.perf_counter()
    flat: dict = {}
    out = args.out
    manifest = {
        "command": args.command,
        "config_path": str(args.config),
        "start_time": datetime.fromtimestamp(start, timezone.utc).isoformat(),
        "version": version_string(),
    }
    code, outputs, seed = EXIT_OK, [], None
    refused = False
    try:
        flat = load_config(args.config)
        if out is None:
            if "run.out" not in flat:
                raise ConfigError("run.out: required key missing (or pass --out)")
            out = Path(str(flat["run.out"]))
        out = Path(out)
        if (out / MANIFEST).exists() and not args.force:
            _err(f"{out / MANIFEST} exists; pass --force to overwrite")
            refused = True
            return EXIT_CONFIG
        c = Config(flat, allowed)
        if args.seed is not None:
            seed = args.seed
        elif "experiment.seed" in flat:
            seed = c.get("experiment.seed", int)
        else:
            seed = c.get("run.seed", int, 0)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer (seed = {seed})")
        out.mkdir(parents=True, exist_ok=True)
        outputs = fn(c, out, seed, manifest)
        manifest["status"] = "ok"
    except ConfigError as err:
        code, manifest["status"], manifest["error"] = EXIT_CONFIG, "config_error", str(err)
        _err(err)
    except BlowUpError as err:
        code, manifest["status"], manifest["error"] = EXIT_BLOWUP, "blow_up", str(err)
        _err(err)
    except NotConverged as err:
        outputs, msg = err.args
        code, manifest["status"], manifest["error"] = EXIT_NOT_CONVERGED, "not_converged", msg
        _err(msg)
    finally:
        if out is not None and not refused:
            manifest.update(
                config_echo=flat,
                config_hash=config_hash(flat) if flat else None,
                master_seed=seed,
                outputs=outputs,
                exit_code=code,
                wall_time=time.perf_counter() - t0,
            )
            manifest.setdefault("n_modes", None)
            manifest.setdefault("scheme", None)
            manifest.setdefault("status", "error")
            write_json_atomic(Path(out) / MANIFEST, manifest)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

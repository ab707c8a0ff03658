"""Command-line front end.

    slqsim run CONFIG        one simulation plus the matching mean-field prediction
    slqsim sweep PLAN        parameter sweep to CSV
    slqsim verify            oracle and fixed-point cross-checks
    slqsim equilibrium CONFIG   equilibrium tail/density CSV
    slqsim meanfield CONFIG     ODE trajectory CSV

Config and plan files are flat ``key = value`` text; ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from slqsim import equilibrium as eq
from slqsim import meanfield as mf
from slqsim.engine import run_simulation
from slqsim.metrics import build_report
from slqsim.model import ConfigError, Policy, SystemConfig, config_errors

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 3

DESK_ARRIVALS = 10**7
FULL_SCALE_ARRIVALS = 10**9
SWEEP_CSV_VERSION = "slqsim-sweep v1"
SWEEP_COLUMNS = [
    "axis", "value", "seed", "policy", "n", "m", "d", "lambda", "mu", "gamma",
    "sampling_mode", "n_arrivals", "warmup_fraction", "mean_response_time",
    "half_width", "predicted_response_time", "percentage_error", "busy_fraction",
    "mean_queue_length", "status",
]
AXES = ("d", "gamma", "m", "load")
_INT_KEYS = {"n", "m", "d", "n_arrivals"}


# -- key=value files ---------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected key = value, got {raw.strip()!r}"])
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError([f"line {lineno}: duplicate key {key!r}"])
        out[key] = value
    return out


def _number(key: str, value: str):
    try:
        return int(value) if key in _INT_KEYS else float(value)
    except ValueError:
        raise ConfigError([f"{key}: not a number: {value!r}"]) from None


def config_from_kv(kv: dict[str, str]) -> SystemConfig:
    data = {}
    for k, v in kv.items():
        data[k] = v if k in ("policy", "sampling_mode") else _number(k, v)
    cfg = SystemConfig.from_dict(data)
    errors = config_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def config_to_kv(cfg: SystemConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in cfg.to_dict().items())


def load_config(path) -> SystemConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return config_from_kv(parse_kv(text))


@dataclass
class ExperimentPlan:
    base: SystemConfig
    sweep_axis: str
    sweep_values: list
    seeds: list[int] = field(default_factory=lambda: [1])
    n_arrivals: int = DESK_ARRIVALS
    warmup_fraction: float = 0.1
    output: str | None = None

    def points(self) -> list[SystemConfig]:
        """Configurations along the sweep axis.

        Sweeping ``m`` holds lambda/(r mu) fixed (lambda is rescaled);
        ``load`` sets lambda = load * r * mu.
        """
        out = []
        for v in self.sweep_values:
            if self.sweep_axis == "d":
                cfg = replace(self.base, d=int(v))
            elif self.sweep_axis == "gamma":
                cfg = replace(self.base, gamma=float(v))
            elif self.sweep_axis == "m":
                load = self.base.offered_load
                m = int(v)
                cfg = replace(self.base, m=m, lam=load * (m / self.base.n) * self.base.mu)
            else:
                cfg = replace(self.base, lam=float(v) * self.base.r * self.base.mu)
            out.append(cfg)
        return out

    def validate(self) -> None:
        errors = []
        if self.sweep_axis not in AXES:
            errors.append(f"sweep_axis must be one of {AXES}, got {self.sweep_axis!r}")
        if not self.sweep_values:
            errors.append("sweep_values is empty")
        if not self.seeds:
            errors.append("seeds is empty")
        if self.n_arrivals < 1:
            errors.append("n_arrivals must be positive")
        if not 0 <= self.warmup_fraction < 1:
            errors.append("warmup_fraction must lie in [0, 1)")
        if not errors:
            for v, cfg in zip(self.sweep_values, self.points()):
                errors += [f"{self.sweep_axis}={v}: {e}" for e in config_errors(cfg)]
        if errors:
            raise ConfigError(errors)


_PLAN_KEYS = {"sweep_axis", "sweep_values", "seeds", "n_arrivals", "warmup_fraction", "output"}


def plan_from_kv(kv: dict[str, str]) -> ExperimentPlan:
    base_kv = {k: v for k, v in kv.items() if k not in _PLAN_KEYS}
    if "sweep_axis" not in kv or "sweep_values" not in kv:
        raise ConfigError(["plan needs sweep_axis and sweep_values"])
    base = config_from_kv(base_kv)
    try:
        values = [float(s) for s in kv["sweep_values"].split(",") if s.strip()]
        seeds = [int(s) for s in kv.get("seeds", "1").split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError([f"bad list: {exc}"]) from None
    plan = ExperimentPlan(
        base=base,
        sweep_axis=kv["sweep_axis"].strip(),
        sweep_values=[int(v) if v.is_integer() else v for v in values],
        seeds=seeds,
        n_arrivals=int(_number("n_arrivals", kv.get("n_arrivals", str(DESK_ARRIVALS)))),
        warmup_fraction=float(kv.get("warmup_fraction", "0.1")),
        output=kv.get("output"),
    )
    plan.validate()
    return plan


def plan_to_kv(plan: ExperimentPlan) -> str:
    text = config_to_kv(plan.base)
    text += f"sweep_axis = {plan.sweep_axis}\n"
    text += "sweep_values = " + ", ".join(str(v) for v in plan.sweep_values) + "\n"
    text += "seeds = " + ", ".join(str(s) for s in plan.seeds) + "\n"
    text += f"n_arrivals = {plan.n_arrivals}\n"
    text += f"warmup_fraction = {plan.warmup_fraction!r}\n"
    if plan.output:
        text += f"output = {plan.output}\n"
    return text


# -- commands ----------------------------------------------------------------

def _analytic(cfg: SystemConfig):
    if not cfg.is_stable:
        return None
    return eq.predict(cfg)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.policy:
            cfg = replace(cfg, policy=Policy(args.policy.upper()))
            if config_errors(cfg):
                raise ConfigError(config_errors(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    predicted = _analytic(cfg)
    if args.analytic_only:
        if predicted is None:
            print("config is unstable; no equilibrium exists", file=sys.stderr)
            return EXIT_CONFIG
        profile = eq.equilibrium(cfg)
        q, bound = eq.mean_queue_size(profile)
        payload = {
            "config": cfg.to_dict(),
            "epsilon": profile.epsilon,
            "rho": profile.rho,
            "mean_queue_size": q,
            "tail_bound": bound,
            "predicted_response_time": predicted,
            "pi": profile.pi.tolist(),
        }
        _emit(out_dir, "analytic.json", json.dumps(payload, indent=2))
        print(f"{cfg.policy.value}(d={cfg.d}) predicted response time {predicted:.6g}s "
              f"(mean queue {q:.6g})")
        return EXIT_OK
    n_arrivals = FULL_SCALE_ARRIVALS if args.paper_scale else args.arrivals
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = run_simulation(cfg, args.seed, n_arrivals, args.warmup, keep_trace=args.trace)
    report = build_report(out, predicted)
    _emit(out_dir, "report.json", report.to_json(indent=2))
    if out_dir and args.trace:
        np.savetxt(out_dir / "response_times.csv", out.trace, delimiter=",",
                   header="response_time", comments="")
    if args.verbose:
        print(report.to_text())
    print(f"{cfg.policy.value}(d={cfg.d}) w={report.mean_response_time:.6g}s "
          f"+/-{report.response_half_width:.3g} predicted={report.predicted_response_time:.6g}s "
          f"error={report.percentage_error:.3f}% busy={report.busy_fraction:.4f}")
    return EXIT_OK


def _emit(out_dir, name, text):
    if out_dir is None:
        return
    (out_dir / name).write_text(text + "\n")


def _sweep_point(job):
    axis, value, seed, cfg, n_arrivals, warmup = job
    row = {
        "axis": axis, "value": value, "seed": seed, "policy": cfg.policy.value,
        "n": cfg.n, "m": cfg.m, "d": cfg.d, "lambda": cfg.lam, "mu": cfg.mu,
        "gamma": cfg.gamma, "sampling_mode": cfg.sampling_mode.value,
        "n_arrivals": n_arrivals, "warmup_fraction": warmup,
    }
    try:
        predicted = _analytic(cfg)
        out = run_simulation(cfg, seed, n_arrivals, warmup)
        rep = build_report(out, predicted)
        row.update(
            mean_response_time=rep.mean_response_time,
            half_width=rep.response_half_width,
            predicted_response_time=rep.predicted_response_time,
            percentage_error=rep.percentage_error,
            busy_fraction=rep.busy_fraction,
            mean_queue_length=rep.mean_queue_length,
            status="ok",
        )
    except Exception as exc:  # recorded in-row; the sweep continues
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_sweep(plan: ExperimentPlan, workers: int = 1) -> list[dict]:
    jobs = [
        (plan.sweep_axis, v, seed, cfg, plan.n_arrivals, plan.warmup_fraction)
        for v, cfg in zip(plan.sweep_values, plan.points())
        for seed in plan.seeds
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_sweep_point, jobs))
        return [_sweep_point(j) for j in jobs]


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# {SWEEP_CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_sweep(args) -> int:
    try:
        plan = plan_from_kv(parse_kv(Path(args.plan).read_text()))
    except OSError as exc:
        print(f"config error: cannot read {args.plan}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.arrivals:
        plan.n_arrivals = args.arrivals
    if args.paper_scale:
        plan.n_arrivals = FULL_SCALE_ARRIVALS
    if args.seed is not None:
        plan.seeds = [args.seed]
    rows = run_sweep(plan, args.workers)
    text = sweep_csv(rows)
    target = args.out or plan.output
    if target:
        Path(target).write_text(text)
    else:
        sys.stdout.write(text)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} sweep points failed", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from slqsim.verify import run_checks

    results = run_checks(quick=args.quick, mutate=args.mutate, arrivals=args.arrivals)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_equilibrium(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.policy:
            cfg = replace(cfg, policy=Policy(args.policy.upper()))
        profile = eq.equilibrium(cfg, args.tail_tol)
    except (ConfigError, eq.UnstableConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "pi", "density"])
    for i, p, q in eq.profile_csv_rows(profile):
        w.writerow([i, repr(p), repr(q)])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_meanfield(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.policy:
            cfg = replace(cfg, policy=Policy(args.policy.upper()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dt = args.dt or mf.default_dt(cfg)
    every = max(1, int(round(args.record_every / dt))) if args.record_every else 1
    traj = mf.integrate(mf.MeanFieldState.empty(args.i_max), cfg, args.t_end, dt, record_every=every)
    if args.out:
        traj.to_csv(args.out)
    else:
        traj.write_csv(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slqsim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("config")
    r.add_argument("--policy", choices=["slq", "jsq", "SLQ", "JSQ"])
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--arrivals", type=int, default=DESK_ARRIVALS)
    r.add_argument("--warmup", type=float, default=0.1)
    r.add_argument("--analytic-only", action="store_true")
    r.add_argument("--paper-scale", action="store_true", help=f"{FULL_SCALE_ARRIVALS:.0e} arrivals")
    r.add_argument("--trace", action="store_true", help="keep every response time")
    r.add_argument("--out", help="directory for report.json")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter sweep")
    s.add_argument("plan")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--arrivals", type=int)
    s.add_argument("--paper-scale", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="CSV path (default: plan output key, else stdout)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="oracle and fixed-point cross-checks")
    v.add_argument("--quick", action="store_true", help="smaller runs, looser coverage")
    v.add_argument("--arrivals", type=int, default=None)
    v.add_argument("--mutate", choices=["first-nonempty"], help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("equilibrium", help="equilibrium tail and density as CSV")
    e.add_argument("config")
    e.add_argument("--policy", choices=["slq", "jsq", "SLQ", "JSQ"])
    e.add_argument("--tail-tol", type=float, default=eq.DEFAULT_TAIL_TOL)
    e.add_argument("--out")
    e.set_defaults(func=cmd_equilibrium)

    m = sub.add_parser("meanfield", help="integrate the mean-field ODE from the empty state")
    m.add_argument("config")
    m.add_argument("--policy", choices=["slq", "jsq", "SLQ", "JSQ"])
    m.add_argument("--t-end", type=float, default=1000.0)
    m.add_argument("--dt", type=float)
    m.add_argument("--record-every", type=float, default=1.0, help="seconds between rows")
    m.add_argument("--i-max", type=int, default=mf.DEFAULT_I_MAX)
    m.add_argument("--out")
    m.set_defaults(func=cmd_meanfield)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

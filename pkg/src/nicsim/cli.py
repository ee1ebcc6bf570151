"""``nicsim`` command line.

Results go to stdout as CSV or JSON; diagnostics go to stderr.  Exit
status: 0 ok, 2 bad configuration, 3 protocol corruption or invariant
failure, 4 event budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import os
import sys
from pathlib import Path

from . import analytic, harness
from .engine import EventBudgetExceeded, SimulationError
from .schedules import AlgorithmKind, build_schedule
from .topology import ConfigError, load_presets

EXIT_OK, EXIT_CONFIG, EXIT_CORRUPTION, EXIT_BUDGET = 0, 2, 3, 4

CONFIG_KEYS = ("platform", "mode", "alg", "n", "warmup", "iterations", "seed", "loss_prob", "host_skew",
               "event_budget")
_ALIASES = {"algorithm": "alg"}


# ------------------------------------------------------------ config


def parse_config(path) -> dict:
    """Read a JSON experiment config into validated keyword values.

    Returns the raw settings (keys from ``CONFIG_KEYS``) so command-line
    flags can still override them; :func:`resolve_config` builds the
    :class:`~nicsim.harness.ExperimentConfig`.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    out = {}
    for key, value in doc.items():
        key = _ALIASES.get(key, key)
        if key not in CONFIG_KEYS:
            close = difflib.get_close_matches(key, CONFIG_KEYS, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"{path}: unknown key {key!r}{hint}")
        out[key] = value
    return out


def resolve_config(settings: dict, env=None) -> harness.ExperimentConfig:
    env = os.environ if env is None else env
    s = dict(settings)
    if "platform" not in s:
        raise ConfigError("platform is required")
    if s.get("seed") is None:
        s["seed"] = _env_seed(env)
    kwargs = {"platform": s["platform"]}
    for key in ("mode", "n", "warmup", "iterations", "seed", "loss_prob", "host_skew", "event_budget"):
        if s.get(key) is not None:
            kwargs[key] = s[key]
    for key in ("n", "warmup", "iterations", "seed", "event_budget"):
        if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int)):
            raise ConfigError(f"{key} must be an integer, got {kwargs[key]!r}")
    for key in ("loss_prob", "host_skew"):
        if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], (int, float))):
            raise ConfigError(f"{key} must be a number, got {kwargs[key]!r}")
    if s.get("alg") is not None:
        try:
            kwargs["algorithm"] = AlgorithmKind.parse(str(s["alg"]))
        except ValueError as exc:
            raise ConfigError(f"alg: {exc}") from exc
    return harness.ExperimentConfig(**kwargs)


def _env_seed(env) -> int:
    raw = env.get("NICSIM_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"NICSIM_SEED must be an integer, got {raw!r}") from None


def parse_n_spec(text: str) -> list[int]:
    """``8``, ``2,4,8``, ``2..32`` or ``2..1024:pow2``."""
    text = text.strip()
    try:
        if ".." in text:
            rng, _, step = text.partition(":")
            lo, hi = (int(x) for x in rng.split(".."))
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad node range {text!r}")
            if step == "pow2":
                out, p = [], 1
                while p <= hi:
                    if p >= lo:
                        out.append(p)
                    p *= 2
                return out
            return list(range(lo, hi + 1, int(step) if step else 1))
        values = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad node spec {text!r}; use N, N1,N2,..., A..B or A..B:pow2") from None
    if any(v < 1 for v in values):
        raise ConfigError(f"node counts must be >= 1: {text!r}")
    return values


# ------------------------------------------------------------ commands


def _experiment_args(p: argparse.ArgumentParser, n_help="number of nodes"):
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--platform", help="preset name (see `nicsim model --list`)")
    p.add_argument("--mode", choices=harness.MODES, help="barrier implementation (default nic-collective)")
    p.add_argument("--alg", help="ds, pe, gb or gb:<degree> (default ds)")
    p.add_argument("--n", help=n_help)
    p.add_argument("--warmup", type=int, help="discarded barriers (default 100)")
    p.add_argument("--iterations", type=int, help="measured barriers (default 10000)")
    p.add_argument("--seed", type=int, help="run seed (default $NICSIM_SEED, else 0)")
    p.add_argument("--loss-prob", dest="loss_prob", type=float, help="override the preset's packet loss")
    p.add_argument("--host-skew", dest="host_skew", type=float,
                   help="max random delay in µs before each barrier entry (default 0)")
    p.add_argument("--event-budget", dest="event_budget", type=int,
                   help="abort after this many dispatched events (default 10^8)")


def _settings(args, n_override=None) -> dict:
    s = parse_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if key == "n":
            v = n_override
        if v is not None:
            s[key] = v
    return s


def _single_n(args) -> int | None:
    if args.n is None:
        return None
    values = parse_n_spec(args.n)
    if len(values) != 1:
        raise ConfigError("this subcommand takes a single --n")
    return values[0]


def cmd_run(args, out) -> int:
    cfg = resolve_config(_settings(args, _single_n(args)))
    m = harness.run_experiment(cfg, trace=args.trace is not None)
    harness.write_csv([m], out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            harness.write_trace(m.trace, fh)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    settings = _settings(args)
    ns = parse_n_spec(args.n) if args.n else [settings.get("n", 8)]
    modes = args.modes.split(",") if args.modes else [settings.get("mode", "nic-collective")]
    algs = args.algs.split(",") if args.algs else [settings.get("alg", "ds")]
    configs = []
    for mode in modes:
        for alg in algs:
            for n in ns:
                configs.append(resolve_config({**settings, "mode": mode, "alg": alg, "n": n}))
    harness.write_csv(harness.run_sweep(configs, workers=args.workers), out)
    return EXIT_OK


def cmd_compare(args, out) -> int:
    cfg = resolve_config(_settings(args, _single_n(args)))
    cmp = harness.compare_modes(cfg)
    doc = {"platform": cfg.platform, "algorithm": cfg.algorithm.label, "n": cfg.n, "seed": cfg.seed,
           **cmp.as_dict()}
    json.dump(doc, out, indent=2)
    out.write("\n")
    return EXIT_OK


def cmd_model(args, out) -> int:
    if args.list:
        json.dump(sorted(load_presets()), out)
        out.write("\n")
        return EXIT_OK
    if args.platform is None or args.n is None:
        raise ConfigError("model needs --platform and --n")
    try:
        params = analytic.builtin_params(args.platform)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ns = parse_n_spec(args.n)
    try:
        preds = [(n, analytic.predict_latency(params, n)) for n in ns]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.json:
        json.dump([{"platform": args.platform, "n": n, "latency_us": float(analytic.round_half_up(v))}
                   for n, v in preds], out)
        out.write("\n")
    else:
        for _, v in preds:
            out.write(f"{analytic.round_half_up(v)}µs\n")
    return EXIT_OK


def read_samples(fh, mode=None, algorithm=None) -> list[tuple[int, float]]:
    """(n, latency) pairs from a two-column samples file or a results CSV."""
    rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError("samples file has no rows")
    col = "latency_us" if "latency_us" in rows[0] else "mean_us" if "mean_us" in rows[0] else None
    if col is None or "n" not in rows[0]:
        raise ConfigError("samples need columns n and latency_us (or a results CSV with mean_us)")
    out = []
    for i, row in enumerate(rows, start=2):
        if mode and row.get("mode") != mode:
            continue
        if algorithm and row.get("algorithm") != algorithm:
            continue
        try:
            out.append((int(row["n"]), float(row[col])))
        except ValueError:
            raise ConfigError(f"line {i}: cannot parse n={row['n']!r}, {col}={row[col]!r}") from None
    return out


def cmd_fit(args, out) -> int:
    with open(args.input, newline="") as fh:
        samples = read_samples(fh, args.mode, args.alg)
    try:
        fit = analytic.fit_constants(samples, label=args.label)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    json.dump(fit.as_dict(), out, indent=2)
    out.write("\n")
    return EXIT_OK


def cmd_schedule(args, out) -> int:
    try:
        alg = AlgorithmKind.parse(args.alg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.n < 1 or not 0 <= args.rank < args.n:
        raise ConfigError(f"need n >= 1 and 0 <= rank < n, got n={args.n} rank={args.rank}")
    json.dump(build_schedule(alg, args.n, args.rank).to_json(), out)
    out.write("\n")
    return EXIT_OK


def cmd_plot(args, out) -> int:
    from .plot import HW_BARRIER_US, PlotError, emit_plot

    with open(args.input, newline="") as fh:
        rows = harness.read_csv(fh)
    model = None
    if args.model_overlay and rows:
        platform = rows[0]["platform"]
        try:
            model = analytic.builtin_params(platform)
        except ValueError:
            samples = [(int(r["n"]), float(r["mean_us"])) for r in rows
                       if r["algorithm"] == "ds" and r["mode"] in ("nic-collective", "elan-chain")
                       and int(r["n"]) >= 2]
            try:
                model = analytic.fit_constants(samples, label=platform).params
            except ValueError as exc:
                raise ConfigError(f"no model constants for {platform} and none can be fitted: {exc}") from exc
    reference = None
    if args.reference is not None:
        reference = HW_BARRIER_US if args.reference == "hw" else float(args.reference)
    try:
        svg = emit_plot(rows, title=args.title, model=model, reference_us=reference)
    except PlotError as exc:
        raise ConfigError(str(exc)) from exc
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nicsim", description="NIC-offloaded barrier simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one experiment, one CSV row")
    _experiment_args(p)
    p.add_argument("--trace", metavar="FILE", help="also write the packet trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="experiments over node counts, modes and algorithms")
    _experiment_args(p, n_help="node counts: N, N1,N2, A..B or A..B:pow2")
    p.add_argument("--modes", help="comma-separated modes (default: --mode)")
    p.add_argument("--algs", help="comma-separated algorithms (default: --alg)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="all applicable modes on one config, JSON with ratios")
    _experiment_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("model", help="analytic latency prediction")
    p.add_argument("--platform")
    p.add_argument("--n", help="node count(s), same syntax as sweep")
    p.add_argument("--json", action="store_true", help="JSON instead of one value per line")
    p.add_argument("--list", action="store_true", help="list preset names and exit")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("fit", help="fit model constants to latency samples")
    p.add_argument("--in", dest="input", required=True, help="CSV with n,latency_us or a results CSV")
    p.add_argument("--mode", help="only rows of this mode (results CSV)")
    p.add_argument("--alg", help="only rows of this algorithm (results CSV)")
    p.add_argument("--label", default="fit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("schedule", help="print one rank's schedule as JSON")
    p.add_argument("--alg", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("plot", help="render a results CSV as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-overlay", action="store_true", help="add the analytic prediction, dashed")
    p.add_argument("--reference", nargs="?", const="hw", metavar="US",
                   help="horizontal reference line; without a value, the 4.20 µs hardware barrier")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(f"nicsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EventBudgetExceeded as exc:
        print(f"nicsim: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except SimulationError as exc:
        print(f"nicsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CORRUPTION


if __name__ == "__main__":
    sys.exit(main())

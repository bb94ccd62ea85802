"""Command-line interface.

Subcommands: ``simulate``, ``test``, ``critvals``, ``size``, ``power``,
``moments``. Every option may also come from ``--config file.json`` using the
option's long name with dashes replaced by underscores; explicit flags win.
Data goes to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

from breakscan import __version__, streams
from breakscan.breaktest import ScanConfig, StatisticKind, scan
from breakscan.dgp import BreakDgp, InnovationLaw, RegressorLaw, read_sample_csv, sample_to_csv, simulate_sample
from breakscan.errors import BreakscanError
from breakscan.harness import Experiment, run_moment_check, run_power, run_size, summary_rows
from breakscan.ivx import IvxConfig
from breakscan.limitdist import CriticalValueTable, FunctionalSpec, build_table, p_value

DEFAULTS: dict[str, Any] = {
    # dgp
    "T": 200, "p": 1, "gamma": 1.0, "c": [1.0], "sigma_u": 1.0, "sigma_v": [1.0],
    "rho_uv": 0.0, "ma_weights": None, "alpha1": 0.0, "alpha2": 0.0,
    "beta1": [0.0], "beta2": [0.0], "pi0": 0.5, "intercept": False,
    # scan
    "kind": "ols", "pi_lo": 0.15, "pi_hi": 0.85, "step": None,
    "slopes_only": False, "delta": None, "cz": None,
    # limit tables
    "functional": "SupNBB", "grid": 1000, "ou_c": None,
    "levels": [0.90, 0.95, 0.99], "keep_draws": False, "force": False,
    # experiments
    "level": 0.05, "reps": 1000, "table": None, "critical_value": None,
    "name": "experiment", "summary_csv": None, "pi": 0.3,
    # io
    "input": "-", "out": None, "csv": None, "with_meta": False,
    "seed": None, "threads": None,
}


_NOT_PROVENANCE = frozenset({"threads", "out", "csv", "summary_csv", "force"})


class UsageError(Exception):
    pass


def _add_dgp(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data-generating process")
    g.add_argument("--T", type=int, help="sample size")
    g.add_argument("--p", type=int, help="number of regressors")
    g.add_argument("--gamma", type=float, help="persistence exponent in (0, 1]")
    g.add_argument("--c", type=float, nargs="+", help="decay coefficient(s)")
    g.add_argument("--sigma-u", type=float)
    g.add_argument("--sigma-v", type=float, nargs="+")
    g.add_argument("--rho-uv", type=float)
    g.add_argument("--ma-weights", type=float, nargs="+")
    g.add_argument("--alpha1", type=float)
    g.add_argument("--alpha2", type=float)
    g.add_argument("--beta1", type=float, nargs="+")
    g.add_argument("--beta2", type=float, nargs="+")
    g.add_argument("--pi0", type=float, help="true break fraction")
    g.add_argument("--intercept", action="store_true", default=None)


def _add_scan(p: argparse.ArgumentParser, intercept: bool = True) -> None:
    g = p.add_argument_group("scan")
    g.add_argument("--kind", choices=["ols", "ivx"])
    g.add_argument("--pi-lo", type=float)
    g.add_argument("--pi-hi", type=float)
    g.add_argument("--step", type=float, help="grid step (default: every k)")
    g.add_argument("--slopes-only", action="store_true", default=None)
    g.add_argument("--delta", type=float, help="IVX exponent (default 0.95)")
    g.add_argument("--cz", type=float, help="IVX decay (default 5)")
    if intercept:
        g.add_argument("--intercept", action="store_true", default=None)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker cap (env BREAKSCAN_THREADS)")
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breakscan", description="Sup-Wald break tests for predictive regressions."
    )
    parser.add_argument("--version", action="version", version=f"breakscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a sample as CSV")
    _add_common(p)
    _add_dgp(p)
    p.add_argument("--with-meta", action="store_true", default=None)

    p = sub.add_parser("test", help="sup-Wald scan of a sample CSV")
    _add_common(p)
    _add_scan(p)
    p.add_argument("--input", help="sample CSV (default stdin)")
    p.add_argument("--table", type=Path, help="critical-value table for a p-value")
    p.add_argument("--csv", type=Path, help="also write pi,k,stat CSV here")

    p = sub.add_parser("critvals", help="simulate a critical-value table")
    _add_common(p)
    p.add_argument("--functional", help="SupNBB, ChiSqPlusSupBB, ChiSq or OUQuadratic")
    p.add_argument("--p", type=int)
    p.add_argument("--pi-lo", type=float)
    p.add_argument("--pi-hi", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--ou-c", type=float, help="OU decay for OUQuadratic")
    p.add_argument("--reps", type=int)
    p.add_argument("--levels", type=float, nargs="+")
    p.add_argument("--keep-draws", action="store_true", default=None)
    p.add_argument("--force", action="store_true", default=None)

    for name in ("size", "power"):
        p = sub.add_parser(name, help=f"Monte Carlo {name} experiment")
        _add_common(p)
        _add_dgp(p)
        _add_scan(p, intercept=False)
        p.add_argument("--table", type=Path)
        p.add_argument("--critical-value", type=float)
        p.add_argument("--level", type=float)
        p.add_argument("--reps", type=int)
        p.add_argument("--name")
        p.add_argument("--summary-csv", type=Path)

    p = sub.add_parser("moments", help="moment-convergence diagnostics")
    _add_common(p)
    _add_dgp(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--pi", type=float, help="regime split for the regime moments")
    p.add_argument("--delta", type=float)
    p.add_argument("--cz", type=float)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge built-in defaults, the config file and explicit flags."""
    cfg = {k: DEFAULTS[k] for k in vars(args) if k in DEFAULTS}
    if getattr(args, "config", None) is not None:
        try:
            file_cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(file_cfg) - set(cfg) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    for key in ("out", "csv", "table", "summary_csv"):
        if cfg.get(key) is not None:
            cfg[key] = str(cfg[key])
    if "seed" in cfg and cfg["seed"] is None:
        cfg["seed"] = streams.fresh_seed()
    if "threads" in cfg and cfg["threads"] is None:
        cfg["threads"] = streams.default_workers()
    return cfg


def _dgp(cfg: dict[str, Any]) -> BreakDgp:
    law = RegressorLaw(
        p=cfg["p"],
        gamma=cfg["gamma"],
        c=tuple(cfg["c"]),
        innovations=InnovationLaw(
            sigma_u=cfg["sigma_u"],
            sigma_v=tuple(cfg["sigma_v"]),
            rho_uv=cfg["rho_uv"],
            ma_weights=None if cfg["ma_weights"] is None else tuple(cfg["ma_weights"]),
        ),
    )
    return BreakDgp(
        law=law,
        T=cfg["T"],
        alpha1=cfg["alpha1"],
        alpha2=cfg["alpha2"],
        beta1=tuple(cfg["beta1"]),
        beta2=tuple(cfg["beta2"]),
        pi0=cfg["pi0"],
        include_intercept=bool(cfg["intercept"]),
    )


def _ivx(cfg: dict[str, Any]) -> IvxConfig:
    base = IvxConfig()
    return IvxConfig(
        delta=base.delta if cfg.get("delta") is None else cfg["delta"],
        c_z=base.c_z if cfg.get("cz") is None else cfg["cz"],
    )


def _scan_cfg(cfg: dict[str, Any]) -> ScanConfig:
    kind = StatisticKind.parse(cfg["kind"])
    ivx = _ivx(cfg) if kind is StatisticKind.IVX else None
    if ivx is not None:
        cfg["delta"], cfg["cz"] = ivx.delta, ivx.c_z
    return ScanConfig(
        pi_lo=cfg["pi_lo"],
        pi_hi=cfg["pi_hi"],
        step=cfg["step"],
        kind=kind,
        intercept=bool(cfg["intercept"]),
        ivx=ivx,
        slopes_only=bool(cfg["slopes_only"]),
    )


def _provenance(command: str, cfg: dict[str, Any]) -> dict[str, Any]:
    # Output locations and worker counts do not affect results.
    resolved = {k: v for k, v in cfg.items() if k not in _NOT_PROVENANCE}
    return {"version": __version__, "command": command, "seed": cfg.get("seed"), "config": resolved}


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def cmd_simulate(cfg: dict[str, Any]) -> int:
    dgp = _dgp(cfg)
    sample = simulate_sample(dgp, streams.stream(cfg["seed"], streams.SAMPLE))
    header = None
    if cfg["with_meta"]:
        header = json.dumps(_provenance("simulate", cfg), sort_keys=True)
    _emit(sample_to_csv(sample, header), cfg["out"])
    return 0


def cmd_test(cfg: dict[str, Any]) -> int:
    scan_cfg = _scan_cfg(cfg)
    if cfg["input"] in (None, "-"):
        sample = read_sample_csv(sys.stdin)
    else:
        with open(cfg["input"]) as fh:
            sample = read_sample_csv(fh)
    result = scan(sample, scan_cfg)
    payload = result.to_dict()
    pval = None
    if cfg["table"] is not None:
        pv = p_value(CriticalValueTable.load(cfg["table"]), result.sup_value)
        pval = {"value": pv.value, "clamped": pv.clamped}
    payload["p_value"] = pval
    payload["provenance"] = _provenance("test", {k: v for k, v in cfg.items() if k != "seed"})
    _emit(_dumps(payload), cfg["out"])
    if cfg["csv"] is not None:
        Path(cfg["csv"]).write_text(result.to_csv())
    msg = (
        f"{result.statistic_kind.value}: sup={result.sup_value:.6g} at k={result.argmax_k} "
        f"(pi={result.argmax_fraction:.4f}), {len(result.ks)} grid points"
    )
    if scan_cfg.ivx is not None:
        msg += f"; IVX delta={scan_cfg.ivx.delta}, c_z={scan_cfg.ivx.c_z}"
    if pval is not None:
        msg += f"; p={pval['value']:.4g}" + (" (clamped)" if pval["clamped"] else "")
    print(msg, file=sys.stderr)
    return 0


def cmd_critvals(cfg: dict[str, Any]) -> int:
    if cfg["out"] is None:
        raise UsageError("critvals needs --out")
    out = Path(cfg["out"])
    if out.exists() and not cfg["force"]:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    spec = FunctionalSpec(
        kind=cfg["functional"],
        p=cfg.get("p") or 1,
        trimming=(cfg["pi_lo"], cfg["pi_hi"]),
        grid_points=cfg["grid"],
        c=cfg["ou_c"],
    )
    reps = cfg["reps"] if cfg["reps"] is not None else 10_000
    if reps < 10_000:
        raise UsageError("persisted tables need at least 10000 replications")
    table = build_table(
        spec, reps, cfg["levels"], cfg["seed"], keep_draws=bool(cfg["keep_draws"]),
        threads=cfg["threads"],
    )
    payload = table.to_dict()
    payload["provenance"] = _provenance("critvals", cfg)
    out.write_text(_dumps(payload))
    print(
        f"{spec.kind.value} p={spec.p}: "
        + ", ".join(f"{q:g}->{v:.4f}" for q, v in sorted(table.quantiles.items()))
        + f" (seed {cfg['seed']})",
        file=sys.stderr,
    )
    return 0


def _experiment(cfg: dict[str, Any]) -> Experiment:
    table = None if cfg["table"] is None else CriticalValueTable.load(cfg["table"])
    return Experiment(
        dgp=_dgp(cfg),
        test=_scan_cfg(cfg),
        table=table,
        level=cfg["level"],
        replications=cfg["reps"],
        master_seed=cfg["seed"],
        critical_value=cfg["critical_value"],
        name=cfg["name"],
    )


def _cmd_experiment(cfg: dict[str, Any], command: str) -> int:
    exp = _experiment(cfg)
    runner = run_size if command == "size" else run_power
    result = runner(exp, threads=cfg["threads"], raise_on_taint=False)
    payload = result.to_dict()
    payload["provenance"]["cli"] = _provenance(command, cfg)
    _emit(_dumps(payload), cfg["out"])
    if cfg["summary_csv"] is not None:
        Path(cfg["summary_csv"]).write_text(summary_rows([result]))
    argmax = "n/a" if result.mean_argmax is None else f"{result.mean_argmax:.3f}"
    line = (
        f"{command}: rejection_rate={result.rejection_rate:.4f} "
        f"(se {result.mc_stderr:.4f}, {result.successes}/{result.replications} ok"
        f", mean argmax {argmax}, tainted={str(result.tainted).lower()})"
    )
    print(line, file=sys.stderr)
    return 0


def cmd_moments(cfg: dict[str, Any]) -> int:
    law = _dgp({**cfg, "intercept": False, "alpha1": 0.0, "alpha2": 0.0}).law
    ivx = None
    if cfg.get("delta") is not None or cfg.get("cz") is not None:
        ivx = _ivx(cfg)
    reps = cfg["reps"] if cfg["reps"] is not None else 1000
    rows = run_moment_check(law, cfg["T"], reps, cfg["seed"], pi=cfg["pi"], ivx=ivx)
    payload = {
        "moments": [vars(r) for r in rows],
        "provenance": _provenance("moments", cfg),
    }
    _emit(_dumps(payload), cfg["out"])
    for r in rows:
        print(
            f"{r.name:>16}: mean {r.mean:.5g} target {r.target:.5g} "
            f"rel.err {r.rel_error:.3%} (se {r.stderr:.2g})",
            file=sys.stderr,
        )
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "test": cmd_test,
    "critvals": cmd_critvals,
    "size": lambda cfg: _cmd_experiment(cfg, "size"),
    "power": lambda cfg: _cmd_experiment(cfg, "power"),
    "moments": cmd_moments,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, BreakscanError, ValueError, OSError) as exc:
        print(f"breakscan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

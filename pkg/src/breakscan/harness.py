"""Monte Carlo size, power and moment-convergence experiments.

Replicate ``r`` draws its sample from ``stream(master_seed, REPLICATE, r)``,
so results do not depend on worker count and the first ``N`` replicates of a
larger run coincide with an ``N``-replicate run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from breakscan import __version__, streams
from breakscan.breaktest import ScanConfig, scan
from breakscan.dgp import BreakDgp, RegressorLaw, simulate_innovations, simulate_regressors, simulate_sample
from breakscan.errors import ScanFailed, SchemaMismatch, SingularMatrix, TaintedResult
from breakscan.ivx import IvxConfig, build_instruments
from breakscan.limitdist import CriticalValueTable

if TYPE_CHECKING:
    from collections.abc import Sequence

MAX_FAILURE_SHARE = 0.02


@dataclass(frozen=True)
class Experiment:
    """A size or power experiment.

    ``critical_value`` overrides the table lookup when given.
    """

    dgp: BreakDgp
    test: ScanConfig = field(default_factory=ScanConfig)
    table: CriticalValueTable | None = None
    level: float = 0.05
    replications: int = 1000
    master_seed: int = 0
    critical_value: float | None = None
    name: str = "experiment"

    def __post_init__(self) -> None:
        if self.replications < 100:
            raise ValueError("experiments need at least 100 replications")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level {self.level} outside [0, 1]")
        if self.critical_value is None:
            if self.table is None:
                raise ValueError("give either a critical-value table or critical_value")
            self.table.critical_value(self.level)

    def resolved_critical_value(self) -> float:
        if self.critical_value is not None:
            return float(self.critical_value)
        assert self.table is not None
        return self.table.critical_value(self.level)

    def config_dict(self) -> dict[str, Any]:
        table = None
        if self.table is not None:
            table = {k: v for k, v in self.table.to_dict().items() if k != "draws"}
        # JSON-normalised so persisted results compare equal after loading.
        return json.loads(json.dumps({
            "name": self.name,
            "dgp": self.dgp.to_dict(),
            "test": self.test.to_dict(),
            "table": table,
            "level": self.level,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "critical_value": _enc(self.critical_value),
        }))

    def config_hash(self) -> str:
        blob = json.dumps(self.config_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ExperimentResult:
    rejection_rate: float
    mc_stderr: float
    replications: int
    successes: int
    rejections: int
    critical_value: float
    tainted: bool
    failures: dict[int, str]
    mean_argmax: float | None
    per_replicate: list[tuple[float, float, bool]] | None
    provenance: dict[str, Any]
    kind: str = "size"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for key in ("rejection_rate", "mc_stderr", "critical_value"):
            d[key] = _enc(d[key])
        d["failures"] = {str(k): v for k, v in self.failures.items()}
        if self.per_replicate is not None:
            d["per_replicate"] = [[_enc(s), a, r] for s, a, r in self.per_replicate]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentResult:
        try:
            per = d["per_replicate"]
            return cls(
                rejection_rate=float(d["rejection_rate"]),
                mc_stderr=float(d["mc_stderr"]),
                replications=int(d["replications"]),
                successes=int(d["successes"]),
                rejections=int(d["rejections"]),
                critical_value=float(d["critical_value"]),
                tainted=bool(d["tainted"]),
                failures={int(k): str(v) for k, v in d["failures"].items()},
                mean_argmax=None if d["mean_argmax"] is None else float(d["mean_argmax"]),
                per_replicate=None
                if per is None
                else [(float(s), float(a), bool(r)) for s, a, r in per],
                provenance=dict(d["provenance"]),
                kind=str(d["kind"]),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaMismatch(f"not an experiment result: {exc!r}") from None


def _enc(v: float | None) -> float | str | None:
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


# ---------------------------------------------------------------------------
# Replicate execution
# ---------------------------------------------------------------------------


def _run_chunk(
    args: tuple[BreakDgp, ScanConfig, int, range],
) -> list[tuple[int, float, float] | tuple[int, str]]:
    dgp, test, seed, indices = args
    out: list[tuple[int, float, float] | tuple[int, str]] = []
    for r in indices:
        sample = simulate_sample(dgp, streams.stream(seed, streams.REPLICATE, r))
        try:
            res = scan(sample, test)
        except (SingularMatrix, ScanFailed) as exc:
            out.append((r, f"{type(exc).__name__}: {exc}"))
            continue
        out.append((r, res.sup_value, res.argmax_fraction))
    return out


def simulate_sups(
    dgp: BreakDgp, test: ScanConfig, replications: int, master_seed: int, threads: int = 1
) -> list[tuple[int, float, float] | tuple[int, str]]:
    """Per-replicate ``(r, sup, argmax)`` or ``(r, failure reason)``, in order."""
    if threads <= 1:
        return _run_chunk((dgp, test, master_seed, range(replications)))
    chunks = streams.chunk_ranges(replications, threads, min_chunk=25)
    jobs = [(dgp, test, master_seed, rng) for rng in chunks]
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        return [rec for part in pool.map(_run_chunk, jobs) for rec in part]


def _run(exp: Experiment, kind: str, threads: int, raise_on_taint: bool) -> ExperimentResult:
    cv = exp.resolved_critical_value()
    records = simulate_sups(exp.dgp, exp.test, exp.replications, exp.master_seed, threads)
    per: list[tuple[float, float, bool]] = []
    failures: dict[int, str] = {}
    for rec in records:
        if len(rec) == 2:
            failures[rec[0]] = rec[1]
        else:
            _, sup, argmax = rec
            per.append((float(sup), float(argmax), bool(sup > cv)))
    n = len(per)
    rejections = sum(r for _, _, r in per)
    rate = rejections / n if n else math.nan
    stderr = math.sqrt(rate * (1.0 - rate) / n) if n else math.nan
    tainted = len(failures) > MAX_FAILURE_SHARE * exp.replications
    result = ExperimentResult(
        rejection_rate=rate,
        mc_stderr=stderr,
        replications=exp.replications,
        successes=n,
        rejections=rejections,
        critical_value=cv,
        tainted=tainted,
        failures=failures,
        mean_argmax=float(np.mean([a for _, a, _ in per])) if n else None,
        per_replicate=per,
        provenance={
            "version": __version__,
            "master_seed": exp.master_seed,
            "config_hash": exp.config_hash(),
            "config": exp.config_dict(),
        },
        kind=kind,
    )
    if tainted and raise_on_taint:
        raise TaintedResult(
            f"{len(failures)} of {exp.replications} replicates failed", result
        )
    return result


def run_size(exp: Experiment, threads: int = 1, raise_on_taint: bool = True) -> ExperimentResult:
    """Null rejection frequency; the DGP must have no break."""
    if not exp.dgp.is_null:
        raise ValueError("size experiments need alpha1 == alpha2 and beta1 == beta2")
    return _run(exp, "size", threads, raise_on_taint)


def run_power(exp: Experiment, threads: int = 1, raise_on_taint: bool = True) -> ExperimentResult:
    """Rejection frequency under the configured break; also reports mean argmax."""
    return _run(exp, "power", threads, raise_on_taint)


def rejection_rates(
    result: ExperimentResult, table: CriticalValueTable, levels: Sequence[float]
) -> dict[float, float]:
    """Re-threshold stored sup values at several levels."""
    if not result.per_replicate:
        raise ValueError("result carries no per-replicate records")
    sups = np.array([s for s, _, _ in result.per_replicate])
    return {lv: float(np.mean(sups > table.critical_value(lv))) for lv in levels}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def persist(result: ExperimentResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")


def load(path: str | Path) -> ExperimentResult:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise SchemaMismatch(f"{path}: expected a JSON object")
    return ExperimentResult.from_dict(payload)


SUMMARY_COLUMNS = (
    "experiment", "kind", "T", "gamma", "c", "delta", "cz",
    "pi0", "level", "reps", "rejection_rate", "stderr",
)


def summary_rows(results: Sequence[ExperimentResult]) -> str:
    """CSV summary, one line per result."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for res in results:
        cfg = res.provenance["config"]
        dgp, test = cfg["dgp"], cfg["test"]
        ivx = test.get("ivx") or {}
        writer.writerow([
            cfg["name"],
            test["kind"],
            dgp["T"],
            dgp["law"]["gamma"],
            dgp["law"]["c"][0],
            ivx.get("delta", ""),
            ivx.get("c_z", ""),
            dgp["pi0"],
            cfg["level"],
            res.replications,
            format(res.rejection_rate, ".17g"),
            format(res.mc_stderr, ".17g"),
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Moment diagnostics
# ---------------------------------------------------------------------------


@dataclass
class MomentRow:
    name: str
    mean: float
    target: float
    rel_error: float
    stderr: float


def ou_second_moment(c: float, upto: float = 1.0) -> float:
    """``E int_0^upto J_c(s)**2 ds`` for unit-variance OU started at zero."""
    return upto / (2.0 * c) - (1.0 - math.exp(-2.0 * c * upto)) / (4.0 * c * c)


def ou_ito_mean(c: float) -> float:
    """``E int_0^1 J_c dJ_c = (E J_c(1)**2 - 1) / 2``."""
    return ((1.0 - math.exp(-2.0 * c)) / (2.0 * c) - 1.0) / 2.0


def run_moment_check(
    law: RegressorLaw,
    T: int,
    replications: int,
    master_seed: int = 0,
    pi: float = 0.3,
    ivx: IvxConfig | None = None,
) -> list[MomentRow]:
    """Replicate means of normalised sample moments against their limits.

    Rows (per regressor component ``i``; suffix ``[i]`` when p > 1):

    - ``sum_x2``: ``sum x_t**2 / T**(1+gamma)``
    - ``sum_x2_regime1`` / ``_regime2``: the same over ``t <= floor(pi T)`` / after
    - ``var_sum_xu``: ``(sum x_t u_{t+1})**2 / T**(1+gamma)``
    - ``sum_xz`` (with ``ivx``): ``sum x_t z_t / T**(1+a)``, where ``a = delta``
      for ``gamma = 1`` and ``a = gamma`` for ``gamma < delta``.

    Targets are ``omega2/(2c)`` scaled by ``pi`` / ``1-pi`` for ``gamma < 1``
    and OU expectations for ``gamma = 1``.
    """
    if T < 500:
        raise ValueError("moment checks need T >= 500")
    p, gamma = law.p, law.gamma
    inn = law.innovations
    omega2 = inn.long_run_variance(p)
    k = int(math.floor(pi * T))
    norm = float(T) ** (1.0 + gamma)
    with_xz = ivx is not None and (gamma == 1.0 or gamma < ivx.delta)
    cols: dict[str, list[np.ndarray]] = {
        "sum_x2": [], "sum_x2_regime1": [], "sum_x2_regime2": [], "var_sum_xu": [],
    }
    if with_xz:
        cols["sum_xz"] = []
        xz_norm = float(T) ** (1.0 + (ivx.delta if gamma == 1.0 else gamma))
    for r in range(replications):
        u, v = simulate_innovations(inn, T + 1, p, streams.stream(master_seed, streams.MOMENT, r))
        x = simulate_regressors(law, T, v[:T])
        # Pair x_t with the next-period shock u_{t+1}.
        x2 = x * x
        cols["sum_x2"].append(x2.sum(axis=0) / norm)
        cols["sum_x2_regime1"].append(x2[:k].sum(axis=0) / norm)
        cols["sum_x2_regime2"].append(x2[k:].sum(axis=0) / norm)
        cols["var_sum_xu"].append((x * u[1:, None]).sum(axis=0) ** 2 / norm)
        if with_xz:
            z = build_instruments(x, ivx)
            cols["sum_xz"].append((x * z).sum(axis=0) / xz_norm)

    rows = []
    for name, values in cols.items():
        arr = np.array(values)
        for i in range(p):
            c = law.c[i]
            if gamma < 1.0:
                base = omega2[i] / (2.0 * c)
                target = {
                    "sum_x2": base,
                    "sum_x2_regime1": pi * base,
                    "sum_x2_regime2": (1.0 - pi) * base,
                    "var_sum_xu": inn.sigma_u**2 * base,
                    "sum_xz": base,
                }[name]
            else:
                full = omega2[i] * ou_second_moment(c)
                first = omega2[i] * ou_second_moment(c, pi)
                target = {
                    "sum_x2": full,
                    "sum_x2_regime1": first,
                    "sum_x2_regime2": full - first,
                    "var_sum_xu": inn.sigma_u**2 * full,
                    "sum_xz": (
                        (inn.sigma_v_for(p)[i] ** 2 + omega2[i] * ou_ito_mean(c)) / ivx.c_z
                        if ivx is not None
                        else math.nan
                    ),
                }[name]
            mean = float(arr[:, i].mean())
            rows.append(
                MomentRow(
                    name=name if p == 1 else f"{name}[{i}]",
                    mean=mean,
                    target=target,
                    rel_error=abs(mean - target) / abs(target),
                    stderr=float(arr[:, i].std(ddof=1) / math.sqrt(len(arr))),
                )
            )
    return rows

"""Monte Carlo draws of limiting functionals and critical-value tables.

Functionals (``W`` standard Brownian motion on a uniform grid of ``n`` steps,
sup taken over grid points ``i/n`` inside the trimming window):

``SupNBB``
    ``sup |W(pi) - pi W(1)|**2 / (pi (1 - pi))`` with ``W`` p-dimensional.
``ChiSqPlusSupBB``
    An independent chi-square(p) draw plus the ``SupNBB`` draw.
``ChiSq``
    chi-square(p).
``OUQuadratic``
    ``Q(1) = 1 + int_0^1 J dJ`` for the Ornstein-Uhlenbeck path
    ``dJ = -c J dt + dW``, Euler-discretised, Ito (left-point) integral.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple, Protocol

import numpy as np
from scipy.signal import lfilter

from breakscan import streams
from breakscan.errors import SchemaMismatch

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

# Replicates per independent sub-stream when building tables.
BLOCK = 1000
DEFAULT_LEVELS = (0.90, 0.95, 0.99)


class NormalSource(Protocol):
    def standard_normal(self, size: Any) -> Any: ...


class FunctionalKind(str, Enum):
    SUP_NBB = "SupNBB"
    CHISQ_PLUS_SUP_BB = "ChiSqPlusSupBB"
    CHISQ = "ChiSq"
    OU_QUADRATIC = "OUQuadratic"

    @classmethod
    def parse(cls, value: str | FunctionalKind) -> FunctionalKind:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "supnbb": cls.SUP_NBB,
            "chisqplussupbb": cls.CHISQ_PLUS_SUP_BB,
            "chisq": cls.CHISQ,
            "ouquadratic": cls.OU_QUADRATIC,
            "ou": cls.OU_QUADRATIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown functional kind {value!r}") from None


@dataclass(frozen=True)
class FunctionalSpec:
    kind: FunctionalKind = FunctionalKind.SUP_NBB
    p: int = 1
    trimming: tuple[float, float] = (0.15, 0.85)
    grid_points: int = 1000
    c: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FunctionalKind.parse(self.kind))
        lo, hi = (float(v) for v in self.trimming)
        object.__setattr__(self, "trimming", (lo, hi))
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"trimming {self.trimming} must satisfy 0 < lo <= hi < 1")
        if self.grid_points < 100:
            raise ValueError("grid_points must be at least 100")
        if self.kind is FunctionalKind.OU_QUADRATIC:
            if self.p != 1:
                raise ValueError("OUQuadratic is scalar; use p=1")
            if self.c is None or self.c < 0:
                raise ValueError("OUQuadratic needs a nonnegative decay c")
        elif self.c is not None:
            object.__setattr__(self, "c", None)

    def grid_indices(self) -> NDArray[np.int64]:
        """Grid indices ``i`` (of ``W(i/n)``) inside the trimming window."""
        n = self.grid_points
        lo, hi = self.trimming
        return np.arange(math.ceil(n * lo - 1e-9), math.floor(n * hi + 1e-9) + 1)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind.value,
            "p": self.p,
            "trimming": list(self.trimming),
            "grid_points": self.grid_points,
        }
        if self.c is not None:
            d["c"] = self.c
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FunctionalSpec:
        return cls(
            kind=d["kind"],
            p=int(d["p"]),
            trimming=tuple(d["trimming"]),
            grid_points=int(d["grid_points"]),
            c=d.get("c"),
        )


class PValue(NamedTuple):
    value: float
    clamped: bool


@dataclass
class CriticalValueTable:
    spec: FunctionalSpec
    replications: int
    quantiles: dict[float, float]
    seed: int
    draws: NDArray[np.float64] | None = field(default=None, repr=False)

    def critical_value(self, level: float) -> float:
        """Upper-tail critical value for significance ``level``.

        ``level=1`` rejects everything (``-inf``), ``level=0`` nothing (``inf``).
        Levels between stored quantiles are interpolated linearly.
        """
        if level >= 1.0:
            return -math.inf
        if level <= 0.0:
            return math.inf
        prob = 1.0 - level
        if self.draws is not None:
            return float(np.quantile(self.draws, prob))
        probs = sorted(self.quantiles)
        for q in probs:
            if math.isclose(q, prob, abs_tol=1e-12):
                return self.quantiles[q]
        if not probs[0] <= prob <= probs[-1]:
            raise ValueError(
                f"level {level} not bracketed by stored quantiles {probs}"
            )
        return float(np.interp(prob, probs, [self.quantiles[q] for q in probs]))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "spec": self.spec.to_dict(),
            "replications": self.replications,
            "seed": self.seed,
            "quantiles": {level_key(q): v for q, v in sorted(self.quantiles.items())},
        }
        if self.draws is not None:
            d["draws"] = [float(v) for v in self.draws]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CriticalValueTable:
        try:
            table = cls(
                spec=FunctionalSpec.from_dict(d["spec"]),
                replications=int(d["replications"]),
                quantiles={float(k): float(v) for k, v in d["quantiles"].items()},
                seed=int(d["seed"]),
                draws=None if d.get("draws") is None else np.asarray(d["draws"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"not a critical-value table: {exc}") from None
        if not table.quantiles:
            raise SchemaMismatch("table has no quantiles")
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> CriticalValueTable:
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(payload, dict):
            raise SchemaMismatch(f"{path}: expected a JSON object")
        return cls.from_dict(payload)


def level_key(level: float) -> str:
    """``0.9 -> "0.90"``, ``0.975 -> "0.975"``."""
    text = f"{level:.6f}".rstrip("0")
    whole, frac = text.split(".")
    return f"{whole}.{frac.ljust(2, '0')}"


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def simulate_brownian_grid(n: int, dim: int, stream: NormalSource) -> NDArray[np.float64]:
    """Standard Brownian motion at ``i/n``, ``i = 0..n``; shape ``(n + 1, dim)``."""
    if n < 2:
        raise ValueError("need at least two grid steps")
    inc = np.asarray(stream.standard_normal((n, dim)), dtype=np.float64) / math.sqrt(n)
    path = np.zeros((n + 1, dim))
    np.cumsum(inc, axis=0, out=path[1:])
    return path


def ou_from_brownian(w: NDArray[np.float64], c: float) -> NDArray[np.float64]:
    """Euler OU path ``J_{i+1} = (1 - c/n) J_i + dW_i`` along axis 0 of ``w``.

    With ``c = 0`` this is the Brownian path itself.
    """
    n = w.shape[0] - 1
    dw = np.diff(w, axis=0)
    if c == 0.0:
        return w.copy()
    path = np.zeros_like(w)
    path[1:] = lfilter([1.0], [1.0, -(1.0 - c / n)], dw, axis=0)
    return path


def ou_functionals(j: NDArray[np.float64]) -> dict[str, NDArray[np.float64] | float]:
    """``int J**2``, ``int J dJ`` (left point) and ``Q(1)`` along axis 0."""
    n = j.shape[0] - 1
    left = j[:-1]
    int_j2 = (left * left).sum(axis=0) / n
    int_jdj = (left * np.diff(j, axis=0)).sum(axis=0)
    return {"int_J2": int_j2, "int_JdJ": int_jdj, "Q1": 1.0 + int_jdj}


def _sup_bridge(paths: NDArray[np.float64], idx: NDArray[np.int64], n: int) -> NDArray[np.float64]:
    """Sup of the squared-norm normalised bridge; ``paths`` shape (R, n+1, p)."""
    pi = idx / n
    bridge = paths[:, idx, :] - pi[None, :, None] * paths[:, -1:, :]
    norm2 = np.einsum("rip,rip->ri", bridge, bridge)
    return (norm2 / (pi * (1.0 - pi))).max(axis=1)


def draw_block(
    spec: FunctionalSpec,
    count: int,
    path_stream: np.random.Generator,
    chi_stream: np.random.Generator | None = None,
) -> NDArray[np.float64]:
    """``count`` independent draws; vectorised over replicates."""
    n, p = spec.grid_points, spec.p
    if spec.kind is FunctionalKind.CHISQ:
        return path_stream.chisquare(p, size=count)
    inc = path_stream.standard_normal((count, n, p)) / math.sqrt(n)
    paths = np.zeros((count, n + 1, p))
    np.cumsum(inc, axis=1, out=paths[:, 1:, :])
    if spec.kind is FunctionalKind.OU_QUADRATIC:
        j = ou_from_brownian(paths[..., 0].T, spec.c)
        return np.asarray(ou_functionals(j)["Q1"])
    sup = _sup_bridge(paths, spec.grid_indices(), n)
    if spec.kind is FunctionalKind.CHISQ_PLUS_SUP_BB:
        if chi_stream is None:
            chi_stream = path_stream
        sup = sup + chi_stream.chisquare(p, size=count)
    return sup


def draw_functional(spec: FunctionalSpec, stream: np.random.Generator) -> float:
    """One draw of the functional described by ``spec``."""
    return float(draw_block(spec, 1, stream)[0])


def _draw_blocks(args: tuple[FunctionalSpec, int, int, list[tuple[int, int]]]) -> NDArray[np.float64]:
    spec, seed, _, blocks = args
    out = []
    for b, count in blocks:
        out.append(
            draw_block(
                spec,
                count,
                streams.stream(seed, streams.TABLE_PATH, b),
                streams.stream(seed, streams.TABLE_CHI, b),
            )
        )
    return np.concatenate(out) if out else np.empty(0)


def simulate_draws(
    spec: FunctionalSpec, replications: int, master_seed: int, threads: int = 1
) -> NDArray[np.float64]:
    """Draws in replicate order; block ``b`` always uses sub-stream ``b``."""
    blocks = [
        (b, min(BLOCK, replications - b * BLOCK))
        for b in range(math.ceil(replications / BLOCK))
    ]
    if threads <= 1 or len(blocks) == 1:
        return _draw_blocks((spec, master_seed, 0, blocks))
    chunks = streams.chunk_ranges(len(blocks), threads)
    jobs = [(spec, master_seed, i, [blocks[b] for b in rng]) for i, rng in enumerate(chunks)]
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        return np.concatenate(list(pool.map(_draw_blocks, jobs)))


def build_table(
    spec: FunctionalSpec,
    replications: int,
    levels: Sequence[float] = DEFAULT_LEVELS,
    master_seed: int = 0,
    keep_draws: bool = False,
    threads: int = 1,
) -> CriticalValueTable:
    """Empirical quantiles of ``spec`` from ``replications`` draws."""
    if replications < 1000:
        raise ValueError("tables need at least 1000 replications")
    levels = sorted(float(q) for q in levels)
    if not levels or levels[0] <= 0.0 or levels[-1] >= 1.0:
        raise ValueError("levels must lie in (0, 1)")
    draws = simulate_draws(spec, replications, master_seed, threads)
    values = np.quantile(draws, levels)
    # Guard against float noise breaking monotonicity.
    values = np.maximum.accumulate(values)
    return CriticalValueTable(
        spec=spec,
        replications=replications,
        quantiles=dict(zip(levels, (float(v) for v in values))),
        seed=int(master_seed),
        draws=np.sort(draws) if keep_draws else None,
    )


def p_value(table: CriticalValueTable, observed: float) -> PValue:
    """Upper-tail p-value of ``observed``.

    Uses stored draws when present. Otherwise the CDF is interpolated between
    stored quantiles and clamped to the stored level range; ``clamped`` flags
    observations outside the tabulated (or simulated) range.
    """
    if table.draws is not None and table.draws.size:
        draws = table.draws
        exceed = draws.size - np.searchsorted(draws, observed, side="left")
        clamped = bool(observed < draws[0] or observed > draws[-1])
        return PValue(float(exceed / draws.size), clamped)
    probs = sorted(table.quantiles)
    values = [table.quantiles[q] for q in probs]
    if observed <= values[0]:
        return PValue(1.0 - probs[0], observed < values[0])
    if observed >= values[-1]:
        return PValue(1.0 - probs[-1], observed > values[-1])
    cdf = float(np.interp(observed, values, probs))
    return PValue(1.0 - cdf, False)

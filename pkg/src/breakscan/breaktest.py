"""Two-regime estimators and sup-Wald break tests.

For a candidate break index ``k`` the sample is split into rows ``0..k-1``
and ``k..T-1``. Each regime is fit by instrumental variables,
``theta_i = (Z_i'X_i)^-1 Z_i'y_i``; OLS is the special case ``Z = X`` and is
computed by literally the same code path. The Wald statistic is

    W(k) = (theta_1 - theta_2)' Q^-1 (theta_1 - theta_2) / sigma2,
    Q    = sum_i (Z_i'X_i)^-1 (Z_i'Z_i) (X_i'Z_i)^-1,

with ``sigma2`` the mean squared residual of the unrestricted two-regime
fit. For OLS, ``Q`` collapses to ``(X_1'X_1)^-1 + (X_2'X_2)^-1``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any

import numpy as np

from breakscan.errors import (
    DegenerateDenominator,
    EmptyGrid,
    RegimeTooSmall,
    ScanFailed,
    SingularDesign,
    SingularMatrix,
    SingularMoment,
    SingularQ,
)
from breakscan.ivx import IvxConfig, augment_with_intercept, build_instruments
from breakscan.kernels import SINGULAR_THRESHOLD, batched_condition, solve

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from breakscan.dgp import Sample

# Residual variance below this fraction of mean(y**2) counts as an exact fit.
_EXACT_FIT = 1e-20
# Largest share of grid points allowed to fail before the scan is abandoned.
MAX_FAILED_SHARE = 0.05


class StatisticKind(str, Enum):
    OLS = "WaldOLS"
    IVX = "WaldIVX"

    @classmethod
    def parse(cls, value: str | StatisticKind) -> StatisticKind:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.name.lower()):
                return kind
        raise ValueError(f"unknown statistic kind {value!r}; use 'ols' or 'ivx'")


@dataclass
class RegimeFit:
    theta1: NDArray[np.float64]
    theta2: NDArray[np.float64]
    residuals: NDArray[np.float64]
    sigma2_hat: float
    k: int


@dataclass(frozen=True)
class ScanConfig:
    """Options for :func:`scan`. ``step=None`` evaluates every feasible k."""

    pi_lo: float = 0.15
    pi_hi: float = 0.85
    step: float | None = None
    kind: StatisticKind = StatisticKind.OLS
    intercept: bool = False
    ivx: IvxConfig | None = None
    slopes_only: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StatisticKind.parse(self.kind))
        if not 0.0 < self.pi_lo <= self.pi_hi < 1.0:
            raise ValueError(
                f"trimming [{self.pi_lo}, {self.pi_hi}] must satisfy 0 < lo <= hi < 1"
            )
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.kind is StatisticKind.IVX and self.ivx is None:
            object.__setattr__(self, "ivx", IvxConfig())
        if self.kind is StatisticKind.OLS and self.ivx is not None:
            object.__setattr__(self, "ivx", None)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScanConfig:
        d = dict(d)
        if d.get("ivx") is not None:
            d["ivx"] = IvxConfig(**d["ivx"])
        return cls(**d)


@dataclass
class WaldScan:
    grid: NDArray[np.float64]
    ks: NDArray[np.int64]
    stats: NDArray[np.float64]
    sup_value: float
    argmax_fraction: float
    argmax_k: int
    statistic_kind: StatisticKind
    T: int
    config: ScanConfig | None = None
    failures: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistic_kind": self.statistic_kind.value,
            "T": self.T,
            "sup_value": _json_float(self.sup_value),
            "argmax_fraction": self.argmax_fraction,
            "argmax_k": self.argmax_k,
            "grid": [float(v) for v in self.grid],
            "ks": [int(k) for k in self.ks],
            "stats": [_json_float(v) for v in self.stats],
            "failures": {str(k): v for k, v in self.failures.items()},
            "config": None if self.config is None else self.config.to_dict(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pi", "k", "stat"])
        for pi, k, s in zip(self.grid, self.ks, self.stats):
            writer.writerow([format(float(pi), ".17g"), int(k), format(float(s), ".17g")])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> WaldScan:
        return cls(
            grid=np.array(d["grid"], dtype=float),
            ks=np.array(d["ks"], dtype=np.int64),
            stats=np.array([_from_json_float(v) for v in d["stats"]], dtype=float),
            sup_value=_from_json_float(d["sup_value"]),
            argmax_fraction=float(d["argmax_fraction"]),
            argmax_k=int(d["argmax_k"]),
            statistic_kind=StatisticKind.parse(d["statistic_kind"]),
            T=int(d["T"]),
            config=None if d.get("config") is None else ScanConfig.from_dict(d["config"]),
            failures={int(k): v for k, v in d.get("failures", {}).items()},
        )


def _json_float(v: float) -> float | str:
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _from_json_float(v: float | str) -> float:
    return float(v)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------


def _design(x: NDArray[np.float64], intercept: bool) -> NDArray[np.float64]:
    return augment_with_intercept(x) if intercept else np.asarray(x, dtype=np.float64)


def _instrument_matrix(z: ArrayLike, T: int, intercept: bool) -> NDArray[np.float64]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != T:
        raise ValueError(f"instruments have {z.shape[0]} rows, sample has {T}")
    return _design(z, intercept)


def _check_regimes(T: int, k: int, d: int) -> None:
    need = d + 2
    if k < need or T - k < need:
        raise RegimeTooSmall(
            f"break index k={k} leaves regimes of size {k} and {T - k}; need >= {need}"
        )


def _noise_floor(y: NDArray[np.float64]) -> float:
    return _EXACT_FIT * float(np.mean(y * y))


def _ratio(numerator: float, sigma2: float, floor: float, T: int) -> float:
    # Exact fits: 0 when the regimes also agree exactly, +inf when they do not.
    if sigma2 <= floor:
        return 0.0 if numerator <= T * floor else math.inf
    return numerator / sigma2


# ---------------------------------------------------------------------------
# Per-break-point statistics
# ---------------------------------------------------------------------------


def _fit(
    X: NDArray[np.float64],
    Z: NDArray[np.float64],
    y: NDArray[np.float64],
    k: int,
    error: type[SingularMatrix],
) -> tuple[RegimeFit, list[tuple[NDArray[np.float64], NDArray[np.float64]]]]:
    T, d = X.shape
    _check_regimes(T, k, d)
    thetas = []
    moments = []
    for rows in (slice(0, k), slice(k, T)):
        Xi, Zi, yi = X[rows], Z[rows], y[rows]
        A = Zi.T @ Xi
        thetas.append(solve(A, Zi.T @ yi, error=error, name="regime moment Z'X"))
        moments.append((A, Zi.T @ Zi))
    fitted = np.concatenate([X[:k] @ thetas[0], X[k:] @ thetas[1]])
    resid = y - fitted
    fit = RegimeFit(
        theta1=thetas[0],
        theta2=thetas[1],
        residuals=resid,
        sigma2_hat=float(np.mean(resid * resid)),
        k=k,
    )
    return fit, moments


def _wald(
    X: NDArray[np.float64],
    Z: NDArray[np.float64],
    y: NDArray[np.float64],
    k: int,
    error: type[SingularMatrix],
    restrict: slice,
) -> float:
    fit, moments = _fit(X, Z, y, k, error)
    Q = np.zeros((X.shape[1], X.shape[1]))
    for A, S in moments:
        # A^-1 S A^-T, as two solves.
        Q += solve(A, solve(A, S, error=error).T, error=error)
    diff = (fit.theta1 - fit.theta2)[restrict]
    Qr = Q[restrict, restrict]
    num = float(diff @ solve(Qr, diff, error=SingularQ, name="Q_R"))
    return _ratio(num, fit.sigma2_hat, _noise_floor(y), len(y))


def _restriction(intercept: bool, slopes_only: bool) -> slice:
    return slice(1, None) if intercept and slopes_only else slice(None)


def fit_two_regime_ols(sample: Sample, k: int, intercept: bool = False) -> RegimeFit:
    """Regime-wise least squares; coefficients are intercept-first when present."""
    X = _design(sample.x, intercept)
    return _fit(X, X, sample.y, k, SingularDesign)[0]


def fit_two_regime_ivx(
    sample: Sample, z: ArrayLike, k: int, intercept: bool = False
) -> RegimeFit:
    """Regime-wise IV fit with instruments ``z`` (ones prepended with intercept)."""
    X = _design(sample.x, intercept)
    Z = _instrument_matrix(z, sample.T, intercept)
    return _fit(X, Z, sample.y, k, SingularMoment)[0]


def wald_ols_at(
    sample: Sample, k: int, intercept: bool = False, slopes_only: bool = False
) -> float:
    X = _design(sample.x, intercept)
    return _wald(X, X, sample.y, k, SingularDesign, _restriction(intercept, slopes_only))


def wald_ivx_at(
    sample: Sample,
    z: ArrayLike,
    k: int,
    intercept: bool = False,
    slopes_only: bool = False,
) -> float:
    X = _design(sample.x, intercept)
    Z = _instrument_matrix(z, sample.T, intercept)
    return _wald(X, Z, sample.y, k, SingularMoment, _restriction(intercept, slopes_only))


def wald_ivx_simplified(sample: Sample, z: ArrayLike, k: int) -> float:
    """Scalar Wald-IVX via the weights ``w_t = z_t 1{t<=k} - a z_t``.

    ``a = sum_{t<=k} z_t x_t / sum_t z_t x_t``. The statistic is
    ``(sum w_t e_t)**2 / (sigma2 * sum w_t**2)`` where ``e`` are residuals of
    the pooled (no-break) IV fit and ``sigma2`` comes from the two-regime fit.
    Because ``sum w_t x_t = 0``, any common-slope residual gives the same
    numerator, so this equals :func:`wald_ivx_at` for one regressor and no
    intercept.
    """
    if sample.p != 1:
        raise ValueError("the simplified form needs exactly one regressor")
    x = sample.x[:, 0]
    y = sample.y
    zz = np.asarray(z, dtype=np.float64).reshape(-1)
    if zz.shape[0] != sample.T:
        raise ValueError("instrument length does not match the sample")
    szx = float(zz @ x)
    if abs(szx) < 1e-300:
        raise DegenerateDenominator("sum z_t x_t is zero")
    fit = fit_two_regime_ivx(sample, zz, k, intercept=False)
    share = float(zz[:k] @ x[:k]) / szx
    w = -share * zz
    w[:k] += zz[:k]
    pooled = float(zz @ y) / szx
    e = y - pooled * x
    den = float(w @ w)
    if den < 1e-300:
        raise DegenerateDenominator("sum w_t**2 is zero")
    num = float(w @ e) ** 2 / den
    return _ratio(num, fit.sigma2_hat, _noise_floor(y), len(y))


# ---------------------------------------------------------------------------
# Sup scan
# ---------------------------------------------------------------------------


def break_grid(
    T: int,
    pi_lo: float,
    pi_hi: float,
    step: float | None = None,
    min_regime: int = 1,
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Break fractions and their indices ``k = floor(T * pi)``.

    Duplicate ``k`` values keep their first fraction; indices leaving a regime
    smaller than ``min_regime`` are dropped.
    """
    eps = 1e-9
    if step is None:
        ks = np.arange(math.ceil(T * pi_lo - eps), math.floor(T * pi_hi + eps) + 1)
        pis = ks / T
    else:
        n = math.floor((pi_hi - pi_lo) / step + eps)
        pis = pi_lo + step * np.arange(n + 1)
        ks = np.floor(T * pis + eps).astype(np.int64)
        ks, first = np.unique(ks, return_index=True)
        pis = pis[first]
    keep = (ks >= min_regime) & (T - ks >= min_regime)
    return pis[keep].astype(float), ks[keep].astype(np.int64)


def _cumulative(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.cumsum(a[:, :, None] * b[:, None, :], axis=0)


def wald_path(
    X: NDArray[np.float64],
    Z: NDArray[np.float64],
    y: NDArray[np.float64],
    ks: NDArray[np.int64],
    restrict: slice = slice(None),
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Wald statistics at every ``k`` in ``ks`` from cumulative moments.

    Returns ``(stats, ok)``; ``stats`` is NaN wherever a regime moment or
    ``Q`` exceeds the singularity threshold (``ok`` False there).
    """
    T, d = X.shape
    idx = np.asarray(ks) - 1
    zx, zz, xx = _cumulative(Z, X), _cumulative(Z, Z), _cumulative(X, X)
    zy, xy = np.cumsum(Z * y[:, None], axis=0), np.cumsum(X * y[:, None], axis=0)
    yy = np.cumsum(y * y)

    def split(cum: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        first = cum[idx]
        return first, cum[-1] - first

    ok = np.ones(len(idx), dtype=bool)
    thetas, qs, ssr = [], [], np.zeros(len(idx))
    with np.errstate(all="ignore"):
        for A, S, c, XX, Xy, YY in zip(
            split(zx), split(zz), split(zy), split(xx), split(xy), split(yy)
        ):
            ok &= batched_condition(A) <= SINGULAR_THRESHOLD
            A_safe = np.where(ok[:, None, None], A, np.eye(d))
            theta = np.linalg.solve(A_safe, c[..., None])[..., 0]
            G = np.linalg.solve(A_safe, S)
            qs.append(np.linalg.solve(A_safe, np.swapaxes(G, 1, 2)))
            ssr += (
                YY
                - 2.0 * np.einsum("ni,ni->n", theta, Xy)
                + np.einsum("ni,nij,nj->n", theta, XX, theta)
            )
            thetas.append(theta)
        Q = (qs[0] + qs[1])[:, restrict, restrict]
        ok &= batched_condition(Q) <= SINGULAR_THRESHOLD
        Q = np.where(ok[:, None, None], Q, np.eye(Q.shape[1]))
        diff = (thetas[0] - thetas[1])[:, restrict]
        num = np.einsum("ni,ni->n", diff, np.linalg.solve(Q, diff[..., None])[..., 0])
        sigma2 = np.maximum(ssr, 0.0) / T
    floor = _noise_floor(y)
    stats = np.array([_ratio(n, s, floor, T) for n, s in zip(num, sigma2)])
    stats[~ok] = np.nan
    return stats, ok


def scan(
    sample: Sample,
    cfg: ScanConfig | None = None,
    z: ArrayLike | None = None,
    method: str = "fast",
) -> WaldScan:
    """Sup-Wald scan over the trimmed break-fraction grid.

    ``method="fast"`` evaluates all break points from cumulative moments;
    ``method="exact"`` calls :func:`wald_ols_at` / :func:`wald_ivx_at` at
    each point. For IVX, instruments are built from ``sample.x`` with
    ``cfg.ivx`` unless ``z`` is given.

    Raises
    ------
    EmptyGrid
        If no feasible break index lies in the trimming window.
    ScanFailed
        If more than 5% of grid points are numerically singular.
    """
    cfg = cfg or ScanConfig()
    T = sample.T
    d = sample.p + (1 if cfg.intercept else 0)
    pis, ks = break_grid(T, cfg.pi_lo, cfg.pi_hi, cfg.step, min_regime=d + 2)
    if ks.size == 0:
        raise EmptyGrid(
            f"no feasible break index for T={T} in [{cfg.pi_lo}, {cfg.pi_hi}]"
        )
    X = _design(sample.x, cfg.intercept)
    if cfg.kind is StatisticKind.IVX:
        if z is None:
            z = build_instruments(sample.x, cfg.ivx)
        Z = _instrument_matrix(z, T, cfg.intercept)
        error: type[SingularMatrix] = SingularMoment
    else:
        Z = X
        error = SingularDesign
    restrict = _restriction(cfg.intercept, cfg.slopes_only)

    failures: dict[int, str] = {}
    if method == "fast":
        stats, ok = wald_path(X, Z, sample.y, ks, restrict)
        for k in ks[~ok]:
            failures[int(k)] = "singular regime moment or Q_R"
    elif method == "exact":
        stats = np.empty(ks.size)
        for i, k in enumerate(ks):
            try:
                stats[i] = _wald(X, Z, sample.y, int(k), error, restrict)
            except SingularMatrix as exc:
                stats[i] = np.nan
                failures[int(k)] = f"{type(exc).__name__}: {exc}"
    else:
        raise ValueError(f"unknown scan method {method!r}")

    if len(failures) > MAX_FAILED_SHARE * ks.size:
        raise ScanFailed(f"{len(failures)} of {ks.size} grid points failed")
    masked = np.where(np.isnan(stats), -np.inf, stats)
    best = int(np.argmax(masked))
    return WaldScan(
        grid=pis,
        ks=ks,
        stats=stats,
        sup_value=float(masked[best]),
        argmax_fraction=float(pis[best]),
        argmax_k=int(ks[best]),
        statistic_kind=cfg.kind,
        T=T,
        config=cfg,
        failures=failures,
    )


def scan_to_json(result: WaldScan, extra: dict[str, Any] | None = None) -> str:
    payload = result.to_dict()
    if extra:
        payload.update(extra)
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)

"""Data-generating processes for predictive regressions with a single break.

The regressor follows ``x_t = (I - C / T**gamma) x_{t-1} + v_t`` with
``x_0 = 0``; ``gamma = 1`` is the local-to-unity case and ``gamma < 1`` the
mildly integrated one. Responses obey

    y_{t+1} = (a1 + b1'x_t) 1{t <= k} + (a2 + b2'x_t) 1{t > k} + u_{t+1},

with ``k = floor(T * pi0)``. Row ``t`` (0-based) of a :class:`Sample` holds
``x_{t+1}`` and the response it predicts, so regime one is rows ``0..k-1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, TextIO

import numpy as np
from scipy.signal import lfilter

from breakscan.errors import InvalidCovariance, ParseError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


def _tuple(values: ArrayLike) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class InnovationLaw:
    """Joint Gaussian law of ``(u_t, v_t)``.

    ``rho_uv`` is the correlation between ``u`` and each component of the
    pre-filter ``v`` innovation; the ``v`` components are mutually
    uncorrelated. ``ma_weights`` (leading weight 1) turns ``v`` into a short
    moving average, which changes its long-run variance to
    ``sigma_v**2 * sum(ma_weights)**2``.
    """

    sigma_u: float = 1.0
    sigma_v: tuple[float, ...] = (1.0,)
    rho_uv: float = 0.0
    ma_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma_v", _tuple(self.sigma_v))
        if self.ma_weights is not None:
            object.__setattr__(self, "ma_weights", _tuple(self.ma_weights))
            if not 1 <= len(self.ma_weights) <= 4:
                raise ValueError("ma_weights must have between 1 and 4 entries")
            if self.ma_weights[0] != 1.0:
                raise ValueError("ma_weights[0] must equal 1")
        if self.sigma_u < 0 or any(s < 0 for s in self.sigma_v):
            raise InvalidCovariance("standard deviations must be nonnegative")
        if not -1.0 <= self.rho_uv <= 1.0:
            raise InvalidCovariance(f"rho_uv={self.rho_uv} outside [-1, 1]")
        if not all(math.isfinite(s) for s in (self.sigma_u, self.rho_uv, *self.sigma_v)):
            raise InvalidCovariance("innovation parameters must be finite")

    def sigma_v_for(self, p: int) -> NDArray[np.float64]:
        if len(self.sigma_v) == p:
            return np.array(self.sigma_v)
        if len(self.sigma_v) == 1:
            return np.full(p, self.sigma_v[0])
        raise ValueError(f"sigma_v has {len(self.sigma_v)} entries, need 1 or {p}")

    def covariance(self, p: int) -> NDArray[np.float64]:
        """Covariance of ``(u, v_1, ..., v_p)`` before any MA filtering."""
        sd = np.concatenate([[self.sigma_u], self.sigma_v_for(p)])
        corr = np.eye(p + 1)
        corr[0, 1:] = corr[1:, 0] = self.rho_uv
        return corr * np.outer(sd, sd)

    def long_run_variance(self, p: int) -> NDArray[np.float64]:
        """Per-component long-run variance of ``v``."""
        scale = 1.0 if self.ma_weights is None else sum(self.ma_weights) ** 2
        return self.sigma_v_for(p) ** 2 * scale


@dataclass(frozen=True)
class RegressorLaw:
    p: int = 1
    gamma: float = 1.0
    c: tuple[float, ...] = (1.0,)
    innovations: InnovationLaw = field(default_factory=InnovationLaw)

    def __post_init__(self) -> None:
        c = _tuple(self.c)
        if len(c) == 1 and self.p > 1:
            c = c * self.p
        object.__setattr__(self, "c", c)
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if len(c) != self.p:
            raise ValueError(f"c has {len(c)} entries for p={self.p}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} outside (0, 1]")
        if any(not ci > 0 for ci in c):
            raise ValueError("decay coefficients c must be strictly positive")
        self.innovations.sigma_v_for(self.p)

    def roots(self, T: int) -> NDArray[np.float64]:
        """Autoregressive roots ``1 - c_i / T**gamma``; must lie in [0, 1)."""
        roots = 1.0 - np.asarray(self.c) / float(T) ** self.gamma
        if np.any(roots < 0.0) or np.any(roots >= 1.0):
            raise ValueError(
                f"roots {roots} outside [0, 1) at T={T}; need c < T**gamma"
            )
        return roots


@dataclass(frozen=True)
class BreakDgp:
    law: RegressorLaw = field(default_factory=RegressorLaw)
    T: int = 200
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta1: tuple[float, ...] = (0.0,)
    beta2: tuple[float, ...] = (0.0,)
    pi0: float = 0.5
    include_intercept: bool = False

    def __post_init__(self) -> None:
        p = self.law.p
        for name in ("beta1", "beta2"):
            b = _tuple(getattr(self, name))
            if len(b) == 1 and p > 1:
                b = b * p
            if len(b) != p:
                raise ValueError(f"{name} has {len(b)} entries for p={p}")
            object.__setattr__(self, name, b)
        if self.T < 20:
            raise ValueError(f"T={self.T} below the minimum of 20")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError(f"pi0={self.pi0} outside (0, 1)")
        if not 1 <= self.k <= self.T - 1:
            raise ValueError(f"break index k={self.k} outside [1, T-1]")
        if not self.include_intercept and (self.alpha1 != 0.0 or self.alpha2 != 0.0):
            raise ValueError("nonzero intercepts require include_intercept=True")
        self.law.roots(self.T)

    @property
    def k(self) -> int:
        return int(math.floor(self.T * self.pi0))

    @property
    def is_null(self) -> bool:
        return self.alpha1 == self.alpha2 and self.beta1 == self.beta2

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["law"]["c"] = list(self.law.c)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> BreakDgp:
        law = dict(d["law"])
        law["innovations"] = InnovationLaw(**law["innovations"])
        return cls(**{**d, "law": RegressorLaw(**law)})


@dataclass
class Sample:
    """Aligned predictive-regression data.

    ``u``, ``v`` and ``meta`` are ``None`` for data read from plain files.
    """

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    u: NDArray[np.float64] | None = None
    v: NDArray[np.float64] | None = None
    meta: BreakDgp | None = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def simulate_innovations(
    law: InnovationLaw, T: int, p: int, stream: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Draw ``u`` (length T) and ``v`` (T x p) from ``law``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    cov = law.covariance(p)
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-12 * max(1.0, eig.max()):
        raise InvalidCovariance(
            f"implied (u, v) covariance is not PSD (min eigenvalue {eig.min():.3g}); "
            f"need p * rho_uv**2 <= 1"
        )
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, q = np.linalg.eigh(cov)
        factor = q * np.sqrt(np.clip(w, 0.0, None))
    weights = law.ma_weights or (1.0,)
    burn = len(weights) - 1
    e = stream.standard_normal((T + burn, p + 1)) @ factor.T
    u = e[burn:, 0].copy()
    v = lfilter(weights, [1.0], e[:, 1:], axis=0)[burn:] if burn else e[:, 1:].copy()
    return u, v


def simulate_regressors(law: RegressorLaw, T: int, v: ArrayLike) -> NDArray[np.float64]:
    """Run the autoregression ``x_t = root * x_{t-1} + v_t`` from ``x_0 = 0``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != (T, law.p):
        raise ValueError(f"v has shape {v.shape}, expected {(T, law.p)}")
    x = np.empty_like(v)
    for i, root in enumerate(law.roots(T)):
        x[:, i] = lfilter([1.0], [1.0, -root], v[:, i])
    return x


def regime_mean(dgp: BreakDgp, x: NDArray[np.float64]) -> NDArray[np.float64]:
    k = dgp.k
    mean = np.empty(x.shape[0])
    mean[:k] = dgp.alpha1 + x[:k] @ np.asarray(dgp.beta1)
    mean[k:] = dgp.alpha2 + x[k:] @ np.asarray(dgp.beta2)
    return mean


def simulate_sample(dgp: BreakDgp, stream: np.random.Generator) -> Sample:
    """Draw one sample; ``u`` in row ``t`` is ``u_{t+1}``, paired with ``v_{t+1}``.

    Innovations are drawn for periods ``1..T+1`` so the response shock is
    correlated with the *next* regressor innovation, never with ``x_t``.
    """
    law = dgp.law
    u_all, v_all = simulate_innovations(law.innovations, dgp.T + 1, law.p, stream)
    v = v_all[: dgp.T]
    u = u_all[1:]
    x = simulate_regressors(law, dgp.T, v)
    y = regime_mean(dgp, x) + u
    return Sample(y=y, x=x, u=u, v=v, meta=dgp)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_sample_csv(sample: Sample, out: TextIO, header_line: str | None = None) -> None:
    """Write ``t,y,x1..xp[,u,v1..vp]`` with 17 significant digits."""
    p = sample.p
    full = sample.u is not None and sample.v is not None
    cols = ["t", "y", *(f"x{i + 1}" for i in range(p))]
    if full:
        cols += ["u", *(f"v{i + 1}" for i in range(p))]
    if header_line is not None:
        out.write(header_line.rstrip("\n") + "\n")
    out.write(",".join(cols) + "\n")
    for t in range(sample.T):
        row = [str(t + 1), _fmt(sample.y[t]), *(_fmt(val) for val in sample.x[t])]
        if full:
            row += [_fmt(sample.u[t]), *(_fmt(val) for val in sample.v[t])]
        out.write(",".join(row) + "\n")


def sample_to_csv(sample: Sample, header_line: str | None = None) -> str:
    buf = io.StringIO()
    write_sample_csv(sample, buf, header_line)
    return buf.getvalue()


def read_sample_csv(source: TextIO) -> Sample:
    """Parse the sample schema; a leading JSON metadata line is skipped."""
    lines = source.read().splitlines()
    first = 0
    if lines and lines[0].lstrip().startswith("{"):
        first = 1
    rows = list(csv.reader(lines[first:]))
    if not rows:
        raise ParseError("empty input", line=first + 1)
    header = [h.strip() for h in rows[0]]
    header_line = first + 1
    if len(header) < 3 or header[0] != "t" or header[1] != "y":
        raise ParseError("header must start with 't,y,x1'", line=header_line)
    xcols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    vcols = [i for i, h in enumerate(header) if h.startswith("v") and h[1:].isdigit()]
    if not xcols:
        raise ParseError("no regressor columns x1..xp", line=header_line)
    ucol = header.index("u") if "u" in header else None
    data = []
    for offset, row in enumerate(rows[1:]):
        lineno = header_line + 1 + offset
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            values = [float(cell) for cell in row]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not all(math.isfinite(val) for val in values):
            raise ParseError("non-finite value", line=lineno)
        data.append(values)
    if not data:
        raise ParseError("no data rows", line=header_line)
    arr = np.array(data)
    u = arr[:, ucol] if ucol is not None else None
    v = arr[:, vcols] if ucol is not None and len(vcols) == len(xcols) else None
    return Sample(y=arr[:, 1], x=arr[:, xcols], u=u, v=v)

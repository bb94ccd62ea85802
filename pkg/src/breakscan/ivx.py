"""IVX instruments: mildly integrated filters of the regressor differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.signal import lfilter

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class IvxConfig:
    """Instrument persistence: root ``1 - c_z / T**delta``."""

    delta: float = 0.95
    c_z: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta={self.delta} outside (0, 1)")
        if not self.c_z > 0.0:
            raise ValueError(f"c_z={self.c_z} must be positive")

    def root(self, T: int) -> float:
        rho = 1.0 - self.c_z / float(T) ** self.delta
        if not 0.0 < rho < 1.0:
            raise ValueError(f"instrument root {rho} outside (0, 1) at T={T}")
        return rho


def build_instruments(x: ArrayLike, cfg: IvxConfig | None = None) -> NDArray[np.float64]:
    """Instruments ``z_t = rho * z_{t-1} + dx_t`` with ``z_0 = 0``, ``dx_1 = x_1``.

    Equivalent to ``z_t = sum_{j<=t} rho**(t-j) * dx_j`` per column.
    """
    cfg = cfg or IvxConfig()
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    T = x.shape[0]
    if T < 2:
        raise ValueError("need at least two observations")
    rho = cfg.root(T)
    dx = np.diff(x, axis=0, prepend=0.0)
    z = lfilter([1.0], [1.0, -rho], dx, axis=0)
    return z[:, 0] if squeeze else z


def augment_with_intercept(z: ArrayLike) -> NDArray[np.float64]:
    """Prepend a column of ones."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    return np.hstack([np.ones((z.shape[0], 1)), z])

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from breakscan.dgp import BreakDgp, InnovationLaw, RegressorLaw, Sample, simulate_sample
from breakscan.streams import stream

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def make_sample(T=100, gamma=1.0, c=1.0, p=1, seed=0, rho=0.0, beta1=0.0, beta2=0.0, pi0=0.5):
    law = RegressorLaw(p=p, gamma=gamma, c=(c,), innovations=InnovationLaw(rho_uv=rho))
    dgp = BreakDgp(law=law, T=T, beta1=(beta1,), beta2=(beta2,), pi0=pi0)
    return simulate_sample(dgp, stream(seed, 99))


def noiseless(x, beta1=1.0, beta2=1.0, k=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = len(x) // 2 if k is None else k
    y = np.concatenate([x[:k, 0] * beta1, x[k:, 0] * beta2])
    return Sample(y=y, x=x)


@pytest.fixture(scope="session")
def supnbb_table():
    """SupNBB p=1 table, trimming [0.15, 0.85], grid 1000, 2e5 draws (shared)."""
    from breakscan.limitdist import FunctionalSpec, build_table

    spec = FunctionalSpec(kind="SupNBB", p=1, trimming=(0.15, 0.85), grid_points=1000)
    return build_table(spec, 200_000, master_seed=2026)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from uavpsr.scenario import (AreaSpec, Horizon, HotspotTrace, Placement, PhysicalConstants, RLConfig,
                             ScenarioConfig, UserDistributionSpec)


@pytest.fixture
def consts():
    return PhysicalConstants()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(**kw) -> ScenarioConfig:
    """A 6x6 two-cluster scenario with tiny networks; fast enough for unit tests."""
    hs = (HotspotTrace(start=(1.5, 3.0), spread=0.5), HotspotTrace(start=(4.5, 3.0), spread=0.5))
    base = dict(
        name="small", area=AreaSpec(600, 100),
        users=UserDistributionSpec(count=20, hotspot_fraction=1.0, hotspots=hs, uniform_remainder=False),
        n_uavs=2, placement=Placement(kind="points", points=((1.5, 1.0), (4.5, 5.0))),
        horizon=Horizon(n_steps=10, segments=1),
        rl=RLConfig(actor_hidden=(8, 6), critic_hidden=(8, 6), batch_size=16, workers=1, episodes=4,
                    smooth_window=3))
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture
def small_cfg():
    return small_config()


ACCEPTANCE_LINES: list[str] = []


def acceptance_report(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"acceptance {number}: {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance gate")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

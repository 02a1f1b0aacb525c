import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cransim.config import ExperimentConfig
from cransim.scenario import Rrh, Scenario, ScattererField, User, Vec3

settings.register_profile(
    "cransim", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("cransim")

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, ok, detail):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])


def empty_field(bounds=(0.0, 0.0, 100.0, 100.0)):
    return ScattererField(0.0, bounds, np.zeros((0, 3)), np.zeros(0))


def make_scenario(rrhs, users, shadows=(), scatterers=None, bounds=(0.0, 0.0, 100.0, 100.0), tti=1e-3):
    """Hand-built scenario; ``rrhs`` as (x, y, z, boresight, antennas), ``users`` as
    (x, y, z, vx, vy, antennas, serving)."""
    rrh_objs = tuple(Rrh(i, Vec3(x, y, z), b, a) for i, (x, y, z, b, a) in enumerate(rrhs))
    user_objs = tuple(
        User(i, Vec3(x, y, z), Vec3(vx, vy, 0.0), a, s) for i, (x, y, z, vx, vy, a, s) in enumerate(users)
    )
    return Scenario(rrh_objs, user_objs, scatterers if scatterers is not None else empty_field(bounds),
                    tuple(shadows), tti, 0, bounds, ())


@pytest.fixture
def small_cfg():
    """Reduced experiment: coarse codebooks, few positions, one seed."""
    cfg = ExperimentConfig()
    return dataclasses.replace(
        cfg,
        scenario=dataclasses.replace(cfg.scenario, candidate_positions=100),
        tx_grid_step=30.0,
        rx_grid_step=60.0,
        num_positions=8,
        seeds=(0,),
        density_sweep=(0.01, 0.05),
        shadow_sweep=(1.5, 5.0),
    ).validate()

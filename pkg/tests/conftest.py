import os

import numpy as np
import pytest
from hypothesis import settings

os.environ.setdefault("MFCL_THREADS", "1")

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

from mfcl.measures import ProductMeasure, Uniform1D, PointMass1D  # noqa: E402
from mfcl.model import BumpSource, CuckerSmaleKernel, ExternalForce, Physics, SimConfig  # noqa: E402


def make_config(n=16, dt=0.02, horizon=1.0, beta=1.0, eta=0.0, D=0.1, kappa=0.5, force=None,
                measure=None, half_width=8.0, cells=128, bump=None, dim=1, report_every=1, sigma=1.0):
    phys = Physics(
        kernel=CuckerSmaleKernel(beta, 1.0, sigma),
        bump=bump or BumpSource(0.5, 1.0),
        force=force or ExternalForce(),
        chemotaxis=eta,
    )
    m = measure or ProductMeasure.iid(dim, Uniform1D(-0.5, 0.5), Uniform1D(-0.5, 0.5))
    return SimConfig(dim, n, dt, horizon, phys, D, kappa, m, half_width, cells, report_every=report_every)


@pytest.fixture
def free_config():
    return make_config(beta=0.0, eta=0.0)


@pytest.fixture
def full_config():
    return make_config(beta=1.0, eta=0.5)


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<3} {'PASS' if ok else 'FAIL'}  {title}: {detail}")

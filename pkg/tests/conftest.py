import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fsdea.netdea import NetworkSpec, StageSpec  # noqa: E402
from fsdea.panel import Panel  # noqa: E402
from fsdea.synth import DgpConfig, bank_spec, generate  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo or full-panel checks")


@pytest.fixture(scope="session")
def spec():
    return bank_spec()


@pytest.fixture(scope="session")
def small_panel():
    return generate(DgpConfig(n_units=10, n_periods=3, seed=11))


def single_stage_spec(n_in=2, n_out=1):
    return NetworkSpec((StageSpec(final_outputs=tuple(f"y{r}" for r in range(n_out)),
                                  initial_inputs=tuple(f"x{j}" for j in range(n_in))),))


def random_network_frame(rng, n):
    """Positive random data for a three-stage chain with one column per role."""
    cols = ["x0a", "x0b", "y1", "z1", "x2", "y2", "z2", "x3", "y3a", "y3b"]
    return pd.DataFrame(np.exp(rng.normal(0, 0.5, size=(n, len(cols)))), columns=cols,
                        index=[f"D{i:02d}" for i in range(n)])


def small_network_spec():
    return NetworkSpec((
        StageSpec(final_outputs=("y1",), intermediate_outputs=("z1",), initial_inputs=("x0a", "x0b")),
        StageSpec(final_outputs=("y2",), intermediate_outputs=("z2",), external_inputs=("x2",)),
        StageSpec(final_outputs=("y3a", "y3b"), external_inputs=("x3",)),
    ))


def two_period_panel(df_a: pd.DataFrame, df_b: pd.DataFrame, roles, periods=(2019, 2020)) -> Panel:
    a = df_a.copy()
    b = df_b.copy()
    a["period"], b["period"] = periods
    a["unit"], b["unit"] = a.index, b.index
    return Panel.from_frame(pd.concat([a, b], ignore_index=True), roles)

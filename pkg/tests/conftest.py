from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from softshift.config import SampleConfig
from softshift.shift_analysis import WeightShift


@pytest.fixture
def worked_pair() -> WeightShift:
    """n=2, d=1: A = [[1], [-1]], x moves from 0 to 0.005, b = (1, 0), R = 4."""
    return WeightShift(
        A=np.array([[1.0], [-1.0]]),
        b=np.array([1.0, 0.0]),
        x_t=np.array([0.0]),
        x_next=np.array([0.005]),
        R=4.0,
    )


@pytest.fixture
def small_config() -> SampleConfig:
    """A quick sweep over small problems; suites override shift_kind themselves."""
    return SampleConfig(n_range=(2, 6), d_range=(1, 3), trials=40, master_seed=11)


@pytest.fixture
def worked_golden() -> dict[str, Any]:
    """Pinned report values for ``worked_pair`` under the beta floor."""
    return json.loads((Path(__file__).parent / "golden" / "worked_pair.json").read_text())

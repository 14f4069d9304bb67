import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from causal_crm.blackbox import RandomForest  # noqa: E402
from causal_crm.dataset import FeatureSpace, split_indices  # noqa: E402
from causal_crm.synthetic import fixture_dataset  # noqa: E402


@pytest.fixture(scope="session")
def threshold_setup():
    """Forest trained on the threshold fixture plus its feature space and splits."""
    ds = fixture_dataset("threshold", seed=0)
    space = FeatureSpace.from_dataset(ds)
    x, y = space.matrix(ds), space.labels(ds)
    train, test = split_indices(ds.n, 0.2, seed=1)
    rf = RandomForest(n_trees=50, seed=3).fit(x[train], y[train])
    return {"ds": ds, "space": space, "x": x, "y": y, "train": train, "test": test, "rf": rf}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

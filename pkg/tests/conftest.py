import numpy as np
import pytest

from despur.config import DatasetConfig, WorkspaceLayout
from despur.datastore import ingest_dataset
from despur.runtime import LogisticBackend
from despur.synthetic import make_fixture_workspace
from despur.workspace import Workspace


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory):
    base = tmp_path_factory.mktemp("fixture-data")
    return make_fixture_workspace(base)


@pytest.fixture()
def workspace_paths(tmp_path):
    """A fresh fixture tree per test (writable without cross-test bleed)."""
    return make_fixture_workspace(tmp_path)


@pytest.fixture()
def workspace(workspace_paths):
    layout = WorkspaceLayout(
        data_root=workspace_paths["data_root"],
        mask_root=workspace_paths["mask_root"],
        influence_root=workspace_paths["influence_root"],
        ckpt_root=workspace_paths["ckpt_root"],
        cache_root=workspace_paths["cache_root"],
    )
    config = DatasetConfig.load(workspace_paths["config"])
    ws = Workspace.open(layout, config)
    yield ws
    ws.close()


@pytest.fixture()
def dataset(workspace_paths):
    config = DatasetConfig.load(workspace_paths["config"])
    return ingest_dataset(workspace_paths["data_root"], config)


@pytest.fixture()
def small_backend():
    return LogisticBackend(3, (1, 2, 2))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def finite_difference_gradient(fn, params, h=1e-4):
    """Central differences of a scalar function of a parameter vector."""
    grad = np.zeros_like(params)
    for i in range(len(params)):
        hi = params.copy()
        lo = params.copy()
        hi[i] += h
        lo[i] -= h
        grad[i] = (fn(hi) - fn(lo)) / (2 * h)
    return grad

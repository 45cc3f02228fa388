import numpy as np
import pytest

from activegrasp.core import Dataset, GraspSample, ObjectView, Source
from activegrasp.model import GraspModel, ModelConfig


def tiny_config(dim=2, k=1, resolution=4, **kw):
    return ModelConfig(dim=dim, resolution=resolution, filters=(2, 2), trunk_width=4, q_width=6,
                       head_width=6, n_components=k, **kw)


def box_view(object_id=0, resolution=4, size=(0.2, 0.15, 0.1)):
    vox = np.zeros((resolution,) * 3, bool)
    lo, hi = resolution // 4, resolution - resolution // 4
    vox[lo:hi, lo:hi, lo:hi] = True
    return ObjectView(object_id, vox, size)


def make_dataset(q, labels, object_id=0, resolution=4):
    q = np.atleast_2d(q)
    d = Dataset(dim=q.shape[1], resolution=resolution)
    for row, y in zip(q, labels):
        d.append(GraspSample(object_id, row, int(y), Source.HEURISTIC, 0))
    return d


@pytest.fixture
def tiny_model():
    return GraspModel.create(tiny_config(dim=3, k=2), np.random.default_rng(0))


@pytest.fixture
def view():
    return box_view()


def small_experiment(**kw):
    """A full-dimensional experiment shrunk until a loop round takes milliseconds."""
    from activegrasp.config import ExperimentConfig

    base = dict(resolution=8, filters=[2, 2], trunk_width=8, q_width=8, head_width=8, n_objects=4,
                n_geodata=80, init_epochs=2, eval_objects=3, eval_attempts=2, rounds=2, per_round=2,
                n_cand=10, solver_max_iter=20)
    base.update(kw)
    return ExperimentConfig(**base)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

import numpy as np
import pytest
from scipy import stats

from activegrasp import metrics as metrics_mod
from activegrasp.core import clamp_to_bounds
from activegrasp.inference import InferenceOpts
from activegrasp.metrics import (
    ENTROPY_HEADER,
    EVAL_HEADER,
    diversity_report,
    entropy_from_cov,
    eval_success_rate,
    gaussian_entropy,
    partition_slices,
    write_entropy_report,
    write_eval_report,
)
from activegrasp.model import GraspModel, MixtureParams
from activegrasp.pipeline import make_world
from activegrasp.world import in_success_region

from conftest import make_dataset, small_experiment
from test_inference import set_prior

LN_2PIE = np.log(2 * np.pi * np.e)


def test_entropy_standard_normal_sample():
    x = np.random.default_rng(0).normal(size=100_000)
    assert gaussian_entropy(x) == pytest.approx(0.5 * LN_2PIE, abs=0.02)
    assert 0.5 * LN_2PIE == pytest.approx(1.4189, abs=1e-4)


def test_entropy_identity_closed_form():
    assert entropy_from_cov(np.eye(3)) == pytest.approx(1.5 * LN_2PIE, abs=1e-12)
    assert 1.5 * LN_2PIE == pytest.approx(4.2568, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_entropy_matches_scipy_on_injected_covariance(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 8))
    a = rng.normal(size=(d, d))
    cov = a @ a.T + 0.1 * np.eye(d)
    assert entropy_from_cov(cov) == pytest.approx(stats.multivariate_normal(cov=cov).entropy(), abs=1e-9)


@pytest.mark.parametrize("a", [0.1, 0.5, 3.0, 17.0])
def test_entropy_scaling_law(a):
    x = np.random.default_rng(1).normal(size=(200, 4)) @ np.diag([1, 2, 0.5, 3])
    d = x.shape[1]
    assert gaussian_entropy(a * x, 0.0) - gaussian_entropy(x, 0.0) == pytest.approx(d * np.log(a), abs=1e-9)


def test_entropy_needs_d_plus_one_samples():
    with pytest.raises(ValueError):
        gaussian_entropy(np.zeros((3, 3)))
    assert np.isfinite(gaussian_entropy(np.random.default_rng(0).normal(size=(4, 3))))


def test_ridge_handles_degenerate_covariance():
    x = np.zeros((20, 3))
    assert gaussian_entropy(x, 0.0) == float("-inf")
    assert gaussian_entropy(x, 1e-6) == pytest.approx(0.5 * (3 * LN_2PIE + 3 * np.log(1e-6)))


def test_partitions():
    p = partition_slices(15)
    assert (p["pose"].start, p["pose"].stop, p["joint"].start, p["joint"].stop) == (0, 7, 7, 15)
    assert p["config"] == slice(0, 15)


def dataset_from(x):
    return make_dataset(x, np.zeros(len(x), int))


def test_diversity_self_comparison():
    x = np.random.default_rng(2).normal(size=(120, 15))
    d = dataset_from(x)
    rep = diversity_report(d, d, np.random.default_rng(0))
    assert rep.subset_size == 120 and rep.subsets == 4
    for row in rep.rows.values():
        # every subset is a permutation of the full set
        assert abs(row["active"] - row["heuristic_mean"]) <= max(3 * row["heuristic_std"], 1e-9)
        assert row["heuristic_std"] >= 0


def test_diversity_two_clusters_beat_one():
    rng = np.random.default_rng(3)
    tight = 0.01 * rng.normal(size=(400, 15))
    spread = np.concatenate([0.01 * rng.normal(size=(50, 15)) + 0.5,
                             0.01 * rng.normal(size=(50, 15)) - 0.5])
    rep = diversity_report(dataset_from(spread), dataset_from(tight), np.random.default_rng(0))
    # closed-form covariances: 0.25 + 1e-4 along every axis (fully correlated) vs 1e-4 I
    assert set(rep.rows) == {"config", "pose", "joint"}
    for row in rep.rows.values():
        assert row["active"] > row["heuristic_mean"] + 3 * row["heuristic_std"]


def test_diversity_subsets_without_replacement_and_size_check():
    x = np.random.default_rng(4).normal(size=(30, 15))
    with pytest.raises(ValueError):
        diversity_report(dataset_from(x), dataset_from(x[:20]), np.random.default_rng(0))


def test_entropy_csv(tmp_path):
    rng = np.random.default_rng(5)
    rep = diversity_report(dataset_from(rng.normal(size=(40, 15))), dataset_from(rng.normal(size=(90, 15))),
                           np.random.default_rng(0))
    write_entropy_report(rep, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == ",".join(ENTROPY_HEADER)
    assert [ln.split(",")[0] for ln in lines[1:]] == ["config", "pose", "joint"]


# -- evaluation -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def eval_world():
    return make_world(small_experiment(n_objects=3), 11, name="eval-world")


def test_untrained_model_matches_monte_carlo_baseline():
    # 2-D grasp space, where the success regions cover about 10% of the prior mass
    cfg = small_experiment(dim=2, n_objects=3)
    eval_world = make_world(cfg, 11, name="eval-world")
    model = GraspModel.create(cfg.model_config(), np.random.default_rng(0))
    model.classifier.zero_head()
    d = eval_world.bounds.dim
    set_prior(model, np.zeros(3), np.zeros((3, d)), np.full((3, d), np.log(0.4)))
    # p = 0.5 everywhere and no prior term: the planned grasp is the clamped prior draw
    attempts = 300
    rep = eval_success_rate(model, eval_world, attempts, np.random.default_rng(1), InferenceOpts(prior_gain=0.0))

    mc_rng = np.random.default_rng(2)
    rates = []
    for o in eval_world.pool:
        q = np.array([clamp_to_bounds(x, eval_world.bounds) for x in mc_rng.normal(0, 0.4, (20_000, d))])
        hit = np.mean([in_success_region(o, x) for x in q])
        rates.append(hit * (1 - o.oracle.noise) + (1 - hit) * o.oracle.noise)
    p = float(np.mean(rates))
    sd = np.sqrt(p * (1 - p) / rep.attempts)
    assert p > 0.05
    assert abs(rep.rate - p) <= 3 * sd
    assert rep.failures == 0


class CheatingModel:
    """Classifier: smoothed oracle indicator. Prior: Gaussians on the success regions."""

    def __init__(self, world, width=0.4, gain=20.0):
        self.world, self.width, self.gain = world, width, gain
        self.classifier, self.prior = self, self

    def _regions(self, view):
        return self.world.objects[view.object_id].oracle.regions

    def condition(self, view):
        regions = self._regions(view)
        outer = self

        class Cond:
            @staticmethod
            def logit_and_grad(q):
                s, ds = 0.0, np.zeros_like(q)
                for r in regions:
                    z = (q - r.center) / (outer.width * r.tolerance)
                    e = np.exp(-0.5 * z @ z)
                    s += e
                    ds += -e * z / (outer.width * r.tolerance)
                return outer.gain * (s - 0.5), outer.gain * ds

        return Cond

    def mixture(self, view):
        regions = self._regions(view)
        k = len(regions)
        return MixtureParams(np.full(k, 1.0 / k), np.array([r.center for r in regions]),
                             np.array([self.width * r.tolerance for r in regions]))


def test_cheating_model_near_perfect(eval_world):
    world = type(eval_world)([o.with_noise(0.0) for o in eval_world.pool], list(eval_world.views.values()))
    rep = eval_success_rate(CheatingModel(world), world, 40, np.random.default_rng(3))
    assert rep.rate >= 0.95


def test_eval_report_consistency_and_determinism(eval_world):
    model = CheatingModel(eval_world)
    a = eval_success_rate(model, eval_world, 7, np.random.default_rng(4))
    b = eval_success_rate(model, eval_world, 7, np.random.default_rng(4))
    assert a.labels.tobytes() == b.labels.tobytes() and a.configs.tobytes() == b.configs.tobytes()
    assert a.attempts == 7 * len(eval_world)
    assert sum(n for n, _ in a.per_object.values()) == a.attempts
    assert sum(n for n, _ in a.per_side.values()) == a.attempts - a.failures
    assert sum(k for _, k in a.per_object.values()) == int(a.labels.sum())
    assert all(0 <= a.object_rate(o) <= 1 for o in a.per_object)
    assert set(a.entropy) == {"config", "pose", "joint"}


def test_eval_failures_count_as_misses(eval_world, monkeypatch, caplog):
    def boom(*a, **k):
        raise FloatingPointError("no plan")

    monkeypatch.setattr(metrics_mod, "map_grasp", boom)
    with caplog.at_level("WARNING"):
        rep = eval_success_rate(None, eval_world, 2, np.random.default_rng(0))
    assert rep.failures == rep.attempts == 2 * len(eval_world)
    assert rep.rate == 0.0
    assert "inference failed" in caplog.text


def test_eval_csv(eval_world, tmp_path):
    rep = eval_success_rate(CheatingModel(eval_world), eval_world, 3, np.random.default_rng(5))
    write_eval_report(rep, tmp_path / "ev.csv")
    lines = (tmp_path / "ev.csv").read_text().splitlines()
    assert lines[0] == ",".join(EVAL_HEADER)
    assert lines[-1].startswith("all,all,")

import numpy as np
import pytest

from activegrasp import loop as loop_mod
from activegrasp.arms import Arm, ArmQuery
from activegrasp.core import Dataset, concat_datasets, save_dataset
from activegrasp.loop import (
    ARM_SUMMARY_HEADER,
    ROUND_LOG_HEADER,
    BanditState,
    LoopConfig,
    run_active,
    ucb_select,
    update_arm,
    write_arm_summary,
    write_round_log,
)
from activegrasp.model import TrainOpts
from activegrasp.pipeline import collect_geodata, make_world, train_passive

from conftest import small_experiment


def state_with(means, counts, c=1.0):
    counts = np.asarray(counts, dtype=np.int64)
    return BanditState(counts=counts, sums=np.asarray(means, float) * counts, offsets=(0, 0, 0), ucb_c=c)


def ucb_oracle(means, counts, c):
    t = sum(counts)
    return [m + c * np.sqrt(2 * np.log(t) / n) for m, n in zip(means, counts)]


def test_fresh_state_pulls_success_first():
    assert ucb_select(BanditState()) == Arm.SUCCESS


def test_unpulled_lowest_index_first():
    assert ucb_select(state_with([5.0, 0, 0], [3, 0, 0])) == Arm.UNCERTAINTY
    assert ucb_select(state_with([5.0, 5.0, 0], [3, 1, 0])) == Arm.EXPLORE


def test_ucb_bonus_breaks_equal_means():
    s = state_with([0.9, 0.9, 0.9], [100, 10, 10])
    u = ucb_oracle([0.9] * 3, [100, 10, 10], 1.0)
    assert u[1] == u[2] > u[0]
    assert ucb_select(s) == Arm.UNCERTAINTY


def test_ucb_equal_counts_mean_dominates():
    assert ucb_select(state_with([1.0, 0.0, 0.0], [1, 1, 1])) == Arm.SUCCESS


def test_offsets_exact():
    s = BanditState()
    update_arm(s, Arm.SUCCESS, 0.6)
    update_arm(s, Arm.UNCERTAINTY, 0.6)
    update_arm(s, Arm.EXPLORE, 0.0)
    assert s.sums.tolist() == [0.6 + 0.35, 0.6 - 0.05, 0.6]
    assert s.sums[0] == pytest.approx(0.95, abs=1e-15)
    assert s.sums[1] == pytest.approx(0.55, abs=1e-15)
    assert s.t == 3 and s.counts.tolist() == [1, 1, 1]


def test_mean_undefined_before_pull():
    m = BanditState().means()
    assert np.all(np.isnan(m))


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_update_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        update_arm(BanditState(), Arm.SUCCESS, bad)


def bernoulli_run(seed, means=(0.9, 0.5, 0.2), steps=1000):
    rng = np.random.default_rng(seed)
    s = BanditState(offsets=(0.0, 0.0, 0.0), ucb_c=1.0)
    for _ in range(steps):
        a = ucb_select(s)
        update_arm(s, a, float(rng.random() < means[int(a)]))
    return s


def test_bernoulli_bandit_favors_best_arm():
    frac = [bernoulli_run(seed).counts[0] / 1000 for seed in range(10)]
    assert np.mean(frac) > 0.6
    assert all(bernoulli_run(seed).t == 1000 for seed in range(2))


def test_loop_config_validation():
    assert LoopConfig().rounds == 128 and LoopConfig().per_round == 16
    for k in ("rounds", "per_round", "retrain_period", "epochs", "switch_period"):
        with pytest.raises(ValueError):
            LoopConfig(**{k: 0})


# -- loop bookkeeping with stubbed arms and training ------------------------------------------


class StubModel:
    """Records what each update trained on; never touches a network."""

    def __init__(self):
        self.slices = []

    def train(self, data, views, opts, rng, tag=""):
        self.slices.append(list(data.samples))
        return {"tag": tag, "n": len(data), "n_success": 0, "mdn_skipped": True}


@pytest.fixture(scope="module")
def small_world():
    cfg = small_experiment()
    world = make_world(cfg, 0)
    geo = collect_geodata(cfg, world, 0, 40)
    return cfg, world, geo


@pytest.fixture
def stub_arms(monkeypatch):
    def fake(arm, model, view, bounds, rng, inference=None, n_cand=50):
        q = rng.uniform(bounds.lower, bounds.upper)
        return ArmQuery(arm, q, float(rng.random()), 0.0)

    monkeypatch.setattr(loop_mod, "run_arm", fake)
    return fake


def test_two_by_two_bookkeeping(small_world, stub_arms):
    _, world, geo = small_world
    model, active, logs, state = run_active(LoopConfig(rounds=2, per_round=2), StubModel(), world, geo,
                                            np.random.default_rng(0))
    assert len(active) == 4
    assert [s.round for s in active.samples] == [1, 1, 2, 2]
    assert [len(rl.records) for rl in logs] == [2, 2]
    assert state.t == 4


def test_full_retrain_schedule(small_world, stub_arms):
    _, world, geo = small_world
    model = StubModel()
    _, active, logs, state = run_active(LoopConfig(rounds=8, per_round=4, retrain_period=4), model, world,
                                        geo, np.random.default_rng(1))
    assert [rl.round for rl in logs if rl.full_retrain] == [4, 8]
    assert state.counts.sum() == 32 == len(active)
    sizes = [len(s) for s in model.slices]
    assert sizes == [4, 4, 4, len(geo) + 16, 4, 4, 4, len(geo) + 32]


def test_union_of_training_slices(small_world, stub_arms):
    _, world, geo = small_world
    model = StubModel()
    _, active, _, _ = run_active(LoopConfig(rounds=6, per_round=3, retrain_period=4), model, world, geo,
                                 np.random.default_rng(2))
    seen = {id(s) for sl in model.slices for s in sl}
    want = {id(s) for s in concat_datasets(geo, active).samples}
    assert seen == want


def test_object_switch_every_period(small_world, stub_arms):
    _, world, geo = small_world
    _, _, logs, _ = run_active(LoopConfig(rounds=10, per_round=3, switch_period=5), StubModel(), world, geo,
                               np.random.default_rng(3))
    ids = [r.object_id for rl in logs for r in rl.records]
    blocks = [ids[i:i + 5] for i in range(0, len(ids), 5)]
    assert all(len(set(b)) == 1 for b in blocks)
    assert all(a[0] != b[0] for a, b in zip(blocks, blocks[1:]))


def test_object_switch_is_uniform(small_world, stub_arms):
    # each switch picks uniformly among the other objects: transitions are uniform off the diagonal
    _, world, geo = small_world
    _, _, logs, _ = run_active(LoopConfig(rounds=300, per_round=10, switch_period=1, retrain_period=1000),
                               StubModel(), world, geo, np.random.default_rng(4))
    ids = np.array([r.object_id for rl in logs for r in rl.records])
    n = len(world)
    counts = np.bincount(ids, minlength=n)
    expected = len(ids) / n
    assert np.all(np.abs(counts - expected) < 4 * np.sqrt(expected))


def test_reproducible_with_stubs(small_world, stub_arms):
    _, world, geo = small_world
    runs = [run_active(LoopConfig(rounds=3, per_round=4), StubModel(), world, geo, np.random.default_rng(5))
            for _ in range(2)]
    a, b = (np.array([s.config for s in r[1].samples]) for r in runs)
    assert a.tobytes() == b.tobytes()
    assert [s.label for s in runs[0][1].samples] == [s.label for s in runs[1][1].samples]


def test_single_failure_is_retried(small_world, monkeypatch, caplog):
    _, world, geo = small_world
    calls = {"n": 0}

    def flaky(arm, model, view, bounds, rng, inference=None, n_cand=50):
        calls["n"] += 1
        if calls["n"] == 1:
            raise FloatingPointError("solver blew up")
        return ArmQuery(arm, np.zeros(bounds.dim), 0.7, 0.0)

    monkeypatch.setattr(loop_mod, "run_arm", flaky)
    with caplog.at_level("WARNING"):
        _, _, logs, state = run_active(LoopConfig(rounds=1, per_round=1), StubModel(), world, geo,
                                       np.random.default_rng(6))
    r = logs[0].records[0]
    assert calls["n"] == 2 and not r.failed and r.raw_reward == 0.7
    assert "retrying" in caplog.text


def test_double_failure_records_failed_query(small_world, monkeypatch):
    _, world, geo = small_world

    def broken(*a, **k):
        raise FloatingPointError("always")

    class PriorStub(StubModel):
        class prior:
            @staticmethod
            def mixture(view):
                from activegrasp.model import MixtureParams
                d = world.bounds.dim
                return MixtureParams(np.ones(1), np.zeros((1, d)), np.ones((1, d)))

    monkeypatch.setattr(loop_mod, "run_arm", broken)
    _, active, logs, state = run_active(LoopConfig(rounds=1, per_round=2), PriorStub(), world, geo,
                                        np.random.default_rng(7))
    assert all(r.failed and r.label == 0 and r.raw_reward == 0.0 for r in logs[0].records)
    assert len(active) == 2 and state.t == 2


def test_csv_headers_and_rows(small_world, stub_arms, tmp_path):
    _, world, geo = small_world
    _, _, logs, state = run_active(LoopConfig(rounds=2, per_round=3), StubModel(), world, geo,
                                   np.random.default_rng(8))
    write_round_log(logs, tmp_path / "rounds.csv")
    write_arm_summary(state, logs, tmp_path / "arms.csv")
    lines = (tmp_path / "rounds.csv").read_text().splitlines()
    assert lines[0] == ",".join(ROUND_LOG_HEADER)
    assert len(lines) == 1 + 6
    arms = (tmp_path / "arms.csv").read_text().splitlines()
    assert arms[0] == ",".join(ARM_SUMMARY_HEADER)
    assert [row.split(",")[0] for row in arms[1:]] == ["success", "uncertainty", "explore"]
    assert sum(int(row.split(",")[-1]) for row in arms[1:]) == 6


# -- real model -------------------------------------------------------------------------------


def test_real_loop_deterministic(small_world, tmp_path):
    cfg, world, geo = small_world
    outs = []
    for k in range(2):
        model = train_passive(cfg, world, geo, 0)
        _, active, logs, state = run_active(LoopConfig(rounds=2, per_round=3), model, world, geo,
                                            np.random.default_rng(9), train=TrainOpts(epochs=1))
        write_round_log(logs, tmp_path / f"r{k}.csv")
        save_dataset(active, tmp_path / f"a{k}.txt")
        outs.append(model.state())
    assert (tmp_path / "r0.csv").read_bytes() == (tmp_path / "r1.csv").read_bytes()
    assert (tmp_path / "a0.txt").read_bytes() == (tmp_path / "a1.txt").read_bytes()
    assert all(outs[0][k].tobytes() == outs[1][k].tobytes() for k in outs[0])
    assert isinstance(active, Dataset) and len(active) == 6

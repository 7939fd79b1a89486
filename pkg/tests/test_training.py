import numpy as np
import pytest

from transc import training
from transc.geometry import EmbeddingSpace
from transc.kg import KnowledgeGraph, TripleKind, TripleSet, Vocabulary
from transc.training import Batch, NumericalError, TrainConfig, TrainState, hinge, init_space, step_batch, train
from transc.utils import derive_rng

from oracles import brute_score


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(margin_e=0)
    with pytest.raises(ValueError):
        TrainConfig(dim=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(mode="transh")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"dim": 3, "bogus": 1})
    assert TrainConfig.from_dict(TrainConfig(dim=7).to_dict()) == TrainConfig(dim=7)


def test_default_hyperparameters():
    c = TrainConfig()
    assert (c.dim, c.lr, c.margin_l, c.margin_e, c.margin_c) == (100, 0.001, 1.0, 0.1, 1.0)


@pytest.mark.parametrize("pos, neg, margin, expected", [(0.2, 1.5, 1.0, 0.0), (0.5, 0.6, 1.0, 0.9), (3.0, 3.0, 0.4, 0.4)])
def test_hinge(pos, neg, margin, expected):
    assert float(hinge(pos, neg, margin)) == pytest.approx(expected)


def test_init_space_in_ball_and_reproducible():
    cfg = TrainConfig(dim=100)
    a = init_space(50, 10, 5, cfg, derive_rng(3, "init"))
    b = init_space(50, 10, 5, cfg, derive_rng(3, "init"))
    assert a.equals(b)
    assert a.check_invariants()
    assert np.all(a.radii >= 1e-4) and np.all(a.radii <= 0.5 + 1e-4)


def test_init_coordinate_moments():
    # pre-projection draw: uniform(-b, b) has mean 0 and sd b / sqrt(3)
    k = 100
    bound = 6 / np.sqrt(k)
    x = derive_rng(0, "moments").uniform(-bound, bound, 10**6)
    sigma = bound / np.sqrt(3) / np.sqrt(x.size)
    assert abs(x.mean()) <= 3 * sigma


def _two_d_space():
    return EmbeddingSpace(
        np.array([[0.1, 0.2], [0.3, -0.1], [-0.2, 0.0]]),
        np.array([[0.05, 0.1]]),
        np.array([[0.0, 0.0]]),
        np.array([0.3]),
        np.zeros((2, 2)),
    )


def test_single_relational_step_moves_by_lr_times_grad():
    sp = _two_d_space()
    before = sp.copy()
    cfg = TrainConfig(dim=2, lr=0.1, margin_l=10.0)
    pos = np.array([[0, 0, 1]])
    neg = np.array([[2, 0, 1]])
    state = TrainState(sp)
    step_batch(state, Batch({TripleKind.RELATIONAL: pos}, {TripleKind.RELATIONAL: neg}), cfg)
    g_pos = 2 * (before.instance_vecs[0] + before.relation_vecs[0] - before.instance_vecs[1])
    g_neg = 2 * (before.instance_vecs[2] + before.relation_vecs[0] - before.instance_vecs[1])
    np.testing.assert_allclose(sp.instance_vecs[0], before.instance_vecs[0] - 0.1 * g_pos)
    np.testing.assert_allclose(sp.instance_vecs[2], before.instance_vecs[2] + 0.1 * g_neg)
    np.testing.assert_allclose(sp.instance_vecs[1], before.instance_vecs[1] + 0.1 * g_pos - 0.1 * g_neg)
    np.testing.assert_allclose(sp.relation_vecs[0], before.relation_vecs[0] - 0.1 * (g_pos - g_neg))


def test_inactive_batch_leaves_state_unchanged():
    sp = _two_d_space()
    before = sp.copy()
    cfg = TrainConfig(dim=2, margin_l=1e-6)
    # negative far worse than the positive
    batch = Batch({TripleKind.RELATIONAL: np.array([[0, 0, 0]])}, {TripleKind.RELATIONAL: np.array([[0, 0, 1]])})
    sp.relation_vecs[:] = 0.0
    before.relation_vecs[:] = 0.0
    losses = step_batch(TrainState(sp), batch, cfg)
    assert losses["L_l"] == 0.0
    assert sp.equals(before)


def test_step_restores_invariants(rng):
    sp = EmbeddingSpace(
        rng.uniform(-1, 1, (6, 3)) * 0.57, rng.uniform(-1, 1, (2, 3)) * 0.57,
        rng.uniform(-1, 1, (3, 3)) * 0.57, np.full(3, 2e-4), np.zeros((2, 3)),
    )
    cfg = TrainConfig(dim=3, lr=5.0)
    batch = Batch(
        {TripleKind.RELATIONAL: np.array([[0, 0, 1], [2, 1, 3]]), TripleKind.INSTANCE_OF: np.array([[4, 0]]),
         TripleKind.SUB_CLASS_OF: np.array([[1, 2]])},
        {TripleKind.RELATIONAL: np.array([[5, 0, 1], [2, 1, 4]]), TripleKind.INSTANCE_OF: np.array([[4, 1]]),
         TripleKind.SUB_CLASS_OF: np.array([[0, 2]])},
    )
    step_batch(TrainState(sp), batch, cfg)
    assert sp.check_invariants()


def test_non_finite_aborts_with_triple():
    sp = _two_d_space()
    sp.instance_vecs[0, 0] = np.nan
    batch = Batch({TripleKind.RELATIONAL: np.array([[0, 0, 1]])}, {TripleKind.RELATIONAL: np.array([[2, 0, 1]])})
    with pytest.raises(NumericalError, match=r"\[0, 0, 1\]"):
        step_batch(TrainState(sp), batch, TrainConfig(dim=2))


def _tiny_kg():
    v = Vocabulary
    return KnowledgeGraph(
        v(["a", "b", "c", "d"]), v(["x", "y", "z"]), v(["r"]),
        {"train": TripleSet([(0, 0, 1), (2, 0, 3)], [(0, 0)], [(0, 1)])},
    )


def test_zero_epochs_returns_init():
    kg = _tiny_kg()
    cfg = TrainConfig(dim=4, epochs=0, seed=5)
    state = train(kg, cfg)
    init = init_space(4, 3, 1, cfg, derive_rng(5, "init"))
    assert state.space.equals(init) and state.epoch == 0 and state.loss_trace == []


def test_toy_loss_trailing_windows_non_increasing():
    kg = _tiny_kg()
    state = train(kg, TrainConfig(dim=8, epochs=500, lr=0.01, seed=0))
    total = np.array([e["total"] for e in state.loss_trace])
    windows = total.reshape(10, 50).mean(axis=1)
    assert windows[-1] <= windows[0]
    assert np.all(np.diff(windows[-3:]) <= 1e-12)


def test_loss_decomposition(small_tree, monkeypatch):
    kg = small_tree.kg
    cfg = TrainConfig(dim=6, epochs=2, lr=0.01, seed=1, batch_size=64)
    recomputed = []
    original = training.step_batch

    def checked(state, batch, config):
        space = state.space.copy()
        sums = {"L_e": 0.0, "L_c": 0.0, "L_l": 0.0}
        for kind, pos in batch.positives.items():
            key = training.LOSS_KEYS[kind]
            for p, n in zip(pos.tolist(), batch.negatives[kind].tolist()):
                sums[key] += max(0.0, config.margin(kind) + brute_score(space, kind, p) - brute_score(space, kind, n))
        recomputed.append(sums)
        return original(state, batch, config)

    monkeypatch.setattr(training, "step_batch", checked)
    state = train(kg, cfg)
    per_epoch = len(recomputed) // 2
    for epoch, trace in enumerate(state.loss_trace):
        part = recomputed[epoch * per_epoch:(epoch + 1) * per_epoch]
        for key in ("L_e", "L_c", "L_l"):
            assert trace[key] == pytest.approx(sum(p[key] for p in part), rel=1e-9, abs=1e-9)
        assert trace["total"] == pytest.approx(trace["L_e"] + trace["L_c"] + trace["L_l"])


def test_deterministic_single_thread(small_tree):
    cfg = TrainConfig(dim=5, epochs=3, seed=9)
    a = train(small_tree.kg, cfg)
    b = train(small_tree.kg, cfg)
    assert a.space.equals(b.space)
    assert a.loss_trace == b.loss_trace


def test_baseline_mode_does_not_move_spheres(small_tree):
    cfg = TrainConfig(dim=5, epochs=3, seed=2, mode="transe", lr=0.01)
    init = init_space(small_tree.kg.n_instances, small_tree.kg.n_concepts, small_tree.kg.n_relations, cfg,
                      derive_rng(2, "init"))
    state = train(small_tree.kg, cfg)
    assert np.array_equal(state.space.centers, init.centers)
    assert np.array_equal(state.space.radii, init.radii)
    assert not np.array_equal(state.space.instance_vecs, init.instance_vecs)
    # the isA hinges are still scored and reported
    assert all(e["L_e"] > 0 for e in state.loss_trace)


def test_transc_moves_spheres(small_tree):
    cfg = TrainConfig(dim=5, epochs=2, seed=2, lr=0.01)
    state = train(small_tree.kg, cfg)
    init = init_space(small_tree.kg.n_instances, small_tree.kg.n_concepts, small_tree.kg.n_relations, cfg,
                      derive_rng(2, "init"))
    assert not np.array_equal(state.space.radii, init.radii)


def test_parallel_training_runs_and_keeps_invariants(small_tree):
    state = train(small_tree.kg, TrainConfig(dim=5, epochs=3, seed=0, threads=3, batch_size=32))
    assert state.epoch == 3 and state.space.check_invariants()


def test_periodic_checkpoints(small_tree, tmp_path):
    train(small_tree.kg, TrainConfig(dim=4, epochs=4, checkpoint_every=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch-00002", "epoch-00004"]

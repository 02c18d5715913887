import math

import numpy as np
import pytest

from cognisnn import functional as F
from cognisnn.checkpoint import dumps
from cognisnn.data import EventTensorDataset, PerturbationSpec, SyntheticTaskSpec, generate_synthetic
from cognisnn.errors import ConfigError, DataEmpty, EmptySelection, ShapeMismatch
from cognisnn.graph import (
    DirectedAcyclicGraph,
    KeyPathwaySelection,
    NodeActivityMask,
    RandomGraphSpec,
    generate_graph,
    rank_pathways,
    select_key_pathways,
)
from cognisnn.network import ModelConfig, build_model
from cognisnn.tensor import Tape, Tensor, backward, no_grad
from cognisnn.training import (
    SGD,
    ContinualConfig,
    FreezeMask,
    MetricsLog,
    TrainConfig,
    evaluate,
    kp_lwf,
    lr_at,
    recalibrate_bn,
    sgd_momentum_step,
    train_dgl,
    train_standard,
)

TINY = ModelConfig(in_channels=2, input_size=8, channels=3, num_classes=2, seed=0)


def tiny_task(n_classes=2, spc=10, seed=0, timesteps=2, family="bar"):
    spec = SyntheticTaskSpec(class_count=n_classes, timesteps=timesteps, height=8, width=8,
                             samples_per_class=spc, seed=seed, family=family)
    return generate_synthetic(spec)


def const_grad_param(value=1.0, grad=1.0):
    p = Tensor(np.array([value]), requires_grad=True)
    p.grad = np.array([grad])
    return p


# optimiser and schedules ---------------------------------------------------


def test_sgd_without_momentum_is_plain_descent():
    p = const_grad_param(1.0, 2.0)
    state = {}
    for k in range(1, 4):
        sgd_momentum_step({"p": p}, state, lr=0.1, momentum=0.0)
        assert p.data[0] == pytest.approx(1.0 - 0.2 * k, abs=1e-15)


def test_sgd_momentum_two_steps():
    p = const_grad_param(0.0, 1.0)
    state = {}
    sgd_momentum_step({"p": p}, state, lr=0.5, momentum=0.9)
    sgd_momentum_step({"p": p}, state, lr=0.5, momentum=0.9)
    assert p.data[0] == pytest.approx(-0.5 * (1 + 1.9), abs=1e-15)


def test_sgd_frozen_and_shape_check():
    p = const_grad_param(3.0)
    before = p.data.copy()
    opt = SGD({"p": p}, frozen={"p"})
    for _ in range(5):
        opt.step(1.0)
    assert p.data.tobytes() == before.tobytes()
    q = Tensor(np.zeros(2), requires_grad=True)
    q.grad = np.zeros(3)
    with pytest.raises(ShapeMismatch):
        sgd_momentum_step({"q": q}, {}, 0.1)


def test_weight_decay_adds_to_gradient():
    p = const_grad_param(2.0, 0.0)
    sgd_momentum_step({"p": p}, {}, lr=0.1, momentum=0.0, weight_decay=0.5)
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 1.0)


def test_lr_schedules():
    cos = TrainConfig(lr=0.1, schedule="cosine", t_max=64)
    assert lr_at(cos, 0) == 0.1
    assert lr_at(cos, 64) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(cos, 32) == pytest.approx(0.05)
    step = TrainConfig(lr=0.1, schedule="step")
    assert lr_at(step, 63) == 0.1
    assert lr_at(step, 64) == pytest.approx(0.01)
    assert lr_at(step, 128) == pytest.approx(0.001)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(momentum=1.0), dict(schedule="linear"), dict(lr=-1)])
def test_train_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad).validate()


# standard and growth training ----------------------------------------------


def test_zero_lr_leaves_parameters_unchanged():
    train, test = tiny_task()
    dag = generate_graph(RandomGraphSpec("er", 5, seed=0))
    model = build_model(dag, TINY)
    before = {k: v.tobytes() for k, v in model.state_dict().items() if "running" not in k}
    log = train_standard(model, train, TrainConfig(epochs=2, lr=0.0, schedule="constant"), test)
    after = {k: v.tobytes() for k, v in model.state_dict().items() if "running" not in k}
    assert before == after
    accs = [r["accuracy"] for r in log.rows if r["split"] == "test"]
    assert accs[0] == accs[1]


def test_single_sample_is_memorised():
    train, _ = tiny_task(spc=1)
    one = train.subset([0])
    model = build_model(DirectedAcyclicGraph.from_edges([(0, 1), (1, 2)]), TINY)
    train_standard(model, one, TrainConfig(epochs=50, batch_size=1, lr=0.05, schedule="constant"))
    assert evaluate(model, one)[1] == 1.0


def test_training_rejects_empty_data():
    _, test = tiny_task(spc=5)
    model = build_model(DirectedAcyclicGraph.from_edges([(0, 1)]), TINY)
    with pytest.raises(DataEmpty):
        train_standard(model, test, TrainConfig())


def test_metrics_csv_schema():
    log = MetricsLog()
    log.add(1, "train", "single", 0.5, 0.75)
    assert log.to_csv() == "epoch,split,task,loss,accuracy\n1,train,single,0.50000000,0.750000\n"


def _trajectories(dag, train, timesteps_used=None):
    cfg = TrainConfig(epochs=2, lr=0.05, batch_size=4, seed=3)
    a, b = build_model(dag, TINY), build_model(dag, TINY)
    log_a = train_standard(a, train, cfg)
    log_b = train_dgl(b, train, cfg, rank_pathways(dag))
    return a, b, log_a, log_b


def test_dgl_with_one_timestep_matches_standard():
    train, _ = tiny_task(timesteps=1)
    dag = generate_graph(RandomGraphSpec("er", 6, seed=2))
    a, b, la, lb = _trajectories(dag, train)
    assert la.to_csv() == lb.to_csv()
    assert dumps(a.state_dict()) == dumps(b.state_dict())


def test_dgl_with_single_pathway_matches_standard():
    train, _ = tiny_task(timesteps=3)
    dag = DirectedAcyclicGraph.from_edges([(0, 1), (1, 2), (2, 3)])
    a, b, la, lb = _trajectories(dag, train)
    assert dumps(a.state_dict()) == dumps(b.state_dict())


def test_dgl_differs_when_graph_grows():
    train, _ = tiny_task(timesteps=4)
    dag = generate_graph(RandomGraphSpec("er", 7, seed=0))
    assert rank_pathways(dag).total >= 4
    a, b, la, lb = _trajectories(dag, train)
    assert dumps(a.state_dict()) != dumps(b.state_dict())


# evaluation -----------------------------------------------------------------


def test_evaluate_truncation_and_identity_perturbation():
    train, test = tiny_task(spc=20)
    model = build_model(generate_graph(RandomGraphSpec("er", 5, seed=1)), TINY)
    plain = evaluate(model, test)
    assert evaluate(model, test, timesteps=2) == plain
    assert evaluate(model, test, perturbation=PerturbationSpec("salt_pepper", 0)) == plain
    with pytest.raises(ConfigError):
        evaluate(model, test, timesteps=3)


def test_random_model_is_near_chance():
    rng = np.random.default_rng(0)
    x = (rng.random((400, 1, 2, 8, 8)) < 0.3).astype(np.uint8)
    y = rng.integers(0, 2, 400)
    model = build_model(DirectedAcyclicGraph.from_edges([(0, 1)]), TINY)
    acc = evaluate(model, EventTensorDataset(x, y, 2))[1]
    assert abs(acc - 0.5) <= 3 * math.sqrt(0.25 / 400) + 0.05


# continual learning -----------------------------------------------------------


def _continual_setup(seed=0):
    old_train, old_test = tiny_task(seed=seed)
    new_train, new_test = tiny_task(seed=seed + 1, family="checker")
    dag = generate_graph(RandomGraphSpec("er", 6, seed=seed))
    old = build_model(dag, TINY)
    train_standard(old, old_train, TrainConfig(epochs=1, lr=0.05))
    return old, dag, new_train, new_test, old_test


def test_freeze_mask_covers_every_parameter():
    old, dag, *_ = _continual_setup()
    old = old.clone()
    old.add_head("head_new", 2)
    sel = select_key_pathways(rank_pathways(dag), 1, "similar")
    mask = FreezeMask.from_selection(old, sel)
    assert set(mask.trainable) == set(old.named_parameters())
    trainable = {n for n, ok in mask.trainable.items() if ok}
    assert "head_new.weight" in trainable and "head.weight" not in trainable
    assert not any(n.startswith("stem.") for n in trainable)
    for v in dag.nodes:
        assert (f"node{v}.t1.conv.weight" in trainable) == (v in sel.trainable_nodes)


@pytest.mark.parametrize("scenario", ["similar", "dissimilar"])
def test_kp_lwf_freezes_exactly(scenario):
    old, dag, new_train, new_test, old_test = _continual_setup()
    sel = select_key_pathways(rank_pathways(dag), 1, scenario)
    cfg = TrainConfig(epochs=2, lr=0.05, batch_size=4)
    new, log = kp_lwf(old, new_train, ContinualConfig(), sel, cfg, new_test, old_test)
    mask = FreezeMask.from_selection(new, sel)
    before, after = old.state_dict(), new.state_dict()
    for name, ok in mask.trainable.items():
        if not ok:
            assert before[name].tobytes() == after[name].tobytes(), name
    frozen_nodes = set(dag.nodes) - sel.trainable_nodes
    for name, arr in old.named_buffers().items():
        node = name.split(".")[0]
        if node == "stem" or int(node[4:]) in frozen_nodes:
            assert arr.tobytes() == after[name].tobytes(), name
    assert any(before[n].tobytes() != after[n].tobytes() for n, ok in mask.trainable.items()
               if ok and not n.startswith("head_new"))
    tasks = {(r["split"], r["task"]) for r in log.rows}
    assert tasks == {("train", "new"), ("test", "new"), ("test", "old")}


def test_kp_lwf_without_distillation_is_fine_tuning():
    old, dag, new_train, *_ = _continual_setup()
    ranking = rank_pathways(dag)
    sel = select_key_pathways(ranking, ranking.total)
    cfg = TrainConfig(epochs=1, lr=0.05, batch_size=4, seed=2)
    new, _ = kp_lwf(old, new_train, ContinualConfig(lam=0.0, reg_coeff=0.0, bn_stats="batch"), sel, cfg)

    # independent fine-tuning loop: new head, frozen stem, plain cross-entropy
    ref = old.clone()
    ref.add_head("head_new", new_train.class_count, seed=cfg.seed + 104729)
    frozen = {n for n in ref.named_parameters() if n.startswith(("stem.", "head."))}
    opt = SGD(ref.named_parameters(), cfg.momentum, frozen=frozen)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(new_train))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        ref.train()
        ref.stem.training = False
        ref.zero_grad()
        with Tape() as tape:
            loss = F.softmax_cross_entropy(ref.forward_sequence(new_train.x[idx], head="head_new"), new_train.y[idx])
        backward(loss, tape)
        opt.step(cfg.lr)
    for name, arr in ref.state_dict().items():
        np.testing.assert_allclose(new.state_dict()[name], arr, rtol=1e-12, atol=1e-14, err_msg=name)


def test_kp_lwf_with_zero_lr_keeps_old_task_exactly():
    old, dag, new_train, _, old_test = _continual_setup()
    sel = select_key_pathways(rank_pathways(dag), 1, "dissimilar")
    cfg = TrainConfig(epochs=2, lr=0.0, batch_size=4, seed=1)
    new, _ = kp_lwf(old, new_train, ContinualConfig(), sel, cfg)
    before = old.state_dict()
    for name, arr in new.state_dict().items():
        if not name.startswith("head_new"):
            assert arr.tobytes() == before[name].tobytes(), name
    assert evaluate(new, old_test) == evaluate(old, old_test)
    # batch statistics move the shared running averages even without a step
    moved, _ = kp_lwf(old, new_train, ContinualConfig(bn_stats="batch"), sel, cfg)
    assert any(moved.state_dict()[n].tobytes() != before[n].tobytes() for n in before if "running" in n)


def test_lwf_anchor_does_not_increase_old_loss():
    old, dag, new_train, *_ = _continual_setup()
    batch = new_train.subset(np.arange(8))
    sel = select_key_pathways(rank_pathways(dag), 1, "similar")
    cfg = TrainConfig(epochs=5, lr=0.01, momentum=0.0, batch_size=8, schedule="constant")
    ccfg = ContinualConfig(lam=10.0, reg_coeff=0.0, new_weight=0.0)
    _, log = kp_lwf(old, batch, ccfg, sel, cfg)
    losses = [r["loss"] for r in log.rows if r["split"] == "train"]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_kp_lwf_rejects_empty_selection():
    old, dag, new_train, *_ = _continual_setup()
    empty = KeyPathwaySelection("similar", 1, (), NodeActivityMask(frozenset(), frozenset()))
    with pytest.raises(EmptySelection):
        kp_lwf(old, new_train, ContinualConfig(), empty, TrainConfig())


def test_recalibrate_bn_only_touches_running_statistics():
    train, _ = tiny_task(timesteps=1)
    dag = generate_graph(RandomGraphSpec("er", 6, seed=2))
    model = build_model(dag, TINY)
    params = {n: p.data.copy() for n, p in model.named_parameters().items()}
    for _, t in model.triplets():
        t.running_mean[...] = 7.0
    model.eval()
    recalibrate_bn(model, train, batch_size=len(train))
    first = dumps(model.state_dict())
    assert not model.training
    assert all(np.array_equal(p.data, params[n]) for n, p in model.named_parameters().items())
    # stale statistics are discarded, so a second pass reproduces the first
    recalibrate_bn(model, train, batch_size=len(train))
    assert dumps(model.state_dict()) == first

    # one batch and one timestep: the stored statistics are that batch's statistics
    ref = build_model(dag, TINY)
    ref.load_state_dict(model.state_dict())
    for _, t in ref.triplets():
        t.momentum = 1.0
    ref.train()
    ref.reset_state()
    with no_grad():
        ref.features_timestep(train.x[:, 0].astype(np.float64))
    for (_, a), (_, b) in zip(model.triplets(), ref.triplets()):
        np.testing.assert_allclose(a.running_mean, b.running_mean, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.running_var, b.running_var, rtol=1e-12, atol=1e-15)

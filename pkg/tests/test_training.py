"""Objectives, Adam, schedule, metrics (against brute-force references),
and the training loop."""

import math

import numpy as np
import pytest

from hctmg.autodiff import Tape, Tensor
from hctmg.data import SyntheticSpec, generate_synthetic
from hctmg.errors import ConfigError, DataWarning
from hctmg.model import HctConfig, init_hct, named_parameters
from hctmg.training import (AdamState, EvalReport, TrainConfig, adam_step,
                            clip_gradients, constant_median_mae, evaluate,
                            loss, lr_schedule, predict, train)


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


SHAPES = {"T": (6, 4), "A": (8, 3), "V": (7, 5)}


def tiny_config(**kw):
    base = dict(hidden=8, layers=1, heads=2,
                conv_kernels={"T": 1, "A": 1, "V": 1},
                input_dims={"T": 4, "A": 3, "V": 5},
                max_lengths={"T": 6, "A": 8, "V": 7},
                seed=5)
    base.update(kw)
    return HctConfig(**base)


class TestLoss:
    def test_zero_when_equal(self):
        pred = t64([1.0, -2.0, 0.5])
        assert loss(pred, np.array([1.0, -2.0, 0.5]), "regression").item() == 0.0

    def test_l1_arithmetic(self):
        pred = t64([1.0, 2.0])
        assert np.isclose(loss(pred, np.array([0.0, 0.0]), "regression").item(), 1.5)

    def test_bce_ln2_at_zero_logit(self):
        pred = t64([[0.0]])
        got = loss(pred, np.array([[1.0]]), "multilabel").item()
        assert np.isclose(got, math.log(2.0), atol=1e-12)

    def test_out_of_range_label_warns(self):
        with pytest.warns(DataWarning):
            loss(t64([0.0]), np.array([4.0]), "regression")

    def test_l2_option(self):
        got = loss(t64([2.0]), np.array([0.0]), "regression", kind="l2").item()
        assert np.isclose(got, 4.0)

    def test_gradient_flows(self):
        pred = t64([0.3, -0.7], grad=True)
        with Tape() as tape:
            tape.backward(loss(pred, np.array([1.0, 1.0]), "regression"))
        assert np.allclose(pred.grad, [-0.5, -0.5])


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = t64([1.0, 2.0], grad=True)
        p.grad = np.zeros(2)
        state = AdamState()
        adam_step([("p", p)], state, lr=0.1)
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_first_step_hand_oracle(self):
        # one step: m=(1-b1)g, v=(1-b2)g^2; bias correction makes the
        # update exactly lr * g/|g| (up to eps)
        g = np.array([0.25, -3.0])
        p = t64([0.0, 0.0], grad=True)
        p.grad = g.copy()
        adam_step([("p", p)], AdamState(), lr=1e-3)
        expect = -1e-3 * g / (np.abs(g) + 1e-8 * math.sqrt(1 - 0.999))
        assert np.allclose(p.data, expect, atol=1e-6)
        assert np.allclose(np.abs(p.data), 1e-3, atol=1e-6)

    def test_two_steps_match_scalar_reference(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
        grads = [0.7, -0.2]
        # independent scalar implementation
        m = v = 0.0
        x_ref = 0.5
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            x_ref -= lr * mhat / (math.sqrt(vhat) + eps)

        p = t64([0.5], grad=True)
        state = AdamState()
        for g in grads:
            p.grad = np.array([g])
            adam_step([("p", p)], state, lr=lr)
        assert np.allclose(p.data, [x_ref], atol=1e-10)

    def test_clip_scales_to_max_norm(self):
        a = t64([3.0], grad=True)
        b = t64([4.0], grad=True)
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        norm = clip_gradients([("a", a), ("b", b)], max_norm=1.0)
        assert np.isclose(norm, 5.0)
        total = math.sqrt(float(a.grad ** 2 + b.grad ** 2))
        assert np.isclose(total, 1.0)

    def test_clip_leaves_small_gradients(self):
        a = t64([0.1], grad=True)
        a.grad = np.array([0.1])
        clip_gradients([("a", a)], max_norm=1.0)
        assert np.isclose(a.grad[0], 0.1)


class TestSchedule:
    def test_before_decay(self):
        cfg = TrainConfig(learning_rate=1e-3, decay_epoch=20)
        assert lr_schedule(19, cfg) == 1e-3

    def test_at_decay(self):
        cfg = TrainConfig(learning_rate=1e-3, decay_epoch=20, decay_factor=0.1)
        assert np.isclose(lr_schedule(20, cfg), 1e-4)

    def test_no_repeated_decay(self):
        cfg = TrainConfig(learning_rate=1e-3, decay_epoch=20, decay_factor=0.1)
        assert np.isclose(lr_schedule(25, cfg), 1e-4)
        assert np.isclose(lr_schedule(29, cfg), 1e-4)


def metrics_oracle(preds, labels):
    """Brute-force loop reference for the regression metric suite."""
    n = len(preds)
    acc7_hits = 0
    for p, y in zip(preds, labels):
        rp = round(min(max(float(p), -3.0), 3.0))
        ry = round(min(max(float(y), -3.0), 3.0))
        acc7_hits += rp == ry
    nz = [(p, y) for p, y in zip(preds, labels) if y != 0]
    acc2_hits = sum((p > 0) == (y > 0) for p, y in nz)
    tp = sum(p > 0 and y > 0 for p, y in nz)
    fp = sum(p > 0 and y <= 0 for p, y in nz)
    fn = sum(p <= 0 and y > 0 for p, y in nz)
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
    mae = sum(abs(p - y) for p, y in zip(preds, labels)) / n
    mp = sum(preds) / n
    my = sum(labels) / n
    cov = sum((p - mp) * (y - my) for p, y in zip(preds, labels))
    vp = sum((p - mp) ** 2 for p in preds)
    vy = sum((y - my) ** 2 for y in labels)
    corr = cov / math.sqrt(vp * vy) if vp > 0 and vy > 0 else 0.0
    return {"acc7": acc7_hits / n, "acc2": acc2_hits / len(nz) if nz else 0.0,
            "f1": f1, "mae": mae, "corr": corr}


class TestEvaluate:
    def test_identity_predictions(self):
        labels = np.array([1.0, -2.0, 0.5, 2.5])
        rep = evaluate(labels, labels, "regression")
        assert rep.acc7 == 1.0 and rep.acc2 == 1.0 and rep.f1 == 1.0
        assert rep.mae == 0.0 and np.isclose(rep.corr, 1.0)

    def test_sign_match(self):
        rep = evaluate(np.array([1.2, -0.5]), np.array([0.8, -1.0]), "regression")
        assert rep.acc2 == 1.0

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            n = int(rng.integers(5, 60))
            preds = rng.uniform(-4, 4, n)
            labels = rng.uniform(-4, 4, n)
            labels[rng.random(n) < 0.1] = 0.0
            rep = evaluate(preds, labels, "regression")
            want = metrics_oracle(list(preds), list(labels))
            for key, val in want.items():
                assert abs(getattr(rep, key) - val) < 1e-9, key

    def test_acc7_self_consistency(self):
        rng = np.random.default_rng(3)
        labels = rng.uniform(-3.5, 3.5, 100)
        rep = evaluate(labels, labels, "regression")
        assert rep.acc7 == 1.0

    def test_corr_affine_invariance(self):
        rng = np.random.default_rng(4)
        preds = rng.standard_normal(50)
        labels = rng.standard_normal(50)
        base = evaluate(preds, labels, "regression").corr
        scaled = evaluate(2.5 * preds + 1.0, labels, "regression").corr
        assert abs(base - scaled) < 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        preds = rng.standard_normal(40)
        labels = rng.standard_normal(40)
        perm = rng.permutation(40)
        a = evaluate(preds, labels, "regression")
        b = evaluate(preds[perm], labels[perm], "regression")
        for key in ("acc7", "acc2", "f1", "mae", "corr"):
            assert abs(getattr(a, key) - getattr(b, key)) < 1e-12

    def test_degenerate_corr_flagged(self):
        rep = evaluate(np.array([1.0, 1.0]), np.array([0.5, -0.5]), "regression")
        assert rep.corr == 0.0 and rep.corr_degenerate

    def test_multilabel_per_class(self):
        logits = np.array([[3.0, -3.0], [3.0, 3.0], [-3.0, -3.0]])
        labels = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
        rep = evaluate(logits, labels, "multilabel")
        assert rep.per_class_acc == [pytest.approx(2 / 3), pytest.approx(1.0)]
        assert len(rep.per_class_f1) == 2

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            evaluate(np.array([]), np.array([]), "regression")


class TestTrainLoop:
    @pytest.fixture
    def dataset(self):
        return generate_synthetic(SyntheticSpec(
            n=60, shapes=SHAPES, planted_primary="T", signal_fraction=0.9,
            noise_sigma=0.1, seed=21))

    def test_loss_decreases_after_training(self, dataset):
        params = init_hct(tiny_config())
        cfg = TrainConfig(learning_rate=1e-3, batch_size=20, epochs=4,
                          seed=2, eval_every=0)
        result = train(params, dataset, cfg)
        assert result.loss_curve[-1] < result.loss_curve[0]

    def test_gate_history_bookkeeping(self, dataset):
        params = init_hct(tiny_config())
        cfg = TrainConfig(batch_size=20, epochs=3, seed=2, eval_every=0)
        train(params, dataset, cfg)
        if not params.gate.frozen:
            assert len(params.gate.history) == 3 * 3  # epochs x batches

    def test_pinned_run_has_no_gate_history(self, dataset):
        params = init_hct(tiny_config())
        cfg = TrainConfig(batch_size=20, epochs=2, seed=2, pin_primary="T",
                          eval_every=0)
        train(params, dataset, cfg)
        assert params.gate.history == []
        assert np.array_equal(params.gate.logits.data, np.zeros(3))

    def test_bit_reproducible_double_precision(self, dataset):
        cfg = TrainConfig(batch_size=20, epochs=2, seed=9, precision="double",
                          eval_every=0)
        runs = []
        for _ in range(2):
            params = init_hct(tiny_config(), dtype=np.float64)
            train(params, dataset, cfg)
            runs.append({n: p.data.copy() for n, p in named_parameters(params)})
        for name in runs[0]:
            assert np.array_equal(runs[0][name], runs[1][name]), name

    def test_seed_changes_trajectory(self, dataset):
        outs = []
        for seed in (0, 1):
            params = init_hct(tiny_config())
            cfg = TrainConfig(batch_size=20, epochs=2, seed=seed, eval_every=0)
            outs.append(train(params, dataset, cfg).loss_curve[-1])
        assert outs[0] != outs[1]

    def test_log_has_gate_columns(self, dataset):
        params = init_hct(tiny_config())
        cfg = TrainConfig(batch_size=20, epochs=2, seed=2)
        result = train(params, dataset, cfg)
        assert {"epoch", "train_loss", "lr", "w_T", "w_A", "w_V",
                "frozen"} <= set(result.log[0])
        assert "val_mae" in result.log[0]

    def test_median_baseline_helper(self):
        train_labels = np.array([0.0, 0.0, 2.0])
        test_labels = np.array([1.0, -1.0])
        assert constant_median_mae(train_labels, test_labels) == 1.0

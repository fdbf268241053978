import math

import numpy as np
import pytest

from gulfopt.data import SyntheticSpec, gen_synthetic
from gulfopt.exceptions import ConfigurationError, InvalidParameterError
from gulfopt.funcspace import TabularFunction, loss_generator_for, tabular_mirror_descent
from gulfopt.losses import cross_entropy, onehot_rows
from gulfopt.models import MlpArchitecture, MlpModel, backward, forward, init_random
from gulfopt.numerics import RngStream, softmax_rows
from gulfopt.trainers import (
    GulfConfig,
    SgdConfig,
    _stage_stream,
    base_loop,
    freeze,
    gulf_stage,
    gulf_train,
    make_gulf1_gradient,
    make_gulf2_gradient,
    make_label_smoothing_gradient,
    make_regular_gradient,
    prop22_grad_identity_check,
    resolve_initial_model,
    sgd_run,
    train_base_lambda_alpha,
    train_label_smoothing,
    train_regular,
)

CE2 = cross_entropy(2)
CE3 = cross_entropy(3)


def small_data(seed=5, noise=0.0, per_class=150, dim=6, sep=4.0):
    spec = SyntheticSpec("gaussian-blobs", 2, per_class, dim, sep, noise, seed=seed)
    return gen_synthetic(spec)


def small_cfg(seed=1, **kw):
    defaults = dict(lr=0.1, momentum=0.9, weight_decay=1e-3, batch_size=64,
                    schedule=((8, 1.0), (2, 0.1), (2, 0.01)), seed=seed)
    defaults.update(kw)
    return SgdConfig(**defaults)


class TestSgdRun:
    def test_zero_gradient_leaves_theta(self):
        arch = MlpArchitecture(3, (), 2, "relu")
        model = init_random(arch, RngStream(0))
        cfg = small_cfg(weight_decay=0.0)
        out = sgd_run(model, 50, lambda m, idx: np.zeros(arch.param_count), cfg, RngStream(0).child(9))
        assert np.array_equal(out.theta, model.theta)

    def test_scalar_quadratic_converges(self):
        arch = MlpArchitecture(1, (), 1, "relu")
        target = 2.5
        model = MlpModel(arch, np.zeros(2))
        cfg = SgdConfig(lr=0.1, momentum=0.0, weight_decay=0.0, batch_size=10,
                        schedule=((300, 1.0),), seed=0)

        def grad_fn(m, idx):
            g = np.zeros(2)
            g[0] = m.theta[0] - target
            return g

        out = sgd_run(model, 10, grad_fn, cfg, RngStream(1).child(2))
        assert abs(out.theta[0] - target) < 1e-6

    def test_bitwise_determinism(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=3)
        a = train_regular(train, arch, CE2, cfg)
        b = train_regular(train, arch, CE2, cfg)
        assert np.array_equal(a.theta, b.theta)

    def test_schedule_validation(self):
        with pytest.raises(InvalidParameterError):
            SgdConfig(lr=0.1, schedule=())
        with pytest.raises(InvalidParameterError):
            SgdConfig(lr=0.1, schedule=((5, 0.1), (5, 1.0)))


class TestTrainRegular:
    def test_separable_blobs_reach_zero_error(self):
        train, _ = small_data(sep=6.0)
        arch = MlpArchitecture(6, (8,), 2, "relu")
        model = train_regular(train, arch, CE2, small_cfg())
        pred = np.argmax(forward(model, train.X), axis=1)
        assert np.mean(pred != train.y) == 0.0

    def test_huge_weight_decay_collapses(self):
        # lr is scaled so lr * lambda stays below 1 (a stable decay factor).
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(weight_decay=1e3, lr=5e-4, momentum=0.0)
        model = train_regular(train, arch, CE2, cfg)
        assert float(model.theta @ model.theta) < 1e-6
        losses = CE2.value_rows(forward(model, train.X), train.y)
        assert abs(losses.mean() - math.log(2.0)) < 1e-3


class TestBaseLoop:
    def test_single_round_equals_regular_bitwise(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=4)
        regular = train_regular(train, arch, CE2, cfg)
        looped = base_loop(train, init_random(arch, RngStream(cfg.seed)), CE2, cfg, 1)
        assert np.array_equal(looped[0].theta, regular.theta)

    def test_emits_requested_checkpoints(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (), 2, "relu")
        ckpts = base_loop(train, init_random(arch, RngStream(1)), CE2, small_cfg(), 3)
        assert len(ckpts) == 3

    def test_equivalent_to_full_step_guided_loop(self):
        # With full step size the guide mixture collapses to the labels and
        # the update sequence is bitwise the warm-restart loop.
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=6)
        loop_ckpts = base_loop(train, init_random(arch, RngStream(cfg.seed)), CE2, cfg, 3)
        gulf_ckpts = gulf_train(
            train, CE2, arch,
            GulfConfig(alpha=1.0, stages=3, generator="loss", init="random", sgd=cfg),
        )
        for a, b in zip(loop_ckpts, gulf_ckpts):
            assert np.array_equal(a.theta, b.theta)

    def test_full_step_gradients_identical(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        model = init_random(arch, RngStream(8))
        regular = make_regular_gradient(train, CE2)
        full_step = make_gulf2_gradient(train, CE2, freeze(model), 1.0)
        gen = RngStream(9).generator()
        for _ in range(20):
            idx = gen.choice(train.n, size=32, replace=False)
            theta = model.theta + 0.1 * gen.standard_normal(arch.param_count)
            probe = MlpModel(arch, theta)
            assert np.array_equal(regular(probe, idx), full_step(probe, idx))


class TestBaseLambdaAlpha:
    def test_alpha_one_is_identity(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=10)
        a = train_regular(train, arch, CE2, cfg)
        b = train_base_lambda_alpha(train, arch, CE2, cfg, 1.0)
        assert np.array_equal(a.theta, b.theta)

    def test_small_alpha_underfits_with_smaller_norm(self):
        train, _ = small_data(noise=0.05)
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=11, weight_decay=2e-3)
        regular = train_regular(train, arch, CE2, cfg)
        tightened = train_base_lambda_alpha(train, arch, CE2, cfg, 0.01)
        reg_loss = CE2.value_rows(forward(regular, train.X), train.y).mean()
        tight_loss = CE2.value_rows(forward(tightened, train.X), train.y).mean()
        assert tight_loss > reg_loss
        assert float(tightened.theta @ tightened.theta) < float(regular.theta @ regular.theta)

    def test_alpha_range(self):
        train, _ = small_data()
        with pytest.raises(InvalidParameterError):
            train_base_lambda_alpha(train, MlpArchitecture(6, (), 2, "relu"), CE2, small_cfg(), 0.0)


class TestLabelSmoothing:
    def test_zero_epsilon_gradient_matches_regular(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        model = init_random(arch, RngStream(12))
        smooth = make_label_smoothing_gradient(train, 2, 0.0)
        regular = make_regular_gradient(train, CE2)
        idx = np.arange(32)
        assert np.array_equal(smooth(model, idx), regular(model, idx))

    def test_soft_target_mass(self):
        # epsilon 0.1 with 10 classes: each wrong class carries 0.1/9.
        hot = onehot_rows(np.array([3]), 10)
        eps = 0.1
        soft = (1 - eps) * hot + (eps / 9) * (1 - hot)
        assert abs(soft.sum() - 1.0) < 1e-12
        assert abs(soft[0, 0] - eps / 9) < 1e-15
        assert abs(soft[0, 3] - 0.9) < 1e-15

    def test_epsilon_range(self):
        train, _ = small_data()
        with pytest.raises(InvalidParameterError):
            train_label_smoothing(train, MlpArchitecture(6, (), 2, "relu"), small_cfg(), 1.0)

    def test_training_runs(self):
        train, _ = small_data(sep=6.0)
        model = train_label_smoothing(train, MlpArchitecture(6, (8,), 2, "relu"), small_cfg(), 0.1)
        pred = np.argmax(forward(model, train.X), axis=1)
        assert np.mean(pred != train.y) < 0.05


class TestGulfStage:
    def test_gulf1_first_gradient_is_scaled_loss_gradient(self):
        # At the warm start the squared-fit gradient to a one-step guide is
        # exactly alpha times the mean loss gradient.
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        model = init_random(arch, RngStream(13))
        alpha = 0.05
        g1 = make_gulf1_gradient(train, CE2, freeze(model), alpha, 1)
        idx = np.arange(48)
        got = g1(model, idx)
        d = CE2.grad_rows(forward(model, train.X[idx]), train.y[idx]) / len(idx)
        expected = alpha * backward(model, train.X[idx], d)
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_gulf1_guide_matches_rowwise_recursion(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (4,), 2, "relu")
        frozen = freeze(init_random(arch, RngStream(14)))
        idx = np.arange(8)
        f_t = forward(frozen.model, train.X[idx])
        target = f_t.copy()
        for _ in range(3):
            target = target - 0.2 * CE2.grad_rows(target, train.y[idx])
        from gulfopt.losses import guide_step_l2

        for i, row in enumerate(idx):
            explicit = guide_step_l2(f_t[i], int(train.y[row]), CE2, 0.2, 3).values
            assert np.array_equal(target[i], explicit)

    def test_gulf2_mixture_is_valid_probability(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        frozen = freeze(init_random(arch, RngStream(15)))
        g2 = make_gulf2_gradient(train, CE2, frozen, 0.3)
        model = init_random(arch, RngStream(16))
        gen = RngStream(17).generator()
        for _ in range(10):
            idx = gen.choice(train.n, size=32, replace=False)
            g2(model, idx)  # raises if any batch mixture is invalid
        p_t = softmax_rows(forward(frozen.model, train.X))
        hot = onehot_rows(train.y, 2)
        mix = hot + 0.7 * (p_t - hot)
        assert np.max(np.abs(mix.sum(axis=1) - 1.0)) < 1e-12
        assert mix.min() >= 0.0 and mix.max() <= 1.0

    def test_alpha_range(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (), 2, "relu")
        model = init_random(arch, RngStream(18))
        with pytest.raises(InvalidParameterError):
            gulf_stage(model, train, CE2, "loss", 0.0, 1, small_cfg(), RngStream(0))


class TestProp22Identity:
    def test_random_tuples(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        root = RngStream(19)
        for i in range(20):
            model = init_random(arch, root.child(2 * i))
            frozen = init_random(arch, root.child(2 * i + 1))
            gen = root.child(1000 + i).generator()
            idx = gen.choice(train.n, size=16, replace=False)
            alpha = float(gen.uniform(0.01, 1.0))
            rep = prop22_grad_identity_check(model, frozen, train, idx, alpha, CE2)
            assert rep.passed and rep.max_deviation < 1e-10

    def test_full_step_collapse(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (4,), 2, "relu")
        model = init_random(arch, RngStream(20))
        rep = prop22_grad_identity_check(model, model, train, np.arange(16), 1.0, CE2)
        assert rep.max_deviation < 1e-12


class TestStepEquivalenceAcrossM:
    def test_m_step_guide_gradient_matches_effective_alpha(self):
        # The divergence-to-the-m-step-guide gradient equals the single-step
        # objective gradient at effective step 1 - (1-gamma)^m.
        train, _ = small_data(per_class=30)
        arch = MlpArchitecture(6, (6,), 2, "relu")
        frozen = freeze(init_random(arch, RngStream(21)))
        model = init_random(arch, RngStream(22))
        idx = np.arange(20)
        gamma, m = 0.3, 3
        f_t = forward(frozen.model, train.X[idx])
        table = TabularFunction(f_t - f_t.mean(axis=1, keepdims=True))
        fm = tabular_mirror_descent(table, train.y[idx], loss_generator_for(CE2), CE2, gamma, m)
        # d/df of D_{L_y}(f, f*_m) backpropagated
        d = (CE2.grad_rows(forward(model, train.X[idx]), train.y[idx])
             - CE2.grad_rows(fm.values, train.y[idx])) / len(idx)
        g_mstep = backward(model, train.X[idx], d)
        effective = 1.0 - (1.0 - gamma) ** m
        g_single = make_gulf2_gradient(train, CE2, frozen, effective)(model, idx)
        assert np.max(np.abs(g_mstep - g_single)) < 1e-8


class TestGulfTrain:
    def test_random_init_matches_seed(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (8,), 2, "relu")
        cfg = small_cfg(seed=23)
        gulf = GulfConfig(alpha=0.3, stages=1, generator="loss", init="random", sgd=cfg)
        theta0 = resolve_initial_model(gulf, arch, None)
        assert np.array_equal(theta0.theta, init_random(arch, RngStream(23)).theta)

    def test_checkpoint_count(self):
        train, _ = small_data(per_class=40)
        arch = MlpArchitecture(6, (4,), 2, "relu")
        cfg = small_cfg(schedule=((2, 1.0),))
        ckpts = gulf_train(train, CE2, arch, GulfConfig(alpha=0.3, stages=4, generator="loss", init="random", sgd=cfg))
        assert len(ckpts) == 4

    def test_base_required(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (), 2, "relu")
        cfg = small_cfg()
        with pytest.raises(ConfigurationError):
            gulf_train(train, CE2, arch, GulfConfig(alpha=0.3, stages=1, generator="loss", init="base", sgd=cfg))

    def test_shrunk_init(self):
        train, _ = small_data()
        arch = MlpArchitecture(6, (4,), 2, "relu")
        base = init_random(arch, RngStream(24))
        gulf = GulfConfig(alpha=0.3, stages=1, generator="loss", init="base_over_v", v=2.0, sgd=small_cfg())
        theta0 = resolve_initial_model(gulf, arch, base)
        assert np.array_equal(forward(theta0, train.X[:4]), forward(base, train.X[:4]) / 2.0)

    def test_warm_start_contract(self):
        # A zero-epoch schedule makes every stage a no-op: each checkpoint
        # must equal the warm start bitwise.
        train, _ = small_data()
        arch = MlpArchitecture(6, (4,), 2, "relu")
        cfg = small_cfg(schedule=((0, 1.0),))
        base = init_random(arch, RngStream(25))
        ckpts = gulf_train(train, CE2, arch,
                           GulfConfig(alpha=0.3, stages=3, generator="loss", init="base", sgd=cfg), base=base)
        for c in ckpts:
            assert np.array_equal(c.theta, base.theta)

    def test_stage_stream_derivation(self):
        a = _stage_stream(7, 0)
        b = _stage_stream(7, 1)
        assert a != b
        assert a == _stage_stream(7, 0)

import math

import numpy as np
import pytest

from gulfopt.exceptions import (
    InvalidDimensionError,
    InvalidLabelError,
    InvalidParameterError,
    UnsupportedOperationError,
)
from gulfopt.losses import (
    bregman,
    cross_entropy,
    guide_step_l2,
    guide_step_loss_generator,
    guide_step_mirror_exact,
    half_squared_norm,
    loss_generator,
    loss_grad,
    loss_hessian,
    loss_value,
    onehot,
    squared,
    squared_hinge,
    zero_mean,
)
from gulfopt.numerics import RngStream, finite_diff_grad, stable_softmax


class TestLossValues:
    def test_cross_entropy_uniform(self):
        ce = cross_entropy(2)
        assert abs(loss_value(ce, [0.0, 0.0], 0) - math.log(2.0)) < 1e-15

    def test_squared_hinge_at_zero_margin(self):
        sh = squared_hinge()
        assert loss_value(sh, [0.0], 1) == 1.0

    def test_squared_at_target(self):
        sq = squared(3)
        assert loss_value(sq, onehot(1, 3), 1) == 0.0

    def test_nonnegative(self):
        gen = RngStream(2).generator()
        for loss, dim in ((cross_entropy(3), 3), (squared(3), 3), (squared_hinge(), 1)):
            for _ in range(50):
                u = gen.standard_normal(dim) * 3
                y = 1 if loss.kind == "squared_hinge" else int(gen.integers(3))
                assert loss_value(loss, u, y) >= 0.0

    def test_label_out_of_range(self):
        with pytest.raises(InvalidLabelError):
            loss_value(cross_entropy(3), [0.0, 0.0, 0.0], 3)
        with pytest.raises(InvalidLabelError):
            loss_value(squared_hinge(), [0.0], 0)


class TestLossGradients:
    def test_cross_entropy_uniform(self):
        g = loss_grad(cross_entropy(2), [0.0, 0.0], 0)
        assert np.array_equal(g, [-0.5, 0.5])

    def test_squared_hinge_derived_from_value(self):
        sh = squared_hinge()
        fd = finite_diff_grad(lambda u: sh.value(u, 1), np.array([0.0]), 1e-5)
        g = loss_grad(sh, [0.0], 1)
        assert abs(g[0] - (-2.0)) < 1e-15
        assert abs(g[0] - fd[0]) < 1e-7

    def test_matches_finite_differences(self):
        gen = RngStream(5).generator()
        for loss, dim in ((cross_entropy(4), 4), (squared(4), 4), (squared_hinge(), 1)):
            for _ in range(20):
                u = gen.standard_normal(dim) * 2
                if loss.kind == "squared_hinge":
                    y = 1 if gen.uniform() < 0.5 else -1
                    if abs(1.0 - y * u[0]) < 1e-3:
                        u[0] += 0.01
                else:
                    y = int(gen.integers(4))
                fd = finite_diff_grad(lambda x: loss.value(x, y), u, 1e-5)
                assert np.max(np.abs(fd - loss.grad(u, y))) < 1e-7

    def test_gradient_label_condition_exact(self):
        # grad(u, y1) - grad(u, y2) == y2 - y1: the prediction term cancels.
        # Bitwise for cross-entropy (probabilities sit in [0, 1]); within one
        # ulp for squared loss, whose prediction term is unbounded.
        gen = RngStream(6).generator()
        for loss in (cross_entropy(4), squared(4)):
            for _ in range(100):
                u = gen.standard_normal(4) * 3
                y1, y2 = int(gen.integers(4)), int(gen.integers(4))
                lhs = loss.grad(u, y1) - loss.grad(u, y2)
                rhs = onehot(y2, 4) - onehot(y1, 4)
                if loss.kind == "cross_entropy":
                    assert np.array_equal(lhs, rhs)
                else:
                    assert np.max(np.abs(lhs - rhs)) <= 1e-15


class TestLossHessians:
    def test_squared_identity(self):
        assert np.array_equal(loss_hessian(squared(3), [1.0, 2.0, 3.0]), np.eye(3))

    def test_cross_entropy_uniform_frozen(self):
        h = loss_hessian(cross_entropy(2), [0.0, 0.0])
        expected = np.array([[0.25, -0.25], [-0.25, 0.25]])
        assert np.max(np.abs(h - expected)) < 1e-15

    def test_cross_entropy_matches_grad_differences(self):
        ce = cross_entropy(3)
        gen = RngStream(7).generator()
        u = gen.standard_normal(3)
        eps = 1e-6
        h = loss_hessian(ce, u)
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            col = (ce.grad(u + e, 0) - ce.grad(u - e, 0)) / (2 * eps)
            assert np.max(np.abs(col - h[:, j])) < 1e-7

    def test_cross_entropy_rows_annihilate_ones(self):
        gen = RngStream(8).generator()
        for _ in range(20):
            h = loss_hessian(cross_entropy(5), gen.standard_normal(5) * 3)
            assert np.max(np.abs(h.sum(axis=1))) < 1e-12

    def test_squared_hinge_refused(self):
        with pytest.raises(UnsupportedOperationError):
            loss_hessian(squared_hinge(), [0.5], 1)


class TestBregman:
    def test_half_squared_norm_closed_form(self):
        assert bregman(half_squared_norm(), [1.0, 2.0], [0.0, 0.0]) == 2.5

    def test_zero_at_equal_points(self):
        gen = RngStream(9).generator()
        ce = cross_entropy(3)
        for _ in range(50):
            u = gen.standard_normal(3) * 3
            assert abs(bregman(half_squared_norm(), u, u)) < 1e-12
            assert abs(bregman(loss_generator(ce, 1), u, u)) < 1e-12

    def test_quadratic_generator_is_half_squared_distance(self):
        gen = RngStream(10).generator()
        h = half_squared_norm()
        for _ in range(200):
            u, v = gen.standard_normal(4) * 3, gen.standard_normal(4) * 3
            d = u - v
            assert abs(bregman(h, u, v) - 0.5 * float(d @ d)) < 1e-12

    def test_cross_entropy_generator_matches_independent_evaluation(self):
        # Independent route: plain-python logsumexp/softmax with fsum.
        def oracle(u, v, y):
            def lse(w):
                m = max(float(x) for x in w)
                return m + math.log(math.fsum(math.exp(float(x) - m) for x in w))

            mx = max(float(x) for x in v)
            ev = [math.exp(float(x) - mx) for x in v]
            s = math.fsum(ev)
            grad = [e / s for e in ev]
            grad[y] -= 1.0
            val_u = lse(u) - float(u[y])
            val_v = lse(v) - float(v[y])
            return val_u - val_v - math.fsum(g * (a - b) for g, a, b in zip(grad, u, v))

        ce = cross_entropy(4)
        gen = RngStream(11).generator()
        for _ in range(100):
            u, v = gen.standard_normal(4) * 3, gen.standard_normal(4) * 3
            y = int(gen.integers(4))
            assert abs(bregman(loss_generator(ce, y), u, v) - oracle(u, v, y)) < 1e-10

    def test_non_negativity(self):
        gen = RngStream(12).generator()
        ce = cross_entropy(4)
        sq = squared(4)
        for _ in range(1000):
            u, v = gen.standard_normal(4) * 3, gen.standard_normal(4) * 3
            y = int(gen.integers(4))
            assert bregman(half_squared_norm(), u, v) >= -1e-12
            assert bregman(loss_generator(ce, y), u, v) >= -1e-12
            assert bregman(loss_generator(sq, y), u, v) >= -1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidDimensionError):
            bregman(half_squared_norm(), [1.0, 2.0], [1.0])


class TestGuideStepL2:
    def test_single_step_from_uniform(self):
        t = guide_step_l2([0.0, 0.0], 0, cross_entropy(2), 0.3, 1)
        assert t.kind == "logits"
        assert np.array_equal(t.values, [0.15, -0.15])

    def test_zero_step(self):
        f = np.array([0.4, -1.0])
        t = guide_step_l2(f, 0, cross_entropy(2), 0.0, 3)
        assert np.array_equal(t.values, f)

    def test_recursion_identity(self):
        ce = cross_entropy(3)
        gen = RngStream(13).generator()
        f = gen.standard_normal(3)
        chained = f
        for _ in range(3):
            chained = guide_step_l2(chained, 1, ce, 0.25, 1).values
        assert np.array_equal(guide_step_l2(f, 1, ce, 0.25, 3).values, chained)

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidParameterError):
            guide_step_l2([0.0, 0.0], 0, cross_entropy(2), -0.1, 1)


class TestGuideStepLossGenerator:
    def test_full_step_reaches_label(self):
        t = guide_step_loss_generator([0.7, -0.2, 1.4], 2, cross_entropy(3), 1.0, 4)
        assert np.array_equal(t.values, onehot(2, 3))

    def test_two_step_value_and_mirror_cross_check(self):
        ce = cross_entropy(2)
        t = guide_step_loss_generator([0.0, 0.0], 0, ce, 0.3, 2)
        # Frozen expectation: start p = (0.5, 0.5); contraction 0.7^2 = 0.49
        # gives (1 - 0.49*0.5, 0.49*0.5) = (0.755, 0.245).
        assert np.max(np.abs(t.values - [0.755, 0.245])) < 1e-15
        # Cross-check: two chained exact mirror steps under h = L_y.
        q = np.array([0.0, 0.0])
        h = loss_generator(ce, 0)
        for _ in range(2):
            q = guide_step_mirror_exact(h, q, 0, ce, 0.3)
        assert np.max(np.abs(stable_softmax(q) - t.values)) < 1e-8

    def test_single_step_is_distillation_mixture(self):
        ce = cross_entropy(4)
        gen = RngStream(14).generator()
        for _ in range(20):
            f = gen.standard_normal(4) * 2
            y = int(gen.integers(4))
            alpha = float(gen.uniform(0.05, 1.0))
            t = guide_step_loss_generator(f, y, ce, alpha, 1)
            mix = (1.0 - alpha) * stable_softmax(f) + alpha * onehot(y, 4)
            assert np.max(np.abs(t.values - mix)) < 1e-15

    def test_probability_validity(self):
        gen = RngStream(15).generator()
        ce = cross_entropy(5)
        for _ in range(200):
            t = guide_step_loss_generator(
                gen.standard_normal(5) * 3, int(gen.integers(5)), ce,
                float(gen.uniform(0.05, 1.0)), int(gen.integers(1, 6)),
            )
            assert abs(t.values.sum() - 1.0) < 1e-12
            assert t.values.min() >= 0.0 and t.values.max() <= 1.0

    def test_gamma_range(self):
        with pytest.raises(InvalidParameterError):
            guide_step_loss_generator([0.0, 0.0], 0, cross_entropy(2), 0.0, 1)
        with pytest.raises(InvalidParameterError):
            guide_step_loss_generator([0.0, 0.0], 0, cross_entropy(2), 1.5, 1)

    def test_requires_cross_entropy(self):
        with pytest.raises(UnsupportedOperationError):
            guide_step_loss_generator([0.0, 0.0], 0, squared(2), 0.3, 1)


class TestGuideStepMirrorExact:
    def test_quadratic_generator_matches_closed_form(self):
        ce = cross_entropy(3)
        gen = RngStream(16).generator()
        for _ in range(20):
            f = gen.standard_normal(3) * 2
            y = int(gen.integers(3))
            alpha = float(gen.uniform(0.05, 0.9))
            q = guide_step_mirror_exact(half_squared_norm(), f, y, ce, alpha)
            assert np.max(np.abs(q - (f - alpha * ce.grad(f, y)))) < 1e-9

    def test_vanishing_step_returns_start(self):
        ce = cross_entropy(3)
        f = zero_mean(np.array([0.4, -1.0, 0.2]))
        q = guide_step_mirror_exact(loss_generator(ce, 1), f, 1, ce, 1e-12)
        assert np.max(np.abs(q - f)) < 1e-9

    def test_cross_entropy_generator_matches_closed_form_target(self):
        ce = cross_entropy(4)
        gen = RngStream(17).generator()
        for _ in range(20):
            f = gen.standard_normal(4) * 2
            y = int(gen.integers(4))
            alpha = float(gen.uniform(0.05, 0.7))
            q = guide_step_mirror_exact(loss_generator(ce, y), f, y, ce, alpha)
            target = guide_step_loss_generator(f, y, ce, alpha, 1).values
            assert np.max(np.abs(stable_softmax(q) - target)) < 1e-8

    def test_optimality_condition(self):
        ce = cross_entropy(3)
        h = loss_generator(ce, 2)
        f = zero_mean(np.array([1.0, -0.5, 0.1]))
        q = guide_step_mirror_exact(h, f, 2, ce, 0.3)
        residual = h.grad(q) - (h.grad(f) - 0.3 * ce.grad(f, 2))
        assert np.max(np.abs(residual)) < 1e-8

    def test_relaxed_newton_second_order_error(self):
        # The exact step deviates from f - alpha pinv(H) grad by O(alpha^2):
        # the deviation / alpha^2 ratio stays bounded as alpha shrinks.
        ce = cross_entropy(4)
        gen = RngStream(18).generator()
        f = zero_mean(gen.standard_normal(4))
        y = 1
        h = loss_generator(ce, y)
        ratios = []
        for alpha in (0.1, 0.05, 0.025):
            q = guide_step_mirror_exact(h, f, y, ce, alpha)
            newton = zero_mean(f - alpha * np.linalg.pinv(ce.hessian(f)) @ ce.grad(f, y))
            ratios.append(float(np.linalg.norm(q - newton)) / alpha**2)
        assert max(ratios) <= 4.0 * min(ratios) + 1e-9

"""Numerical verification suites behind the `verify` CLI subcommand.

Each suite runs with fixed seeds and reports per-check maximum deviations
against their thresholds; these are the same checks the acceptance tests
assert on.
"""

from __future__ import annotations

import math

import numpy as np

from .data import SyntheticSpec, gen_synthetic
from .diagnostics import DescentCheckConfig, theorem21_descent_check
from .exceptions import GulfOptError
from .funcspace import prop21_functional_check, random_table
from .losses import (
    bregman,
    cross_entropy,
    guide_step_loss_generator,
    guide_step_mirror_exact,
    half_squared_norm,
    loss_generator,
    onehot,
    squared,
    squared_hinge,
    zero_mean,
)
from .models import MlpArchitecture, MlpModel, backward, forward, init_random
from .numerics import RngStream, finite_diff_directional
from .trainers import prop22_grad_identity_check

ARCH_MATRIX = [
    (hidden, act)
    for hidden in ((), (8,), (8, 6))
    for act in ("relu", "tanh")
]


def _check(name: str, deviation: float, threshold: float) -> dict:
    return {
        "name": name,
        "max_deviation": float(deviation),
        "threshold": float(threshold),
        "passed": bool(deviation < threshold),
    }


def _relu_safe_sample(arch: MlpArchitecture, stream: RngStream, n: int):
    """A (model, X) draw whose hidden pre-activations all sit at least 1e-3
    from the relu kink, so finite differences stay on one side."""
    for attempt in range(200):
        model = init_random(arch, stream.child(attempt))
        X = stream.child(1000 + attempt).generator().standard_normal((n, arch.input_dim))
        if arch.activation != "relu" or not arch.hidden_dims:
            return model, X
        from .models import _forward_cached

        _, _, preacts = _forward_cached(model, X)
        if all(np.min(np.abs(z)) > 1e-3 for z in preacts):
            return model, X
    raise GulfOptError("could not sample a kink-free relu configuration")


def suite_gradients(seed: int = 7, directions: int = 20) -> dict:
    """Backprop against central finite differences over the architecture
    matrix, plus the analytic loss gradients against the same oracle."""
    checks = []
    eps = 1e-5
    root = RngStream(seed)
    for i, (hidden, act) in enumerate(ARCH_MATRIX):
        arch = MlpArchitecture(4, hidden, 3, act)
        stream = root.child(i)
        model, X = _relu_safe_sample(arch, stream, n=5)
        G = stream.child(3).generator().standard_normal((5, 3))

        def objective(theta):
            return float(np.sum(G * forward(MlpModel(arch, theta), X)))

        analytic = backward(model, X, G)
        worst = 0.0
        for d in range(directions):
            v = stream.child(10 + d).generator().standard_normal(arch.param_count)
            v /= np.linalg.norm(v)
            fd = finite_diff_directional(objective, model.theta, v, eps)
            an = float(analytic @ v)
            rel = abs(an - fd) / max(abs(an), abs(fd), 1.0)
            worst = max(worst, rel)
        checks.append(_check(f"backprop_vs_fd[{hidden},{act}]", worst, 1e-6))

    # Analytic output gradients of each loss against the same oracle.
    gen = root.child(99).generator()
    for loss, label, dim in (
        (cross_entropy(4), 2, 4),
        (squared(4), 1, 4),
        (squared_hinge(), 1, 1),
    ):
        worst = 0.0
        for _ in range(directions):
            u = gen.standard_normal(dim) * 2.0
            if loss.kind == "squared_hinge" and abs(1.0 - label * u[0]) < 1e-3:
                u[0] += 0.01  # stay away from the hinge kink
            g = loss.grad(u, label)
            v = gen.standard_normal(dim)
            v /= np.linalg.norm(v)
            fd = finite_diff_directional(lambda x: loss.value(x, label), u, v, eps)
            rel = abs(float(g @ v) - fd) / max(abs(fd), 1.0)
            worst = max(worst, rel)
        checks.append(_check(f"loss_grad_vs_fd[{loss.kind}]", worst, 1e-6))
    return _suite("gradients", checks)


def suite_bregman(seed: int = 11, pairs: int = 1000) -> dict:
    checks = []
    gen = RngStream(seed).generator()
    k = 4
    ce = cross_entropy(k)
    sq = squared(k)
    generators = {
        "half_squared_norm": lambda y: half_squared_norm(),
        "cross_entropy": lambda y: loss_generator(ce, y),
        "squared": lambda y: loss_generator(sq, y),
    }
    for name, make in generators.items():
        worst = 0.0
        for _ in range(pairs):
            y = int(gen.integers(k))
            u = gen.standard_normal(k) * 3.0
            v = gen.standard_normal(k) * 3.0
            worst = min(worst, bregman(make(y), u, v))
        checks.append(_check(f"non_negativity[{name}]", -worst, 1e-12))

        worst_same = 0.0
        for _ in range(50):
            y = int(gen.integers(k))
            u = gen.standard_normal(k) * 3.0
            worst_same = max(worst_same, abs(bregman(make(y), u, u)))
        checks.append(_check(f"zero_at_equal[{name}]", worst_same, 1e-12))

    # Quadratic generator: the divergence is half the squared distance.
    worst = 0.0
    h = half_squared_norm()
    for _ in range(200):
        u = gen.standard_normal(k) * 3.0
        v = gen.standard_normal(k) * 3.0
        d = u - v
        worst = max(worst, abs(bregman(h, u, v) - 0.5 * float(d @ d)))
    checks.append(_check("quadratic_closed_form", worst, 1e-12))

    # Cross-entropy generator against an independently coded evaluation.
    worst = 0.0
    for _ in range(200):
        y = int(gen.integers(k))
        u = gen.standard_normal(k) * 3.0
        v = gen.standard_normal(k) * 3.0
        worst = max(worst, abs(bregman(loss_generator(ce, y), u, v) - _bregman_ce_oracle(u, v, y)))
    checks.append(_check("cross_entropy_independent_oracle", worst, 1e-10))

    # Gradient condition: grad L(u, y1) - grad L(u, y2) == y2 - y1 exactly.
    worst = 0.0
    for loss in (ce, sq):
        for _ in range(200):
            u = gen.standard_normal(k) * 3.0
            y1, y2 = int(gen.integers(k)), int(gen.integers(k))
            lhs = loss.grad(u, y1) - loss.grad(u, y2)
            rhs = onehot(y2, k) - onehot(y1, k)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    checks.append(_check("loss_gradient_label_condition", worst, 1e-15))

    # Generator convexity: sampled Hessians are PSD.
    worst = 0.0
    for _ in range(100):
        y = int(gen.integers(k))
        u = gen.standard_normal(k) * 3.0
        for hgen in (half_squared_norm(), loss_generator(ce, y), loss_generator(sq, y)):
            eigs = np.linalg.eigvalsh(hgen.hessian(u))
            worst = max(worst, max(0.0, -float(eigs.min())))
    checks.append(_check("generator_hessian_psd", worst, 1e-12))

    # Probability guide targets remain distributions.
    worst = 0.0
    for _ in range(200):
        y = int(gen.integers(k))
        f = gen.standard_normal(k) * 3.0
        gamma = float(gen.uniform(0.05, 1.0))
        m = int(gen.integers(1, 6))
        t = guide_step_loss_generator(f, y, ce, gamma, m).values
        worst = max(worst, abs(float(t.sum()) - 1.0), max(0.0, -float(t.min())), max(0.0, float(t.max()) - 1.0))
    checks.append(_check("guide_probability_validity", worst, 1e-12))

    # Relaxed-Newton view: ||exact step - (f - alpha pinv(H) g)|| / alpha^2
    # stays bounded as alpha decreases.
    ratios = []
    f = zero_mean(gen.standard_normal(k))
    y = 1
    hgen = loss_generator(ce, y)
    for alpha in (0.1, 0.05, 0.025):
        q = guide_step_mirror_exact(hgen, f, y, ce, alpha)
        newton = f - alpha * np.linalg.pinv(ce.hessian(f)) @ ce.grad(f, y)
        ratios.append(float(np.linalg.norm(q - zero_mean(newton))) / alpha**2)
    spread = max(ratios) / max(min(ratios), 1e-12)
    checks.append(_check("newton_approximation_order", spread, 4.0))
    return _suite("bregman", checks)


def _bregman_ce_oracle(u: np.ndarray, v: np.ndarray, y: int) -> float:
    # Independent route: plain-math logsumexp with fsum accumulation.
    def lse(w):
        m = max(float(x) for x in w)
        return m + math.log(math.fsum(math.exp(float(x) - m) for x in w))

    def val(w):
        return lse(w) - float(w[y])

    mx = max(float(x) for x in v)
    ev = [math.exp(float(x) - mx) for x in v]
    s = math.fsum(ev)
    grad = [e / s for e in ev]
    grad[y] -= 1.0
    return val(u) - val(v) - math.fsum(g * (float(a) - float(b)) for g, a, b in zip(grad, u, v))


def suite_prop21(seed: int = 13, rows: int = 50) -> dict:
    """Gradient contraction and closed-form target identities for the m-step
    guide under the loss generator, over a (gamma, m) grid."""
    checks = []
    ce = cross_entropy(3)
    root = RngStream(seed)
    table = random_table(root.child(0), rows, 3, scale=2.0)
    labels = root.child(1).generator().integers(0, 3, size=rows)
    worst_closed = 0.0
    for gamma in (0.1, 0.3, 0.5):
        for m in (1, 2, 3, 5):
            rep = prop21_functional_check(table, labels, ce, gamma, m)
            checks.append(_check(f"gradient_contraction[gamma={gamma},m={m}]", rep.max_deviation, 1e-8))
            # Closed-form probability target vs the same chained mirror steps.
            for i in range(rows):
                closed = guide_step_loss_generator(table.values[i], int(labels[i]), ce, gamma, m).values
                worst_closed = max(
                    worst_closed, float(np.max(np.abs(rep.guide_probabilities[i] - closed)))
                )
    checks.append(_check("closed_form_vs_mirror_steps", worst_closed, 1e-8))
    return _suite("prop21", checks)


def suite_prop22(seed: int = 17, tuples: int = 100) -> dict:
    """Divergence-form vs distillation-form parameter gradients at random
    (theta, theta_t, batch, alpha)."""
    root = RngStream(seed)
    arch = MlpArchitecture(4, (10,), 3, "relu")
    spec = SyntheticSpec("gaussian-blobs", 3, 40, 4, 3.0, 0.0, seed=seed)
    train, _ = gen_synthetic(spec)
    ce = cross_entropy(3)
    worst = 0.0
    for i in range(tuples):
        model = init_random(arch, root.child(2 * i))
        frozen = init_random(arch, root.child(2 * i + 1))
        gen = root.child(10_000 + i).generator()
        idx = gen.choice(train.n, size=16, replace=False)
        alpha = float(gen.uniform(0.01, 1.0))
        rep = prop22_grad_identity_check(model, frozen, train, idx, alpha, ce)
        worst = max(worst, rep.max_deviation)
    return _suite("prop22", [_check(f"grad_identity[{tuples} tuples]", worst, 1e-8)])


def suite_theorem21(seed: int = 19) -> dict:
    """Stage descent inequality and averaged gradient bound on a full-batch
    convex run, at alpha in {0.3, 1.0}."""
    spec = SyntheticSpec("gaussian-blobs", 2, 100, 5, 2.0, 0.0, seed=seed)
    train, _ = gen_synthetic(spec)
    arch = MlpArchitecture(5, (), 2, "relu")
    ce = cross_entropy(2)
    lam = 1e-3
    checks = []
    for alpha in (0.3, 1.0):
        rep = theorem21_descent_check(train, arch, ce, DescentCheckConfig(alpha=alpha, stages=20, seed=seed), lam)
        worst_slack = min(r.slack for r in rep.stages)
        checks.append(_check(f"stage_descent_slack[alpha={alpha}]", max(0.0, -worst_slack), 1e-9))
        margin = rep.mean_grad_norm_sq - rep.averaged_bound
        checks.append(_check(f"averaged_gradient_bound[alpha={alpha}]", max(0.0, margin), 1e-9))
    return _suite("theorem21", checks)


def _suite(name: str, checks: list[dict]) -> dict:
    return {"suite": name, "checks": checks, "passed": all(c["passed"] for c in checks)}


SUITES = {
    "gradients": suite_gradients,
    "bregman": suite_bregman,
    "prop21": suite_prop21,
    "prop22": suite_prop22,
    "theorem21": suite_theorem21,
}


def run_suites(names=None) -> dict:
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise GulfOptError(f"unknown verification suite(s): {unknown}; available: {list(SUITES)}")
    suites = [SUITES[n]() for n in names]
    return {"suites": suites, "passed": all(s["passed"] for s in suites)}

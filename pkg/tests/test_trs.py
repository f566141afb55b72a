import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advrisk.trs import (
    BRANCH_DEGENERATE,
    BRANCH_EASY,
    BRANCH_HARD,
    secular_root,
    svd_full,
    worst_case_batch,
    worst_case_perturbation,
)


def boundary_oracle(a, b, eps, n_dirs=10_000, n_restarts=50, n_steps=300, seed=0):
    """Independent check: dense boundary sampling plus projected gradient
    ascent restarts on the sphere of radius eps."""
    gen = np.random.default_rng(seed)
    n = a.shape[1]
    gram = a.T @ a
    lin = a.T @ b

    dirs = gen.standard_normal((n_dirs, n))
    dirs *= eps / np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = ((dirs @ a.T) ** 2).sum(axis=1) - 2 * dirs @ lin
    best = float(vals.max())

    x = gen.standard_normal((n_restarts, n))
    x *= eps / np.linalg.norm(x, axis=1, keepdims=True)
    step = eps / (2 * np.linalg.norm(gram, 2) * eps + 2 * np.linalg.norm(lin) + 1e-12)
    for _ in range(n_steps):
        x = x + step * (2 * x @ gram - 2 * lin)
        x *= eps / np.linalg.norm(x, axis=1, keepdims=True)
    vals = ((x @ a.T) ** 2).sum(axis=1) - 2 * x @ lin
    return max(best, float(vals.max()))


class TestSvdFull:
    def test_diagonal(self):
        fact = svd_full(np.diag([3.0, 1.0]))
        assert np.allclose(fact.singular_values, [3.0, 1.0])
        assert np.allclose(np.abs(fact.u), np.eye(2), atol=1e-12)
        assert np.allclose(np.abs(fact.v), np.eye(2), atol=1e-12)

    def test_zero_matrix(self):
        fact = svd_full(np.zeros((2, 3)))
        assert np.allclose(fact.singular_values, 0.0)

    def test_reconstruction_and_orthogonality(self, rng):
        a = rng.standard_normal((4, 2))
        fact = svd_full(a)
        assert np.linalg.norm(fact.matrix() - a) / np.linalg.norm(a) < 1e-10
        assert np.linalg.norm(fact.u.T @ fact.u - np.eye(4)) < 1e-10
        assert np.linalg.norm(fact.v.T @ fact.v - np.eye(2)) < 1e-10

    def test_full_not_thin(self, rng):
        fact = svd_full(rng.standard_normal((5, 2)))
        assert fact.u.shape == (5, 5) and fact.v.shape == (2, 2)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            svd_full(np.array([[np.nan, 0.0]]))


class TestWorstCasePerturbation:
    def test_scalar_closed_form(self):
        # a=2, b=3, eps=0.5: lam = a^2 + |ab|/eps, gain = a^2 eps^2 + 2 eps |ab|
        res = worst_case_perturbation(np.array([[2.0]]), [3.0], 0.5)
        assert res.branch == BRANCH_EASY
        assert np.isclose(res.delta[0], -0.5, atol=1e-12)
        assert np.isclose(res.dual_lambda, 16.0, atol=1e-9)
        assert np.isclose(res.objective_gain, 7.0, atol=1e-10)

    def test_fully_degenerate_hard_case(self):
        res = worst_case_perturbation(np.eye(2), [0.0, 0.0], 1.0)
        assert res.branch == BRANCH_HARD
        assert np.isclose(np.linalg.norm(res.delta), 1.0, rtol=1e-9)
        assert np.isclose(res.objective_gain, 1.0, atol=1e-10)

    def test_zero_matrix_degenerate(self):
        res = worst_case_perturbation(np.zeros((2, 2)), [1.0, 2.0], 0.5)
        assert res.branch == BRANCH_DEGENERATE
        assert np.allclose(res.delta, 0.0) and res.objective_gain == 0.0

    def test_zero_budget_degenerate(self):
        res = worst_case_perturbation(np.eye(2), [1.0, 2.0], 0.0)
        assert res.branch == BRANCH_DEGENERATE
        assert np.allclose(res.delta, 0.0) and res.objective_gain == 0.0

    def test_row_model_sign_law(self, rng):
        # p = 1: delta = -eps * A'b / ||A'b||
        for _ in range(10):
            a = rng.standard_normal((1, 3))
            b = rng.standard_normal(1)
            eps = 0.7
            res = worst_case_perturbation(a, b, eps)
            expected = -eps * (a.T @ b).ravel() / np.linalg.norm(a.T @ b)
            assert np.allclose(res.delta, expected, atol=1e-9)

    def test_oracle_agreement_random(self, rng):
        for trial in range(25):
            n = int(rng.integers(1, 6))
            p = int(rng.integers(1, 6))
            a = rng.standard_normal((p, n))
            b = rng.standard_normal(p)
            eps = float(rng.choice([0.1, 0.7, 3.0]))
            res = worst_case_perturbation(a, b, eps)
            ref = boundary_oracle(a, b, eps, n_dirs=4000, seed=trial)
            assert res.objective_gain >= ref - 1e-9

    def test_hard_case_constructed(self, rng):
        # b orthogonal to the top left-singular space, with budget to spare
        a = np.diag([2.0, 1.0])
        b = np.array([0.0, 1.0])
        eps = 2.0  # pseudoinverse part has norm 1/3 < eps
        res = worst_case_perturbation(a, b, eps)
        assert res.branch == BRANCH_HARD
        assert np.isclose(np.linalg.norm(res.delta), eps, rtol=1e-9)
        assert np.isclose(res.dual_lambda, 4.0, atol=1e-12)
        ref = boundary_oracle(a, b, eps, seed=1)
        assert res.objective_gain >= ref - 1e-9

    def test_value_identity(self, rng):
        # max ||b - A delta||^2 == ||b||^2 + gain
        for _ in range(10):
            a = rng.standard_normal((3, 4))
            b = rng.standard_normal(3)
            res = worst_case_perturbation(a, b, 1.3)
            lhs = np.linalg.norm(b - a @ res.delta) ** 2
            rhs = b @ b + res.objective_gain
            assert np.isclose(lhs, rhs, rtol=1e-10)

    def test_batch_matches_scalar(self, rng):
        a = rng.standard_normal((3, 2))
        bs = rng.standard_normal((17, 3))
        deltas, gains, lams, branches = worst_case_batch(a, bs, 0.9)
        # scalar and batched paths may differ in the last bit (BLAS gemv vs
        # gemm); agreement to machine precision is the contract
        for i in range(17):
            res = worst_case_perturbation(a, bs[i], 0.9)
            assert np.allclose(res.delta, deltas[i], rtol=1e-12, atol=1e-14)
            assert np.isclose(res.objective_gain, gains[i], rtol=1e-12)
            assert np.isclose(res.dual_lambda, lams[i], rtol=1e-12)
            assert res.branch == branches[i]

    def test_perturbation_continuous_in_data(self, rng):
        # scaling b slightly moves the maximizer slightly (easy regime)
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal(3)
        base = worst_case_perturbation(a, b, 0.8)
        for t_scale in (1.0 + 1e-7, 1.0 - 1e-7):
            moved = worst_case_perturbation(a, t_scale * b, 0.8)
            assert np.linalg.norm(moved.delta - base.delta) < 1e-5

    def test_empty_batch(self, rng):
        deltas, gains, lams, branches = worst_case_batch(np.eye(2), np.empty((0, 2)), 1.0)
        assert deltas.shape == (0, 2) and gains.shape == (0,)


@given(
    n=st.integers(1, 4),
    p=st.integers(1, 4),
    eps=st.sampled_from([0.1, 1.0, 10.0]),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_kkt_and_feasibility_properties(n, p, eps, seed):
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((p, n))
    b = gen.standard_normal(p)
    res = worst_case_perturbation(a, b, eps)

    norm = np.linalg.norm(res.delta)
    assert norm <= eps * (1 + 1e-9)
    s1 = np.linalg.svd(a, compute_uv=False)[0]
    # dual feasibility
    assert res.dual_lambda >= s1 * s1 - 1e-12
    # the ball is exhausted outside the degenerate branch
    if res.branch != BRANCH_DEGENERATE:
        assert abs(norm - eps) <= 1e-9 * eps
        # complementary slackness
        assert abs(res.dual_lambda * (norm**2 - eps**2)) <= 1e-8 * res.dual_lambda * eps * eps
        # stationarity
        resid = np.linalg.norm(
            (res.dual_lambda * np.eye(n) - a.T @ a) @ res.delta + a.T @ b
        )
        assert resid <= 1e-8 * (res.dual_lambda * eps + np.linalg.norm(a.T @ b))
    # reported gain is the quadratic objective at delta
    direct = res.delta @ (a.T @ a) @ res.delta - 2 * res.delta @ (a.T @ b)
    scale = max(abs(res.objective_gain), abs(direct), 1e-12)
    assert abs(res.objective_gain - direct) <= 1e-10 * scale
    # gain is never negative: delta = 0 is feasible with value 0
    assert res.objective_gain >= -1e-12


def test_global_optimality_proxy_1000_instances():
    # stress sweep: never fall below dense boundary sampling or ascent restarts
    gen = np.random.default_rng(424242)
    for _ in range(1000):
        n = int(gen.integers(1, 6))
        p = int(gen.integers(1, 6))
        a = gen.standard_normal((p, n))
        b = gen.standard_normal(p)
        eps = float(gen.choice([0.1, 1.0, 10.0]))
        res = worst_case_perturbation(a, b, eps)
        ref = boundary_oracle(a, b, eps, n_dirs=10_000, n_restarts=50,
                              n_steps=120, seed=int(gen.integers(1 << 31)))
        assert res.objective_gain >= ref - 1e-9


class TestSecularRoot:
    def test_single_term_analytic(self):
        # 36 / (lam - 4)^2 = 0.25  ->  lam = 16
        assert np.isclose(secular_root([36.0], 4.0, 0.5), 16.0, rtol=1e-12)

    def test_residual_within_tolerance(self, rng):
        for _ in range(20):
            r = int(rng.integers(1, 6))
            w = rng.uniform(0.1, 5.0, size=r)
            sq = np.sort(rng.uniform(0.1, 4.0, size=r))[::-1]
            eps = float(rng.uniform(0.05, 2.0))
            lam = secular_root(w, sq, eps)
            f = (w / (lam - sq) ** 2).sum()
            assert lam > sq.max()
            assert abs(f - eps * eps) <= 1e-12 * eps * eps

    def test_monotone_in_eps(self):
        w = np.array([1.0, 2.0])
        sq = np.array([4.0, 1.0])
        roots = [secular_root(w, sq, e) for e in (0.1, 1.0, 10.0, 100.0)]
        assert all(a > b for a, b in zip(roots, roots[1:]))
        assert roots[-1] < 4.0 + 1e-1  # approaches sigma_1^2 from above

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            secular_root([0.0, 0.0], 4.0, 0.5)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            secular_root([-1.0], 4.0, 0.5)

import numpy as np
import pytest

from spectral_risk.errors import IndexOutOfRange, ValidationError
from spectral_risk.models import (
    AdditiveModel,
    ExponentialModel,
    LinearModel,
    build_model,
    fisher_matrix,
    generate,
    third_derivative,
)
from spectral_risk.sampling import make_rng, truncated_normal_variance

TN_VAR = truncated_normal_variance(1.0)


def model_cases():
    return [LinearModel(6, seed=1), ExponentialModel(6, seed=2), AdditiveModel(12, M=4, seed=3)]


def random_points(model, count, seed):
    rng = make_rng(seed)
    data = generate(model, count, seed + 1)
    for k in range(count):
        u = rng.standard_normal(model.p)
        theta = model.radius * rng.uniform() * u / np.linalg.norm(u)
        yield theta, data.X[k], data.y[k]


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)), 1e-300)


def central_diff(fn, theta, h):
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        cols.append((fn(theta + e) - fn(theta - e)) / (2 * h))
    return np.array(cols)


class TestGenerate:
    def test_zero_signal(self):
        m = LinearModel(5, theta_star=np.zeros(5), noise_bound=1e-9)
        assert np.max(np.abs(generate(m, 100, 0).y)) <= 1e-9

    def test_exponential_noiseless_point(self):
        m = ExponentialModel(1, theta_star=np.zeros(1))
        assert m.mean(m.theta_star, np.array([[0.5]]))[0] == pytest.approx(0.5)

    def test_linear_noise_variance(self):
        m = LinearModel(3, theta_star=np.array([1.0, 0.0, 0.0]), radius=1.0)
        d = generate(m, 10_000, 4)
        resid = d.y - d.X @ m.theta_star
        assert resid.var() == pytest.approx(TN_VAR, rel=0.05)
        assert m.noise_variance == pytest.approx(0.29112, abs=1e-4)

    def test_bounds_respected(self):
        m = ExponentialModel(4, covariate_bound=0.7, noise_bound=0.3, seed=3)
        d = generate(m, 2000, 1)
        assert np.all(np.abs(d.X) <= 0.7)
        assert np.all(np.abs(d.y - m.mean(m.theta_star, d.X)) <= 0.3)

    def test_deterministic(self):
        m = AdditiveModel(20, seed=5)
        a, b = generate(m, 50, 9), generate(m, 50, 9)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()

    def test_theta_star_inside_ball(self):
        for kind in ("linear", "exponential", "additive"):
            m = build_model(kind, 30, seed=4, radius=2.0)
            assert np.linalg.norm(m.theta_star) == pytest.approx(1.8)

    def test_rejects_outside_ball(self):
        with pytest.raises(ValidationError):
            LinearModel(2, theta_star=np.array([1.0, 1.0]), radius=1.0)

    def test_csv_export(self):
        d = generate(AdditiveModel(10, M=3, seed=1), 3, 0)
        text = d.to_csv()
        lines = text.splitlines()
        assert lines[0] == "x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8,y"
        assert len(lines) == 4
        np.testing.assert_allclose(np.loadtxt(lines[1:], delimiter=","), np.column_stack([d.X, d.y]))


class TestPartition:
    @pytest.mark.parametrize("p,M", [(10, 3), (128, 49), (1024, 256), (7, 7)])
    def test_cover(self, p, M):
        m = AdditiveModel(p, M=M, seed=0)
        allidx = np.concatenate(m.blocks)
        np.testing.assert_array_equal(np.sort(allidx), np.arange(p))
        assert max(m.partition_sizes) <= p / M + 1

    def test_default_blocks(self):
        assert AdditiveModel(1024, seed=0).M == 256


class TestDerivativeOracles:
    @pytest.mark.parametrize("model", model_cases(), ids=lambda m: m.kind)
    def test_gradient(self, model):
        for theta, x, y in random_points(model, 100, 10):
            J = model.score(theta, x[None, :], np.array([y]))[0]
            fd = central_diff(lambda t: model.log_density(t, x, y), theta, 1e-5)
            assert rel_err(J, fd) <= 1e-6

    @pytest.mark.parametrize("model", model_cases(), ids=lambda m: m.kind)
    def test_hessian(self, model):
        for theta, x, y in random_points(model, 100, 20):
            H = model.hessian_log_density(theta, x, y)
            fd = central_diff(lambda t: model.score(t, x[None, :], np.array([y]))[0], theta, 1e-5)
            np.testing.assert_allclose(H, H.T, atol=1e-15)
            assert rel_err(H, fd) <= 1e-6

    @pytest.mark.parametrize("model", model_cases()[1:], ids=lambda m: m.kind)
    def test_third_derivative(self, model):
        for theta, x, y in random_points(model, 100, 30):
            fd = central_diff(lambda t: model.hessian_log_density(t, x, y), theta, 1e-4)
            U = np.array([third_derivative(model, j, theta, (x, y)) for j in range(model.p)])
            assert rel_err(U, fd) <= 1e-6

    def test_linear_third_derivative_zero(self):
        m = LinearModel(5, seed=0)
        for theta, x, y in random_points(m, 5, 1):
            for j in range(5):
                assert not np.any(third_derivative(m, j, theta, (x, y)))

    def test_exponential_scalar(self):
        m = ExponentialModel(1, theta_star=np.zeros(1))
        x, y = np.array([1.0]), 1.2
        theta = np.zeros(1)
        rho = y - 1.0
        v = m.noise_variance
        # g = x e^{theta x}: g' = 1, g'' = 1, g''' = 1 at theta = 0, x = 1
        assert third_derivative(m, 0, theta, (x, y))[0, 0] == pytest.approx((rho - 3.0) / v, rel=1e-14)
        h = 1e-4
        fd = (m.hessian_log_density(theta + h, x, y) - m.hessian_log_density(theta - h, x, y)) / (2 * h)
        assert fd[0, 0] == pytest.approx((rho - 3.0) / v, rel=1e-5)

    def test_index_out_of_range(self):
        m = ExponentialModel(3)
        with pytest.raises(IndexOutOfRange):
            third_derivative(m, 3, np.zeros(3), (np.zeros(3), 0.0))
        with pytest.raises(IndexError):
            third_derivative(m, -1, np.zeros(3), (np.zeros(3), 0.0))

    def test_additive_mean_hessian_block_diagonal(self):
        m = AdditiveModel(30, M=5, seed=2)
        mask = np.zeros((30, 30), dtype=bool)
        for blk in m.blocks:
            mask[np.ix_(blk, blk)] = True
        for theta, x, y in random_points(m, 20, 3):
            H = m.mean_hessian(theta, x)
            assert np.all(H[~mask] == 0.0)
            for j in range(30):
                T = m.mean_third(theta, x, j)
                blk = m.blocks[m.block_of[j]]
                outside = np.ones((30, 30), dtype=bool)
                outside[np.ix_(blk, blk)] = False
                assert np.all(T[outside] == 0.0)

    def test_additive_likelihood_third_derivative_couples_blocks(self):
        # the product of first and second mean derivatives reaches across blocks
        m = AdditiveModel(12, M=4, seed=3)
        theta, x, y = next(random_points(m, 1, 4))
        U = m.third_derivative(0, theta, x, y)
        blk = m.blocks[0]
        other = m.blocks[1]
        assert np.any(U[np.ix_(blk, other)] != 0.0)


class TestIdentities:
    @pytest.mark.parametrize("model", [LinearModel(4, seed=1), ExponentialModel(4, seed=2),
                                       AdditiveModel(8, M=3, seed=3)], ids=lambda m: m.kind)
    def test_score_mean_zero(self, model):
        d = generate(model, 100_000, 5)
        J = model.score(model.theta_star, d.X, d.y)
        se = J.std(axis=0, ddof=1) / np.sqrt(J.shape[0])
        assert np.linalg.norm(J.mean(axis=0)) <= 3 * np.linalg.norm(se)

    @pytest.mark.parametrize("model", [LinearModel(3, seed=1), ExponentialModel(3, seed=2),
                                       AdditiveModel(6, M=3, seed=3)], ids=lambda m: m.kind)
    def test_information_identity(self, model):
        d = generate(model, 20_000, 6)
        ts = model.theta_star
        diffs = np.array([model.fisher_residual_sample(ts, x[None, :], np.array([y])) for x, y in zip(d.X, d.y)])
        mean = diffs.mean(axis=0)
        se = diffs.std(axis=0, ddof=1) / np.sqrt(len(diffs))
        assert np.all(np.abs(mean) <= 3 * se + 1e-15)


class TestFisher:
    def test_linear_exact(self):
        m = LinearModel(5, seed=0)
        np.testing.assert_allclose(fisher_matrix(m, 1, 0), (TN_VAR / m.noise_variance) * np.eye(5), rtol=1e-14)
        np.testing.assert_allclose(fisher_matrix(m, 1, 0), np.eye(5), rtol=1e-12)

    def test_exponential_exact_matches_mc(self):
        m = ExponentialModel(3, seed=4)
        exact = fisher_matrix(m, 1, 0)
        mc = fisher_matrix(m, 400_000, 1, method="mc")
        np.testing.assert_allclose(mc, exact, rtol=5e-3)

    def test_exponential_mc_sizes(self):
        m = ExponentialModel(2, seed=4)
        small = fisher_matrix(m, 10_000, 1, method="mc")
        large = fisher_matrix(m, 1_000_000, 2, method="mc")
        assert np.linalg.norm(small - large, 2) < 0.05 * np.linalg.norm(large, 2) + 0.05

    def test_mc_consistency(self):
        m = AdditiveModel(10, M=3, seed=6)
        ref = fisher_matrix(m, 400_000, 99)
        gaps = [np.linalg.norm(fisher_matrix(m, k, 7) - ref, 2) for k in (500, 8000, 128_000)]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_symmetric_positive(self):
        F = fisher_matrix(AdditiveModel(16, M=4, seed=1), 5000, 3)
        np.testing.assert_array_equal(F, F.T)
        assert np.linalg.eigvalsh(F)[0] > 0

    def test_rejects_zero_samples(self):
        with pytest.raises(ValidationError):
            fisher_matrix(ExponentialModel(2), 0, 0)

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.stats import ortho_group

from lgmfit.errors import LgmError
from lgmfit.model import build_model
from lgmfit.modelspec import ComponentDecl, ModelDescription
from lgmfit.oracle import quadrature_posterior
from lgmfit.outer import (DELTA_Z, LOG_DROP, MAX_GRID_POINTS, GradientBasis,
                          ModeResult, ThetaPosterior, find_mode,
                          hessian_and_grid, smart_gradient)


class _StubInner:
    def __init__(self, dim=1):
        self.mu = np.zeros(dim)


class QuadraticStub:
    """Stands in for ThetaPosterior: exact concave quadratic log posterior."""

    def __init__(self, H, opt, fail_above=None):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.opt = np.asarray(opt, dtype=float)
        self.q = self.opt.shape[0]
        self.model = type("M", (), {"q": self.q})()
        self.n_eval = 0
        self.fail_above = fail_above

    def evaluate(self, theta, warm=None):
        theta = np.asarray(theta, dtype=float)
        if self.fail_above is not None and theta[0] > self.fail_above:
            raise LgmError("stub failure region")
        d = theta - self.opt
        self.n_eval += 1
        return float(-0.5 * d @ self.H @ d), _StubInner()

    def log_post(self, theta):
        return self.evaluate(theta)[0]


class FlatStub(QuadraticStub):
    def __init__(self, q):
        super().__init__(np.zeros((q, q)), np.zeros(q))

    def evaluate(self, theta, warm=None):
        self.n_eval += 1
        return 0.0, _StubInner()


def stub_mode(stub):
    lp, inner = stub.evaluate(stub.opt)
    return ModeResult(theta=stub.opt.copy(), log_post=lp, inner=inner,
                      basis=GradientBasis(stub.q), iterations=0,
                      n_eval=stub.n_eval, converged=True)


def rosenbrock(v):
    x, y = v
    return (1 - x) ** 2 + 100 * (y - x**2) ** 2


class TestSmartGradient:
    @pytest.mark.parametrize("q", [2, 3, 5])
    def test_exact_on_quadratics(self, q):
        rng = np.random.default_rng(q)
        R = rng.normal(size=(q, q))
        A = R @ R.T + q * np.eye(q)
        b = rng.normal(size=q)
        theta = rng.normal(size=q)

        def f(t):
            return -0.5 * t @ A @ t + b @ t

        want = -A @ theta + b
        got = smart_gradient(f, theta)
        assert np.max(np.abs(got - want)) <= 1e-8

    @pytest.mark.parametrize("q", [2, 3, 5])
    def test_exact_in_rotated_basis(self, q):
        rng = np.random.default_rng(10 + q)
        R = rng.normal(size=(q, q))
        A = R @ R.T + q * np.eye(q)
        theta = rng.normal(size=q)
        basis = GradientBasis(q)
        for _ in range(q):
            basis.update(rng.normal(size=q))
        G = basis.matrix()
        assert np.max(np.abs(G.T @ G - np.eye(q))) < 1e-12

        def f(t):
            return -0.5 * t @ A @ t

        got = smart_gradient(f, theta, basis)
        assert np.max(np.abs(got + A @ theta)) <= 1e-8

    def test_empty_history_is_canonical(self):
        basis = GradientBasis(3)
        assert np.array_equal(basis.matrix(), np.eye(3))

    def test_rosenbrock_hand_value(self):
        got = smart_gradient(rosenbrock, np.array([-1.2, 1.0]), h=1e-4)
        assert np.max(np.abs(got - np.array([-215.6, -88.0]))) <= 1e-4

    def test_newest_direction_first(self):
        basis = GradientBasis(2)
        basis.update(np.array([1.0, 0.0]))
        basis.update(np.array([1.0, 1.0]))
        G = basis.matrix()
        assert np.allclose(np.abs(G[:, 0]), np.array([1.0, 1.0]) / np.sqrt(2),
                           atol=1e-12)


class TestFindMode:
    def test_q0_is_immediate(self):
        stub = QuadraticStub(np.zeros((0, 0)), np.zeros(0))
        res = find_mode(stub)
        assert res.converged
        assert res.iterations == 0
        assert res.theta.shape == (0,)

    def test_quadratic_1d(self):
        stub = QuadraticStub([[2.0]], [1.3])
        res = find_mode(stub, np.array([0.0]))
        assert res.converged
        assert res.iterations <= 5
        assert abs(res.theta[0] - 1.3) <= 1e-6

    def test_quadratic_2d_correlated(self):
        H = np.array([[3.0, 1.0], [1.0, 2.0]])
        stub = QuadraticStub(H, [0.7, -0.4])
        res = find_mode(stub, np.zeros(2))
        assert res.converged
        assert np.max(np.abs(res.theta - stub.opt)) <= 1e-3

    def test_theta0_length_checked(self):
        stub = QuadraticStub([[1.0]], [0.0])
        with pytest.raises(LgmError):
            find_mode(stub, np.zeros(2))

    def test_poisson_hyper_mode_vs_scalar_search(self):
        rng = np.random.default_rng(21)
        n = 80
        g = rng.integers(0, 4, n)
        u = rng.normal(size=4) * 0.6
        y = rng.poisson(np.exp(0.3 + u[g])).astype(float)
        desc = ModelDescription(
            family="poisson", response="y",
            components=[ComponentDecl(kind="intercept"),
                        ComponentDecl(kind="iid", column="g", size=4)])
        model, design, family = build_model(desc, {"y": y, "g": g})
        post = ThetaPosterior(model, design, family)
        res = find_mode(post)
        assert res.converged
        ref = minimize_scalar(lambda t: -post.log_post(np.array([t])),
                              bounds=(res.theta[0] - 2.0, res.theta[0] + 2.0),
                              method="bounded",
                              options={"xatol": 1e-8})
        assert abs(res.theta[0] - ref.x) <= 1e-3


class TestThetaPosteriorCache:
    def test_repeat_evaluation_cached(self):
        rng = np.random.default_rng(5)
        y = rng.poisson(2.0, 30).astype(float)
        g = rng.integers(0, 3, 30)
        desc = ModelDescription(
            family="poisson", response="y",
            components=[ComponentDecl(kind="intercept"),
                        ComponentDecl(kind="iid", column="g", size=3)])
        model, design, family = build_model(desc, {"y": y, "g": g})
        post = ThetaPosterior(model, design, family)
        lp1 = post.log_post(np.array([0.5]))
        count = post.n_eval
        lp2 = post.log_post(np.array([0.5]))
        assert post.n_eval == count
        assert lp1 == lp2


class TestHyperGrid:
    def test_q1_quadratic_shape_and_weights(self):
        stub = QuadraticStub([[4.0]], [0.2])
        grid = hessian_and_grid(stub, stub_mode(stub))
        zs = sorted(p.z[0] for p in grid.points)
        # sd = 0.5, step 0.375: drop 2.5 keeps |z| <= 2
        assert zs == [-2, -1, 0, 1, 2]
        w = grid.weights
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        center = next(p for p in grid.points if p.z == (0,))
        assert center.weight == w.max()
        mean, sd = grid.theta_moments()
        assert mean[0] == pytest.approx(0.2, abs=1e-8)
        assert grid.hessian[0, 0] == pytest.approx(4.0, abs=1e-6)

    def test_q0_single_point(self):
        stub = QuadraticStub(np.zeros((0, 0)), np.zeros(0))
        grid = hessian_and_grid(stub, stub_mode(stub))
        assert len(grid.points) == 1
        assert grid.points[0].weight == 1.0

    def test_eb_strategy_single_point(self):
        stub = QuadraticStub([[4.0]], [0.0])
        grid = hessian_and_grid(stub, stub_mode(stub), strategy="eb")
        assert len(grid.points) == 1
        assert grid.points[0].weight == 1.0
        assert grid.points[0].z == (0,)

    @pytest.mark.parametrize("H", [
        np.diag([1.0, 4.0]),
        np.array([[2.0, 0.6], [0.6, 1.0]]),
    ])
    def test_q2_lattice_matches_enumeration(self, H):
        # for an exact quadratic the kept set in z-space is the lattice ball
        # ||z||^2 <= 2 drop / dz^2, independent of H
        stub = QuadraticStub(H, [0.1, -0.3])
        grid = hessian_and_grid(stub, stub_mode(stub))
        got = {p.z for p in grid.points}
        r2 = 2.0 * LOG_DROP / DELTA_Z**2
        want = {(i, j) for i in range(-5, 6) for j in range(-5, 6)
                if i * i + j * j <= r2 + 1e-12}
        assert got == want
        mean, _ = grid.theta_moments()
        assert np.max(np.abs(mean - stub.opt)) <= 1e-8

    def test_q3_axis_walk_reaches_diagonals(self):
        stub = QuadraticStub(np.diag([1.0, 2.0, 3.0]), [0.0, 0.0, 0.0])
        grid = hessian_and_grid(stub, stub_mode(stub))
        got = {p.z for p in grid.points}
        r2 = 2.0 * LOG_DROP / DELTA_Z**2
        want = {(i, j, k)
                for i in range(-4, 5) for j in range(-4, 5)
                for k in range(-4, 5) if i * i + j * j + k * k <= r2 + 1e-12}
        assert got == want
        assert (1, 1, 1) in got

    def test_grid_is_deterministic(self):
        H = np.array([[2.0, 0.5], [0.5, 1.5]])
        runs = []
        for _ in range(2):
            stub = QuadraticStub(H, [0.4, 0.1])
            grid = hessian_and_grid(stub, stub_mode(stub))
            runs.append([(p.z, p.weight, tuple(p.theta)) for p in grid.points])
        assert runs[0] == runs[1]

    def test_failing_points_skipped_with_warning(self):
        stub = QuadraticStub([[4.0]], [0.0], fail_above=0.4)
        warnings = []
        grid = hessian_and_grid(stub, stub_mode(stub), warnings_out=warnings)
        zs = sorted(p.z[0] for p in grid.points)
        assert zs == [-2, -1, 0, 1]
        assert grid.skipped == 1
        assert len(warnings) == 1

    def test_flat_posterior_hits_point_cap(self):
        stub = FlatStub(2)
        grid = hessian_and_grid(stub, stub_mode(stub))
        assert len(grid.points) == MAX_GRID_POINTS
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-9)


def gaussian_fixed_effects(seed=11, n=35):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = 0.5 + 0.9 * x + rng.normal(size=n) * 0.7
    desc = ModelDescription(
        family="gaussian", response="y",
        components=[ComponentDecl(kind="intercept"),
                    ComponentDecl(kind="linear", column="x")])
    return build_model(desc, {"y": y, "x": x})


class TestLogPosteriorValues:
    def closed_form_marginal(self, model, design, family, theta):
        A = design.mat.toarray()
        n = design.n
        tau = float(np.exp(theta[0]))
        P = model.prior_precision(np.asarray(theta)).to_dense()
        C = np.eye(n) / tau + A @ np.linalg.inv(P) @ A.T
        sign, logdet = np.linalg.slogdet(C)
        assert sign > 0
        y = family.y
        return float(-0.5 * n * np.log(2 * np.pi) - 0.5 * logdet
                     - 0.5 * y @ np.linalg.solve(C, y))

    def test_gaussian_matches_closed_form_differences(self):
        model, design, family = gaussian_fixed_effects()
        post = ThetaPosterior(model, design, family)
        thetas = [np.array([t]) for t in (-0.5, 0.0, 0.4, 1.0)]
        lp = [post.log_post(t) for t in thetas]
        ref = [self.closed_form_marginal(model, design, family, t)
               + model.theta_log_prior(t) for t in thetas]
        for i in range(1, len(thetas)):
            assert lp[i] - lp[0] == pytest.approx(ref[i] - ref[0], abs=1e-8)

    def test_gaussian_matches_quadrature_oracle(self):
        model, design, family = gaussian_fixed_effects(n=25)
        post = ThetaPosterior(model, design, family)
        t1, t2 = np.array([0.0]), np.array([0.6])
        d_engine = (post.log_post(t1) - model.theta_log_prior(t1)) \
            - (post.log_post(t2) - model.theta_log_prior(t2))
        o1 = quadrature_posterior(model, design, family, theta=t1)
        o2 = quadrature_posterior(model, design, family, theta=t2)
        assert d_engine == pytest.approx(o1.log_evidence - o2.log_evidence,
                                         abs=1e-6)

    def test_poisson_matches_quadrature_oracle(self):
        rng = np.random.default_rng(33)
        n = 60
        g = np.arange(n) % 1
        y = rng.poisson(np.exp(1.5 + 0.2), n).astype(float)
        desc = ModelDescription(
            family="poisson", response="y",
            components=[ComponentDecl(kind="intercept"),
                        ComponentDecl(kind="iid", column="g", size=1)])
        model, design, family = build_model(desc, {"y": y, "g": g})
        post = ThetaPosterior(model, design, family)
        t1, t2 = np.array([0.5]), np.array([1.5])
        d_engine = (post.log_post(t1) - model.theta_log_prior(t1)) \
            - (post.log_post(t2) - model.theta_log_prior(t2))
        o1 = quadrature_posterior(model, design, family, theta=t1)
        o2 = quadrature_posterior(model, design, family, theta=t2)
        assert d_engine == pytest.approx(o1.log_evidence - o2.log_evidence,
                                         abs=1e-4)

    def test_component_order_invariance(self):
        rng = np.random.default_rng(60)
        n = 40
        x = rng.normal(size=n)
        g = rng.integers(0, 4, n)
        y = rng.poisson(np.exp(0.2 + 0.3 * x)).astype(float)
        data = {"y": y, "x": x, "g": g}
        c_int = ComponentDecl(kind="intercept")
        c_lin = ComponentDecl(kind="linear", column="x")
        c_iid = ComponentDecl(kind="iid", column="g", size=4)
        lp = []
        for comps in ([c_int, c_lin, c_iid], [c_iid, c_lin, c_int]):
            desc = ModelDescription(family="poisson", response="y",
                                    components=list(comps))
            model, design, family = build_model(desc, data)
            lp.append(ThetaPosterior(model, design, family)
                      .log_post(np.array([0.3])))
        assert lp[0] == pytest.approx(lp[1], abs=1e-10)

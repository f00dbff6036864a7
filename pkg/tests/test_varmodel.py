import numpy as np
import pytest

from regvar import simgen, varmodel
from regvar.errors import ShapeMismatch, SingularSigma, WindowTooShort
from regvar.solver import PenaltySpec, SolverConfig
from regvar.sparse import SparseMatrix

from conftest import linear_tensor, make_tensor


class TestFit:
    def test_noiseless_recovery(self, rng):
        tensor, A, b = linear_tensor(rng, p=5, n=30, slots=8)
        model, report = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 0.0))
        assert np.abs(model.A.to_dense() - A).max() < 1e-6
        assert np.abs(model.b - b).max() < 1e-6
        assert report.flagged_lines == []

    def test_huge_lambda_gives_slot_means(self, rng):
        tensor, _, _ = linear_tensor(rng, noise=1.0)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 1e15))
        assert model.A.nnz == 0
        expect = tensor.values[:, :, 1:].mean(axis=0)
        assert np.abs(model.b - expect).max() < 1e-10

    def test_sim_support_recovery(self):
        # single-regime generator data: per-line CV keeps most positions right
        from regvar import analysis

        spec = simgen.GeneratorSpec(p=60, n=90, slots=20, switch_t=19, seed=21)
        tensor, truth = simgen.gen_dataset(spec)
        model, _ = varmodel.fit(
            tensor,
            penalty=PenaltySpec("lasso"),
            config=SolverConfig(seed=21),
            lambda_mode="cv_per_line",
        )
        assert analysis.support_recovery(model.A, truth.A) >= 70.0

    def test_centering_identity(self, rng):
        tensor, _, _ = linear_tensor(rng, noise=2.0)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 50.0))
        x, y, _, _ = varmodel._lagged_pairs(tensor.values, None, 1)
        A = model.A.to_dense()
        direct = np.mean(
            [y[i] - A @ x[i] for i in range(tensor.n_days)], axis=0
        )
        assert np.abs(model.b - direct).max() <= 1e-10

    def test_residual_orthogonality_ols(self, rng):
        # sample analogue of the normal equations at lambda = 0
        tensor, _, _ = linear_tensor(rng, p=4, n=25, slots=6, noise=1.5)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("none"))
        x, y, _, _ = varmodel._lagged_pairs(tensor.values, None, 1)
        A = model.A.to_dense()
        resid = y - model.b[None] - np.matmul(A, x)
        cross = np.einsum("iks,iqs->kq", resid, x)
        scale = np.einsum("iks,iqs->kq", np.abs(resid), np.abs(x)).max()
        assert np.abs(cross).max() <= 1e-8 * max(1.0, scale)

    def test_window_too_short(self, rng):
        tensor, _, _ = linear_tensor(rng)
        with pytest.raises(WindowTooShort):
            varmodel.fit(tensor, window=(2, 2))

    def test_requires_imputed(self, rng):
        vals = rng.uniform(1, 9, (5, 2, 4))
        vals[0, 0, 0] = np.nan
        tensor = make_tensor(vals)
        with pytest.raises(ValueError):
            varmodel.fit(tensor)

    def test_diagonal_variant(self, rng):
        tensor, _, _ = linear_tensor(rng, noise=0.5)
        model, _ = varmodel.fit(
            tensor, penalty=PenaltySpec("lasso", 0.1), diagonal=True
        )
        dense = model.A.to_dense()
        off = dense - np.diag(np.diag(dense))
        assert np.abs(off).max() == 0.0

    def test_two_lags(self, rng):
        # noiseless 2-lag recursion is recovered exactly by the lags=2 fit
        p, n, slots = 3, 40, 9
        A1 = 0.2 * rng.standard_normal((p, p))
        A2 = 0.1 * rng.standard_normal((p, p))
        vals = np.empty((n, p, slots))
        vals[:, :, 0] = rng.uniform(40, 60, (n, p))
        vals[:, :, 1] = rng.uniform(40, 60, (n, p))
        for t in range(1, slots - 1):
            vals[:, :, t + 1] = (
                5.0 + vals[:, :, t] @ A1.T + vals[:, :, t - 1] @ A2.T
            )
        tensor = make_tensor(vals)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 0.0), lags=2)
        dense = model.A.to_dense()
        assert np.abs(dense[:, :p] - A1).max() < 1e-6
        assert np.abs(dense[:, p:] - A2).max() < 1e-6
        day = vals[0]
        pred = model.predict(day)
        assert np.abs(pred - day[:, 2:]).max() < 1e-7


class TestPredict:
    def test_identity_dynamics(self, rng):
        day = rng.uniform(0, 9, (3, 5))
        model = varmodel.LinearPredictor(
            sections=["a", "b", "c"],
            window=(0, 4),
            b=np.zeros((3, 4)),
            A=SparseMatrix.identity(3),
        )
        assert np.array_equal(model.predict(day), day[:, :-1])

    def test_zero_matrix_returns_intercepts(self, rng):
        b = rng.standard_normal((3, 4))
        model = varmodel.LinearPredictor(
            sections=["a", "b", "c"],
            window=(0, 4),
            b=b,
            A=SparseMatrix.zeros((3, 3)),
        )
        assert np.array_equal(model.predict(rng.uniform(0, 9, (3, 5))), b)

    def test_hand_case(self):
        model = varmodel.LinearPredictor(
            sections=["a", "b"],
            window=(0, 1),
            b=np.array([[1.0], [1.0]]),
            A=SparseMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]])),
        )
        out = model.predict(np.array([[3.0, 77.0], [4.0, 77.0]]))
        assert out.ravel().tolist() == [5.0, 4.0]

    def test_linearity_of_coefficient_part(self, rng):
        tensor, _, _ = linear_tensor(rng, noise=1.0)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 10.0))
        A = model.A.to_dense()
        x1 = rng.standard_normal(5)
        x2 = rng.standard_normal(5)
        a, bcoef = 0.7, -1.3
        lhs = A @ (a * x1 + bcoef * x2)
        rhs = a * (A @ x1) + bcoef * (A @ x2)
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_shape_mismatch(self, rng):
        tensor, _, _ = linear_tensor(rng)
        model, _ = varmodel.fit(tensor, penalty=PenaltySpec("lasso", 0.0))
        with pytest.raises(ShapeMismatch):
            model.predict(np.ones((2, 8)))


class TestBaselines:
    def test_ha_is_training_mean(self, rng):
        tensor, _, _ = linear_tensor(rng, noise=1.0)
        ha = varmodel.baseline_ha(tensor)
        expect = tensor.values[:, :, 1:].mean(axis=0)
        assert np.allclose(ha.predict(tensor.values[0]), expect)

    def test_ha_single_day(self, rng):
        vals = rng.uniform(1, 9, (1, 2, 4))
        tensor = make_tensor(vals)
        ha = varmodel.baseline_ha(tensor)
        assert np.allclose(ha.predict(vals[0]), vals[0, :, 1:])

    def test_ha_constant(self):
        tensor = make_tensor(np.full((4, 2, 5), 7.0))
        assert np.allclose(
            varmodel.baseline_ha(tensor).predict(tensor.values[0]), 7.0
        )

    def test_po_copies_previous(self, rng):
        day = rng.uniform(0, 9, (2, 6))
        assert np.array_equal(varmodel.baseline_po(day), day[:, :-1])

    def test_po_constant_day_zero_error(self):
        day = np.full((2, 6), 3.0)
        assert np.array_equal(varmodel.baseline_po(day), day[:, 1:])

    def test_ar1_noiseless_recursion(self, rng):
        n, slots = 30, 9
        w = np.empty((n, 1, slots))
        w[:, 0, 0] = rng.uniform(1, 9, n)
        for t in range(slots - 1):
            w[:, 0, t + 1] = 1.0 + 0.5 * w[:, 0, t]
        ar = varmodel.baseline_ar(make_tensor(w), order=1)
        assert np.abs(ar.coef[0] - [1.0, 0.5]).max() < 1e-8
        assert not ar.fallback[0]

    def test_ar_constant_data_falls_back(self):
        tensor = make_tensor(np.full((6, 1, 5), 4.0))
        ar = varmodel.baseline_ar(tensor, order=1)
        assert ar.fallback[0]
        assert np.allclose(ar.predict(tensor.values[0]), 4.0)

    def test_ar_never_crosses_day_boundary(self, rng):
        # predictions for a day depend only on that day's columns
        tensor, _, _ = linear_tensor(rng, p=2, n=20, slots=6, noise=1.0)
        ar = varmodel.baseline_ar(tensor, order=2)
        day = tensor.values[3]
        other = tensor.values[4]
        assert not np.array_equal(ar.predict(day), ar.predict(other))
        # perturbing other days after fitting cannot change a prediction
        pred = ar.predict(day)
        assert np.array_equal(pred, ar.predict(day.copy()))

    def test_ar_order_bounds(self, rng):
        tensor, _, _ = linear_tensor(rng)
        with pytest.raises(ValueError):
            varmodel.baseline_ar(tensor, order=0)


class TestMoments:
    def test_oracle_exact_moments_identity_cov(self):
        p = 4
        moments = varmodel.MomentModel(
            mean_X=np.zeros((p, 3)),
            mean_Y=np.zeros((p, 3)),
            Sigma=np.eye(p),
            C_YX=np.eye(p),
            window=(0, 3),
        )
        model = varmodel.oracle_predictor(moments)
        assert np.allclose(model.A.to_dense(), np.eye(p))

    def test_oracle_recovers_known_matrix(self):
        spec = simgen.GeneratorSpec(p=12, n=5, slots=10, switch_t=9, seed=3)
        truth = simgen.make_truth(spec)
        moments = simgen.theoretical_moments(truth)
        model = varmodel.oracle_predictor(moments)
        assert np.abs(model.A.to_dense() - truth.A.to_dense()).max() < 1e-10
        # intercepts satisfy b_t = E[Y_t] - A E[X_t]
        expect_b = moments.mean_Y - truth.A.to_dense() @ moments.mean_X
        assert np.abs(model.b - expect_b).max() < 1e-10

    def test_singular_sigma(self):
        p = 3
        sigma = np.zeros((p, p))
        with pytest.raises(SingularSigma):
            varmodel.oracle_predictor(
                varmodel.MomentModel(
                    mean_X=np.zeros((p, 2)),
                    mean_Y=np.zeros((p, 2)),
                    Sigma=sigma,
                    C_YX=np.zeros((p, p)),
                    window=(0, 2),
                )
            )

    def test_sample_oracle_error_shrinks_with_n(self):
        # Monte Carlo: squared moment-oracle error roughly halves when the
        # sample doubles (allow a factor-2 band, median over seeds)
        spec_small = dict(p=8, slots=12, switch_t=11, avg_degree=4.0)
        ratios = []
        for seed in range(5):
            errs = {}
            for n in (200, 400):
                spec = simgen.GeneratorSpec(n=n, seed=seed, **spec_small)
                tensor, truth = simgen.gen_dataset(spec)
                moments = varmodel.sample_moments(tensor)
                model = varmodel.oracle_predictor(moments, tensor.sections)
                errs[n] = np.linalg.norm(model.A.to_dense() - truth.A.to_dense()) ** 2
            ratios.append(errs[400] / errs[200])
        med = float(np.median(ratios))
        assert 0.25 <= med <= 1.0

    def test_moment_model_validates(self):
        with pytest.raises(ValueError):
            varmodel.MomentModel(
                mean_X=np.zeros((2, 1)),
                mean_Y=np.zeros((2, 1)),
                Sigma=np.array([[1.0, 0.5], [0.4, 1.0]]),
                C_YX=np.zeros((2, 2)),
            )


@pytest.fixture(scope="module")
def single_regime():
    spec = simgen.GeneratorSpec(p=20, n=40, slots=14, switch_t=13, seed=11)
    tensor, truth = simgen.gen_dataset(spec)
    oracle = varmodel.oracle_predictor(
        simgen.theoretical_moments(truth), tensor.sections
    )
    return tensor, truth, oracle


class TestExcessRisk:

    def test_oracle_self_risk_zero(self, single_regime):
        _, truth, oracle = single_regime
        est = varmodel.excess_risk_mc(
            oracle, oracle, simgen.day_sampler(truth), reps=200, seed=1
        )
        assert est.risk_diff == 0.0
        assert est.dist_sq == 0.0

    def test_decomposition_identity(self, single_regime):
        tensor, truth, oracle = single_regime
        model, _ = varmodel.fit(
            tensor, penalty=PenaltySpec("lasso"), config=SolverConfig(seed=11),
            lambda_mode="cv_per_line",
        )
        est = varmodel.excess_risk_mc(
            model, oracle, simgen.day_sampler(truth), reps=4000, seed=2
        )
        combined = np.hypot(est.risk_diff_se, est.dist_sq_se)
        assert abs(est.risk_diff - est.dist_sq) <= 3 * combined
        # both agree with the closed form
        exact = simgen.exact_excess_risk(truth, model)
        assert abs(est.dist_sq - exact) <= 4 * est.dist_sq_se

    def test_rank_one_closed_form(self, single_regime):
        tensor, truth, oracle = single_regime
        r = np.random.default_rng(4)
        p = truth.p
        u = r.standard_normal(p)
        v = r.standard_normal(p)
        delta = 0.05
        A_pert = oracle.A.to_dense() + delta * np.outer(u, v)
        b_pert = oracle.b - delta * np.outer(u, v) @ truth.means[:, :-1]
        pert = varmodel.LinearPredictor(
            sections=oracle.sections,
            window=oracle.window,
            b=b_pert,
            A=SparseMatrix.from_dense(A_pert),
            method="perturbed",
        )
        est = varmodel.excess_risk_mc(
            pert, oracle, simgen.day_sampler(truth), reps=6000, seed=5
        )
        covs = simgen.slot_covariances(truth)
        closed = (
            delta**2
            * float(u @ u)
            * sum(float(v @ covs[s] @ v) for s in range(truth.slots - 1))
            / p
        )
        assert abs(est.dist_sq - closed) <= 3 * est.dist_sq_se

    def test_risk_bound_with_true_moments(self, single_regime):
        # excess risk is bounded by the moment-based decomposition:
        # p^-1 {||(A*-A)S^(1/2)||_F^2 + 2||EY-Ybar||_F^2 + 2||A(EX-Xbar)||_F^2}
        tensor, truth, oracle = single_regime
        for lam in (0.0, 200.0, 2000.0):
            model, _ = varmodel.fit(
                tensor, penalty=PenaltySpec("lasso", lam),
                config=SolverConfig(seed=11),
            )
            est = varmodel.excess_risk_mc(
                model, oracle, simgen.day_sampler(truth), reps=3000, seed=6
            )
            moments = simgen.theoretical_moments(truth)
            x, y, _, _ = varmodel._lagged_pairs(tensor.values, None, 1)
            A_hat = model.A.to_dense()
            A_star = oracle.A.to_dense()
            sq = np.linalg.cholesky(
                moments.Sigma + 1e-12 * np.eye(truth.p)
            )
            term1 = np.linalg.norm((A_star - A_hat) @ sq) ** 2
            term2 = 2 * np.linalg.norm(moments.mean_Y - y.mean(axis=0)) ** 2
            term3 = 2 * np.linalg.norm(
                A_hat @ (moments.mean_X - x.mean(axis=0))
            ) ** 2
            bound = (term1 + term2 + term3) / truth.p
            assert est.dist_sq <= bound + 3 * est.dist_sq_se


class TestTimeSliced:
    def test_per_slot_models_stitch(self, rng):
        tensor, A, b = linear_tensor(rng, p=3, n=20, slots=6)
        ts, reports = varmodel.fit_ts(
            tensor, penalty=PenaltySpec("lasso", 0.0), lambda_mode="fixed"
        )
        assert len(ts.models) == 5
        day = tensor.values[0]
        assert np.abs(ts.predict(day) - day[:, 1:]).max() < 1e-6

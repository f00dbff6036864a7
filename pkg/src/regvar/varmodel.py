"""Daily-regenerating VAR predictors, baselines, and moment oracles.

A fitted predictor maps a day's slot t-1 state to slot t through
prediction = b_t + A x_{t-1}, with one coefficient matrix A shared across
the slots of its window. Fitting centers the lagged pairs empirically,
solves one penalized sub-problem per output line (sharing a single Gram
matrix), and recovers the intercepts from the centering identity
b = mean(Y - A X).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, solver
from .dataset import DayTensor
from .errors import RankDeficient, ShapeMismatch, SingularSigma, WindowTooShort
from .sparse import SparseMatrix
from .solver import PenaltySpec, SolverConfig

LAMBDA_MODES = ("fixed", "cv_per_line", "cv_shared")


@dataclass
class LinearPredictor:
    """Intercepts b (p x w) plus coefficient matrix A over a slot window.

    window = (lo, hi) bounds the slots used, inclusive; predicted slots
    are lo+lags .. hi, so b has w = hi - lo - lags + 1 columns. A has
    shape (p, lags*p); the default lags=1 gives the square p x p matrix.
    """

    sections: list
    window: tuple
    b: np.ndarray
    A: SparseMatrix
    method: str = "lasso"
    lambdas: object = None
    lags: int = 1

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        p = len(self.sections)
        lo, hi = self.window
        w = hi - lo - self.lags + 1
        if self.b.shape != (p, w):
            raise ShapeMismatch(
                f"b shape {self.b.shape} does not match p={p}, window {self.window}"
            )
        if self.A.shape != (p, self.lags * p):
            raise ShapeMismatch(f"A shape {self.A.shape} does not match p={p}")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("intercepts must be finite")

    @property
    def predicted_slots(self) -> range:
        lo, hi = self.window
        return range(lo + self.lags, hi + 1)

    def predict(self, day: np.ndarray) -> np.ndarray:
        """Predict columns lo+lags..hi of a day from its earlier columns."""
        return predict_days(self, np.asarray(day, dtype=np.float64)[None])[0]


@dataclass
class FitReport:
    """Per-line fit diagnostics; nonzero counts match the stored A."""

    method: str
    window: tuple
    lambdas: object
    nnz_per_line: np.ndarray
    iterations: np.ndarray
    flagged_lines: list
    wall_time_s: float


@dataclass
class MomentModel:
    """First and second moments of the lagged pairs of a window.

    Sigma and C_YX pool (sum) the per-slot second moments across the
    window's slots and average across days, matching the Frobenius
    objective. Sigma must be symmetric PSD within 1e-10 of its scale.
    """

    mean_X: np.ndarray
    mean_Y: np.ndarray
    Sigma: np.ndarray
    C_YX: np.ndarray
    window: tuple = (0, 1)

    def __post_init__(self):
        self.Sigma = np.asarray(self.Sigma, dtype=np.float64)
        scale = max(1.0, float(np.abs(self.Sigma).max()))
        if np.abs(self.Sigma - self.Sigma.T).max() > 1e-10 * scale:
            raise ValueError("Sigma must be symmetric")
        if np.linalg.eigvalsh(self.Sigma)[0] < -1e-10 * scale:
            raise ValueError("Sigma must be positive semidefinite")


@dataclass
class ExcessRiskEstimate:
    """Monte-Carlo excess risk: risk-difference and distance estimators.

    risk_diff averages p^-1 (||Y - L(X)||_F^2 - ||Y - L*(X)||_F^2);
    dist_sq averages p^-1 ||L(X) - L*(X)||_F^2 over the same days. Both
    estimate the same quantity when L* is the optimal linear predictor.
    """

    risk_diff: float
    risk_diff_se: float
    dist_sq: float
    dist_sq_se: float
    reps: int


def _resolve_window(tensor_slots: int, window) -> tuple:
    if window is None:
        return 0, tensor_slots - 1
    lo, hi = int(window[0]), int(window[1])
    if not (0 <= lo < hi <= tensor_slots - 1):
        raise WindowTooShort(f"window {window} invalid for {tensor_slots} slots")
    return lo, hi


def _lagged_pairs(values: np.ndarray, window, lags: int) -> tuple:
    """Build per-day covariates (n, lags*p, w) and outputs (n, p, w)."""
    n, p, slots = values.shape
    lo, hi = _resolve_window(slots, window)
    w = hi - lo - lags + 1
    if w < 1:
        raise WindowTooShort(f"window {(lo, hi)} too short for {lags} lag(s)")
    blocks = [values[:, :, lo + lags - 1 - h : hi - h] for h in range(lags)]
    x_days = np.concatenate(blocks, axis=1)
    y_days = values[:, :, lo + lags : hi + 1]
    return x_days, y_days, (lo, hi), w


def _require_imputed(train: DayTensor) -> None:
    if not train.mask.all():
        raise ValueError("training tensor must be fully imputed before fitting")


def fit(
    train: DayTensor,
    window=None,
    penalty: PenaltySpec = PenaltySpec("lasso"),
    config: SolverConfig = SolverConfig(),
    lambda_mode: str = "fixed",
    cv_rule: str = "min",
    diagonal: bool = False,
    lags: int = 1,
    standardize: bool = False,
) -> tuple:
    """Fit the regenerative VAR on the training days of a slot window.

    Lagged pairs (x_{t-1}, y_t) inside the window are centered
    empirically and the p line problems are solved against one shared
    Gram matrix. lambda_mode chooses the penalty level: "fixed" uses
    penalty.lam for every line, "cv_per_line" selects a lambda per line
    by K-fold CV over whole days, "cv_shared" selects one lambda
    minimizing the summed CV risk. cv_rule picks the point on the CV
    curve: "min" is the plain risk minimizer, "1se" the largest lambda
    within one standard error of it (sparser supports at near-minimal
    risk). With standardize, covariate columns are rescaled to unit
    pooled standard deviation for the solve (lambda applies on that
    scale) and the coefficients are transformed back. Returns
    (LinearPredictor, FitReport).
    """
    _require_imputed(train)
    if lambda_mode not in LAMBDA_MODES:
        raise ValueError(f"unknown lambda_mode {lambda_mode!r}")
    t0 = time.perf_counter()
    x_days, y_days, win, w = _lagged_pairs(train.values, window, lags)
    p = train.n_sections
    col_scale = None
    if standardize:
        xc0 = x_days - x_days.mean(axis=0)
        col_scale = np.sqrt((xc0**2).mean(axis=(0, 2)))
        col_scale[col_scale == 0.0] = 1.0
        x_days = x_days / col_scale[None, :, None]
    if diagonal:
        return _fit_diagonal(train, x_days, y_days, win, penalty, config, lags, t0,
                             col_scale)

    xbar = x_days.mean(axis=0)
    ybar = y_days.mean(axis=0)
    D = solver._stack(x_days - xbar)
    Ymat = (y_days - ybar).transpose(0, 2, 1).reshape(-1, p)
    G = D.T @ D
    C = D.T @ Ymat
    y_sqs = np.ascontiguousarray(((y_days - ybar) ** 2).sum(axis=(0, 2)))

    iterations = np.zeros(p, dtype=np.int64)
    flagged: list = []
    if penalty.family == "none":
        B = solver._solve_ols_gram(G, C).T
        lambdas: object = None
    elif penalty.family == "group_lasso":
        lam = penalty.lam
        if lambda_mode != "fixed":
            lam = _cv_shared_group(x_days, y_days, config)
        B = np.zeros((x_days.shape[1], p))
        iters, status, _ = _kernels.group_cd_gram(
            np.ascontiguousarray(G),
            np.ascontiguousarray(C),
            float(y_sqs.sum()),
            float(lam),
            config.tolerance,
            config.max_iterations,
            config.check_objective,
            True,
            B,
        )
        solver._check_status([status])
        if status != _kernels.CONVERGED:
            flagged = list(range(p))
        iterations[:] = iters
        B = B.T
        lambdas = float(lam)
    else:
        if lambda_mode == "fixed":
            lam_vec = np.full(p, penalty.lam)
        else:
            if cv_rule not in ("min", "1se"):
                raise ValueError(f"unknown cv_rule {cv_rule!r}")
            if lambda_mode == "cv_per_line":
                lam_vec, grids, risks, fold_risks = solver.cv_risks_lines(
                    x_days, y_days, penalty.family, config, penalty.alpha
                )
                if cv_rule == "1se":
                    lam_vec = solver.select_lambda_1se(grids, fold_risks)
            else:  # one lambda across the p sub-problems
                _, grids, risks, fold_risks = solver.cv_risks_lines(
                    x_days, y_days, penalty.family, config, penalty.alpha,
                    shared_grid=True,
                )
                summed = fold_risks.sum(axis=0)  # (K, G)
                if cv_rule == "1se":
                    lam_shared = float(
                        solver.select_lambda_1se(grids[:1], summed[None])[0]
                    )
                else:
                    lam_shared = float(grids[0][int(summed.mean(axis=0).argmin())])
                lam_vec = np.full(p, lam_shared)
        B = np.zeros((p, x_days.shape[1]))
        iters, status, kkts = _kernels.enet_cd_gram_multi(
            np.ascontiguousarray(G),
            np.ascontiguousarray(C),
            y_sqs,
            np.ascontiguousarray(lam_vec, dtype=np.float64),
            penalty.mixing,
            config.tolerance,
            config.max_iterations,
            config.check_objective,
            True,
            B,
        )
        solver._check_status(status)
        iterations = iters
        flagged = [int(k) for k in np.flatnonzero(status == _kernels.MAX_ITER)]
        lambdas = lam_vec if lambda_mode != "fixed" else float(penalty.lam)

    if col_scale is not None:
        B = B / col_scale[None, :]  # back to raw-covariate units
        xbar = xbar * col_scale[:, None]
    A = SparseMatrix.from_dense(B)
    b_hat = ybar - B @ xbar  # centering identity: b = mean(Y - A X)
    model = LinearPredictor(
        sections=list(train.sections),
        window=win,
        b=b_hat,
        A=A,
        method=penalty.family,
        lambdas=lambdas,
        lags=lags,
    )
    report = FitReport(
        method=penalty.family,
        window=win,
        lambdas=lambdas,
        nnz_per_line=A.row_nnz(),
        iterations=iterations,
        flagged_lines=flagged,
        wall_time_s=time.perf_counter() - t0,
    )
    return model, report


def _fit_diagonal(train, x_days, y_days, win, penalty, config, lags, t0,
                  col_scale=None):
    """Restrict each line problem to its own section's lag columns."""
    p = train.n_sections
    n, _, w = y_days.shape
    coefs = np.zeros((p, lags * p))
    iterations = np.zeros(p, dtype=np.int64)
    flagged = []
    for k in range(p):
        cols = [h * p + k for h in range(lags)]
        problem = solver.build_line_problem(x_days[:, cols, :], y_days[:, k, :])
        res = solver.fit_line(problem, penalty, config)
        coefs[k, cols] = res.coef.to_dense()
        iterations[k] = res.iterations
        if not res.converged:
            flagged.append(k)
    x_mean = x_days.mean(axis=0)
    if col_scale is not None:
        coefs = coefs / col_scale[None, :]
        x_mean = x_mean * col_scale[:, None]
    A = SparseMatrix.from_dense(coefs)
    b_hat = y_days.mean(axis=0) - coefs @ x_mean
    model = LinearPredictor(
        sections=list(train.sections),
        window=win,
        b=b_hat,
        A=A,
        method=f"{penalty.family}(diagonal)",
        lambdas=float(penalty.lam),
        lags=lags,
    )
    report = FitReport(
        method=model.method,
        window=win,
        lambdas=float(penalty.lam),
        nnz_per_line=A.row_nnz(),
        iterations=iterations,
        flagged_lines=flagged,
        wall_time_s=time.perf_counter() - t0,
    )
    return model, report


def _cv_shared_group(x_days, y_days, config: SolverConfig) -> float:
    """Shared-lambda CV for the group penalty along a warm-started path."""
    n, p_in, w = x_days.shape
    p_out = y_days.shape[1]
    folds = solver.make_day_folds(n, config.folds, config.seed)
    xc_full = x_days - x_days.mean(axis=0)
    yc_full = y_days - y_days.mean(axis=0)
    lmax = solver.group_lambda_max(
        yc_full.transpose(1, 0, 2).reshape(p_out, -1),
        xc_full.transpose(1, 0, 2).reshape(p_in, -1),
    )
    grid = lmax * solver.lambda_ratios(config)
    risks = np.zeros(grid.size)
    for test_idx in folds:
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        xt, yt = x_days[train_mask], y_days[train_mask]
        xbar, ybar = xt.mean(axis=0), yt.mean(axis=0)
        D = solver._stack(xt - xbar)
        Ymat = (yt - ybar).transpose(0, 2, 1).reshape(-1, p_out)
        G = np.ascontiguousarray(D.T @ D)
        C = np.ascontiguousarray(D.T @ Ymat)
        y_sq = float(((yt - ybar) ** 2).sum())
        xc_te = (x_days[test_idx] - xbar).transpose(1, 0, 2).reshape(p_in, -1)
        yc_te = (y_days[test_idx] - ybar).transpose(1, 0, 2).reshape(p_out, -1)
        B = np.zeros((p_in, p_out))
        for g, lam in enumerate(grid):
            _, status, _ = _kernels.group_cd_gram(
                G, C, y_sq, float(lam), config.cv_tolerance,
                config.max_iterations, config.check_objective, False, B,
            )
            solver._check_status([status])
            resid = yc_te - B.T @ xc_te
            risks[g] += (resid**2).sum() / yc_te.size
    risks /= len(folds)
    return float(grid[int(risks.argmin())])  # grid descending: ties to larger


def _feature_tensor(days_values: np.ndarray, window, lags: int) -> np.ndarray:
    """(B, p, slots) -> (B, lags*p, w) lagged feature columns."""
    lo, hi = window
    blocks = [days_values[:, :, lo + lags - 1 - h : hi - h] for h in range(lags)]
    return np.concatenate(blocks, axis=1)


def predict_days(model: LinearPredictor, days_values: np.ndarray) -> np.ndarray:
    """Vectorized prediction for a batch of day matrices (B, p, slots)."""
    days_values = np.asarray(days_values, dtype=np.float64)
    p = len(model.sections)
    lo, hi = model.window
    if days_values.ndim != 3 or days_values.shape[1] != p:
        raise ShapeMismatch(f"day batch shape {days_values.shape} unusable")
    if days_values.shape[2] < hi:
        raise ShapeMismatch(
            f"day needs at least {hi} slot columns for window {model.window}"
        )
    X = _feature_tensor(days_values, model.window, model.lags)
    A = model.A.to_dense()
    return np.matmul(A, X) + model.b[None]


def predict(model, day: np.ndarray) -> np.ndarray:
    """Predict one day with any predictor exposing .predict."""
    return model.predict(np.asarray(day, dtype=np.float64))


def baseline_ha(train: DayTensor, window=None) -> LinearPredictor:
    """Historical average: predict each (section, slot) by its train mean."""
    _require_imputed(train)
    lo, hi = _resolve_window(train.slot_count, window)
    b = train.values[:, :, lo + 1 : hi + 1].mean(axis=0)
    return LinearPredictor(
        sections=list(train.sections),
        window=(lo, hi),
        b=b,
        A=SparseMatrix.zeros((train.n_sections, train.n_sections)),
        method="ha",
    )


def po_predictor(sections, slot_count: int, window=None) -> LinearPredictor:
    """Previous observation as a predictor: identity A, zero intercepts."""
    lo, hi = _resolve_window(slot_count, window)
    p = len(sections)
    return LinearPredictor(
        sections=list(sections),
        window=(lo, hi),
        b=np.zeros((p, hi - lo)),
        A=SparseMatrix.identity(p),
        method="po",
    )


def baseline_po(day: np.ndarray, window=None) -> np.ndarray:
    """Previous observation: column t of the output copies column t-1."""
    day = np.asarray(day, dtype=np.float64)
    lo, hi = _resolve_window(day.shape[1], window)
    return day[:, lo:hi].copy()


@dataclass
class ARBaseline:
    """Per-section autoregression on the section's own recent slots.

    Lines whose design is rank deficient fall back to the historical
    average (flagged in `fallback`); predicted slots without enough
    same-day lags also use the historical average column.
    """

    sections: list
    window: tuple
    order: int
    coef: np.ndarray
    fallback: np.ndarray
    ha: np.ndarray

    def predict(self, day: np.ndarray) -> np.ndarray:
        day = np.asarray(day, dtype=np.float64)
        lo, hi = self.window
        p = len(self.sections)
        out = np.empty((p, hi - lo))
        for j, t in enumerate(range(lo + 1, hi + 1)):
            if t - lo < self.order:
                out[:, j] = self.ha[:, j]
                continue
            pred = self.coef[:, 0].copy()
            for h in range(1, self.order + 1):
                pred += self.coef[:, h] * day[:, t - h]
            out[:, j] = np.where(self.fallback, self.ha[:, j], pred)
        return out


def baseline_ar(train: DayTensor, order: int, window=None) -> ARBaseline:
    """Fit per-section AR(order) by OLS on all same-day lag rows."""
    _require_imputed(train)
    if not 1 <= order <= 5:
        raise ValueError("order must be in 1..5")
    lo, hi = _resolve_window(train.slot_count, window)
    if hi - lo <= order:
        raise WindowTooShort(f"window {(lo, hi)} too short for order {order}")
    p = train.n_sections
    n = train.n_days
    coef = np.zeros((p, order + 1))
    fallback = np.zeros(p, dtype=bool)
    targets = range(lo + order, hi + 1)
    for k in range(p):
        rows = []
        ys = []
        for t in targets:
            lagged = [np.ones(n)] + [
                train.values[:, k, t - h] for h in range(1, order + 1)
            ]
            rows.append(np.column_stack(lagged))
            ys.append(train.values[:, k, t])
        design = np.vstack(rows)
        y = np.concatenate(ys)
        sol, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < order + 1:
            fallback[k] = True
        else:
            coef[k] = sol
    ha = train.values[:, :, lo + 1 : hi + 1].mean(axis=0)
    return ARBaseline(
        sections=list(train.sections),
        window=(lo, hi),
        order=order,
        coef=coef,
        fallback=fallback,
        ha=ha,
    )


def sample_moments(tensor: DayTensor, window=None) -> MomentModel:
    """Empirical MomentModel over a window: per-day average, slot-summed."""
    _require_imputed(tensor)
    x_days, y_days, win, _ = _lagged_pairs(tensor.values, window, lags=1)
    n = tensor.n_days
    xbar = x_days.mean(axis=0)
    ybar = y_days.mean(axis=0)
    xc = x_days - xbar
    yc = y_days - ybar
    Sigma = np.einsum("ips,iqs->pq", xc, xc) / n
    Sigma = 0.5 * (Sigma + Sigma.T)
    C_YX = np.einsum("ips,iqs->pq", yc, xc) / n
    return MomentModel(mean_X=xbar, mean_Y=ybar, Sigma=Sigma, C_YX=C_YX, window=win)


def oracle_predictor(moments: MomentModel, sections=None) -> LinearPredictor:
    """Optimal linear predictor from moments: A* = C_YX Sigma^-1.

    Intercepts follow the normal equations: b*_t = E[Y_t] - A* E[X_t].
    A borderline Sigma (condition number above 1e12) gets a 1e-10 ridge
    jitter, flagged in the method tag; a singular Sigma raises.
    """
    Sigma = moments.Sigma
    p = Sigma.shape[0]
    scale = max(1.0, float(np.abs(Sigma).max()))
    eigs = np.linalg.eigvalsh(Sigma)
    method = "oracle"
    if eigs[0] <= 1e-14 * scale:
        raise SingularSigma("pooled covariance is singular")
    if eigs[-1] / eigs[0] > 1e12:
        Sigma = Sigma + 1e-10 * scale * np.eye(p)
        method = "oracle(jittered)"
    A = np.linalg.solve(Sigma, moments.C_YX.T).T
    b = moments.mean_Y - A @ moments.mean_X
    if sections is None:
        sections = [str(k) for k in range(p)]
    return LinearPredictor(
        sections=list(sections),
        window=moments.window,
        b=b,
        A=SparseMatrix.from_dense(A),
        method=method,
    )


def excess_risk_mc(
    model,
    oracle,
    day_source,
    reps: int = 10000,
    seed: int = 0,
    batch: int = 256,
) -> ExcessRiskEstimate:
    """Monte-Carlo excess risk of `model` relative to the oracle.

    day_source(rng) must return a fresh (p, slots) day matrix. Evaluates
    both the paired risk difference and the squared predictor distance on
    the same generated days and reports each with its standard error.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.window
    diffs = np.empty(reps)
    dists = np.empty(reps)
    done = 0
    p = len(model.sections)
    while done < reps:
        count = min(batch, reps - done)
        days = np.stack([day_source(rng) for _ in range(count)])
        y = days[:, :, lo + model.lags : hi + 1]
        pred_m = predict_days(model, days)
        pred_o = predict_days(oracle, days)
        e_m = ((y - pred_m) ** 2).sum(axis=(1, 2))
        e_o = ((y - pred_o) ** 2).sum(axis=(1, 2))
        diffs[done : done + count] = (e_m - e_o) / p
        dists[done : done + count] = ((pred_m - pred_o) ** 2).sum(axis=(1, 2)) / p
        done += count
    return ExcessRiskEstimate(
        risk_diff=float(diffs.mean()),
        risk_diff_se=float(diffs.std(ddof=1) / np.sqrt(reps)),
        dist_sq=float(dists.mean()),
        dist_sq_se=float(dists.std(ddof=1) / np.sqrt(reps)),
        reps=reps,
    )


@dataclass
class TimeSlicedPredictor:
    """One single-slot predictor per predicted slot (time-specific fits)."""

    sections: list
    window: tuple
    models: list

    def predict(self, day: np.ndarray) -> np.ndarray:
        day = np.asarray(day, dtype=np.float64)
        cols = [m.predict(day) for m in self.models]
        return np.concatenate(cols, axis=1)


def fit_ts(
    train: DayTensor,
    window=None,
    penalty: PenaltySpec = PenaltySpec("lasso"),
    config: SolverConfig = SolverConfig(),
    lambda_mode: str = "cv_per_line",
    cv_rule: str = "min",
) -> tuple:
    """Time-specific fits: an independent coefficient matrix per slot."""
    lo, hi = _resolve_window(train.slot_count, window)
    models = []
    reports = []
    for t in range(lo, hi):
        m, r = fit(
            train,
            window=(t, t + 1),
            penalty=penalty,
            config=config,
            lambda_mode=lambda_mode,
            cv_rule=cv_rule,
        )
        models.append(m)
        reports.append(r)
    predictor = TimeSlicedPredictor(
        sections=list(train.sections), window=(lo, hi), models=models
    )
    return predictor, reports

"""Penalized multi-output least-squares engines.

Per-line problems (OLS, lasso, ridge, elastic net) are solved by cyclic
coordinate descent on the shared Gram system; column-grouped lasso by block
coordinate descent. Lambda selection uses K-fold cross-validation over
whole days.

Objective convention (factor 2 on the penalty, so lambda matches the
sqrt(n * sigma^2 * log p) scale used elsewhere in the package):

    SSE + 2*lambda*||b||_1                                   (lasso)
    SSE + 2*lambda*||b||_2^2                                 (ridge)
    SSE + 2*lambda*(alpha*||b||_1 + (1-alpha)*||b||_2^2)     (elastic net)
    SSE_F + 2*lambda*sum_l ||A[:, l]||_2                     (group lasso)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import RankDeficient, TooFewDays
from .sparse import SparseMatrix, SparseVector

FAMILIES = ("none", "lasso", "ridge", "elastic_net", "group_lasso")


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with level lam >= 0 and elastic-net mixing alpha."""

    family: str = "lasso"
    lam: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")

    @property
    def mixing(self) -> float:
        """Effective l1 fraction: lasso == 1, ridge == 0."""
        if self.family == "lasso":
            return 1.0
        if self.family == "ridge":
            return 0.0
        if self.family == "elastic_net":
            return self.alpha
        return 0.0 if self.family == "none" else 1.0


@dataclass(frozen=True)
class SolverConfig:
    """Convergence and cross-validation knobs.

    tolerance governs returned fits (coefficient-change threshold and the
    KKT certificate scale); cv_tolerance is the looser threshold used for
    the throwaway fits inside cross-validation searches, where risk
    curves are compared at grid resolution.
    """

    tolerance: float = 1e-8
    max_iterations: int = 10000
    lambda_grid_size: int = 50
    lambda_min_ratio: float = 1e-3
    folds: int = 5
    seed: int = 0
    check_objective: bool = True
    cv_tolerance: float = 1e-4

    def __post_init__(self):
        if self.tolerance <= 0 or self.cv_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass(frozen=True)
class LineProblem:
    """One centered sub-problem: design (m, p), response (m,).

    Columns of the design and the response must be empirically centered;
    checked on construction within 1e-10 relative to the data scale.
    """

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.design, dtype=np.float64)
        r = np.ascontiguousarray(self.response, dtype=np.float64)
        object.__setattr__(self, "design", d)
        object.__setattr__(self, "response", r)
        if d.ndim != 2 or r.ndim != 1 or d.shape[0] != r.shape[0]:
            raise ValueError("design must be (m, p) and response (m,)")
        scale_d = max(1.0, float(np.abs(d).max(initial=0.0)))
        scale_r = max(1.0, float(np.abs(r).max(initial=0.0)))
        if d.size and np.abs(d.mean(axis=0)).max() > 1e-10 * scale_d:
            raise ValueError("design columns are not centered")
        if r.size and abs(r.mean()) > 1e-10 * scale_r:
            raise ValueError("response is not centered")

    @property
    def n_features(self) -> int:
        return self.design.shape[1]


@dataclass
class LineFit:
    """Per-line solution plus convergence diagnostics."""

    coef: SparseVector
    iterations: int
    converged: bool
    kkt: float


@dataclass
class GroupLassoFit:
    A: SparseMatrix
    iterations: int
    converged: bool
    kkt: float


@dataclass
class CVSelection:
    lambda_: float
    curve: list  # (lambda, mean held-out squared error) pairs, lambda descending


def soft_threshold(z, lam):
    """sign(z) * max(|z| - lam, 0); accepts scalars or arrays."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    out = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0) + 0.0  # no -0.0
    return float(out) if np.isscalar(z) else out


def lambda_max(problem: LineProblem) -> float:
    """Smallest lambda with an all-zero lasso solution (2*lambda convention)."""
    if problem.design.size == 0:
        return 0.0
    return float(np.abs(problem.design.T @ problem.response).max())


def build_line_problem(x_days: np.ndarray, y_days: np.ndarray) -> LineProblem:
    """Center per-(feature, slot) over days and stack day-major, slot-minor.

    x_days: (n, p, w) covariate columns per day; y_days: (n, w) responses.
    """
    x_days = np.asarray(x_days, dtype=np.float64)
    y_days = np.asarray(y_days, dtype=np.float64)
    n, p, w = x_days.shape
    xc = x_days - x_days.mean(axis=0)
    yc = y_days - y_days.mean(axis=0)
    design = np.ascontiguousarray(xc.transpose(0, 2, 1).reshape(n * w, p))
    return LineProblem(design=design, response=yc.reshape(n * w))


def _check_status(status) -> None:
    if np.any(np.asarray(status) == _kernels.OBJECTIVE_INCREASED):
        raise RuntimeError(
            "coordinate descent objective increased; this is a solver bug"
        )


def _solve_ols_gram(G: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Normal-equations solve for one or many right-hand sides."""
    eigs = np.linalg.eigvalsh(G)
    if eigs[0] <= 1e-10 * max(eigs[-1], 1e-300):
        raise RankDeficient("design does not have full column rank")
    return np.linalg.solve(G, C)


def fit_line(
    problem: LineProblem,
    penalty: PenaltySpec,
    config: SolverConfig = SolverConfig(),
) -> LineFit:
    """Minimize the penalized line objective; see the module docstring.

    The returned solution satisfies the subgradient conditions within
    config.tolerance * (1 + lam) unless flagged non-converged.
    """
    D = problem.design
    y = problem.response
    G = D.T @ D
    c = D.T @ y
    if penalty.family == "none":
        beta = _solve_ols_gram(G, c)
        kkt = kkt_violation(problem, beta, penalty)
        return LineFit(
            coef=SparseVector.from_dense(beta), iterations=0, converged=True, kkt=kkt
        )
    if penalty.family == "group_lasso":
        raise ValueError("use fit_group_lasso for the group penalty")
    beta = np.zeros(problem.n_features)
    iters, status, kkt = _kernels.enet_cd_gram(
        G,
        c,
        float(y @ y),
        penalty.lam,
        penalty.mixing,
        config.tolerance,
        config.max_iterations,
        config.check_objective,
        True,
        beta,
    )
    _check_status([status])
    return LineFit(
        coef=SparseVector.from_dense(beta),
        iterations=int(iters),
        converged=status == _kernels.CONVERGED,
        kkt=float(kkt),
    )


def kkt_violation(problem: LineProblem, beta, penalty: PenaltySpec) -> float:
    """Max coordinatewise subgradient violation at beta, from the raw design.

    For active j: |g_j + lam*alpha*sign(beta_j)|; for inactive j:
    max(0, |g_j| - lam*alpha), where g = -D^T (y - D beta) plus the smooth
    (ridge) part 2*lam*(1-alpha)*beta. family "none" reduces to max |g_j|.
    """
    if penalty.family == "group_lasso":
        raise ValueError("kkt_violation covers the separable penalties only")
    if isinstance(beta, SparseVector):
        beta = beta.to_dense()
    beta = np.asarray(beta, dtype=np.float64)
    D = problem.design
    g = D.T @ (D @ beta - problem.response)
    lam1 = penalty.lam * penalty.mixing
    g = g + 2.0 * penalty.lam * (1.0 - penalty.mixing) * beta
    active = beta != 0.0
    viol_active = np.abs(g[active] + lam1 * np.sign(beta[active]))
    viol_inactive = np.maximum(np.abs(g[~active]) - lam1, 0.0)
    worst = 0.0
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    if viol_inactive.size:
        worst = max(worst, float(viol_inactive.max()))
    return worst


def group_lambda_max(Yc: np.ndarray, Xc: np.ndarray) -> float:
    """Entry point of the group-lasso path: max column-block correlation."""
    C = Xc @ Yc.T  # (p features, p outputs)
    return float(np.sqrt((C**2).sum(axis=1)).max(initial=0.0))


def fit_group_lasso(
    Yc: np.ndarray,
    Xc: np.ndarray,
    lam: float,
    config: SolverConfig = SolverConfig(),
    warm: np.ndarray | None = None,
) -> GroupLassoFit:
    """Column-grouped lasso: penalize the l2 norm of each column of A.

    Yc, Xc: centered outputs/covariates, shape (p, m) with samples stacked
    along the second axis. Minimizes ||Yc - A Xc||_F^2 + 2*lam*sum_l
    ||A[:, l]||_2 by block coordinate descent over columns l.
    """
    Yc = np.asarray(Yc, dtype=np.float64)
    Xc = np.asarray(Xc, dtype=np.float64)
    if Yc.shape[1] != Xc.shape[1]:
        raise ValueError("Yc and Xc must stack the same samples")
    G = np.ascontiguousarray(Xc @ Xc.T)
    C = np.ascontiguousarray(Xc @ Yc.T)  # (features, outputs)
    B = np.zeros_like(C) if warm is None else np.ascontiguousarray(warm)
    iters, status, kkt = _kernels.group_cd_gram(
        G,
        C,
        float((Yc**2).sum()),
        float(lam),
        config.tolerance,
        config.max_iterations,
        config.check_objective,
        True,
        B,
    )
    _check_status([status])
    return GroupLassoFit(
        A=SparseMatrix.from_dense(B.T),
        iterations=int(iters),
        converged=status == _kernels.CONVERGED,
        kkt=float(kkt),
    )


def make_day_folds(n_days: int, folds: int, seed: int) -> list:
    """Partition day indices into near-equal groups of a seeded shuffle.

    Sizes differ by at most one (the first n_days % folds groups get the
    extra day). Indices within each fold are sorted.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n_days < folds:
        raise TooFewDays(f"need >= {folds} days for {folds}-fold CV, got {n_days}")
    perm = np.random.default_rng(seed).permutation(n_days)
    base, extra = divmod(n_days, folds)
    out = []
    start = 0
    for k in range(folds):
        size = base + (1 if k < extra else 0)
        out.append(np.sort(perm[start : start + size]))
        start += size
    return out


def lambda_ratios(config: SolverConfig) -> np.ndarray:
    """Descending multipliers from 1 down to lambda_min_ratio, log-spaced."""
    return np.geomspace(1.0, config.lambda_min_ratio, config.lambda_grid_size)


def _stack(x_days: np.ndarray) -> np.ndarray:
    """(n, p, w) -> (n*w, p), day-major slot-minor (canonical order)."""
    n, p, w = x_days.shape
    return np.ascontiguousarray(x_days.transpose(0, 2, 1).reshape(n * w, p))


def cv_risks_lines(
    x_days: np.ndarray,
    y_days: np.ndarray,
    family: str,
    config: SolverConfig,
    alpha: float = 1.0,
    shared_grid: bool = False,
) -> tuple:
    """Per-line CV risks over per-line lambda grids sharing the covariates.

    x_days: (n, p, w); y_days: (n, L, w) for L lines. Returns
    (lam_vec (L,), grids (L, G), risks (L, G), fold_risks (L, K, G))
    where risks are mean held-out squared errors per cell, averaged over
    folds, and lam_vec is the risk-minimizing lambda per line (ties
    broken toward the larger lambda; the grids are descending so the
    first minimum wins). With shared_grid, every line gets one grid
    anchored at the global path entry point, so a single lambda can be
    read off the summed risks.
    """
    x_days = np.asarray(x_days, dtype=np.float64)
    y_days = np.asarray(y_days, dtype=np.float64)
    n, p, w = x_days.shape
    L = y_days.shape[1]
    if n < config.folds:
        raise TooFewDays(f"need >= {config.folds} days, got {n}")
    mixing = PenaltySpec(family=family, lam=0.0, alpha=alpha).mixing

    # Full-window path entry points define each line's grid.
    xc = x_days - x_days.mean(axis=0)
    yc = y_days - y_days.mean(axis=0)
    C_full = _stack(xc).T @ _stack(yc)
    lmax = np.abs(C_full).max(axis=0)  # (L,)
    if shared_grid:
        lmax = np.full(L, lmax.max(initial=0.0))
    ratios = lambda_ratios(config)
    grids = lmax[:, None] * ratios[None, :]

    folds = make_day_folds(n, config.folds, config.seed)
    fold_risks = np.zeros((L, len(folds), ratios.size))
    for fold_no, test_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        xt = x_days[train_mask]
        yt = y_days[train_mask]
        xbar = xt.mean(axis=0)
        ybar = yt.mean(axis=0)
        D = _stack(xt - xbar)
        G = D.T @ D
        Ymat = (yt - ybar).transpose(0, 2, 1).reshape(-1, L)
        C = D.T @ Ymat
        y_sqs = np.ascontiguousarray(((yt - ybar) ** 2).sum(axis=(0, 2)))
        xc_test = np.ascontiguousarray(
            (x_days[test_idx] - xbar).transpose(1, 0, 2).reshape(p, -1)
        )
        yc_test = np.ascontiguousarray(
            (y_days[test_idx] - ybar).transpose(1, 0, 2).reshape(L, -1)
        )
        fold_risks[:, fold_no, :] = _kernels.enet_path_cv_multi(
            np.ascontiguousarray(G),
            np.ascontiguousarray(C),
            y_sqs,
            np.ascontiguousarray(grids),
            mixing,
            config.cv_tolerance,
            config.max_iterations,
            xc_test,
            yc_test,
        )
        if not np.all(np.isfinite(fold_risks[:, fold_no, :])):
            raise RuntimeError(
                "coordinate descent objective increased; this is a solver bug"
            )
    risks = fold_risks.mean(axis=1)
    lam_vec = grids[np.arange(L), risks.argmin(axis=1)]
    return lam_vec, grids, risks, fold_risks


def select_lambda_1se(grids: np.ndarray, fold_risks: np.ndarray) -> np.ndarray:
    """Largest lambda whose mean CV risk is within one standard error of
    the minimum (per line). Grids are descending, so the first qualifying
    index wins."""
    risks = fold_risks.mean(axis=1)
    k_folds = fold_risks.shape[1]
    ses = fold_risks.std(axis=1, ddof=1) / np.sqrt(k_folds)
    L = risks.shape[0]
    best = risks.argmin(axis=1)
    out = np.empty(L)
    for k in range(L):
        thr = risks[k, best[k]] + ses[k, best[k]]
        out[k] = grids[k][int(np.argmax(risks[k] <= thr))]
    return out


def cv_select_lambda(
    x_days: np.ndarray,
    y_days: np.ndarray,
    family: str = "lasso",
    config: SolverConfig = SolverConfig(),
    alpha: float = 1.0,
) -> CVSelection:
    """Select lambda for one line problem by K-fold CV over whole days.

    x_days: (n, p, w) covariates; y_days: (n, w) responses for the line.
    The grid runs from the full-window lambda_max down to
    lambda_min_ratio * lambda_max, log-spaced. Returns the lambda with
    the smallest mean held-out squared error (ties toward the larger
    lambda) along with the full CV curve.
    """
    y_days = np.asarray(y_days, dtype=np.float64)
    lam_vec, grids, risks, _ = cv_risks_lines(
        x_days, y_days[:, None, :], family, config, alpha
    )
    curve = [(float(l), float(r)) for l, r in zip(grids[0], risks[0])]
    return CVSelection(lambda_=float(lam_vec[0]), curve=curve)

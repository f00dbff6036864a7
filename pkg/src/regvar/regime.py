"""Cross-validated regime-switch detection.

For every candidate switch slot t, two penalized predictors are fitted
per fold (one over slots 1..t, one over t+1..T; the t = T candidate is
the no-switch model) and scored on the held-out days. The estimated
switch is the candidate with the smallest mean held-out risk.

The fast path precomputes per-slot centered Gram matrices per fold once;
every candidate window's normal-equations data is then a prefix/suffix
sum, and the (t, fold) fits are warm-started along nested windows. Fold
cells are independent, so any thread count yields identical output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, solver, varmodel
from ._parallel import thread_map
from .dataset import DayTensor
from .errors import TooFewDays, WindowTooShort
from .solver import PenaltySpec, SolverConfig

LAMBDA_POLICIES = ("prepass", "nested", "fixed")


@dataclass
class SwitchPredictor:
    """Switch slot plus the two window predictors (right absent at t=T)."""

    t_switch: int
    left: varmodel.LinearPredictor
    right: varmodel.LinearPredictor | None

    @property
    def sections(self) -> list:
        return self.left.sections

    def predict(self, day: np.ndarray) -> np.ndarray:
        left = self.left.predict(day)
        if self.right is None:
            return left
        return np.concatenate([left, self.right.predict(day)], axis=1)


@dataclass
class RiskCurve:
    """Per-candidate risk estimates: mean over folds plus per-fold values."""

    ts: np.ndarray
    mean: np.ndarray
    per_fold: np.ndarray
    k: int
    lambda_policy: str
    unequal_folds: bool = False

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.per_fold = np.asarray(self.per_fold, dtype=np.float64)
        if self.per_fold.shape != (self.ts.size, self.k):
            raise ValueError("per_fold must be (len(ts), k)")
        if not np.allclose(self.mean, self.per_fold.mean(axis=1), rtol=0, atol=1e-12):
            raise ValueError("mean must equal the average of the fold values")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "risk_mean"] + [f"fold_{j+1}" for j in range(self.k)])
            for i, t in enumerate(self.ts):
                writer.writerow(
                    [int(t), repr(float(self.mean[i]))]
                    + [repr(float(v)) for v in self.per_fold[i]]
                )


def fit_switch(
    train: DayTensor,
    t: int,
    penalty: PenaltySpec = PenaltySpec("lasso"),
    config: SolverConfig = SolverConfig(),
    lambda_mode: str = "cv_per_line",
    cv_rule: str = "min",
) -> SwitchPredictor:
    """Fit the two-piece predictor for a given switch slot t in 1..T."""
    T = train.slot_count - 1
    if not 1 <= t <= T:
        raise WindowTooShort(f"switch slot {t} outside 1..{T}")
    left, _ = varmodel.fit(
        train, window=(0, t), penalty=penalty, config=config,
        lambda_mode=lambda_mode, cv_rule=cv_rule,
    )
    right = None
    if t < T:
        right, _ = varmodel.fit(
            train, window=(t, T), penalty=penalty, config=config,
            lambda_mode=lambda_mode, cv_rule=cv_rule,
        )
    return SwitchPredictor(t_switch=t, left=left, right=right)


def _per_slot_stats(values: np.ndarray, day_idx: np.ndarray) -> tuple:
    """Centered per-slot Grams/cross-products/output norms for a day subset."""
    sub = values[day_idx]
    xbar = sub.mean(axis=0)  # (p, slots)
    c = sub - xbar
    T = values.shape[2] - 1
    p = values.shape[1]
    Gs = np.empty((T, p, p))
    Cs = np.empty((T, p, p))
    for s in range(T):
        xs = c[:, :, s]
        Gs[s] = xs.T @ xs
        Cs[s] = xs.T @ c[:, :, s + 1]
    ysq = (c[:, :, 1:] ** 2).sum(axis=0).T  # (T, p)
    return xbar, Gs, Cs, ysq


def _prefix(arr: np.ndarray) -> np.ndarray:
    out = np.zeros((arr.shape[0] + 1,) + arr.shape[1:])
    np.cumsum(arr, axis=0, out=out[1:])
    return out


def _window_sse(B: np.ndarray, xc: np.ndarray, yc: np.ndarray, lo: int, hi: int) -> float:
    """Held-out SSE of coefficient rows B over x slots lo..hi-1."""
    pred = np.matmul(B, xc[:, :, lo:hi])  # broadcast over days
    return float(((yc[:, :, lo:hi] - pred) ** 2).sum())


def _fold_risks_fast(
    values: np.ndarray,
    fold: np.ndarray,
    lam_full: np.ndarray,
    mixing: float,
    config: SolverConfig,
    scale_lambda: bool,
) -> np.ndarray:
    """Held-out SSE per candidate t for one fold (prepass/fixed policies)."""
    n, p, slots = values.shape
    T = slots - 1
    comp = np.setdiff1d(np.arange(n), fold)
    xbar, Gs, Cs, ysq = _per_slot_stats(values, comp)
    Gpre, Cpre, ysqpre = _prefix(Gs), _prefix(Cs), _prefix(ysq)
    Gsuf = _prefix(Gs[::-1])[::-1]
    Csuf = _prefix(Cs[::-1])[::-1]
    ysqsuf = _prefix(ysq[::-1])[::-1]

    held = values[fold] - xbar
    xc = held[:, :, :-1]
    yc = held[:, :, 1:]

    def solve(G, C, ysline, lam_vec, warm):
        iters, status, _ = _kernels.enet_cd_gram_multi(
            np.ascontiguousarray(G),
            np.ascontiguousarray(C),
            np.ascontiguousarray(ysline),
            np.ascontiguousarray(lam_vec),
            mixing,
            config.cv_tolerance,  # throwaway CV fits; final refits are strict
            config.max_iterations,
            config.check_objective,
            False,
            warm,
        )
        solver._check_status(status)
        return warm

    def window_lam(w):
        # prepass lambdas track the window's row count (noise-term scale
        # grows like sqrt(rows)); fixed lambdas are used verbatim
        return lam_full * np.sqrt(w / T) if scale_lambda else lam_full

    sse = np.zeros(T + 1)  # indexed by t = 1..T
    # left windows, ascending t with warm starts
    B = np.zeros((p, p))
    for t in range(1, T + 1):
        B = solve(Gpre[t], Cpre[t], ysqpre[t], window_lam(t), B)
        sse[t] += _window_sse(B, xc, yc, 0, t)
    # right windows, descending t with warm starts (absent at t = T)
    B = np.zeros((p, p))
    for t in range(T - 1, 0, -1):
        B = solve(Gsuf[t], Csuf[t], ysqsuf[t], window_lam(T - t), B)
        sse[t] += _window_sse(B, xc, yc, t, T)
    return sse[1:]


def _fold_risks_nested(
    train: DayTensor,
    fold: np.ndarray,
    penalty: PenaltySpec,
    config: SolverConfig,
) -> np.ndarray:
    """Held-out SSE per candidate t with lambda re-selected per window."""
    n = train.n_days
    T = train.slot_count - 1
    comp = np.setdiff1d(np.arange(n), fold)
    sub = train.subset(comp)
    held = train.values[fold]
    sse = np.zeros(T)
    cv_config = replace(config, tolerance=config.cv_tolerance)
    for t in range(1, T + 1):
        model = fit_switch(sub, t, penalty=penalty, config=cv_config,
                           lambda_mode="cv_per_line")
        pred = varmodel.predict_days(model.left, held)
        total = float(((held[:, :, 1 : t + 1] - pred) ** 2).sum())
        if model.right is not None:
            pred_r = varmodel.predict_days(model.right, held)
            total += float(((held[:, :, t + 1 :] - pred_r) ** 2).sum())
        sse[t - 1] = total
    return sse


def cv_risk_curve(
    train: DayTensor,
    folds: int | None = None,
    config: SolverConfig = SolverConfig(),
    lambda_policy: str = "prepass",
    penalty: PenaltySpec = PenaltySpec("lasso"),
    threads: int = 1,
) -> RiskCurve:
    """Estimate the per-candidate switch risk by K-fold CV over days.

    For each fold I with complement J and each t: fit the two-piece
    predictor on J and score R_{I,t} = (K/(n p)) * sum over held-out
    days of the squared errors of both pieces (per-day weights, so the
    fold mean equals the overall per-day average even when fold sizes
    differ by one; unequal folds are flagged). The mean over folds gives
    the curve.

    lambda_policy: "prepass" selects per-line lambdas once on the full
    window by CV and rescales them by sqrt(window length); "fixed" uses
    penalty.lam everywhere; "nested" re-selects per fold and window
    (expensive).
    """
    if train.slot_count < 3:
        raise WindowTooShort("need at least 3 slots for switch detection")
    if not train.mask.all():
        raise ValueError("training tensor must be fully imputed")
    if lambda_policy not in LAMBDA_POLICIES:
        raise ValueError(f"unknown lambda_policy {lambda_policy!r}")
    k = config.folds if folds is None else int(folds)
    n, p = train.n_days, train.n_sections
    if n < k:
        raise TooFewDays(f"need >= {k} days for {k}-fold CV, got {n}")
    T = train.slot_count - 1
    fold_list = solver.make_day_folds(n, k, config.seed)

    if lambda_policy == "nested":
        fold_sses = thread_map(
            lambda f: _fold_risks_nested(train, f, penalty, config),
            fold_list,
            threads,
        )
    else:
        if lambda_policy == "prepass":
            x_days, y_days, _, _ = varmodel._lagged_pairs(train.values, None, 1)
            lam_full, _, _, _ = solver.cv_risks_lines(
                x_days, y_days, penalty.family, config, penalty.alpha
            )
        else:
            lam_full = np.full(p, penalty.lam)
        mixing = penalty.mixing
        scale_lambda = lambda_policy == "prepass"
        fold_sses = thread_map(
            lambda f: _fold_risks_fast(
                train.values, f, lam_full, mixing, config, scale_lambda
            ),
            fold_list,
            threads,
        )

    per_fold = (k / (n * p)) * np.stack(fold_sses, axis=1)  # (T, K)
    return RiskCurve(
        ts=np.arange(1, T + 1),
        mean=per_fold.mean(axis=1),
        per_fold=per_fold,
        k=k,
        lambda_policy=lambda_policy,
        unequal_folds=n % k != 0,
    )


def detect_switch(curve: RiskCurve) -> int:
    """Candidate with the smallest mean risk; ties go to the largest t."""
    rev = curve.mean[::-1]
    return int(curve.ts[::-1][int(np.argmin(rev))])


def greedy_detect(
    train: DayTensor,
    folds: int | None = None,
    config: SolverConfig = SolverConfig(),
    lambda_policy: str = "prepass",
    penalty: PenaltySpec = PenaltySpec("lasso"),
    max_switches: int = 3,
    threads: int = 1,
) -> list:
    """EXPERIMENTAL: recursively split windows while a switch lowers the
    cross-validated risk. Returns the accepted switch slots, ascending.
    Not part of the accepted surface; single-switch detection is the
    supported procedure.
    """

    def slice_window(tensor, lo, hi):
        return DayTensor(
            days=list(tensor.days),
            sections=list(tensor.sections),
            values=tensor.values[:, :, lo : hi + 1].copy(),
            mask=tensor.mask[:, :, lo : hi + 1].copy(),
        )

    found: list = []

    def recurse(lo, hi, budget):
        if budget <= 0 or hi - lo < 3:
            return
        sub = slice_window(train, lo, hi)
        curve = cv_risk_curve(
            sub, folds=folds, config=config, lambda_policy=lambda_policy,
            penalty=penalty, threads=threads,
        )
        t_local = detect_switch(curve)
        T_local = sub.slot_count - 1
        if t_local == T_local:
            return  # no beneficial switch inside this window
        found.append(lo + t_local)
        recurse(lo, lo + t_local, budget - 1)
        recurse(lo + t_local, hi, budget - 1)

    recurse(0, train.slot_count - 1, max_switches)
    return sorted(found)

"""Seed-deterministic synthetic benchmark generator.

Days are i.i.d. given the seed: day i draws from its own counter-derived
stream SeedSequence(seed, spawn_key=(1, i)), and the ground-truth
parameters from spawn_key=(0,), so parallel generation matches
sequential output bit for bit.

Each day starts from a 3-component Gaussian-mixture speed vector and
evolves by W[t+1] = b[t] + M (W[t] - E[W[t]]) + eps[t], where M is one
sparse row-normalized coefficient matrix before the mid-day switch and
another after it. The intercept profile is a quadratic in the slot's
clock hour, peaking (most negative) at hour 17.5.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import DayTensor
from .errors import DegenerateRow
from .sparse import SparseMatrix
from .varmodel import MomentModel

log = logging.getLogger(__name__)

MIX_WEIGHTS = np.array([0.25, 0.5, 0.25])
MIX_MEANS = np.array([45.0, 72.0, 117.0])
MIX_SDS = 0.1 * MIX_MEANS / 2.0  # second mixture parameter read as an sd
PEAK_HOUR = 17.5
RESAMPLE_LIMIT = 100


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape, switch point, sparsity, and seed of a synthetic dataset.

    slot_hours maps slot index to clock hour; the default covers
    15:00-19:45 in quarter hours so the intercept profile stays bounded.
    Pass range(slots) to reproduce the literal integer-slot reading.
    """

    p: int
    n: int
    slots: int = 20
    switch_t: int = 11
    avg_degree: float = 8.0
    seed: int = 0
    slot_hours: tuple = None

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.slots < 3:
            raise ValueError("slots must be >= 3")
        if not 1 <= self.switch_t <= self.slots - 1:
            raise ValueError("switch_t must be in 1..T")
        if not 0 < self.avg_degree < self.p:
            raise ValueError("avg_degree must be in (0, p)")
        hours = self.slot_hours
        if hours is None:
            hours = tuple(15.0 + 0.25 * j for j in range(self.slots))
        else:
            hours = tuple(float(h) for h in hours)
            if len(hours) != self.slots:
                raise ValueError("slot_hours must give one hour per slot")
        object.__setattr__(self, "slot_hours", hours)


@dataclass
class GeneratorTruth:
    """Ground-truth parameters for scoring fitted models.

    means[:, t] is the closed-form E[W_t]: the mixture mean at t=0 and
    b[:, t-1] afterwards. Transitions into slots 1..switch_t use A,
    later ones use A_prime (unused when switch_t = T).
    """

    b: np.ndarray
    A: SparseMatrix
    A_prime: SparseMatrix
    switch_t: int
    seed: int
    slot_hours: tuple
    means: np.ndarray

    @property
    def p(self) -> int:
        return self.b.shape[0]

    @property
    def slots(self) -> int:
        return self.b.shape[1] + 1

    def transition_matrix(self, target_slot: int) -> SparseMatrix:
        return self.A if target_slot <= self.switch_t else self.A_prime


def gen_intercepts(spec: GeneratorSpec) -> np.ndarray:
    """Intercepts -(2.5^2 - (h - 17.5)^2) per transition, equal across rows."""
    hours = np.asarray(spec.slot_hours[: spec.slots - 1])
    profile = -(2.5**2 - (hours - PEAK_HOUR) ** 2)
    return np.tile(profile, (spec.p, 1))


def gen_coefficient_matrix(p: int, avg_degree: float, rng) -> SparseMatrix:
    """Sparse random influence matrix with unit-l2 rows.

    Off-diagonal entries are present independently with probability
    avg_degree/(p-1) (expected out-degree avg_degree), valued uniformly
    on [-1, 1]; empty rows are redrawn (bounded) and each row is then
    scaled to unit l2 norm.
    """
    prob = avg_degree / (p - 1)
    mask = rng.random((p, p)) < prob
    np.fill_diagonal(mask, False)
    for k in range(p):
        attempts = 0
        while not mask[k].any():
            attempts += 1
            if attempts > RESAMPLE_LIMIT:
                raise DegenerateRow(f"row {k} stayed empty after resampling")
            row = rng.random(p) < prob
            row[k] = False
            mask[k] = row
        if attempts:
            log.info("resampled empty coefficient row %d (%d draws)", k, attempts)
    values = np.zeros((p, p))
    values[mask] = rng.uniform(-1.0, 1.0, size=int(mask.sum()))
    norms = np.sqrt((values**2).sum(axis=1))
    values /= norms[:, None]
    return SparseMatrix.from_dense(values)


def _theoretical_means(spec: GeneratorSpec, b: np.ndarray) -> np.ndarray:
    means = np.empty((spec.p, spec.slots))
    means[:, 0] = float(MIX_WEIGHTS @ MIX_MEANS)
    means[:, 1:] = b
    return means


def gen_day(truth: GeneratorTruth, rng, noise_scale: float = 1.0) -> np.ndarray:
    """One day matrix (p, slots); noise_scale=0 disables the innovations."""
    p, slots = truth.p, truth.slots
    day = np.empty((p, slots))
    comp = rng.choice(3, size=p, p=MIX_WEIGHTS)
    day[:, 0] = rng.normal(MIX_MEANS[comp], MIX_SDS[comp])
    A = truth.A.to_dense()
    A_prime = truth.A_prime.to_dense()
    for t in range(slots - 1):
        eps = rng.standard_normal(p) * noise_scale
        M = A if t + 1 <= truth.switch_t else A_prime
        day[:, t + 1] = truth.b[:, t] + M @ (day[:, t] - truth.means[:, t]) + eps
    return day


def day_sampler(truth: GeneratorTruth, noise_scale: float = 1.0):
    """Closure for Monte-Carlo callers: rng -> fresh day matrix."""
    A = truth.A.to_dense()
    A_prime = truth.A_prime.to_dense()
    p, slots = truth.p, truth.slots

    def sample(rng) -> np.ndarray:
        day = np.empty((p, slots))
        comp = rng.choice(3, size=p, p=MIX_WEIGHTS)
        day[:, 0] = rng.normal(MIX_MEANS[comp], MIX_SDS[comp])
        for t in range(slots - 1):
            eps = rng.standard_normal(p) * noise_scale
            M = A if t + 1 <= truth.switch_t else A_prime
            day[:, t + 1] = truth.b[:, t] + M @ (day[:, t] - truth.means[:, t]) + eps
        return day

    return sample


def make_truth(spec: GeneratorSpec) -> GeneratorTruth:
    """Draw the ground-truth parameters from the truth stream of the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    b = gen_intercepts(spec)
    A = gen_coefficient_matrix(spec.p, spec.avg_degree, rng)
    A_prime = gen_coefficient_matrix(spec.p, spec.avg_degree, rng)
    return GeneratorTruth(
        b=b,
        A=A,
        A_prime=A_prime,
        switch_t=spec.switch_t,
        seed=spec.seed,
        slot_hours=spec.slot_hours,
        means=_theoretical_means(spec, b),
    )


def gen_dataset(spec: GeneratorSpec) -> tuple:
    """Generate (DayTensor, GeneratorTruth) for scoring and pipelines."""
    truth = make_truth(spec)
    values = np.empty((spec.n, spec.p, spec.slots))
    for i in range(spec.n):
        rng = np.random.default_rng(
            np.random.SeedSequence(spec.seed, spawn_key=(1, i))
        )
        values[i] = gen_day(truth, rng)
    start = dt.date(2030, 1, 1)
    days = [(start + dt.timedelta(days=i)).isoformat() for i in range(spec.n)]
    sections = [f"s{k:04d}" for k in range(spec.p)]
    tensor = DayTensor(
        days=days,
        sections=sections,
        values=values,
        mask=np.ones_like(values, dtype=bool),
    )
    return tensor, truth


def mixture_variance() -> float:
    """Var of one initial-speed entry under the 3-component mixture."""
    second = MIX_WEIGHTS @ (MIX_SDS**2 + MIX_MEANS**2)
    mean = MIX_WEIGHTS @ MIX_MEANS
    return float(second - mean**2)


def slot_covariances(truth: GeneratorTruth) -> np.ndarray:
    """Exact per-slot covariance of W_t: Cov[0] = v_mix I, then
    Cov[t+1] = M Cov[t] M^T + I with the regime matrix M."""
    p, slots = truth.p, truth.slots
    covs = np.empty((slots, p, p))
    covs[0] = mixture_variance() * np.eye(p)
    A = truth.A.to_dense()
    A_prime = truth.A_prime.to_dense()
    for t in range(slots - 1):
        M = A if t + 1 <= truth.switch_t else A_prime
        covs[t + 1] = M @ covs[t] @ M.T + np.eye(p)
    return covs


def exact_excess_risk(truth: GeneratorTruth, model) -> float:
    """Closed-form excess risk of a linear predictor on generator data.

    Uses the exact slot means/covariances: p * excess = sum over slots of
    ||(A_hat - M_s) Cov_s^(1/2)||_F^2 plus the squared mean mismatch of
    the intercept parts. Valid for single-matrix predictors on a window
    (the optimal predictor per slot uses the slot's transition matrix, so
    on single-regime data this is the distance to the true model).
    """
    lo, hi = model.window
    covs = slot_covariances(truth)
    A_hat = model.A.to_dense()
    p = truth.p
    total = 0.0
    for s in range(lo, hi):
        M = truth.A.to_dense() if s + 1 <= truth.switch_t else truth.A_prime.to_dense()
        delta = A_hat - M
        total += float(np.trace(delta @ covs[s] @ delta.T))
        mean_gap = (
            model.b[:, s - lo] + A_hat @ truth.means[:, s]
        ) - truth.means[:, s + 1]
        total += float(mean_gap @ mean_gap)
    return total / p


def theoretical_moments(truth: GeneratorTruth, window=None) -> MomentModel:
    """Exact MomentModel of a window (defaults to the full day)."""
    slots = truth.slots
    lo, hi = (0, slots - 1) if window is None else (int(window[0]), int(window[1]))
    covs = slot_covariances(truth)
    A = truth.A.to_dense()
    A_prime = truth.A_prime.to_dense()
    p = truth.p
    Sigma = np.zeros((p, p))
    C_YX = np.zeros((p, p))
    for s in range(lo, hi):
        M = A if s + 1 <= truth.switch_t else A_prime
        Sigma += covs[s]
        C_YX += M @ covs[s]  # Cov(W_{s+1}, W_s) = M Cov(W_s)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return MomentModel(
        mean_X=truth.means[:, lo:hi],
        mean_Y=truth.means[:, lo + 1 : hi + 1],
        Sigma=Sigma,
        C_YX=C_YX,
        window=(lo, hi),
    )

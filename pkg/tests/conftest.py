import datetime as dt

import numpy as np
import pytest

from regvar.dataset import DayTensor


def make_tensor(values, mask=None, sections=None):
    """DayTensor around a (n, p, slots) array with generated identifiers."""
    values = np.asarray(values, dtype=np.float64)
    n, p, _ = values.shape
    if mask is None:
        mask = np.isfinite(values)
    if sections is None:
        sections = [f"s{k}" for k in range(p)]
    start = dt.date(2030, 1, 1)
    days = [(start + dt.timedelta(days=i)).isoformat() for i in range(n)]
    return DayTensor(days=days, sections=list(sections), values=values, mask=mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_tensor(rng, p=5, n=30, slots=8, coef_scale=0.2, noise=0.0):
    """Days generated from a known single-matrix linear recursion.

    Returns (tensor, A, b) where b is in the model parametrization
    (prediction = b + A x).
    """
    A = coef_scale * rng.standard_normal((p, p))
    b_raw = rng.uniform(50, 55, (p, slots - 1))
    values = np.empty((n, p, slots))
    values[:, :, 0] = rng.uniform(20, 80, (n, p))
    for t in range(slots - 1):
        values[:, :, t + 1] = (
            b_raw[:, t][None, :]
            + (values[:, :, t] - 50) @ A.T
            + noise * rng.standard_normal((n, p))
        )
    b = b_raw - 50 * (A @ np.ones(p))[:, None]
    return make_tensor(values), A, b

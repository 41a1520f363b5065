"""Kaplan-Meier estimation of the censoring survival G(t) = P(C >= t).

The product-limit runs over censoring events (delta = 0), with risk set
``#{Y_i >= s}``; evaluation uses the strict product over jumps below t, so
``Ghat(t)`` is not discounted by an observation censored exactly at t.  The
reciprocal ``delta_i / Ghat(Y_i)`` is the weight that makes censored moments
estimable downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

__all__ = ["StepSurvival", "fit_censoring_km", "MIN_EVENT_WEIGHT"]

# An event with Ghat(Y) below this signals data outside the censoring
# support rather than a numerical issue; weighting must refuse it.
MIN_EVENT_WEIGHT = 1e-12


@dataclass(frozen=True)
class StepSurvival:
    """Right-continuous-in-jumps step function with value(0) = 1.

    ``post_jump_values[k]`` is the product of all factors at
    ``jump_times[:k+1]``; evaluation at t multiplies factors at jump times
    strictly below t.  ``t_star`` is the largest time with value > 0
    (+inf when the function never reaches 0).
    """

    jump_times: np.ndarray
    post_jump_values: np.ndarray
    t_star: float

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        """Evaluate the step function; product over jumps strictly below t."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0):
            raise ValueError("t must be nonnegative")
        k = np.searchsorted(self.jump_times, t_arr, side="left")
        padded = np.concatenate(([1.0], self.post_jump_values))
        out = padded[k]
        return float(out) if np.ndim(t) == 0 else out


def fit_censoring_km(dataset: Dataset) -> StepSurvival:
    """Product-limit estimator of P(C >= t) from (Y, delta).

    Tied times are aggregated into a single factor whose numerator counts
    only the censored (delta = 0) observations at that time, while the risk
    set counts every observation with Y >= s; this is the literal
    evaluation of the product-limit formula and resolves event/censoring
    ties without any extra convention.
    """
    y = dataset.y
    order = np.argsort(y, kind="stable")
    y_sorted = y[order]
    cens_sorted = (dataset.delta[order] == 0)

    times, start_idx = np.unique(y_sorted, return_index=True)
    # censoring count and risk-set size per distinct time
    dn = np.add.reduceat(cens_sorted.astype(np.int64), start_idx)
    at_risk = dataset.n - start_idx
    has_jump = dn > 0
    jump_times = times[has_jump]
    factors = 1.0 - dn[has_jump] / at_risk[has_jump]
    post = np.cumprod(factors)
    if post.size and post[-1] == 0.0:
        t_star = float(jump_times[-1])
    else:
        t_star = np.inf
    jump_times = np.ascontiguousarray(jump_times)
    post = np.ascontiguousarray(post)
    jump_times.setflags(write=False)
    post.setflags(write=False)
    return StepSurvival(jump_times, post, t_star)

"""Classical chain ladder: volume-weighted link ratios and triangle completion.

Kept deliberately independent of the GLM machinery so it can act as the
oracle for the cross-classified equivalence property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .triangle import Triangle


class DegenerateColumnError(ValueError):
    """A development factor has positive numerator over a zero denominator."""

    def __init__(self, j: int):
        self.j = j
        super().__init__(f"development column {j} -> {j + 1} has zero denominator")


@dataclass(frozen=True)
class DevFactors:
    """Cumulative-to-cumulative factors f_j for j = 1..n_dq-1."""

    factors: np.ndarray

    def __len__(self) -> int:
        return len(self.factors)


def _cumulative(tri: Triangle) -> tuple[np.ndarray, np.ndarray]:
    cum = np.cumsum(tri.counts, axis=1)
    return cum, tri.observed


def dev_factors(tri: Triangle) -> DevFactors:
    """f_j = sum_i C[i, j+1] / sum_i C[i, j] over rows observed at both.

    Rows whose cumulative value at j is zero carry no development information
    and are skipped; a column with no informative rows gets f_j = 1.
    """
    cum, obs = _cumulative(tri)
    n_aq, n_dq = cum.shape
    factors = np.ones(n_dq - 1)
    for j in range(n_dq - 1):
        rows = obs[:, j] & obs[:, j + 1] & (cum[:, j] > 0)
        num = cum[rows, j + 1].sum()
        den = cum[rows, j].sum()
        if den == 0:
            # only possible if some row develops from exactly zero; with
            # zero-cumulative rows skipped the numerator is zero too
            informative = obs[:, j] & obs[:, j + 1] & (cum[:, j + 1] > 0) & (cum[:, j] == 0)
            if informative.any():
                raise DegenerateColumnError(j + 1)
            factors[j] = 1.0
        else:
            factors[j] = num / den
    return DevFactors(factors)


@dataclass(frozen=True)
class ChainLadderResult:
    completed_cumulative: np.ndarray
    ultimates: np.ndarray
    ibnr: np.ndarray
    factors: DevFactors


def cl_complete(tri: Triangle) -> ChainLadderResult:
    """Complete the lower triangle from the latest diagonal.

    Ultimate is the projected final column; IBNR its excess over the latest
    observed cumulative. No tail beyond the triangle's own development span.
    """
    f = dev_factors(tri)
    cum, obs = _cumulative(tri)
    n_aq, n_dq = cum.shape
    completed = np.where(obs, cum, 0.0)
    for i in range(n_aq):
        observed_j = np.nonzero(obs[i])[0]
        if observed_j.size == 0:
            continue
        last = observed_j[-1]
        running = cum[i, last]
        for j in range(last + 1, n_dq):
            running *= f.factors[j - 1]
            completed[i, j] = running
    ultimates = completed[:, -1].copy()
    latest = np.array(
        [cum[i, np.nonzero(obs[i])[0][-1]] if obs[i].any() else 0.0 for i in range(n_aq)]
    )
    return ChainLadderResult(completed, ultimates, ultimates - latest, f)

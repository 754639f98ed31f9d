"""Convergence certificates and rate envelopes evaluated on recorded traces.

These are the per-round Lyapunov inequalities and worst-case rate bounds of the
analysed methods, used as runtime correctness oracles.
"""

from __future__ import annotations

import math

import numpy as np


def sdane_step_residuals(records, mu: float) -> np.ndarray:
    """(1/lam)(f(x^{r+1}) - f*) + ((1 + mu/lam)/2) ||v^{r+1} - x*||^2 - (1/2) ||v^r - x*||^2.

    Non-positive entries mean the one-step recurrence held in round r.
    """
    out = []
    for prev, cur in zip(records, records[1:]):
        lam = cur.lambda_used
        lhs = cur.f_gap_last / lam + 0.5 * (1.0 + mu / lam) * cur.dist_sq_v
        out.append(lhs - 0.5 * prev.dist_sq_v)
    return np.array(out)


def acc_potential_excess(records, D2: float) -> np.ndarray:
    """Psi_R - D^2 / 2 for every record."""
    return np.array([rec.potential_acc - 0.5 * D2 for rec in records])


def sublinear_envelope(R: int, delta: float, D2: float) -> float:
    return delta * D2 / R


def accelerated_envelope(R: int, delta: float, D2: float) -> float:
    return 4.0 * delta * D2 / (R * R)


def linear_envelope(R: int, mu: float, lam: float, D2: float) -> float:
    """mu D^2 / (2 [(1 + mu/lam)^R - 1])."""
    return mu * D2 / (2.0 * math.expm1(R * math.log1p(mu / lam)))


def envelope_violations(records, bound, field: str = "f_gap_avg", tol: float = 0.0) -> list[int]:
    """Rounds R >= 1 where ``getattr(rec, field) > bound(R) + tol``."""
    return [rec.round for rec in records[1:] if getattr(rec, field) > bound(rec.round) + tol]

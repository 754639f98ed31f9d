"""Regularized, drift-corrected local objectives and their accuracy conditions.

A client's subproblem is

    F(x) = f_i(x) + <shift, x> + (lam / 2) ||x - center||^2

where ``shift`` is the drift correction grad f_S(c) - grad f_i(c) (zero for
FedProx-style subproblems) and ``center`` is the prox-center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ClientFunction

__all__ = [
    "ProxSubproblem",
    "StoppingRule",
    "OracleCounter",
    "build_subproblem",
    "check_stop",
]

RULE_KINDS = ("relative_grad", "dane_decaying", "stochastic_slack")


@dataclass(frozen=True)
class ProxSubproblem:
    base: ClientFunction
    shift: np.ndarray
    prox_center: np.ndarray
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def smoothness(self) -> float:
        return self.base.smoothness_L + self.lam

    @property
    def convexity(self) -> float:
        return self.base.convexity_mu + self.lam

    def value(self, x: np.ndarray) -> float:
        r = x - self.prox_center
        return self.base.value(x) + float(self.shift @ x) + 0.5 * self.lam * float(r @ r)

    def lift(self, base_grad: np.ndarray, x: np.ndarray) -> np.ndarray:
        """grad F(x) from grad f_i(x)."""
        return base_grad + self.shift + self.lam * (x - self.prox_center)

    def grad_parts(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(grad f_i(x), grad F(x)) from a single client oracle call."""
        g = self.base.grad(x)
        return g, self.lift(g, x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.grad_parts(x)[1]

    def stoch_grad(self, x, batch, rng=None) -> np.ndarray:
        return self.lift(self.base.stoch_grad(x, batch, rng), x)

    def exact_minimizer(self) -> np.ndarray:
        """Closed-form argmin for diagonal-quadratic clients."""
        H = self.base.hessian_diag
        if H is None:
            raise TypeError("exact minimizer needs a client with a constant diagonal Hessian")
        return (self.base.linear_term - self.shift + self.lam * self.prox_center) / (H + self.lam)


@dataclass(frozen=True)
class StoppingRule:
    """Inexactness test for a local solution x.

    relative_grad:     ||grad F(x)|| <= theta * lam * ||x - center||
    dane_decaying:     ||grad F(x)|| <= theta * lam / (r + 1) * ||x - center||
    stochastic_slack:  ||grad F(x)||^2 <= (theta * lam * ||x - center||)^2 + slack

    Boundaries count as satisfied, so an exact minimizer always passes.
    """

    kind: str = "relative_grad"
    theta: float = 0.5
    slack: float = 0.0
    max_oracle_calls: int = 10_000

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.slack < 0:
            raise ValueError("slack must be non-negative")
        if self.max_oracle_calls < 1:
            raise ValueError("max_oracle_calls must be >= 1")

    @classmethod
    def relative_grad(cls, theta=0.5, max_oracle_calls=10_000):
        return cls("relative_grad", theta, 0.0, max_oracle_calls)

    @classmethod
    def dane_decaying(cls, theta=1.0, max_oracle_calls=10_000):
        return cls("dane_decaying", theta, 0.0, max_oracle_calls)

    @classmethod
    def stochastic_slack(cls, theta=0.5, slack=0.0, max_oracle_calls=10_000):
        return cls("stochastic_slack", theta, slack, max_oracle_calls)

    def satisfied(self, grad_F: np.ndarray, x: np.ndarray, center: np.ndarray, lam: float,
                  round_index: int = 0) -> bool:
        gnorm = float(np.linalg.norm(grad_F))
        dist = float(np.linalg.norm(x - center))
        if self.kind == "relative_grad":
            return gnorm <= self.theta * lam * dist
        if self.kind == "dane_decaying":
            return gnorm <= self.theta * lam / (round_index + 1) * dist
        return gnorm * gnorm <= (self.theta * lam * dist) ** 2 + self.slack


class OracleCounter:
    """Tally of client gradient evaluations."""

    def __init__(self):
        self.calls = 0

    def add(self, k: int = 1) -> None:
        self.calls += k


def build_subproblem(
    client: ClientFunction,
    participants_mean_grad_at_center: np.ndarray,
    own_grad_at_center: np.ndarray,
    prox_center: np.ndarray,
    lam: float,
    drift: bool = True,
) -> ProxSubproblem:
    d = prox_center.shape[0]
    for name, v in (("mean gradient", participants_mean_grad_at_center), ("own gradient", own_grad_at_center)):
        if v.shape != (d,):
            raise ValueError(f"{name} has shape {v.shape}, expected ({d},)")
    if drift:
        shift = participants_mean_grad_at_center - own_grad_at_center
    else:
        shift = np.zeros(d)
    return ProxSubproblem(client, shift, prox_center, float(lam))


def check_stop(rule: StoppingRule, sub: ProxSubproblem, x: np.ndarray, round_index: int = 0,
               counter: OracleCounter | None = None) -> bool:
    """Evaluate ``rule`` at x; costs exactly one gradient oracle call."""
    g = sub.grad(x)
    if counter is not None:
        counter.add()
    return rule.satisfied(g, x, sub.prox_center, sub.lam, round_index)

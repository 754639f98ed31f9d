"""Inner solvers that run on a client until its stopping rule fires.

Every solver counts deterministic gradient evaluations of the client oracle in
``oracle_calls``; SGD's mini-batch evaluations go to ``stochastic_oracle_calls``.
The gradient at the returned point is always handed back (both the client
gradient and the subproblem gradient), so the server never re-evaluates it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .subproblem import ProxSubproblem, StoppingRule

__all__ = [
    "LocalSolveResult",
    "solve_gd",
    "solve_fgd",
    "solve_sgd",
    "solve_exact",
    "GD",
    "FGD",
    "SGD",
    "Exact",
]


@dataclass
class LocalSolveResult:
    x_out: np.ndarray
    grad_at_x_out: np.ndarray
    base_grad: np.ndarray
    oracle_calls: int
    stochastic_oracle_calls: int = 0
    stopped_by: str = "rule"


def solve_gd(
    sub: ProxSubproblem,
    x0: np.ndarray,
    step: float | None,
    rule: StoppingRule,
    cap: int | None = None,
    round_index: int = 0,
    trace: list | None = None,
    debug: bool = False,
    stall_patience: int = 20,
) -> LocalSolveResult:
    """Gradient descent x <- x - step * grad F(x) from x0.

    The rule is tested at every iterate with the gradient that the next step
    uses, so K steps cost K + 1 oracle calls. ``step=None`` means 1/(L + lam).
    With ``debug`` set, non-increasing gradient norms are asserted (valid for
    step <= 1/(L + lam) on convex smooth F).

    In exact arithmetic the gradient norm strictly decreases, so
    ``stall_patience`` steps without a new best norm mean the iterate sits at
    the floating-point floor; the solver then returns with ``stopped_by="stall"``.
    """
    if step is None:
        step = 1.0 / sub.smoothness
    if step <= 0:
        raise ValueError("step must be positive")
    if step > 1.0 / sub.smoothness * (1 + 1e-12):
        warnings.warn(f"GD step {step:g} exceeds 1/(L+lam) = {1.0 / sub.smoothness:g}", stacklevel=2)
    cap = rule.max_oracle_calls if cap is None else cap
    x = np.array(x0, dtype=float)
    calls = 0
    prev_norm = best = math.inf
    since_best = 0
    while True:
        g_base, g = sub.grad_parts(x)
        calls += 1
        if trace is not None:
            trace.append(x)
        gn = float(np.linalg.norm(g))
        if debug:
            # rounding in grad F is on the order of eps times its summed terms
            noise = 16 * np.finfo(float).eps * float(
                np.linalg.norm(g_base) + np.linalg.norm(sub.shift) + sub.lam * np.linalg.norm(x - sub.prox_center))
            if gn > prev_norm * (1 + 1e-10) + noise:
                raise AssertionError(f"GD gradient norm increased: {prev_norm:.17g} -> {gn:.17g}")
            prev_norm = gn
        if rule.satisfied(g, x, sub.prox_center, sub.lam, round_index):
            return LocalSolveResult(x, g, g_base, calls, 0, "rule")
        if calls >= cap:
            return LocalSolveResult(x, g, g_base, calls, 0, "cap")
        if gn < best:
            best, since_best = gn, 0
        else:
            since_best += 1
            if since_best >= stall_patience:
                return LocalSolveResult(x, g, g_base, calls, 0, "stall")
        x = x - step * g


def solve_fgd(
    sub: ProxSubproblem,
    x0: np.ndarray,
    rule: StoppingRule,
    cap: int | None = None,
    round_index: int = 0,
    trace: list | None = None,
    stall_patience: int = 200,
) -> LocalSolveResult:
    """Constant-momentum fast gradient method for the (mu+lam)-convex, (L+lam)-smooth F.

    The rule is checked at the extrapolated point where the gradient is taken;
    momentum starts from zero on every call. Gradient norms are not monotone
    here, so the floating-point stall test uses a longer patience than GD's.
    """
    cap = rule.max_oracle_calls if cap is None else cap
    L = sub.smoothness
    mu = sub.convexity
    beta = (math.sqrt(L) - math.sqrt(mu)) / (math.sqrt(L) + math.sqrt(mu))
    x_prev = np.array(x0, dtype=float)
    y = x_prev
    calls = 0
    best = math.inf
    since_best = 0
    while True:
        g_base, g = sub.grad_parts(y)
        calls += 1
        if trace is not None:
            trace.append(y)
        if rule.satisfied(g, y, sub.prox_center, sub.lam, round_index):
            return LocalSolveResult(y, g, g_base, calls, 0, "rule")
        if calls >= cap:
            return LocalSolveResult(y, g, g_base, calls, 0, "cap")
        gn = float(np.linalg.norm(g))
        if gn < best:
            best, since_best = gn, 0
        else:
            since_best += 1
            if since_best >= stall_patience:
                return LocalSolveResult(y, g, g_base, calls, 0, "stall")
        x = y - g / L
        y = x + beta * (x - x_prev)
        x_prev = x


def solve_sgd(
    sub: ProxSubproblem,
    x0: np.ndarray,
    H: float,
    batch,
    K_cap: int,
    rule: StoppingRule,
    rng: np.random.Generator | None,
    check_every: int = 10,
    round_index: int = 0,
    trace: list | None = None,
) -> LocalSolveResult:
    """Mini-batch SGD with step 1/H and a geometrically weighted output.

    z_{k+1} = z_k - (1/H) (g_i(z_k) + shift + lam (z_k - center)), and the
    output is sum_k q^{-k} z_k / sum_k q^{-k} with q = (H - mu - lam) / H.
    The rule is tested on the weighted average every ``check_every`` steps
    (and at the cap) with one deterministic gradient call each time.
    """
    if not H > sub.smoothness:
        raise ValueError(f"SGD needs H > L + lam = {sub.smoothness:g}, got {H:g}")
    q = (H - sub.convexity) / H
    if not q > 0:
        raise ValueError("mu + lam must be smaller than H")
    if K_cap < 1 or check_every < 1:
        raise ValueError("K_cap and check_every must be >= 1")
    step = 1.0 / H
    z = np.array(x0, dtype=float)
    avg = z
    calls = 0
    g_base = g = None
    for k in range(1, K_cap + 1):
        z = z - step * sub.stoch_grad(z, batch, rng)
        if trace is not None:
            trace.append(z)
        # weight of z_k in the running average: q^{-k} / sum_{j<=k} q^{-j}
        w = 1.0 if k == 1 else math.expm1(math.log(q)) / math.expm1(k * math.log(q))
        avg = avg + w * (z - avg) if k > 1 else z
        if k % check_every == 0 or k == K_cap:
            g_base, g = sub.grad_parts(avg)
            calls += 1
            if rule.satisfied(g, avg, sub.prox_center, sub.lam, round_index):
                return LocalSolveResult(avg, g, g_base, calls, k, "rule")
    return LocalSolveResult(avg, g, g_base, calls, K_cap, "cap")


def solve_exact(sub: ProxSubproblem, rule: StoppingRule | None = None, round_index: int = 0) -> LocalSolveResult:
    """Closed-form minimizer (diagonal quadratics); one call for the returned gradient."""
    x = sub.exact_minimizer()
    g_base, g = sub.grad_parts(x)
    return LocalSolveResult(x, g, g_base, 1, 0, "rule")


# Solver objects with a common call signature for the round engines.


@dataclass(frozen=True)
class GD:
    """Fixed ``step``, or ``step_scale / L_i`` capped at 1/(L_i + lam), or 1/(L_i + lam)."""

    step: float | None = None
    debug: bool = False
    step_scale: float | None = None

    def __call__(self, sub, x0, rule, round_index=0, rng=None):
        step = self.step
        if step is None and self.step_scale is not None:
            step = min(self.step_scale / sub.base.smoothness_L, 1.0 / sub.smoothness)
        return solve_gd(sub, x0, step, rule, round_index=round_index, debug=self.debug)


@dataclass(frozen=True)
class FGD:
    def __call__(self, sub, x0, rule, round_index=0, rng=None):
        return solve_fgd(sub, x0, rule, round_index=round_index)


@dataclass(frozen=True)
class SGD:
    H: float | None = None
    batch: int = 1
    check_every: int = 10
    H_factor: float = 2.0

    def __call__(self, sub, x0, rule, round_index=0, rng=None):
        H = self.H if self.H is not None else self.H_factor * sub.smoothness
        return solve_sgd(sub, x0, H, self.batch, rule.max_oracle_calls, rule, rng,
                         self.check_every, round_index)


@dataclass(frozen=True)
class Exact:
    def __call__(self, sub, x0, rule, round_index=0, rng=None):
        return solve_exact(sub, rule, round_index)

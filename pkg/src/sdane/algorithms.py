"""Server-side round engines.

Each ``*_round`` function performs one communication round: broadcast, parallel
local solves (run sequentially here, in ascending client id), and the server
reduction. Reductions always sum in ascending client-id order, so the iterates
do not depend on the order in which a sample was listed.

Vector-transfer accounting per participating client and round:

    S-DANE / Acc-S-DANE / S-DANE-DL option 1   2 down + 3 up = 5
    DANE                                       2 down + 2 up = 4
    S-DANE-DL option 2                         1 down + 2 up = 3
    FedProx                                    1 down + 1 up = 2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .local_solvers import LocalSolveResult
from .problems import ClientFunction, ProblemInstance, mean_vectors
from .sampling import SOLVER_STREAM, substream
from .subproblem import StoppingRule, build_subproblem

__all__ = [
    "ServerState",
    "RoundOutput",
    "LocalSolverCapError",
    "AdaptiveLambda",
    "initial_state",
    "acc_coefficients",
    "sdane_prox_center",
    "acc_prox_center",
    "dl_prox_center",
    "sdane_round",
    "acc_sdane_round",
    "dane_round",
    "fedprox_round",
    "sdane_dl_round",
    "adaptive_lambda",
    "stabilized_ppm_step",
    "weighted_average",
]

Solver = Callable[..., LocalSolveResult]

_SQRT_EPS = math.sqrt(np.finfo(float).eps)


class LocalSolverCapError(RuntimeError):
    """A local solver exhausted its oracle budget under the fail policy."""


@dataclass
class ServerState:
    x: np.ndarray
    v: np.ndarray
    lam: float
    mu: float = 0.0
    y: np.ndarray | None = None
    A: float = 0.0
    B: float = 1.0
    round: int = 0
    # running weighted average of x^1..x^r with weights p^r, p = 1 + mu/lam,
    # kept as a normalized vector plus log weights
    avg_x: np.ndarray | None = None
    log_weight: float = 0.0
    log_weight_sum: float = -math.inf

    @property
    def x_avg(self) -> np.ndarray:
        return self.x if self.avg_x is None else self.avg_x


@dataclass
class RoundOutput:
    new_state: ServerState
    per_client: list[LocalSolveResult]
    comm_vectors_up: int
    comm_vectors_down: int
    oracle_per_client: list[int] = field(default_factory=list)
    flagged: bool = False


def initial_state(x0: np.ndarray, lam: float, mu: float = 0.0) -> ServerState:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    x0 = np.array(x0, dtype=float)
    return ServerState(x=x0, v=x0.copy(), lam=float(lam), mu=float(mu))


# --------------------------------------------------------------------------
# Scalar schedules and prox-center updates
# --------------------------------------------------------------------------


def acc_coefficients(A: float, B: float, lam: float, mu: float) -> tuple[float, float, float]:
    """Positive root a of lam * a^2 = (A + a) * B, with A' = A + a and B' = B + mu * a."""
    if not lam > 0 or B < 1 or A < 0:
        raise ValueError(f"need lam > 0, B >= 1, A >= 0 (got lam={lam}, B={B}, A={A})")
    a = (B + math.sqrt(B * B + 4.0 * lam * A * B)) / (2.0 * lam)
    return a, A + a, B + mu * a


def sdane_prox_center(v: np.ndarray, x_bar: np.ndarray, g_bar: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """argmin <g_bar, z> + mu/2 ||z - x_bar||^2 + lam/2 ||z - v||^2."""
    if mu == 0:
        return v - g_bar / lam
    return (mu * x_bar + lam * v - g_bar) / (mu + lam)


def acc_prox_center(v, x_bar, g_bar, a_next: float, B: float, mu: float) -> np.ndarray:
    """argmin a <g_bar, z> + a mu/2 ||z - x_bar||^2 + B/2 ||z - v||^2."""
    if mu == 0:
        return v - (a_next / B) * g_bar
    return (a_next * mu * x_bar + B * v - a_next * g_bar) / (B + a_next * mu)


def dl_prox_center(v, x_bar, g_bar, gamma: float, eta: float) -> np.ndarray:
    return gamma * x_bar + (1.0 - gamma) * v - eta * g_bar


def _accumulate(state: ServerState, x_new: np.ndarray, lam: float) -> dict:
    log_w = state.log_weight + math.log1p(state.mu / lam)
    log_sum = float(np.logaddexp(state.log_weight_sum, log_w))
    if state.avg_x is None:
        avg = x_new.copy()
    else:
        avg = state.avg_x + math.exp(log_w - log_sum) * (x_new - state.avg_x)
    return {"avg_x": avg, "log_weight": log_w, "log_weight_sum": log_sum}


def weighted_average(iterates: Sequence[np.ndarray], p: float) -> np.ndarray:
    """sum_r p^r x^r / sum_r p^r over x^1..x^R (direct evaluation, for checks)."""
    w = np.array([p ** r for r in range(1, len(iterates) + 1)])
    return (w[:, None] * np.stack(iterates)).sum(axis=0) / w.sum()


# --------------------------------------------------------------------------
# Adaptive lambda
# --------------------------------------------------------------------------


def adaptive_lambda(v_curr, v_prev, grads_h_curr, grads_h_prev, lambda_floor: float = 1e-2,
                    lambda_prev: float | None = None) -> float:
    """Local dissimilarity ratio sqrt(mean_i ||dh_i||^2 / ||dv||^2), floored.

    A degenerate step returns ``lambda_prev`` (or the floor when none is
    given). Steps shorter than sqrt(eps) * max(1, ||v||) count as degenerate:
    the gradient differences are then dominated by rounding.
    """
    v_curr, v_prev = np.asarray(v_curr), np.asarray(v_prev)
    dv = v_curr - v_prev
    dv_sq = float(dv @ dv)
    scale = max(1.0, float(np.linalg.norm(v_curr)), float(np.linalg.norm(v_prev)))
    if dv_sq == 0.0 or math.sqrt(dv_sq) <= _SQRT_EPS * scale:
        return lambda_prev if lambda_prev is not None else lambda_floor
    num = math.fsum(float(np.sum((gc - gp) ** 2)) for gc, gp in zip(grads_h_curr, grads_h_prev))
    ratio = math.sqrt(num / len(grads_h_curr) / dv_sq)
    return max(ratio, lambda_floor)


class AdaptiveLambda:
    """Server-side memory for the adaptive lambda rule (full participation)."""

    def __init__(self, lambda0: float = 1e-2, lambda_floor: float = 1e-2):
        self.lambda0 = lambda0
        self.lambda_floor = lambda_floor
        self._v_prev = None
        self._h_prev = None
        self._lam = lambda0

    def update(self, v: np.ndarray, h_grads: list[np.ndarray]) -> float:
        if self._v_prev is not None:
            self._lam = adaptive_lambda(v, self._v_prev, h_grads, self._h_prev, self.lambda_floor, self._lam)
        self._v_prev = v.copy()
        self._h_prev = [h.copy() for h in h_grads]
        return self._lam


# --------------------------------------------------------------------------
# Round engines
# --------------------------------------------------------------------------


def _sorted_ids(sample, n: int) -> list[int]:
    ids = sorted(int(i) for i in sample)
    if not ids:
        raise ValueError("sample must be non-empty")
    if len(set(ids)) != len(ids) or ids[0] < 0 or ids[-1] >= n:
        raise ValueError(f"sample must hold distinct ids in [0, {n})")
    return ids


def _local_round(
    problem: ProblemInstance,
    ids: list[int],
    center: np.ndarray,
    lam: float,
    drift: bool,
    solver: Solver,
    rule: StoppingRule,
    round_index: int,
    seed: int,
    on_cap: str,
    adaptive: AdaptiveLambda | None = None,
):
    clients: list[ClientFunction] = [problem.clients[i] for i in ids]
    d = center.shape[0]
    if drift or adaptive is not None:
        center_grads = [c.grad(center) for c in clients]
        mean_grad = mean_vectors(center_grads)
    else:
        center_grads = [None] * len(clients)
        mean_grad = None
    if adaptive is not None:
        if len(ids) != problem.n:
            raise ValueError("adaptive lambda needs full participation")
        lam = adaptive.update(center, [mean_grad - g for g in center_grads])
    results = []
    oracle = []
    for c, g_c in zip(clients, center_grads):
        if drift:
            sub = build_subproblem(c, mean_grad, g_c, center, lam, drift=True)
        else:
            sub = build_subproblem(c, np.zeros(d), np.zeros(d), center, lam, drift=False)
        rng = substream(seed, round_index, SOLVER_STREAM + c.client_id)
        res = solver(sub, center.copy(), rule, round_index, rng)
        results.append(res)
        oracle.append(res.oracle_calls + res.stochastic_oracle_calls + (1 if g_c is not None else 0))
    flagged = any(r.stopped_by == "cap" for r in results)
    if flagged and on_cap == "fail":
        bad = [ids[k] for k, r in enumerate(results) if r.stopped_by == "cap"]
        raise LocalSolverCapError(f"round {round_index}: clients {bad} hit the oracle cap")
    x_new = mean_vectors([r.x_out for r in results])
    g_bar = mean_vectors([r.base_grad for r in results])
    return lam, results, oracle, flagged, x_new, g_bar


def sdane_round(state: ServerState, problem: ProblemInstance, sample, solver: Solver, rule: StoppingRule,
                seed: int = 0, on_cap: str = "continue", adaptive: AdaptiveLambda | None = None) -> RoundOutput:
    """One S-DANE round: drift-corrected subproblems centered at v, extra-gradient v update."""
    ids = _sorted_ids(sample, problem.n)
    lam, results, oracle, flagged, x_new, g_bar = _local_round(
        problem, ids, state.v, state.lam, True, solver, rule, state.round, seed, on_cap, adaptive)
    v_new = sdane_prox_center(state.v, x_new, g_bar, lam, state.mu)
    acc = _accumulate(replace(state, lam=lam), x_new, lam)
    new = replace(state, x=x_new, v=v_new, lam=lam, round=state.round + 1, **acc)
    s = len(ids)
    return RoundOutput(new, results, 3 * s, 2 * s, oracle, flagged)


def acc_sdane_round(state: ServerState, problem: ProblemInstance, sample, solver: Solver, rule: StoppingRule,
                    seed: int = 0, on_cap: str = "continue") -> RoundOutput:
    """One Acc-S-DANE round: coefficient step, extrapolation y, solves centered at y."""
    ids = _sorted_ids(sample, problem.n)
    a, A_next, B_next = acc_coefficients(state.A, state.B, state.lam, state.mu)
    y = (state.A / A_next) * state.x + (a / A_next) * state.v
    lam, results, oracle, flagged, x_new, g_bar = _local_round(
        problem, ids, y, state.lam, True, solver, rule, state.round, seed, on_cap)
    v_new = acc_prox_center(state.v, x_new, g_bar, a, state.B, state.mu)
    acc = _accumulate(state, x_new, lam)
    new = replace(state, x=x_new, v=v_new, y=y, A=A_next, B=B_next, round=state.round + 1, **acc)
    s = len(ids)
    return RoundOutput(new, results, 3 * s, 2 * s, oracle, flagged)


def dane_round(state: ServerState, problem: ProblemInstance, solver: Solver, rule: StoppingRule,
               seed: int = 0, on_cap: str = "continue") -> RoundOutput:
    """One DANE round (full participation), prox-center x^r. ``v`` mirrors ``x``."""
    ids = list(range(problem.n))
    lam, results, oracle, flagged, x_new, _ = _local_round(
        problem, ids, state.x, state.lam, True, solver, rule, state.round, seed, on_cap)
    acc = _accumulate(state, x_new, lam)
    new = replace(state, x=x_new, v=x_new, round=state.round + 1, **acc)
    return RoundOutput(new, results, 2 * len(ids), 2 * len(ids), oracle, flagged)


def fedprox_round(state: ServerState, problem: ProblemInstance, sample, solver: Solver, rule: StoppingRule,
                  seed: int = 0, on_cap: str = "continue") -> RoundOutput:
    """One FedProx round: plain proximal subproblems at x^r, then averaging."""
    ids = _sorted_ids(sample, problem.n)
    lam, results, oracle, flagged, x_new, _ = _local_round(
        problem, ids, state.x, state.lam, False, solver, rule, state.round, seed, on_cap)
    acc = _accumulate(state, x_new, lam)
    new = replace(state, x=x_new, v=x_new, round=state.round + 1, **acc)
    return RoundOutput(new, results, len(ids), len(ids), oracle, flagged)


def sdane_dl_round(state: ServerState, problem: ProblemInstance, sample, solver: Solver, rule: StoppingRule,
                   option: int = 2, gamma: float = 0.99, eta: float = 1e-2,
                   seed: int = 0, on_cap: str = "continue") -> RoundOutput:
    """S-DANE variant with an explicit v update; option 1 keeps the drift correction."""
    if option not in (1, 2):
        raise ValueError("option must be 1 or 2")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if not eta > 0:
        raise ValueError("eta must be positive")
    ids = _sorted_ids(sample, problem.n)
    lam, results, oracle, flagged, x_new, g_bar = _local_round(
        problem, ids, state.v, state.lam, option == 1, solver, rule, state.round, seed, on_cap)
    v_new = dl_prox_center(state.v, x_new, g_bar, gamma, eta)
    acc = _accumulate(state, x_new, lam)
    new = replace(state, x=x_new, v=v_new, round=state.round + 1, **acc)
    s = len(ids)
    if option == 1:
        return RoundOutput(new, results, 3 * s, 2 * s, oracle, flagged)
    return RoundOutput(new, results, 2 * s, s, oracle, flagged)


def stabilized_ppm_step(x: np.ndarray, v: np.ndarray, f: ClientFunction, lam: float, mu: float,
                        solver: Solver, rule: StoppingRule, round_index: int = 0, rng=None):
    """Single-machine stabilized proximal-point step; returns (x_next, v_next)."""
    d = v.shape[0]
    sub = build_subproblem(f, np.zeros(d), np.zeros(d), v, lam, drift=False)
    res = solver(sub, v.copy(), rule, round_index, rng)
    x_next = res.x_out.copy()
    v_next = sdane_prox_center(v, x_next, res.base_grad, lam, mu)
    return x_next, v_next

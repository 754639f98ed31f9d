"""Run one configured experiment and collect its trace."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import algorithms as alg
from ..local_solvers import FGD, GD, SGD, Exact
from ..problems import (
    AverageClient,
    ProblemError,
    ProblemInstance,
    estimate_bgv,
    estimate_ed,
    estimate_sod,
    gen_logreg,
    gen_polyhedron,
    gen_quadratic,
    load_problem,
    reference_solve,
)
from ..sampling import SAMPLING_STREAM, sample_subset, substream
from ..subproblem import StoppingRule
from .config import ConfigError, ExperimentConfig
from .trace import TraceRecord

GENERATORS = {"quadratic": gen_quadratic, "polyhedron": gen_polyhedron, "logreg": gen_logreg}


def build_problem(spec: dict) -> ProblemInstance:
    """Problem from ``{"path": ...}`` or an inline generator spec."""
    if "path" in spec:
        p = load_problem(spec["path"])
    else:
        kw = {k: v for k, v in spec.items() if k not in ("family", "x0")}
        try:
            p = GENERATORS[spec["family"]](**kw)
        except TypeError as exc:
            raise ConfigError(f"bad generator arguments for {spec['family']}: {exc}") from exc
        except ProblemError as exc:
            raise ConfigError(str(exc)) from exc
    x0 = spec.get("x0")
    if isinstance(x0, str):
        if x0 not in ("zeros", "ones"):
            raise ConfigError("x0 must be 'zeros', 'ones' or a list of numbers")
        p.x0 = np.zeros(p.d) if x0 == "zeros" else np.ones(p.d)
    elif x0 is not None:
        p.x0 = np.asarray(x0, dtype=float)
        if p.x0.shape != (p.d,):
            raise ConfigError(f"x0 has shape {p.x0.shape}, expected ({p.d},)")
    return p


def resolve_mu(cfg: ExperimentConfig, p: ProblemInstance) -> float:
    if cfg.mu_mode == "exact":
        return p.mu
    if cfg.mu_mode == "zero":
        return 0.0
    return float(cfg.mu_mode)


def partial_participation_lambda(n: int, s: int, delta_s: float, Delta_s: float, zeta: float, eps: float,
                                 budget: int = 1) -> float:
    """2 (delta_s + Delta_s) + 4 (n - s) R / (s (n - 1)) * zeta^2 / eps, with R = budget.

    ``budget=1`` is the non-accelerated choice; at s = n it reduces to 2 delta.
    """
    lam = 2.0 * (delta_s + Delta_s)
    if s < n:
        lam += 4.0 * (n - s) * budget / (s * (n - 1)) * zeta * zeta / eps
    return lam


@dataclass
class LambdaChoice:
    value: float
    adaptive: alg.AdaptiveLambda | None = None
    delta_s: float | None = None
    Delta_s: float | None = None
    zeta: float | None = None


def resolve_lambda(cfg: ExperimentConfig, p: ProblemInstance, s: int) -> LambdaChoice:
    spec = cfg.lam
    mode = spec["mode"]
    if mode == "fixed":
        return LambdaChoice(float(spec["value"]))
    if mode == "adaptive":
        if s != p.n:
            raise ConfigError("adaptive lambda needs full participation")
        lam0 = float(spec.get("lambda0", 1e-2))
        return LambdaChoice(lam0, alg.AdaptiveLambda(lam0, float(spec.get("floor", 1e-2))))
    dis = cfg.dissimilarity
    est_mode = dis.get("mode", "auto")
    probes = int(dis.get("probes", 64))
    est_seed = int(dis.get("seed", 0))
    delta_s = estimate_sod(p, s, est_mode, probes, est_seed)
    if s == p.n and mode == "two_delta":
        return LambdaChoice(2.0 * delta_s, delta_s=delta_s, Delta_s=0.0)
    eps = spec.get("eps", cfg.target_eps)
    if s < p.n and not (isinstance(eps, (int, float)) and eps > 0):
        raise ConfigError("partial participation needs lambda.eps or target_eps for the lambda choice")
    Delta_s = estimate_ed(p, s, est_mode, probes, est_seed)
    zeta = estimate_bgv(p, probes, est_seed) if s < p.n else 0.0
    budget = int(spec.get("R", cfg.rounds)) if mode == "budgeted" else 1
    lam = partial_participation_lambda(p.n, s, delta_s, Delta_s, zeta, eps or 1.0, budget)
    return LambdaChoice(lam, delta_s=delta_s, Delta_s=Delta_s, zeta=zeta)


def build_solver(cfg: ExperimentConfig, p: ProblemInstance):
    spec = cfg.solver
    kind = spec["kind"]
    if kind == "gd":
        if "step" in spec:
            return GD(step=float(spec["step"]), debug=bool(spec.get("debug", False)))
        scale = spec.get("step_scale")
        return GD(step_scale=None if scale is None else float(scale), debug=bool(spec.get("debug", False)))
    if kind == "fgd":
        return FGD()
    if kind == "sgd":
        return SGD(H=spec.get("H"), batch=int(spec.get("batch", 1)), check_every=int(spec.get("check_every", 10)),
                   H_factor=float(spec.get("H_factor", 2.0)))
    if p.family != "quadratic":
        raise ConfigError("the exact solver needs a quadratic problem")
    return Exact()


def build_rule(cfg: ExperimentConfig) -> StoppingRule:
    r = cfg.rule
    try:
        return StoppingRule(r.get("kind", "relative_grad"), float(r.get("theta", 0.5)), float(r.get("slack", 0.0)),
                            int(r.get("max_oracle_calls", 10_000)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _reached(p: ProblemInstance, point: np.ndarray, mu: float, eps: float) -> bool:
    """eps is measured on the f-gap, and also on mu/2 * dist^2 when mu > 0."""
    if p.suboptimality(point) > eps:
        return False
    return mu == 0 or 0.5 * mu * p.distance_sq(point) <= eps


def run_experiment(cfg: ExperimentConfig, problem: ProblemInstance | None = None,
                   iterates: list | None = None) -> list[TraceRecord]:
    """Execute ``cfg`` and return one record per round (round 0 included).

    ``problem`` bypasses building from ``cfg.problem``; when ``iterates`` is a
    list, every x^r is appended to it (x^0 first).
    """
    p = problem if problem is not None else build_problem(cfg.problem)
    if p.x_star is None or p.f_star is None:
        reference_solve(p, tol=1e-10)
    n = p.n
    s = n if cfg.s is None else cfg.s
    if s > n:
        raise ConfigError(f"s={s} exceeds n={n}")
    if cfg.algorithm in ("dane", "sppm") and s != n:
        raise ConfigError(f"{cfg.algorithm} needs full participation")
    mu = resolve_mu(cfg, p)
    choice = resolve_lambda(cfg, p, s)
    solver = build_solver(cfg, p)
    rule = build_rule(cfg)
    state = alg.initial_state(p.x0, choice.value, mu)

    engine_problem = p
    if cfg.algorithm == "sppm":
        engine_problem = ProblemInstance([AverageClient(p)], p.d, p.family, p.x_star, p.f_star, x0=p.x0)

    def output_point(st):
        return st.x if cfg.output_metric_point == "last_x" else st.x_avg

    def record(st, s_used, cum):
        gap = p.suboptimality(st.x)
        pot_s = 0.5 * p.distance_sq(st.v) if cfg.algorithm in ("sdane", "sppm") else None
        pot_a = st.A * gap + 0.5 * st.B * p.distance_sq(st.v) if cfg.algorithm == "acc_sdane" else None
        return TraceRecord(st.round, gap, p.suboptimality(st.x_avg), p.distance_sq(st.v), p.distance_sq(st.x),
                           st.lam, s_used, *cum, pot_s, pot_a)

    cum = [0, 0, 0, 0]  # comm rounds, vectors, oracle total, oracle parallel
    records = [record(state, 0, cum)]
    if iterates is not None:
        iterates.append(state.x.copy())
    for r in range(cfg.rounds):
        if cfg.stop_at_target and cfg.target_eps is not None and _reached(p, output_point(state), mu, cfg.target_eps):
            break
        if s == n:
            ids = list(range(n))
        else:
            ids = list(sample_subset(n, s, substream(cfg.seed, r, SAMPLING_STREAM), position=r))
        out = _step(cfg, state, engine_problem, ids, solver, rule, choice.adaptive)
        state = out.new_state
        oracle = out.oracle_per_client
        vectors = out.comm_vectors_up + out.comm_vectors_down
        if cfg.algorithm == "sppm":
            # single machine: no communication, and the unused center gradient is not charged
            oracle = [o - 1 for o in oracle]
            vectors = 0
        cum[0] += 1
        cum[1] += vectors
        cum[2] += sum(oracle)
        cum[3] += max(oracle)
        records.append(record(state, len(ids), cum))
        if iterates is not None:
            iterates.append(state.x.copy())
    return records


def _step(cfg, state, p, ids, solver, rule, adaptive):
    kw = dict(seed=cfg.seed, on_cap=cfg.on_cap)
    a = cfg.algorithm
    if a in ("sdane", "sppm"):
        return alg.sdane_round(state, p, ids if a == "sdane" else [0], solver, rule, adaptive=adaptive, **kw)
    if a == "acc_sdane":
        return alg.acc_sdane_round(state, p, ids, solver, rule, **kw)
    if a == "dane":
        return alg.dane_round(state, p, solver, rule, **kw)
    if a == "fedprox":
        return alg.fedprox_round(state, p, ids, solver, rule, **kw)
    dl = cfg.dl
    return alg.sdane_dl_round(state, p, ids, solver, rule, option=int(dl["option"]), gamma=float(dl["gamma"]),
                              eta=float(dl["eta"]), **kw)


def rounds_for_linear_envelope(mu: float, lam: float, D2: float, eps: float) -> int:
    """Smallest R with mu D^2 / (2 [(1 + mu/lam)^R - 1]) <= eps / 2."""
    if mu <= 0:
        raise ValueError("the linear envelope needs mu > 0")
    return max(1, math.ceil(math.log1p(mu * D2 / eps) / math.log1p(mu / lam)))

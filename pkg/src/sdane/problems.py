"""Synthetic distributed problems and per-client oracles.

Three families are provided, each split across ``n`` clients:

* ``quadratic``  - f_i(x) = (1/m) sum_j 1/2 <A_ij (x - b_ij), x - b_ij> with
  diagonal A_ij (optionally plus a ridge term).
* ``polyhedron`` - f_i(x) = (n/m) sum_j [<a_ij, x> - b_ij]_+^2, a feasibility
  problem with a known feasible point.
* ``logreg``     - regularized logistic regression with a Dirichlet label split.

The global objective is always f = (1/n) sum_i f_i.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "ClientFunction",
    "QuadraticClient",
    "PolyhedronClient",
    "LogRegClient",
    "ProblemInstance",
    "AverageClient",
    "DissimilarityReport",
    "ProblemError",
    "DegenerateProblemError",
    "ReferenceSolveError",
    "gen_quadratic",
    "gen_polyhedron",
    "gen_logreg",
    "quadratic_from_data",
    "polyhedron_from_data",
    "logreg_from_data",
    "check_polyhedron_params",
    "estimate_sod",
    "estimate_ed",
    "estimate_delta_max",
    "estimate_bgv",
    "estimate_dissimilarity",
    "reference_solve",
    "problem_to_dict",
    "problem_from_dict",
    "save_problem",
    "load_problem",
]

FAMILIES = ("quadratic", "polyhedron", "logreg")
SUBSET_ENUM_CAP = 10_000
SUBSET_SAMPLES = 256


class ProblemError(ValueError):
    """Invalid generator parameters or malformed problem data."""


class DegenerateProblemError(ProblemError):
    """The aggregate Hessian is singular in some coordinate."""


class ReferenceSolveError(RuntimeError):
    """Reference solver hit its iteration cap; ``best_x`` holds the best iterate."""

    def __init__(self, message: str, best_x: np.ndarray, best_value: float):
        super().__init__(message)
        self.best_x = best_x
        self.best_value = best_value


# --------------------------------------------------------------------------
# Client oracles
# --------------------------------------------------------------------------


class ClientFunction:
    """One client's differentiable objective f_i.

    Subclasses provide ``value``, ``grad`` and ``batch_grad``. All oracles are
    read-only after construction; ``stoch_grad`` takes an explicit generator so
    concurrent callers keep independent streams.
    """

    client_id: int
    data_size: int
    smoothness_L: float
    convexity_mu: float

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch_grad(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Unbiased gradient estimate from the data points ``idx``."""
        raise NotImplementedError

    def stoch_grad(self, x: np.ndarray, batch, rng: np.random.Generator | None = None) -> np.ndarray:
        """Mini-batch gradient.

        ``batch`` is either an explicit index array or a batch size. A batch
        size covering the whole shard returns ``grad(x)`` itself, so a
        zero-variance oracle is bitwise identical to the deterministic one.
        """
        if np.isscalar(batch):
            size = int(batch)
            if size < 1:
                raise ValueError(f"batch size must be >= 1, got {size}")
            if size >= self.data_size:
                return self.grad(x)
            if rng is None:
                raise ValueError("a random generator is required for sampled batches")
            idx = np.sort(rng.choice(self.data_size, size=size, replace=False))
            return self.batch_grad(x, idx)
        idx = np.asarray(batch, dtype=np.intp)
        if idx.size == self.data_size and np.array_equal(idx, np.arange(self.data_size)):
            return self.grad(x)
        return self.batch_grad(x, idx)

    @property
    def hessian_diag(self) -> np.ndarray | None:
        """Constant diagonal Hessian, when the client has one."""
        return None

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


class QuadraticClient(ClientFunction):
    """f_i(x) = (1/m) sum_j 1/2 <A_j (x - b_j), x - b_j> + ridge/2 ||x||^2 with diagonal A_j.

    ``A`` and ``b`` are (m, d) arrays; row j of ``A`` holds the diagonal of A_j.
    """

    def __init__(self, client_id: int, A: np.ndarray, b: np.ndarray, ridge: float = 0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if A.shape != b.shape:
            raise ProblemError(f"A and b shapes differ: {A.shape} vs {b.shape}")
        if np.any(A < 0):
            raise ProblemError("diagonal entries of A must be non-negative")
        if ridge < 0:
            raise ProblemError("ridge must be non-negative")
        self.client_id = int(client_id)
        self.A = A
        self.b = b
        self.ridge = float(ridge)
        self.data_size = A.shape[0]
        self._H = A.mean(axis=0) + self.ridge
        self._c = (A * b).mean(axis=0)
        self.smoothness_L = float(self._H.max())
        self.convexity_mu = float(self._H.min())

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def hessian_diag(self) -> np.ndarray:
        return self._H

    @property
    def linear_term(self) -> np.ndarray:
        """c with grad(x) = H x - c."""
        return self._c

    def value(self, x):
        r = x - self.b
        val = 0.5 * float(np.mean(np.sum(self.A * r * r, axis=1)))
        if self.ridge:
            val += 0.5 * self.ridge * float(x @ x)
        return val

    def grad(self, x):
        return self._H * x - self._c

    def batch_grad(self, x, idx):
        A = self.A[idx]
        g = np.mean(A * (x - self.b[idx]), axis=0)
        if self.ridge:
            g = g + self.ridge * x
        return g

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist(), "ridge": self.ridge}


class PolyhedronClient(ClientFunction):
    """f_i(x) = scale * sum_j [<a_j, x> - b_j]_+^2 with scale = n / m_total."""

    def __init__(self, client_id: int, a: np.ndarray, b: np.ndarray, scale: float):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ProblemError("constraint count mismatch between a and b")
        self.client_id = int(client_id)
        self.a = a
        self.b = b
        self.scale = float(scale)
        self.data_size = a.shape[0]
        self.smoothness_L = 2.0 * self.scale * float(np.linalg.norm(a, 2)) ** 2
        self.convexity_mu = 0.0

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def value(self, x):
        r = np.maximum(self.a @ x - self.b, 0.0)
        return self.scale * float(r @ r)

    def grad(self, x):
        r = np.maximum(self.a @ x - self.b, 0.0)
        return (2.0 * self.scale) * (self.a.T @ r)

    def batch_grad(self, x, idx):
        a = self.a[idx]
        r = np.maximum(a @ x - self.b[idx], 0.0)
        return (2.0 * self.scale * self.data_size / len(idx)) * (a.T @ r)

    def to_dict(self):
        return {"a": self.a.tolist(), "b": self.b.tolist(), "scale": self.scale}


class LogRegClient(ClientFunction):
    """f_i(x) = (n/M) sum_j log(1 + exp(-y_j <a_j, x>)) + 1/(2M) ||x||^2."""

    def __init__(self, client_id: int, features: np.ndarray, labels: np.ndarray, n: int, M: int):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.atleast_1d(np.asarray(labels, dtype=float))
        if features.shape[0] != labels.shape[0]:
            raise ProblemError("feature/label count mismatch")
        if features.shape[0] == 0:
            raise ProblemError(f"client {client_id} has an empty shard")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ProblemError("labels must be +1 or -1")
        self.client_id = int(client_id)
        self.features = features
        self.labels = labels
        self.n = int(n)
        self.M = int(M)
        self.data_size = features.shape[0]
        self._w = self.n / self.M
        self.smoothness_L = self._w * float(np.linalg.norm(features, 2)) ** 2 / 4.0 + 1.0 / self.M
        self.convexity_mu = 1.0 / self.M

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def value(self, x):
        z = self.labels * (self.features @ x)
        return self._w * float(np.sum(np.logaddexp(0.0, -z))) + 0.5 * float(x @ x) / self.M

    def grad(self, x):
        z = self.labels * (self.features @ x)
        return self._w * (self.features.T @ (-self.labels * expit(-z))) + x / self.M

    def batch_grad(self, x, idx):
        a = self.features[idx]
        y = self.labels[idx]
        z = y * (a @ x)
        w = self._w * self.data_size / len(idx)
        return w * (a.T @ (-y * expit(-z))) + x / self.M

    def to_dict(self):
        return {"features": self.features.tolist(), "labels": self.labels.tolist()}


# --------------------------------------------------------------------------
# Problem instance
# --------------------------------------------------------------------------


@dataclass
class ProblemInstance:
    clients: list[ClientFunction]
    d: int
    family: str
    x_star: np.ndarray | None = None
    f_star: float | None = None
    provenance: dict[str, Any] = field(default_factory=dict)
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ProblemError(f"unknown family {self.family!r}")
        if not self.clients:
            raise ProblemError("a problem needs at least one client")
        for c in self.clients:
            if getattr(c, "dim", self.d) != self.d:
                raise ProblemError(f"client {c.client_id} has dimension {c.dim}, expected {self.d}")
        if self.x0 is None:
            self.x0 = np.zeros(self.d)

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def smoothness_L(self) -> float:
        return max(c.smoothness_L for c in self.clients)

    @property
    def mu(self) -> float:
        """Largest mu such that every client is mu-convex."""
        return min(c.convexity_mu for c in self.clients)

    def value(self, x: np.ndarray) -> float:
        return math.fsum(c.value(x) for c in self.clients) / self.n

    def grad(self, x: np.ndarray) -> np.ndarray:
        return mean_vectors([c.grad(x) for c in self.clients])

    def hessians(self) -> np.ndarray:
        """(n, d) stack of client Hessian diagonals (diagonal quadratics only)."""
        diags = [c.hessian_diag for c in self.clients]
        if any(h is None for h in diags):
            raise ProblemError(f"family {self.family!r} has no constant diagonal Hessians")
        return np.stack(diags)

    def suboptimality(self, x: np.ndarray) -> float:
        """f(x) - f*, in closed form for quadratics (no cancellation)."""
        if self.x_star is None or self.f_star is None:
            raise ProblemError("reference solution missing; call reference_solve first")
        if self.family == "quadratic":
            e = x - self.x_star
            H = self.hessians().mean(axis=0)
            return 0.5 * float(e @ (H * e))
        return self.value(x) - self.f_star

    def distance_sq(self, x: np.ndarray) -> float:
        if self.x_star is None:
            raise ProblemError("reference solution missing; call reference_solve first")
        e = x - self.x_star
        return float(e @ e)


def mean_vectors(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of a sequence of vectors, summed left to right in the given order."""
    total = vectors[0].copy()
    for v in vectors[1:]:
        total += v
    return total / len(vectors)


class AverageClient(ClientFunction):
    """The global objective f = (1/n) sum f_i viewed as a single client."""

    def __init__(self, problem: ProblemInstance):
        self.problem = problem
        self.client_id = 0
        self.data_size = sum(c.data_size for c in problem.clients)
        self.smoothness_L = problem.smoothness_L
        self.convexity_mu = problem.mu

    @property
    def dim(self) -> int:
        return self.problem.d

    @property
    def hessian_diag(self):
        diags = [c.hessian_diag for c in self.problem.clients]
        return None if any(h is None for h in diags) else mean_vectors(diags)

    @property
    def linear_term(self) -> np.ndarray:
        return mean_vectors([c.linear_term for c in self.problem.clients])

    def value(self, x):
        return self.problem.value(x)

    def grad(self, x):
        return self.problem.grad(x)

    def batch_grad(self, x, idx):
        raise NotImplementedError("the averaged objective only has a full-batch oracle")


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


def quadratic_from_data(A_blocks, b_blocks, ridge: float = 0.0, provenance=None) -> ProblemInstance:
    """Build a diagonal quadratic problem and solve it exactly per coordinate."""
    clients = [QuadraticClient(i, A, b, ridge) for i, (A, b) in enumerate(zip(A_blocks, b_blocks))]
    d = clients[0].dim
    p = ProblemInstance(clients, d, "quadratic", provenance=dict(provenance or {}))
    H = sum(c.hessian_diag for c in clients)
    c_sum = sum(c.linear_term for c in clients)
    scale = max(1.0, float(np.max(np.abs(H))))
    bad = np.flatnonzero(H <= 1e-12 * scale)
    if bad.size:
        raise DegenerateProblemError(f"aggregate Hessian vanishes in coordinates {bad[:10].tolist()}")
    p.x_star = c_sum / H
    p.f_star = p.value(p.x_star)
    return p


def gen_quadratic(
    n: int,
    m: int,
    d: int,
    L_max: float,
    seed: int,
    spread: float = 0.15,
    b_scale: float = 1.0,
    ridge: float = 0.0,
    max_retries: int = 20,
) -> ProblemInstance:
    """Random diagonal quadratics.

    Each coordinate k gets a base curvature u_k ~ U(0, 1); entries of every A_ij
    are u_k * (1 + spread * U(-1, 1)), and the whole collection is rescaled so
    the largest entry equals ``L_max``. ``spread`` controls the Hessian
    dissimilarity (0.15 gives delta ~ 5 at the n=10, m=5, d=1000,
    L_max=100 scale). The b_ij are i.i.d. N(0, b_scale^2).
    """
    if min(n, m, d) < 1:
        raise ProblemError("n, m and d must be >= 1")
    if L_max <= 0:
        raise ProblemError("L_max must be positive")
    if not 0 <= spread < 1:
        raise ProblemError("spread must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    params = dict(n=n, m=m, d=d, L_max=L_max, spread=spread, b_scale=b_scale, ridge=ridge)
    for attempt in range(max_retries):
        u = rng.uniform(0.0, 1.0, size=d)
        A = u * (1.0 + spread * rng.uniform(-1.0, 1.0, size=(n, m, d)))
        A *= L_max / A.max()
        b = b_scale * rng.normal(size=(n, m, d))
        try:
            p = quadratic_from_data(list(A), list(b), ridge=ridge)
        except DegenerateProblemError:
            continue
        p.provenance = {"generator": "quadratic", "seed": seed, "params": params, "attempt": attempt}
        return p
    raise DegenerateProblemError(f"no non-degenerate draw after {max_retries} attempts")


def check_polyhedron_params(n: int, m_total: int, d: int, radius: float) -> None:
    if n < 1 or d < 1:
        raise ProblemError("n and d must be >= 1")
    if m_total < n:
        raise ProblemError(f"need at least one constraint per client (m_total={m_total} < n={n})")
    if radius <= 0:
        raise ProblemError("radius must be positive")


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def polyhedron_from_data(a_blocks, b_blocks, x_star, m_total: int | None = None, provenance=None) -> ProblemInstance:
    n = len(a_blocks)
    if m_total is None:
        m_total = sum(np.atleast_2d(a).shape[0] for a in a_blocks)
    scale = n / m_total
    clients = [PolyhedronClient(i, a, b, scale) for i, (a, b) in enumerate(zip(a_blocks, b_blocks))]
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    p = ProblemInstance(clients, clients[0].dim, "polyhedron", provenance=dict(provenance or {}))
    p.x_star = x_star
    p.f_star = p.value(x_star)
    if p.f_star != 0.0:
        raise ProblemError(f"x_star is not feasible (f = {p.f_star:g})")
    return p


def gen_polyhedron(
    n: int,
    m_total: int,
    d: int,
    radius: float,
    seed: int,
    slack: float | None = None,
    max_retries: int = 20,
) -> ProblemInstance:
    """Polyhedron feasibility with a planted strictly feasible point.

    x* is uniform on the sphere of the given radius, a_j ~ N(0, I) and
    b_j = <a_j, x*> + slack (default 1e-3 * radius), so x* satisfies every
    constraint with margin. Constraints are dealt to clients in contiguous
    blocks. Draws where the origin happens to be feasible are rejected.
    """
    check_polyhedron_params(n, m_total, d, radius)
    if slack is None:
        slack = 1e-3 * radius
    if slack <= 0:
        raise ProblemError("slack must be positive")
    rng = np.random.default_rng(seed)
    counts = _split_counts(m_total, n)
    params = dict(n=n, m_total=m_total, d=d, radius=radius, slack=slack)
    for attempt in range(max_retries):
        g = rng.normal(size=d)
        x_star = radius * g / np.linalg.norm(g)
        a = rng.normal(size=(m_total, d))
        b = a @ x_star + slack
        if np.all(b >= 0):
            continue
        bounds = np.cumsum([0] + counts)
        a_blocks = [a[bounds[i]:bounds[i + 1]] for i in range(n)]
        b_blocks = [b[bounds[i]:bounds[i + 1]] for i in range(n)]
        p = polyhedron_from_data(a_blocks, b_blocks, x_star, m_total)
        p.provenance = {"generator": "polyhedron", "seed": seed, "params": params, "attempt": attempt}
        return p
    raise ProblemError(f"origin stayed feasible for {max_retries} draws")


def logreg_from_data(feature_blocks, label_blocks, provenance=None) -> ProblemInstance:
    n = len(feature_blocks)
    M = sum(np.atleast_2d(f).shape[0] for f in feature_blocks)
    clients = [LogRegClient(i, f, y, n, M) for i, (f, y) in enumerate(zip(feature_blocks, label_blocks))]
    return ProblemInstance(clients, clients[0].dim, "logreg", provenance=dict(provenance or {}))


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_split(labels: np.ndarray, n: int, alpha: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices into n shards with Dirichlet(alpha) class proportions."""
    shards: list[list[np.ndarray]] = [[] for _ in range(n)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        props = rng.dirichlet(np.full(n, alpha))
        counts = _largest_remainder(props, idx.size)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for i in range(n):
            shards[i].append(idx[bounds[i]:bounds[i + 1]])
    return [np.sort(np.concatenate(parts)) for parts in shards]


def gen_logreg(
    n: int,
    M: int,
    d: int,
    dirichlet_alpha: float,
    seed: int,
    label_noise: float = 0.5,
    max_retries: int = 50,
    ref_tol: float = 1e-10,
) -> ProblemInstance:
    """Synthetic two-class logistic regression split across clients.

    Features are N(0, I/d); labels are sign(<a, w> + label_noise * N(0, 1))
    for a planted w ~ N(0, I). The reference solution is computed eagerly.
    """
    if n < 1 or d < 1:
        raise ProblemError("n and d must be >= 1")
    if M < n:
        raise ProblemError(f"need M >= n (got M={M}, n={n})")
    if dirichlet_alpha <= 0:
        raise ProblemError("dirichlet_alpha must be positive")
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    features = rng.normal(size=(M, d)) / math.sqrt(d)
    labels = np.where(features @ w + label_noise * rng.normal(size=M) >= 0.0, 1.0, -1.0)
    for attempt in range(max_retries):
        shards = dirichlet_split(labels, n, dirichlet_alpha, rng)
        if all(s.size > 0 for s in shards):
            break
    else:
        raise ProblemError(f"Dirichlet split left an empty shard in {max_retries} attempts")
    params = dict(n=n, M=M, d=d, dirichlet_alpha=dirichlet_alpha, label_noise=label_noise)
    p = logreg_from_data([features[s] for s in shards], [labels[s] for s in shards])
    p.provenance = {"generator": "logreg", "seed": seed, "params": params, "attempt": attempt}
    reference_solve(p, ref_tol)
    return p


# --------------------------------------------------------------------------
# Reference solution
# --------------------------------------------------------------------------


def reference_solve(p: ProblemInstance, tol: float = 1e-10, max_iter: int = 200_000, force: bool = False):
    """Return (x_star, f_star), computing and caching them when missing.

    Quadratics are solved exactly. Other families run the fast gradient method
    on f until ||grad f(x)|| <= tol * max(1, ||x||).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not force and p.x_star is not None and p.f_star is not None:
        return p.x_star, p.f_star
    if p.family == "quadratic":
        H = sum(c.hessian_diag for c in p.clients)
        x = sum(c.linear_term for c in p.clients) / H
    else:
        x = _fast_gradient(p, tol, max_iter)
    p.x_star = x
    p.f_star = p.value(x)
    return p.x_star, p.f_star


def _fast_gradient(p: ProblemInstance, tol: float, max_iter: int) -> np.ndarray:
    L = p.smoothness_L
    mu = p.mu
    x = p.x0.copy()
    x_prev = x.copy()
    y = x.copy()
    t = 1.0
    if mu > 0:
        q = math.sqrt(mu / L)
        beta_const = (1.0 - q) / (1.0 + q)
    best_x, best_g = x.copy(), math.inf
    for k in range(max_iter):
        g = p.grad(y)
        gn = float(np.linalg.norm(g))
        if gn < best_g:
            best_x, best_g = y.copy(), gn
        if gn <= tol * max(1.0, float(np.linalg.norm(y))):
            return y
        x = y - g / L
        if mu > 0:
            beta = beta_const
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
        # gradient restart keeps the mu = 0 branch monotone in practice
        if mu == 0 and float(g @ (x - x_prev)) > 0:
            t = 1.0
            y = x
        else:
            y = x + beta * (x - x_prev)
        x_prev = x
    raise ReferenceSolveError(
        f"reference solve did not reach tol={tol:g} in {max_iter} iterations (best |grad|={best_g:.3e})",
        best_x,
        p.value(best_x),
    )


# --------------------------------------------------------------------------
# Dissimilarity estimation
# --------------------------------------------------------------------------


@dataclass
class DissimilarityReport:
    delta_s: dict[int, float]
    delta_max: float
    Delta_s: dict[int, float]
    zeta: float
    method: str
    probes: int
    lower_bound: bool = False
    zeta_unbounded_suspected: bool = False

    @property
    def delta(self) -> float:
        """delta_n, the full-participation second-order dissimilarity."""
        return self.delta_s[max(self.delta_s)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta_s": {str(k): v for k, v in sorted(self.delta_s.items())},
            "delta_max": self.delta_max,
            "Delta_s": {str(k): v for k, v in sorted(self.Delta_s.items())},
            "zeta": self.zeta,
            "method": self.method,
            "probes": self.probes,
            "lower_bound": self.lower_bound,
            "zeta_unbounded_suspected": self.zeta_unbounded_suspected,
        }


def _subsets(n: int, s: int, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """All size-s subsets as rows when there are at most 10^4, else 256 samples."""
    if not 1 <= s <= n:
        raise ValueError(f"subset size s={s} must lie in [1, {n}]")
    if math.comb(n, s) <= SUBSET_ENUM_CAP:
        return np.array(list(itertools.combinations(range(n), s)), dtype=np.intp), True
    rows = [np.sort(rng.permutation(n)[:s]) for _ in range(SUBSET_SAMPLES)]
    return np.array(rows, dtype=np.intp), False


def _resolve_mode(p: ProblemInstance, mode: str) -> str:
    if mode == "auto":
        return "exact_quadratic" if p.family == "quadratic" else "probe_estimate"
    if mode not in ("exact_quadratic", "power_iteration", "probe_estimate"):
        raise ValueError(f"unknown estimation mode {mode!r}")
    if mode == "exact_quadratic" and p.family != "quadratic":
        raise ValueError("exact_quadratic mode needs the quadratic family")
    return mode


def _reference_point(p: ProblemInstance) -> np.ndarray:
    return p.x_star if p.x_star is not None else p.x0


def _probe_pairs(p: ProblemInstance, probes: int, rng: np.random.Generator, scale: float | None):
    ref = _reference_point(p)
    if scale is None:
        scale = max(1.0, float(np.linalg.norm(ref - p.x0)))
    for _ in range(probes):
        x = ref + scale * rng.normal(size=p.d) / math.sqrt(p.d)
        y = ref + scale * rng.normal(size=p.d) / math.sqrt(p.d)
        yield x, y


def _grad_diffs(p: ProblemInstance, x, y) -> np.ndarray:
    return np.stack([c.grad(x) - c.grad(y) for c in p.clients])


def _sod_ratio_sq(G: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Per subset: (1/s) sum_{i in S} ||G_S - G_i||^2 for row-stacked differences G."""
    out = np.empty(len(subsets))
    for lo in range(0, len(subsets), 256):
        blk = G[subsets[lo:lo + 256]]
        dev = blk.mean(axis=1, keepdims=True) - blk
        out[lo:lo + 256] = np.mean(np.sum(dev * dev, axis=2), axis=1)
    return out


def _ed_ratio_sq(G: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    full = G[np.arange(G.shape[0])[None, :]].mean(axis=1)[0]
    out = np.empty(len(subsets))
    for lo in range(0, len(subsets), 256):
        dev = full - G[subsets[lo:lo + 256]].mean(axis=1)
        out[lo:lo + 256] = np.sum(dev * dev, axis=1)
    return out


def _hvp(client: ClientFunction, z: np.ndarray, u: np.ndarray, t: float) -> np.ndarray:
    return (client.grad(z + t * u) - client.grad(z - t * u)) / (2.0 * t)


def estimate_sod(
    p: ProblemInstance,
    s: int,
    mode: str = "auto",
    probes: int = 64,
    seed: int = 0,
    probe_scale: float | None = None,
) -> float:
    """delta_s for subsets of size s.

    ``exact_quadratic`` enumerates subsets (or samples 256 when C(n, s) > 10^4)
    and takes the top eigenvalue of (1/s) sum D_i^2 with D_i = H_S - H_i.
    ``probe_estimate`` takes the largest observed ratio over random (x, y)
    pairs, which can only under-estimate the true constant.
    """
    if not 1 <= s <= p.n:
        raise ValueError(f"s={s} must lie in [1, n={p.n}]")
    mode = _resolve_mode(p, mode)
    rng = np.random.default_rng(seed)
    subsets, _ = _subsets(p.n, s, rng)
    if mode == "exact_quadratic":
        H = p.hessians()
        best = 0.0
        for lo in range(0, len(subsets), 256):
            blk = H[subsets[lo:lo + 256]]
            dev = blk.mean(axis=1, keepdims=True) - blk
            best = max(best, float(np.max(np.mean(dev * dev, axis=1))))
        return math.sqrt(best)
    if mode == "probe_estimate":
        best = 0.0
        for x, y in _probe_pairs(p, probes, rng, probe_scale):
            G = _grad_diffs(p, x, y)
            dist_sq = float((x - y) @ (x - y))
            best = max(best, float(np.max(_sod_ratio_sq(G, subsets))) / dist_sq)
        return math.sqrt(best)
    return math.sqrt(_power_estimate(p, subsets, "sod", rng))


def estimate_ed(
    p: ProblemInstance,
    s: int,
    mode: str = "auto",
    probes: int = 64,
    seed: int = 0,
    probe_scale: float | None = None,
) -> float:
    """Delta_s: Lipschitz constant of grad(f - f_S) over subsets of size s."""
    if not 1 <= s <= p.n:
        raise ValueError(f"s={s} must lie in [1, n={p.n}]")
    mode = _resolve_mode(p, mode)
    rng = np.random.default_rng(seed)
    subsets, _ = _subsets(p.n, s, rng)
    if mode == "exact_quadratic":
        H = p.hessians()
        full = H[np.arange(p.n)[None, :]].mean(axis=1)[0]
        best = 0.0
        for lo in range(0, len(subsets), 256):
            dev = full - H[subsets[lo:lo + 256]].mean(axis=1)
            best = max(best, float(np.max(np.abs(dev))))
        return best
    if mode == "probe_estimate":
        best = 0.0
        for x, y in _probe_pairs(p, probes, rng, probe_scale):
            G = _grad_diffs(p, x, y)
            dist_sq = float((x - y) @ (x - y))
            best = max(best, float(np.max(_ed_ratio_sq(G, subsets))) / dist_sq)
        return math.sqrt(best)
    return math.sqrt(_power_estimate(p, subsets, "ed", rng))


def estimate_delta_max(p: ProblemInstance, mode: str = "auto", probes: int = 64, seed: int = 0,
                       probe_scale: float | None = None) -> float:
    """delta_max: worst single-client Lipschitz constant of grad(f - f_i)."""
    return estimate_ed(p, 1, mode=mode, probes=probes, seed=seed, probe_scale=probe_scale)


def _power_estimate(p: ProblemInstance, subsets: np.ndarray, kind: str, rng, max_subsets: int = 32) -> float:
    """Local (at the reference point) top eigenvalue via Hessian-vector products."""
    if len(subsets) > max_subsets:
        subsets = subsets[rng.choice(len(subsets), size=max_subsets, replace=False)]
    z = _reference_point(p)
    t = 1e-5 * max(1.0, float(np.linalg.norm(z)))
    best = 0.0
    for subset in subsets:
        members = [p.clients[i] for i in subset]

        def apply(u):
            hv = np.stack([_hvp(c, z, u, t) for c in members])
            if kind == "sod":
                dev = hv.mean(axis=0) - hv
                # (1/s) sum_i D_i^2 u; each D_i is symmetric
                out = np.zeros(p.d)
                for i, c in enumerate(members):
                    hv2 = np.stack([_hvp(cc, z, dev[i], t) for cc in members])
                    out += hv2.mean(axis=0) - hv2[i]
                return out / len(members)
            full = mean_vectors([_hvp(c, z, u, t) for c in p.clients])
            dev = full - hv.mean(axis=0)
            hv2 = np.stack([_hvp(c, z, dev, t) for c in members])
            full2 = mean_vectors([_hvp(c, z, dev, t) for c in p.clients])
            return full2 - hv2.mean(axis=0)

        u = rng.normal(size=p.d)
        u /= np.linalg.norm(u)
        est = 0.0
        for _ in range(50):
            w = apply(u)
            est = float(u @ w)
            nw = float(np.linalg.norm(w))
            if nw == 0.0:
                est = 0.0
                break
            if abs(nw - est) <= 1e-10 * nw:
                break
            u = w / nw
        best = max(best, est)
    return max(best, 0.0)


def _bgv_sq(p: ProblemInstance, x: np.ndarray) -> float:
    grads = np.stack([c.grad(x) for c in p.clients])
    dev = grads - mean_vectors(list(grads))
    return float(np.mean(np.sum(dev * dev, axis=1)))


def _bgv_profile(p: ProblemInstance, probes: int, seed: int, radius: float | None) -> tuple[float, bool]:
    rng = np.random.default_rng(seed)
    ref = _reference_point(p)
    if radius is None:
        radius = max(1.0, float(np.linalg.norm(ref - p.x0)))

    def sweep(r):
        best = _bgv_sq(p, ref)
        for _ in range(probes):
            u = rng.normal(size=p.d)
            u *= r * rng.uniform() ** (1.0 / p.d) / np.linalg.norm(u)
            best = max(best, _bgv_sq(p, ref + u))
        return best

    inner = sweep(radius)
    outer = sweep(10.0 * radius)
    suspected = outer > 4.0 * inner + 1e-12 * max(1.0, inner)
    return math.sqrt(inner), bool(suspected)


def estimate_bgv(p: ProblemInstance, probes: int = 64, seed: int = 0, radius: float | None = None) -> float:
    """zeta: largest observed gradient spread (1/n) sum ||grad f_i - grad f||^2, square-rooted.

    Probe points are drawn uniformly in a ball of the given radius (default
    ||x_ref - x0||) around x_star, plus x_star itself. This is an estimate only:
    for clients with different Hessians the true supremum is infinite.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    return _bgv_profile(p, probes, seed, radius)[0]


def estimate_dissimilarity(
    p: ProblemInstance,
    s_values: Sequence[int] | None = None,
    mode: str = "auto",
    probes: int = 64,
    seed: int = 0,
) -> DissimilarityReport:
    mode = _resolve_mode(p, mode)
    if s_values is None:
        s_values = sorted({1, max(1, p.n // 2), p.n})
    delta_s = {s: estimate_sod(p, s, mode, probes, seed) for s in s_values}
    Delta_s = {s: estimate_ed(p, s, mode, probes, seed) for s in s_values}
    zeta, suspected = _bgv_profile(p, probes, seed, None)
    enumerable = all(math.comb(p.n, s) <= SUBSET_ENUM_CAP for s in s_values)
    return DissimilarityReport(
        delta_s=delta_s,
        delta_max=estimate_delta_max(p, mode, probes, seed),
        Delta_s=Delta_s,
        zeta=zeta,
        method=mode,
        probes=probes if mode != "exact_quadratic" else 0,
        lower_bound=(mode != "exact_quadratic") or not enumerable,
        zeta_unbounded_suspected=suspected,
    )


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def problem_to_dict(p: ProblemInstance) -> dict[str, Any]:
    prov = p.provenance or {}
    return {
        "family": p.family,
        "n": p.n,
        "d": p.d,
        "seed": prov.get("seed"),
        "generator_params": prov.get("params", {}),
        "clients": [c.to_dict() for c in p.clients],
        "x0": p.x0.tolist(),
        "x_star": None if p.x_star is None else p.x_star.tolist(),
        "f_star": p.f_star,
    }


def problem_from_dict(doc: dict[str, Any]) -> ProblemInstance:
    family = doc.get("family")
    clients = doc.get("clients")
    if family not in FAMILIES or not isinstance(clients, list) or not clients:
        raise ProblemError("problem document needs a known family and a non-empty client list")
    prov = {"generator": family, "seed": doc.get("seed"), "params": doc.get("generator_params", {})}
    if family == "quadratic":
        p = ProblemInstance(
            [QuadraticClient(i, c["A"], c["b"], c.get("ridge", 0.0)) for i, c in enumerate(clients)],
            int(doc["d"]), family, provenance=prov,
        )
    elif family == "polyhedron":
        p = ProblemInstance(
            [PolyhedronClient(i, c["a"], c["b"], c["scale"]) for i, c in enumerate(clients)],
            int(doc["d"]), family, provenance=prov,
        )
    else:
        M = sum(len(c["labels"]) for c in clients)
        p = ProblemInstance(
            [LogRegClient(i, c["features"], c["labels"], len(clients), M) for i, c in enumerate(clients)],
            int(doc["d"]), family, provenance=prov,
        )
    if doc.get("x0") is not None:
        p.x0 = np.asarray(doc["x0"], dtype=float)
    if doc.get("x_star") is not None:
        p.x_star = np.asarray(doc["x_star"], dtype=float)
    if doc.get("f_star") is not None:
        p.f_star = float(doc["f_star"])
    return p


def save_problem(p: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p)))


def load_problem(path) -> ProblemInstance:
    return problem_from_dict(json.loads(Path(path).read_text()))

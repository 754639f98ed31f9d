"""Declarative experiment configuration (JSON)."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..problems import FAMILIES
from ..subproblem import RULE_KINDS

ALGORITHMS = ("sdane", "acc_sdane", "dane", "fedprox", "sdane_dl", "sppm")
LAMBDA_MODES = ("fixed", "two_delta", "adaptive", "budgeted")
SOLVER_KINDS = ("gd", "fgd", "sgd", "exact")
OUTPUT_POINTS = ("last_x", "weighted_avg")
CAP_POLICIES = ("continue", "fail")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """One experiment: problem, algorithm, lambda schedule, local solver and budget.

    ``problem`` is either ``{"path": ...}`` pointing at a ``.problem.json`` file
    or an inline generator spec ``{"family": ..., <generator kwargs>, "x0": ...}``.
    ``mu_mode`` is ``"exact"``, ``"zero"`` or a number used as an override.
    """

    problem: dict[str, Any]
    algorithm: str = "sdane"
    lam: dict[str, Any] = field(default_factory=lambda: {"mode": "two_delta"})
    mu_mode: Any = "exact"
    solver: dict[str, Any] = field(default_factory=lambda: {"kind": "gd", "step_scale": 0.5})
    rule: dict[str, Any] = field(default_factory=lambda: {"kind": "relative_grad", "theta": 0.5})
    s: int | None = None
    rounds: int = 100
    target_eps: float | None = None
    stop_at_target: bool = True
    seed: int = 0
    output_metric_point: str = "last_x"
    on_cap: str = "continue"
    dl: dict[str, Any] = field(default_factory=lambda: {"option": 2, "gamma": 0.99, "eta": 0.01})
    dissimilarity: dict[str, Any] = field(default_factory=lambda: {"mode": "auto", "probes": 64, "seed": 0})

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if not isinstance(self.problem, dict) or not ("path" in self.problem or "family" in self.problem):
            raise ConfigError("problem must be {'path': ...} or an inline generator spec with 'family'")
        if "family" in self.problem and self.problem["family"] not in FAMILIES:
            raise ConfigError(f"unknown problem family {self.problem['family']!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")

        mode = self.lam.get("mode")
        if mode not in LAMBDA_MODES:
            raise ConfigError(f"lambda mode must be one of {LAMBDA_MODES}")
        if mode == "fixed" and not _positive(self.lam.get("value")):
            raise ConfigError("fixed lambda needs a positive 'value'")
        if mode == "budgeted":
            if self.algorithm != "acc_sdane":
                raise ConfigError("budgeted lambda is defined for acc_sdane only")
            R = self.lam.get("R", self.rounds)
            if not isinstance(R, int) or R < 1:
                raise ConfigError("budgeted lambda needs the round budget R >= 1")
        if mode == "adaptive":
            if self.algorithm != "sdane":
                raise ConfigError("adaptive lambda is implemented for sdane only")
            if self.s is not None and self.problem.get("n") not in (None, self.s):
                raise ConfigError("adaptive lambda needs full participation")

        if isinstance(self.mu_mode, str):
            if self.mu_mode not in ("exact", "zero"):
                raise ConfigError("mu_mode must be 'exact', 'zero' or a non-negative number")
        elif not isinstance(self.mu_mode, (int, float)) or self.mu_mode < 0:
            raise ConfigError("mu override must be a non-negative number")

        kind = self.solver.get("kind")
        if kind not in SOLVER_KINDS:
            raise ConfigError(f"solver kind must be one of {SOLVER_KINDS}")
        if kind == "gd" and "step" in self.solver and not _positive(self.solver["step"]):
            raise ConfigError("gd step must be positive")
        if kind == "exact" and self.problem.get("family", "quadratic") != "quadratic":
            raise ConfigError("the exact solver needs a quadratic problem")

        if self.rule.get("kind", "relative_grad") not in RULE_KINDS:
            raise ConfigError(f"rule kind must be one of {RULE_KINDS}")
        if self.s is not None and (not isinstance(self.s, int) or self.s < 1):
            raise ConfigError("s must be a positive integer")
        n = self.problem.get("n")
        if self.s is not None and isinstance(n, int) and self.s > n:
            raise ConfigError(f"s={self.s} exceeds n={n}")
        if self.algorithm in ("dane", "sppm") and self.s is not None and self.s != n:
            raise ConfigError(f"{self.algorithm} needs full participation (s = n)")

        if not isinstance(self.rounds, int) or self.rounds < 0:
            raise ConfigError("rounds must be a non-negative integer")
        if self.target_eps is not None and not _positive(self.target_eps):
            raise ConfigError("target_eps must be positive")
        if self.output_metric_point not in OUTPUT_POINTS:
            raise ConfigError(f"output_metric_point must be one of {OUTPUT_POINTS}")
        if self.on_cap not in CAP_POLICIES:
            raise ConfigError(f"on_cap must be one of {CAP_POLICIES}")
        if self.algorithm == "sdane_dl":
            if self.dl.get("option") not in (1, 2):
                raise ConfigError("sdane_dl option must be 1 or 2")
            if not 0 <= self.dl.get("gamma", -1) <= 1:
                raise ConfigError("sdane_dl gamma must lie in [0, 1]")
            if not _positive(self.dl.get("eta")):
                raise ConfigError("sdane_dl needs an explicit positive eta")

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = copy.deepcopy(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "problem" not in doc:
            raise ConfigError("config needs a 'problem' entry")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        return doc

    def with_overrides(self, **kw) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(kw)
        return ExperimentConfig.from_dict(doc)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; relative problem paths resolve against the config file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = ExperimentConfig.from_dict(doc)
    if "path" in cfg.problem and not Path(cfg.problem["path"]).is_absolute():
        cfg.problem["path"] = str(path.parent / cfg.problem["path"])
    return cfg


def _positive(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0

"""Experiment configuration, validation and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .gw_tree import InvalidLaw, OffspringLaw

KINDS = ("simulate-tree", "simulate-bbm", "build-measure", "build-pcaf", "sample-path",
         "converge", "extremes", "revuz", "acceptance")

# fields that change where or how fast outputs are produced, not what they contain
_RUNTIME_ONLY = ("out", "threads")


class ConfigError(ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {m}" for k, m in problems))


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    law: dict = field(default_factory=lambda: {"2": 1.0})
    t: float | None = None
    r: float | None = None
    ladder: list | None = None
    sigma: float | None = None
    b: float = 0.5
    walk_r: int = 64
    S: float = 4.0
    s_horizon: float | None = None
    s_grid: list | None = None
    x0: float = 0.0
    N: int = 1
    depth: float = 2.0
    lattice: bool = False
    thinned: bool = False
    atoms: list | None = None
    f_edges: list | None = None
    f_values: list | None = None
    scale: float = 1.0
    out: str = "out"
    threads: int = 1

    # -- validation ----------------------------------------------------------

    def problems(self) -> list[tuple[str, str]]:
        p: list[tuple[str, str]] = []
        if self.kind not in KINDS:
            p.append(("kind", f"unknown experiment kind {self.kind!r}"))
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            p.append(("seed", "seed must be a 64-bit unsigned integer"))
        try:
            self.offspring_law()
        except (InvalidLaw, ValueError, TypeError) as e:
            p.append(("law", str(e)))
        if self.sigma is not None and not 0 < self.sigma < 1:
            p.append(("sigma", "sigma outside (0,1)"))
        if not 0 < self.b <= 1:
            p.append(("b", "switch fraction outside (0,1]"))
        if int(self.walk_r) != self.walk_r or self.walk_r < 1:
            p.append(("walk_r", "walk grid must be an integer >= 1"))
        if not self.S > 0:
            p.append(("S", "walk horizon must be positive"))
        if self.x0 < 0 or abs(self.x0 * self.walk_r - round(self.x0 * self.walk_r)) > 1e-9:
            p.append(("x0", f"start level must be a nonnegative multiple of 1/{self.walk_r}"))
        if int(self.N) != self.N or self.N < 1:
            p.append(("N", "sample size must be a positive integer"))
        if int(self.threads) != self.threads or self.threads < 1:
            p.append(("threads", "threads must be a positive integer"))
        if not self.depth > 0:
            p.append(("depth", "window depth must be positive"))
        if not self.scale > 0:
            p.append(("scale", "scale must be positive"))
        if self.s_horizon is not None and not self.s_horizon > 0:
            p.append(("s_horizon", "process horizon must be positive"))
        if self.s_grid is not None:
            g = list(self.s_grid)
            if not g or g[0] != 0 or any(b <= a for a, b in zip(g, g[1:])):
                p.append(("s_grid", "sampling grid must start at 0 and increase"))
        p.extend(self._kind_problems())
        return p

    def _kind_problems(self) -> list[tuple[str, str]]:
        p = []
        k = self.kind
        if k in ("simulate-tree", "simulate-bbm", "extremes"):
            if self.t is None or not self.t > 0:
                p.append(("t", "horizon t must be positive"))
        if k == "extremes" and self.N < 500:
            p.append(("N", "the max-law fit needs N >= 500"))
        if k in ("build-measure", "build-pcaf", "sample-path"):
            if self.t is None or self.r is None:
                p.append(("r", "r and t are required"))
            elif not 0 <= self.r < self.t:
                p.append(("r", "need 0 <= r < t"))
            elif self.lattice:
                if not self.r > 0 or int(self.r) != self.r:
                    p.append(("r", "lattice parameter must be a positive integer"))
                elif self.walk_r % int(self.r):
                    p.append(("walk_r", "walk grid must be a multiple of the lattice parameter"))
            elif self.thinned and not self.r > 0:
                p.append(("r", "thinning needs r > 0"))
        if k == "converge":
            lad = self.ladder or []
            if len(lad) < 3:
                p.append(("ladder", "a trend needs at least three (r, t) rungs"))
            for r, t in lad:
                if not t > 3 * r:
                    p.append(("ladder", f"rung ({r}, {t}) violates t > 3r"))
            if any(b[0] <= a[0] for a, b in zip(lad, lad[1:])):
                p.append(("ladder", "r must increase along the ladder"))
        if k == "revuz":
            if not self.atoms:
                p.append(("atoms", "revuz needs a list of [location, weight] atoms"))
            elif any(a < 0 or w < 0 for a, w in self.atoms):
                p.append(("atoms", "atoms need nonnegative locations and weights"))
            if (self.f_edges is None) != (self.f_values is None):
                p.append(("f_edges", "give both f_edges and f_values"))
            elif self.f_edges is not None and len(self.f_edges) != len(self.f_values) + 1:
                p.append(("f_edges", "need len(f_edges) == len(f_values) + 1"))
        return p

    def validate(self) -> "ExperimentConfig":
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    # -- helpers -------------------------------------------------------------

    def offspring_law(self) -> OffspringLaw:
        return OffspringLaw.from_dict({int(k): float(v) for k, v in self.law.items()})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError([(u, "unknown field") for u in unknown])
        if "kind" not in d:
            raise ConfigError([("kind", "missing")])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _RUNTIME_ONLY}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    kind: str
    seed: int
    streams: list
    outputs: list
    checks: dict
    wall_clock: float

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, indent=2, sort_keys=True)


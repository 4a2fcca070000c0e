"""Model hyperparameters and the dotted key-value config format.

A config file holds one ``key = value`` per line, ``#`` starts a comment.
Keys mirror the attribute paths, e.g. ``sigma.WALK = 0.5`` or
``role.MOVER.transition = 0.5,0.25,0.25; 0.25,0.5,0.25; 0.25,0.25,0.5``.
Anything not given falls back to the compiled-in defaults.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .model import (
    ACTIVITY_ROLES,
    INTENTIONAL,
    PHYSICAL,
    ActivityLabel,
    RoleDynamics,
    RoleLabel,
)

A = ActivityLabel


class ConfigError(ValueError):
    pass


def _default_sigma():
    return {A.STAND: 0.05, A.WALK: 0.5, A.RUN: 1.5}


DEFAULT_DURATION_RATE = 7.0  # about a third of a 20-frame scene


def _default_roles():
    return {r: RoleDynamics.uniform(len(r.allowed), DEFAULT_DURATION_RATE) for r in RoleLabel}


def _default_role_prior():
    return {a: {r: 1.0 / len(rs) for r in rs} for a, rs in ACTIVITY_ROLES.items()}


@dataclass
class SamplerConfig:
    iterations: int = 50_000
    chains: int = 1
    seed: int = 0
    detector_bias: float = 0.5
    max_depth: int = 4
    max_segments: int = 0  # 0 = unbounded


@dataclass
class DetectorConfig:
    eps: float = 1.0
    min_pts: int = 1
    position_weight: float = 1.0
    velocity_weight: float = 2.0
    smoothing_window: int = 5
    min_interval: int = 3
    speed: dict = field(default_factory=lambda: {A.STAND: 0.05, A.WALK: 0.5, A.RUN: 1.5})
    gamma_shape: float = 4.0
    p_stay: float = 0.9

    def gamma_rate(self, label: ActivityLabel) -> float:
        # mode of Gamma(k, rate) is (k - 1) / rate
        return (self.gamma_shape - 1.0) / self.speed[label]


@dataclass
class ModelConfig:
    sigma: dict = field(default_factory=_default_sigma)
    rho: dict = field(default_factory=lambda: {a: 0.3 * s for a, s in _default_sigma().items()})
    lam: float = 100.0
    length_scale: float = 5.0
    temporal_exponent: float = 0.5
    obs_noise: float = 1e-4
    alpha: dict = field(default_factory=lambda: {a: 1.0 for a in INTENTIONAL})
    roles: dict = field(default_factory=_default_roles)
    role_prior: dict = field(default_factory=_default_role_prior)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        for name, table, keys in (("sigma", self.sigma, PHYSICAL), ("rho", self.rho, PHYSICAL),
                                  ("alpha", self.alpha, INTENTIONAL)):
            for k in keys:
                if k not in table:
                    raise ConfigError(f"{name}.{k.value} missing")
                if not table[k] > 0:
                    raise ConfigError(f"{name}.{k.value} must be positive")
        if not self.sigma[A.STAND] < self.sigma[A.WALK] < self.sigma[A.RUN]:
            raise ConfigError("sigma must satisfy STAND < WALK < RUN")
        for name in ("lam", "length_scale", "temporal_exponent", "obs_noise"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for r in RoleLabel:
            dyn = self.roles.get(r)
            if dyn is None or len(dyn.initial) != len(r.allowed):
                raise ConfigError(f"role.{r.value} dynamics must cover {len(r.allowed)} labels")
        for a, rs in ACTIVITY_ROLES.items():
            probs = self.role_prior.get(a, {})
            if set(probs) - set(rs):
                raise ConfigError(f"role_prior.{a.value} names roles {a.value} cannot assign")
            if abs(sum(probs.values()) - 1.0) > 1e-9 or min(probs.values(), default=-1) < 0:
                raise ConfigError(f"role_prior.{a.value} must be a distribution")
        if not 0.0 <= self.sampler.detector_bias <= 1.0:
            raise ConfigError("sampler.detector_bias must lie in [0, 1]")
        if not 1.0 / 3.0 < self.detector.p_stay < 1.0:
            raise ConfigError("detector.p_stay must lie in (1/3, 1)")
        if self.detector.eps <= 0 or self.detector.min_pts < 1:
            raise ConfigError("detector.eps > 0 and detector.min_pts >= 1 required")

    def copy(self) -> ModelConfig:
        return copy.deepcopy(self)

    def scaled(self, c: float) -> ModelConfig:
        """Copy with every covariance scale multiplied by c**2 (sigma, rho by c)."""
        out = self.copy()
        out.sigma = {k: v * c for k, v in self.sigma.items()}
        out.rho = {k: v * c for k, v in self.rho.items()}
        out.lam = self.lam * c * c
        out.obs_noise = self.obs_noise * c * c
        return out

    # -- key/value form -------------------------------------------------

    def to_items(self) -> list[tuple[str, str]]:
        items = []
        for a in PHYSICAL:
            items.append((f"sigma.{a.value}", repr(self.sigma[a])))
        for a in PHYSICAL:
            items.append((f"rho.{a.value}", repr(self.rho[a])))
        items += [("lambda", repr(self.lam)), ("length_scale", repr(self.length_scale)),
                  ("temporal_exponent", repr(self.temporal_exponent)), ("obs_noise", repr(self.obs_noise))]
        for a in INTENTIONAL:
            items.append((f"alpha.{a.value}", repr(self.alpha[a])))
        for r in RoleLabel:
            d = self.roles[r]
            items.append((f"role.{r.value}.initial", ",".join(repr(x) for x in d.initial)))
            items.append((f"role.{r.value}.transition", "; ".join(",".join(repr(x) for x in row) for row in d.transition)))
            items.append((f"role.{r.value}.duration_rate", repr(d.duration_rate)))
        for a, probs in self.role_prior.items():
            for r, p in probs.items():
                items.append((f"role_prior.{a.value}.{r.value}", repr(p)))
        s = self.sampler
        items += [(f"sampler.{k}", repr(getattr(s, k))) for k in
                  ("iterations", "chains", "seed", "detector_bias", "max_depth", "max_segments")]
        d = self.detector
        items += [(f"detector.{k}", repr(getattr(d, k))) for k in
                  ("eps", "min_pts", "position_weight", "velocity_weight", "smoothing_window",
                   "min_interval", "gamma_shape", "p_stay")]
        for a in PHYSICAL:
            items.append((f"detector.speed.{a.value}", repr(d.speed[a])))
        return items

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())

    @classmethod
    def loads(cls, text: str) -> ModelConfig:
        cfg = cls()
        pending_roles: dict[RoleLabel, dict] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            try:
                _apply(cfg, key, value, pending_roles)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: bad entry {key!r}: {exc}") from None
        for r, parts in pending_roles.items():
            cur = cfg.roles[r]
            try:
                cfg.roles[r] = RoleDynamics(parts.get("initial", cur.initial), parts.get("transition", cur.transition),
                                            parts.get("duration_rate", cur.duration_rate))
            except ValueError as exc:
                raise ConfigError(f"role.{r.value}: {exc}") from None
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> ModelConfig:
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


_INT_FIELDS = {"iterations", "chains", "seed", "max_depth", "max_segments", "min_pts", "smoothing_window", "min_interval"}


def _apply(cfg: ModelConfig, key: str, value: str, pending_roles: dict) -> None:
    parts = key.split(".")
    head = parts[0]
    if head in ("sigma", "rho") and len(parts) == 2:
        getattr(cfg, head)[A(parts[1])] = float(value)
    elif head == "alpha" and len(parts) == 2:
        cfg.alpha[A(parts[1])] = float(value)
    elif key == "lambda":
        cfg.lam = float(value)
    elif key in ("length_scale", "temporal_exponent", "obs_noise"):
        setattr(cfg, key, float(value))
    elif head == "role" and len(parts) == 3:
        role, what = RoleLabel(parts[1]), parts[2]
        slot = pending_roles.setdefault(role, {})
        if what == "initial":
            slot["initial"] = tuple(float(x) for x in value.split(","))
        elif what == "transition":
            slot["transition"] = tuple(tuple(float(x) for x in row.split(",")) for row in value.split(";"))
        elif what == "duration_rate":
            slot["duration_rate"] = float(value)
        else:
            raise KeyError(what)
    elif head == "role_prior" and len(parts) == 3:
        cfg.role_prior.setdefault(A(parts[1]), {})[RoleLabel(parts[2])] = float(value)
    elif head == "sampler" and len(parts) == 2 and hasattr(cfg.sampler, parts[1]):
        setattr(cfg.sampler, parts[1], int(value) if parts[1] in _INT_FIELDS else float(value))
    elif head == "detector" and len(parts) == 3 and parts[1] == "speed":
        cfg.detector.speed[A(parts[2])] = float(value)
    elif head == "detector" and len(parts) == 2 and hasattr(cfg.detector, parts[1]):
        setattr(cfg.detector, parts[1], int(value) if parts[1] in _INT_FIELDS else float(value))
    else:
        raise KeyError(key)

"""Configuration types and derived load quantities."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, fields, replace


_EXTERNAL = {"lam": "lambda"}
_INTERNAL = {"lambda": "lam"}


class Policy(str, enum.Enum):
    SLQ = "SLQ"
    JSQ = "JSQ"


class SamplingMode(str, enum.Enum):
    WITH_REPLACEMENT = "WithReplacement"
    WITHOUT_REPLACEMENT = "WithoutReplacement"


class StabilityWarning(UserWarning):
    """Offered load lambda/(r*mu) is at or above one."""


class ConfigError(ValueError):
    """Raised with the full list of violated constraints."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class SystemConfig:
    n: int
    m: int
    d: int
    lam: float
    mu: float
    gamma: float
    policy: Policy = Policy.SLQ
    sampling_mode: SamplingMode = SamplingMode.WITHOUT_REPLACEMENT

    def __post_init__(self):
        # accept plain strings for the enum fields
        object.__setattr__(self, "policy", Policy(_enum_value(Policy, self.policy)))
        object.__setattr__(
            self, "sampling_mode", SamplingMode(_enum_value(SamplingMode, self.sampling_mode))
        )

    @property
    def r(self) -> float:
        return self.m / self.n

    @property
    def offered_load(self) -> float:
        return self.lam / (self.r * self.mu)

    @property
    def is_stable(self) -> bool:
        return self.offered_load < 1.0

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        """Flat mapping keyed by the external field names (``lambda``, not ``lam``)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[_EXTERNAL.get(f.name, f.name)] = v.value if isinstance(v, enum.Enum) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {_INTERNAL.get(k, k): v for k, v in data.items()}
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(known) - names)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        missing = sorted(n for n in ("n", "m", "d", "lam", "mu", "gamma") if n not in known)
        if missing:
            raise ConfigError([f"missing config key {_EXTERNAL.get(k, k)!r}" for k in missing])
        return cls(**known)

    @classmethod
    def baseline(cls, d: int = 2, load: float = 0.9, **changes) -> "SystemConfig":
        """n=200 flows, m=10 servers, mu=gamma=1 at the given lambda/(r*mu)."""
        base = cls(n=200, m=10, d=d, lam=load * 10 / 200, mu=1.0, gamma=1.0)
        return replace(base, **changes) if changes else base


def _enum_value(kind, value):
    if isinstance(value, kind):
        return value.value
    text = str(value)
    for member in kind:
        if text.lower() == member.value.lower() or text.lower() == member.name.lower():
            return member.value
    raise ConfigError([f"unknown {kind.__name__} {value!r}"])


@dataclass(frozen=True)
class LoadSummary:
    r: float
    offered_load: float  # epsilon = lambda / (r mu)
    rho: float  # lambda / (r (gamma (1 - epsilon) + mu epsilon))



def config_errors(config: SystemConfig) -> list[str]:
    """Every constraint the config violates; empty if it is valid."""
    errors = []
    for name in ("n", "m", "d"):
        v = getattr(config, name)
        if not isinstance(v, int) or isinstance(v, bool):
            errors.append(f"{name} must be an integer, got {v!r}")
        elif v < 1:
            errors.append(f"{name} must be positive, got {v}")
    for name in ("lam", "mu", "gamma"):
        v = getattr(config, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
            errors.append(f"{name} must be a positive finite rate, got {v!r}")
    if not errors:
        if config.sampling_mode is SamplingMode.WITHOUT_REPLACEMENT:
            # SLQ samples flows, JSQ samples servers
            pool, label = (config.n, "n") if config.policy is Policy.SLQ else (config.m, "m")
            if config.d > pool:
                errors.append(f"d={config.d} exceeds {label}={pool} under WithoutReplacement")
    return errors


def validate_config(config: SystemConfig) -> SystemConfig:
    """Return ``config`` if valid, raise :class:`ConfigError` otherwise.

    A :class:`StabilityWarning` is emitted when lambda/(r mu) >= 1; unstable
    configurations remain valid for simulation.
    """
    errors = config_errors(config)
    if errors:
        raise ConfigError(errors)
    if not config.is_stable:
        warnings.warn(
            f"offered load lambda/(r mu) = {config.offered_load:.6g} >= 1; system is unstable",
            StabilityWarning,
            stacklevel=2,
        )
    return config


def load_summary(config: SystemConfig) -> LoadSummary:
    r = config.m / config.n
    eps = config.lam / (r * config.mu)
    rho = config.lam / (r * (config.gamma * (1.0 - eps) + config.mu * eps))
    return LoadSummary(r=r, offered_load=eps, rho=rho)

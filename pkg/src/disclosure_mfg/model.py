"""Model primitives: beliefs, closed-form function families and the game instance.

Every function appearing in a game instance (Hamiltonian coefficients, coupling
profiles, major-player costs, the initial density) is picked from a registry of
named families with numeric parameters.  Nothing is evaluated from user code.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, ClassVar

import numpy as np

try:  # pragma: no cover - depends on interpreter version
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

BELIEF_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the offending field or line."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# Beliefs


@dataclass(frozen=True)
class Belief:
    """Probability vector over the ``I >= 2`` types."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("a belief needs at least two types")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"belief has negative or non-finite entries: {w}")
        if abs(w.sum() - 1.0) > BELIEF_TOL:
            raise ValueError(f"belief sums to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    @classmethod
    def of(cls, p) -> "Belief":
        if isinstance(p, Belief):
            return p
        return cls(tuple(np.asarray(p, dtype=float).ravel()))

    @classmethod
    def vertex(cls, i: int, n: int) -> "Belief":
        w = [0.0] * n
        w[i] = 1.0
        return cls(tuple(w))

    @classmethod
    def uniform(cls, n: int) -> "Belief":
        return cls.of(np.full(n, 1.0 / n))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]


def as_belief_array(p) -> np.ndarray:
    """Validate ``p`` as a belief and return it as a float array."""
    return np.asarray(Belief.of(p), dtype=float)


# ---------------------------------------------------------------------------
# Family registry


class Family:
    """Base for registry-backed closed-form families (frozen dataclasses)."""

    name: ClassVar[str]
    registry: ClassVar[dict[str, type]]

    @classmethod
    def from_config(cls, spec: Any, where: str):
        if isinstance(spec, (int, float)) and "constant" in cls.registry:
            return cls.registry["constant"](value=float(spec))
        if not isinstance(spec, dict):
            raise ConfigError(where, "expected a table with a 'family' key")
        spec = dict(spec)
        name = spec.pop("family", None)
        if name is None:
            raise ConfigError(f"{where}.family", "required field missing")
        try:
            klass = cls.registry[name]
        except KeyError:
            known = ", ".join(sorted(cls.registry))
            raise ConfigError(f"{where}.family", f"unknown family {name!r} (known: {known})") from None
        allowed = {f.name: f for f in fields(klass)}
        kwargs = {}
        for key, value in spec.items():
            if key not in allowed:
                raise ConfigError(f"{where}.{key}", f"unknown parameter for family {name!r}")
            if isinstance(value, dict):
                kwargs[key] = XFunction.from_config(value, f"{where}.{key}")
            elif isinstance(value, list):
                kwargs[key] = tuple(float(v) for v in value)
            else:
                kwargs[key] = float(value)
        try:
            obj = klass(**kwargs)
        except TypeError as exc:
            raise ConfigError(where, str(exc)) from None
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
        return obj

    def to_config(self) -> dict:
        out: dict[str, Any] = {"family": self.name}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_config() if isinstance(v, Family) else v
        return out


def _registry(base):
    base.registry = {}

    def register(klass):
        base.registry[klass.name] = klass
        return klass

    return register


# -- functions of the state x ------------------------------------------------


class XFunction(Family):
    """Bounded smooth function of the state."""

    def __call__(self, x):
        raise NotImplementedError

    def lipschitz(self) -> float:
        raise NotImplementedError

    def sup_abs(self) -> float:
        raise NotImplementedError


register_x = _registry(XFunction)


@register_x
@dataclass(frozen=True)
class Zero(XFunction):
    name: ClassVar[str] = "zero"

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def lipschitz(self):
        return 0.0

    def sup_abs(self):
        return 0.0


@register_x
@dataclass(frozen=True)
class Constant(XFunction):
    name: ClassVar[str] = "constant"
    value: float = 1.0

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def lipschitz(self):
        return 0.0

    def sup_abs(self):
        return abs(self.value)


@register_x
@dataclass(frozen=True)
class GaussianBump(XFunction):
    """``base + amp * exp(-(x - center)^2 / width^2)``."""

    name: ClassVar[str] = "gaussian-bump"
    base: float = 0.0
    amp: float = 1.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.width
        return self.base + self.amp * np.exp(-z * z)

    def lipschitz(self):
        return abs(self.amp) * math.sqrt(2.0 / math.e) / self.width

    def sup_abs(self):
        return max(abs(self.base), abs(self.base + self.amp))


@register_x
@dataclass(frozen=True)
class Tanh(XFunction):
    """``base + amp * tanh((x - center) / scale)``: a smoothly clipped ramp."""

    name: ClassVar[str] = "tanh"
    base: float = 0.0
    amp: float = 1.0
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def __call__(self, x):
        return self.base + self.amp * np.tanh((np.asarray(x, dtype=float) - self.center) / self.scale)

    def lipschitz(self):
        return abs(self.amp) / self.scale

    def sup_abs(self):
        return abs(self.base) + abs(self.amp)


# -- coupling profiles f(x, s) ------------------------------------------------


class Profile(Family):
    """Coupling profile ``f(x, s)``, increasing in the smoothed density ``s``."""

    def __call__(self, x, s):
        raise NotImplementedError

    def slope_bounds(self) -> tuple[float, float]:
        """Bounds on ``df/ds`` over ``s >= 0``."""
        raise NotImplementedError


register_profile = _registry(Profile)


@register_profile
@dataclass(frozen=True)
class ZeroProfile(Profile):
    name: ClassVar[str] = "zero"

    def __call__(self, x, s):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(s)).shape)

    def slope_bounds(self):
        return 0.0, 0.0


@register_profile
@dataclass(frozen=True)
class LinearProfile(Profile):
    """``slope * s + offset(x)``."""

    name: ClassVar[str] = "linear"
    slope: float = 1.0
    offset: XFunction = field(default_factory=Zero)

    def __call__(self, x, s):
        return self.slope * np.asarray(s, dtype=float) + self.offset(x)

    def slope_bounds(self):
        return self.slope, self.slope


@register_profile
@dataclass(frozen=True)
class SaturatingProfile(Profile):
    """``slope * s + amp * tanh(s / scale) + offset(x)`` with ``amp >= 0``."""

    name: ClassVar[str] = "saturating"
    slope: float = 1.0
    amp: float = 1.0
    scale: float = 1.0
    offset: XFunction = field(default_factory=Zero)

    def __post_init__(self):
        if self.amp < 0 or self.scale <= 0:
            raise ValueError("saturating profile needs amp >= 0 and scale > 0")

    def __call__(self, x, s):
        s = np.asarray(s, dtype=float)
        return self.slope * s + self.amp * np.tanh(s / self.scale) + self.offset(x)

    def slope_bounds(self):
        return self.slope, self.slope + self.amp / self.scale


# -- major-player running costs L0_i(t, u, m) ---------------------------------


class MajorCost(Family):
    """Running cost of the major player, vectorised over the control ``u``.

    ``m`` is any measure exposing ``expect(func)``.
    """

    depends_on_m: ClassVar[bool] = False
    depends_on_t: ClassVar[bool] = False

    def __call__(self, t, u, m):
        raise NotImplementedError

    def bounds(self, control_set) -> tuple[float, float]:
        raise NotImplementedError

    def lipschitz_m(self) -> float:
        """Lipschitz constant in ``m`` for the 1-Wasserstein distance."""
        return 0.0


register_major = _registry(MajorCost)


@register_major
@dataclass(frozen=True)
class ConstantMajor(MajorCost):
    name: ClassVar[str] = "constant"
    value: float = 0.0

    def __call__(self, t, u, m):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    def bounds(self, control_set):
        return self.value, self.value


@register_major
@dataclass(frozen=True)
class QuadraticMajor(MajorCost):
    """``weight * (u - center)^2``."""

    name: ClassVar[str] = "quadratic"
    center: float = 0.0
    weight: float = 1.0

    def __call__(self, t, u, m):
        d = np.asarray(u, dtype=float) - self.center
        return self.weight * d * d

    def bounds(self, control_set):
        lo, hi = control_set
        worst = max((lo - self.center) ** 2, (hi - self.center) ** 2)
        best = 0.0 if lo <= self.center <= hi else min((lo - self.center) ** 2, (hi - self.center) ** 2)
        return self.weight * best, self.weight * worst


@register_major
@dataclass(frozen=True)
class TrackingMajor(MajorCost):
    """``control_weight*(u - center)^2 + crowd_weight*(E_m[probe] - target)^2``.

    Penalises effort and rewards keeping the crowd statistic ``E_m[probe]``
    near ``target``.
    """

    name: ClassVar[str] = "tracking"
    depends_on_m: ClassVar[bool] = True
    control_weight: float = 1.0
    center: float = 0.0
    crowd_weight: float = 1.0
    target: float = 0.0
    probe: XFunction = field(default_factory=Tanh)

    def __call__(self, t, u, m):
        d = np.asarray(u, dtype=float) - self.center
        gap = m.expect(self.probe) - self.target
        return self.control_weight * d * d + self.crowd_weight * gap * gap

    def bounds(self, control_set):
        lo, hi = control_set
        worst_u = max((lo - self.center) ** 2, (hi - self.center) ** 2)
        worst_m = (self.probe.sup_abs() + abs(self.target)) ** 2
        return 0.0, self.control_weight * worst_u + self.crowd_weight * worst_m

    def lipschitz_m(self):
        return 2.0 * self.crowd_weight * (self.probe.sup_abs() + abs(self.target)) * self.probe.lipschitz()


# -- initial density ----------------------------------------------------------


class InitialDensity(Family):
    def pdf(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def tail_mass(self, x_max: float) -> float:
        raise NotImplementedError


register_initial = _registry(InitialDensity)


def _normal_tail(z):
    return math.erfc(z / math.sqrt(2.0)) / 2.0


@register_initial
@dataclass(frozen=True)
class GaussianInitial(InitialDensity):
    name: ClassVar[str] = "gaussian"
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2.0 * math.pi))

    def sample(self, rng, n):
        return self.mean + self.std * rng.standard_normal(n)

    def tail_mass(self, x_max):
        return _normal_tail((x_max - self.mean) / self.std) + _normal_tail((x_max + self.mean) / self.std)


@register_initial
@dataclass(frozen=True)
class GaussianMixtureInitial(InitialDensity):
    name: ClassVar[str] = "gaussian-mixture"
    means: tuple[float, ...] = (-1.0, 1.0)
    stds: tuple[float, ...] = (0.5, 0.5)
    weights: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if not (len(self.means) == len(self.stds) == len(self.weights)):
            raise ValueError("means, stds and weights must have equal length")
        if min(self.stds) <= 0 or min(self.weights) < 0 or abs(sum(self.weights) - 1) > 1e-12:
            raise ValueError("stds must be positive and weights a probability vector")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for mu, sd, w in zip(self.means, self.stds, self.weights):
            z = (x - mu) / sd
            out = out + w * np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))
        return out

    def sample(self, rng, n):
        # separate streams for labels and normals keep sample j independent of n
        normals = np.random.default_rng(int(rng.integers(2**63)))
        cum = np.cumsum(self.weights)
        comp = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(cum) - 1)
        z = normals.standard_normal(n)
        return np.asarray(self.means)[comp] + np.asarray(self.stds)[comp] * z

    def tail_mass(self, x_max):
        return sum(
            w * (_normal_tail((x_max - mu) / sd) + _normal_tail((x_max + mu) / sd))
            for mu, sd, w in zip(self.means, self.stds, self.weights)
        )


# ---------------------------------------------------------------------------
# Game instance


@dataclass(frozen=True)
class TypeSpec:
    """Data attached to one value of the private type."""

    hamiltonian: XFunction  # a_i(x) in H_i(x, xi) = a_i(x) xi^2
    running: Profile  # f_i, giving F_i = f_i(., m * rho) * rho
    terminal: Profile  # g_i, giving G_i likewise
    major: MajorCost  # L0_i


@dataclass(frozen=True)
class ModelSpec:
    """One game instance.  Immutable once built."""

    types: tuple[TypeSpec, ...]
    horizon: float
    prior: Belief
    control_set: tuple[float, float]
    initial: InitialDensity
    bandwidth: float = 0.3
    alpha: float = 0.5

    def __post_init__(self):
        if len(self.types) < 2:
            raise ConfigError("model.type", "at least two types are required")
        if len(self.prior) != len(self.types):
            raise ConfigError("model.prior", f"has {len(self.prior)} entries for {len(self.types)} types")
        if self.horizon <= 0:
            raise ConfigError("model.horizon", "must be positive")
        lo, hi = self.control_set
        if not hi > lo:
            raise ConfigError("model.control_set", "must be an interval [lo, hi] with lo < hi")
        if self.bandwidth <= 0:
            raise ConfigError("model.coupling_bandwidth", "must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("model.alpha", "must lie in (0, 1)")

    @property
    def n_types(self) -> int:
        return len(self.types)

    def hamiltonian_coeffs(self, x) -> np.ndarray:
        """Array of shape ``(I, *x.shape)`` with ``a_i(x)``."""
        return np.stack([ts.hamiltonian(x) for ts in self.types])

    def check_assumptions(self, x) -> list[str]:
        """Return the violated model-validity conditions (empty if none).

        The structural condition on ``D_x H`` is assumed for the shipped
        families and not tested here.
        """
        problems = []
        a = self.hamiltonian_coeffs(x)
        if np.min(a) <= 0:
            problems.append("hamiltonian coefficient a_i(x) must be bounded below by a positive constant")
        for i, ts in enumerate(self.types):
            for label, prof in (("running", ts.running), ("terminal", ts.terminal)):
                if isinstance(prof, ZeroProfile):
                    continue  # degenerate but monotone: used for cost-free instances
                lo, hi = prof.slope_bounds()
                if lo < self.alpha or hi > 1.0 / self.alpha:
                    problems.append(
                        f"type {i} {label} profile slope range [{lo}, {hi}] outside "
                        f"[alpha, 1/alpha] = [{self.alpha}, {1 / self.alpha}]"
                    )
        return problems


# ---------------------------------------------------------------------------
# Configuration files (TOML)

REQUIRED_MODEL = ("horizon", "prior", "control_set", "initial_density", "type")


def load_config(path) -> dict:
    """Parse a TOML configuration, turning parse errors into ``ConfigError``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read configuration ({exc.strerror})") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"syntax error: {exc}") from None


def config_hash(raw: dict) -> str:
    """SHA-256 of the parsed configuration in canonical JSON form."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}.{key}", "required field missing")
    return section[key]


def model_from_config(raw: dict) -> ModelSpec:
    sec = raw.get("model")
    if not isinstance(sec, dict):
        raise ConfigError("model", "required section missing")
    for key in REQUIRED_MODEL:
        _require(sec, key, "model")
    type_tables = sec["type"]
    if not isinstance(type_tables, list):
        raise ConfigError("model.type", "expected an array of tables [[model.type]]")
    types = []
    for i, tt in enumerate(type_tables):
        where = f"model.type[{i}]"
        for key in ("hamiltonian", "running", "terminal", "major"):
            _require(tt, key, where)
        unknown = set(tt) - {"hamiltonian", "running", "terminal", "major"}
        if unknown:
            raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown field")
        types.append(
            TypeSpec(
                hamiltonian=XFunction.from_config(tt["hamiltonian"], f"{where}.hamiltonian"),
                running=Profile.from_config(tt["running"], f"{where}.running"),
                terminal=Profile.from_config(tt["terminal"], f"{where}.terminal"),
                major=MajorCost.from_config(tt["major"], f"{where}.major"),
            )
        )
    try:
        prior = Belief.of(sec["prior"])
    except ValueError as exc:
        raise ConfigError("model.prior", str(exc)) from None
    cs = sec["control_set"]
    if not (isinstance(cs, list) and len(cs) == 2):
        raise ConfigError("model.control_set", "expected [lo, hi]")
    return ModelSpec(
        types=tuple(types),
        horizon=float(sec["horizon"]),
        prior=prior,
        control_set=(float(cs[0]), float(cs[1])),
        initial=InitialDensity.from_config(sec["initial_density"], "model.initial_density"),
        bandwidth=float(sec.get("coupling_bandwidth", 0.3)),
        alpha=float(sec.get("alpha", 0.5)),
    )


def make_model(
    a: list[XFunction],
    running: list[Profile],
    terminal: list[Profile],
    major: list[MajorCost],
    prior,
    horizon: float = 1.0,
    control_set=(0.0, 1.0),
    initial: InitialDensity | None = None,
    **kw,
) -> ModelSpec:
    """Convenience constructor used by tests and scripts."""
    types = tuple(TypeSpec(*t) for t in zip(a, running, terminal, major))
    return ModelSpec(
        types=types,
        horizon=horizon,
        prior=Belief.of(prior),
        control_set=tuple(control_set),
        initial=initial or GaussianInitial(0.0, 0.5),
        **kw,
    )


XFunctionLike = Callable[[np.ndarray], np.ndarray]

import math
from enum import Enum
from typing import Any, Callable

import numpy as np
from scipy import special
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from hullfacets.geometry.errors import (
    ConvergenceFailure,
    DomainError,
    InvalidParameter,
    NonMonotoneSurvival,
    ZeroVector,
)

ArrayFn = Callable[[Any], Any]

# survival levels below which the tabulated kernels treat the tail as empty
INFINITE_TAIL_FLOOR = 1e-60
TRUNCATED_TAIL_FLOOR = 1e-10
# largest log s that still fits a double after exponentiation
_MAX_LOG_S = 700.0


class TailVariant(str, Enum):
    POLYNOMIAL = "polynomial"
    EXPONENTIAL = "exponential"
    TRUNCATED = "truncated"


class SlowlyVaryingFn:
    """A slowly varying L(s) with its logarithmic derivative.

    ``value_of_log`` and ``epsilon_of_log`` evaluate L and the index
    eps(s) = s (log L(s))' from log s, which keeps the sample-complexity searches
    usable far beyond the double range of s itself.
    """

    def __init__(
        self,
        func: Callable[[float], float],
        log_derivative: Callable[[float], float] | None = None,
        value_of_log: Callable[[float], float] | None = None,
        epsilon_of_log: Callable[[float], float] | None = None,
        name: str = "L",
    ):
        self._func = func
        self._log_derivative = log_derivative
        self._value_of_log = value_of_log
        self._epsilon_of_log = epsilon_of_log
        self._name = name

    @property
    def name(self) -> str:
        return self._name

    def __call__(self, s: float) -> float:
        return float(self._func(s))

    def log_derivative(self, s: float) -> float:
        if self._log_derivative is not None:
            return float(self._log_derivative(s))
        h = s * 1e-6
        return (math.log(self(s + h)) - math.log(self(s - h))) / (2.0 * h)

    def epsilon(self, s: float) -> float:
        return s * self.log_derivative(s)

    def at_log(self, log_s: float) -> float:
        if self._value_of_log is not None:
            return float(self._value_of_log(log_s))
        if log_s > _MAX_LOG_S:
            raise DomainError("{name} cannot be evaluated at log s = {log_s}".format(name=self._name, log_s=log_s))
        return self(math.exp(log_s))

    def epsilon_at_log(self, log_s: float) -> float:
        if self._epsilon_of_log is not None:
            return float(self._epsilon_of_log(log_s))
        if log_s > _MAX_LOG_S:
            raise DomainError("eps of {name} cannot be evaluated at log s = {log_s}".format(name=self._name, log_s=log_s))
        return self.epsilon(math.exp(log_s))

    @classmethod
    def constant(cls, c: float) -> "SlowlyVaryingFn":
        if c <= 0:
            raise InvalidParameter("Slowly varying constant must be positive, got {c}".format(c=c))
        return cls(
            func=lambda s: c,
            log_derivative=lambda s: 0.0,
            value_of_log=lambda log_s: c,
            epsilon_of_log=lambda log_s: 0.0,
            name="{c:.6g}".format(c=c),
        )

    @classmethod
    def sqrt_log(cls) -> "SlowlyVaryingFn":
        """L(s) = sqrt(2 log s), the Gaussian tail."""
        return cls(
            func=lambda s: math.sqrt(2.0 * math.log(s)),
            log_derivative=lambda s: 1.0 / (2.0 * s * math.log(s)),
            value_of_log=lambda log_s: math.sqrt(2.0 * log_s),
            epsilon_of_log=lambda log_s: 1.0 / (2.0 * log_s),
            name="sqrt(2 log s)",
        )

    @classmethod
    def log_power(cls, alpha: float) -> "SlowlyVaryingFn":
        return cls(
            func=lambda s: math.log(s) ** alpha,
            log_derivative=lambda s: alpha / (s * math.log(s)),
            value_of_log=lambda log_s: log_s**alpha,
            epsilon_of_log=lambda log_s: alpha / log_s,
            name="(log s)^{alpha}".format(alpha=alpha),
        )


class TailFamily:
    def __init__(self, variant: TailVariant, L: SlowlyVaryingFn, k: float | None = None):
        if variant == TailVariant.POLYNOMIAL and (k is None or k < 0):
            raise InvalidParameter("Polynomial tail needs k >= 0, got {k}".format(k=k))
        if variant == TailVariant.TRUNCATED and (k is None or k <= 0):
            raise InvalidParameter("Truncated tail needs k > 0, got {k}".format(k=k))
        self._variant = variant
        self._k = k
        self._L = L

    @property
    def variant(self) -> TailVariant:
        return self._variant

    @property
    def k(self) -> float:
        if self._k is None:
            raise InvalidParameter("{variant} tail has no exponent k".format(variant=self._variant.value))
        return self._k

    @property
    def L(self) -> SlowlyVaryingFn:
        return self._L

    def __repr__(self) -> str:
        return "TailFamily({variant}, k={k}, L={L})".format(variant=self._variant.value, k=self._k, L=self._L.name)


class RadialModel:
    """Spherically symmetric law in R^d given by its radial survival F(x) = P(|X| >= x)."""

    def __init__(
        self,
        survival: ArrayFn,
        dim: int,
        tail: TailFamily,
        support_upper: float = math.inf,
        density: ArrayFn | None = None,
        quantile: ArrayFn | None = None,
        scale: float = 1.0,
        name: str = "custom",
        params: dict[str, Any] | None = None,
    ):
        if int(dim) != dim or dim < 2:
            raise InvalidParameter("Dimension must be an integer >= 2, got {dim}".format(dim=dim))
        if not support_upper > 0:
            raise InvalidParameter("Support must extend beyond the origin")
        self._survival = survival
        self._density = density
        self._quantile = quantile
        self._dim = int(dim)
        self._tail = tail
        self._support_upper = float(support_upper)
        self._scale = float(scale)
        self._name = name
        self._params = dict(params or {})

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def tail(self) -> TailFamily:
        return self._tail

    @property
    def support_upper(self) -> float:
        return self._support_upper

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def name(self) -> str:
        return self._name

    @property
    def params(self) -> dict[str, Any]:
        return dict(self._params)

    @property
    def model_id(self) -> str:
        parts = ["{key}={value}".format(key=key, value=value) for key, value in sorted(self._params.items())]
        return "{name}({args})".format(name=self._name, args=", ".join(["d={d}".format(d=self._dim), *parts]))

    @property
    def tail_floor(self) -> float:
        return INFINITE_TAIL_FLOOR if math.isinf(self._support_upper) else TRUNCATED_TAIL_FLOOR

    def survival(self, x: Any) -> Any:
        x_arr = np.asarray(x, dtype=float)
        inside = (x_arr > 0) & (x_arr < self._support_upper)
        with np.errstate(all="ignore"):
            raw = np.asarray(self._survival(np.where(inside, x_arr, 0.5 * min(self._scale, self._support_upper))))
        out = np.where(x_arr <= 0, 1.0, np.where(inside, np.clip(raw, 0.0, 1.0), 0.0))
        return float(out) if out.ndim == 0 else out

    def density(self, x: Any) -> Any:
        x_arr = np.asarray(x, dtype=float)
        inside = (x_arr > 0) & (x_arr < self._support_upper)
        safe = np.where(inside, x_arr, 0.5 * min(self._scale, self._support_upper))
        with np.errstate(all="ignore"):
            if self._density is not None:
                raw = np.asarray(self._density(safe), dtype=float)
            else:
                h = 1e-6 * np.maximum(safe, self._scale * 1e-3)
                lo = np.maximum(safe - h, 0.0)
                hi = np.minimum(safe + h, self._support_upper)
                raw = (np.asarray(self._survival(lo)) - np.asarray(self._survival(hi))) / (hi - lo)
        out = np.where(inside, np.maximum(raw, 0.0), 0.0)
        return float(out) if out.ndim == 0 else out

    def sample_radius(self, u: Any) -> Any:
        """Inverse of the radial survival: returns x with F(x) = u."""
        u_arr = np.asarray(u, dtype=float)
        if np.any((u_arr <= 0) | (u_arr > 1)):
            raise DomainError("Uniform variate must lie in (0, 1]")
        if self._quantile is None:
            out = np.vectorize(self._invert_survival, otypes=[float])(u_arr)
        else:
            with np.errstate(all="ignore"):
                out = self._polish(np.asarray(self._quantile(u_arr), dtype=float), u_arr)
        out = np.where(u_arr >= 1.0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def _polish(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        for _ in range(2):
            residual = self.survival(x) - u
            slope = self.density(x)
            step = np.where(slope > 0, residual / np.where(slope > 0, slope, 1.0), 0.0)
            candidate = np.clip(x + step, 0.0, self._support_upper)
            better = np.abs(self.survival(candidate) - u) < np.abs(residual)
            x = np.where(better, candidate, x)
        return x

    def _invert_survival(self, u: float) -> float:
        if u >= 1.0:
            return 0.0
        lo, f_lo = 0.0, 1.0
        hi = min(self._scale, self._support_upper)
        f_hi = self.survival(hi)
        expansions = 0
        while f_hi > u:
            if f_hi > f_lo:
                raise NonMonotoneSurvival("Survival increases on [{lo}, {hi}]".format(lo=lo, hi=hi))
            lo, f_lo = hi, f_hi
            hi = min(2.0 * hi, self._support_upper)
            f_hi = self.survival(hi)
            expansions += 1
            if expansions > 2000:
                raise ConvergenceFailure("Could not bracket survival level {u}".format(u=u))
        x = 0.5 * (lo + hi)
        for _ in range(200):
            fx = self.survival(x)
            if fx > f_lo or fx < f_hi:
                raise NonMonotoneSurvival("Survival is not monotone near x={x}".format(x=x))
            if fx == u:
                return x
            if fx > u:
                lo, f_lo = x, fx
            else:
                hi, f_hi = x, fx
            slope = self.density(x)
            x_new = x + (fx - u) / slope if slope > 0 else math.nan
            if not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
            if abs(x_new - x) <= 1e-12 * abs(x_new) or hi - lo <= 1e-12 * hi:
                return x_new
            x = x_new
        raise ConvergenceFailure("Radius for survival level {u} did not converge".format(u=u))

    def sample_point(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(100):
            try:
                direction = _unit_direction(rng.standard_normal(self._dim))
            except ZeroVector:
                continue
            return direction * self.sample_radius(1.0 - rng.random())
        raise ZeroVector("Normal vector underflowed repeatedly")

    def sample_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        normals = rng.standard_normal((n, self._dim))
        norms = np.linalg.norm(normals, axis=1)
        attempts = 0
        while np.any(norms < np.finfo(float).tiny):
            attempts += 1
            if attempts > 100:
                raise ZeroVector("Normal vector underflowed repeatedly")
            bad = norms < np.finfo(float).tiny
            normals[bad] = rng.standard_normal((int(bad.sum()), self._dim))
            norms = np.linalg.norm(normals, axis=1)
        radii = np.asarray(self.sample_radius(1.0 - rng.random(n)), dtype=float)
        return normals / norms[:, None] * radii[:, None]

    def grid_coordinate(self, x: Any) -> Any:
        return grid_coordinate(x, self._scale, self._support_upper)

    def breakpoints(self, lower: float, upper: float | None = None) -> list[float]:
        levels = np.array([0.9, 0.5, 0.1, 1e-2, 1e-4, 1e-8, 1e-16, 1e-32])
        upper = self._support_upper if upper is None else upper
        radii = np.atleast_1d(self.sample_radius(levels[levels >= self.tail_floor]))
        return sorted(float(r) for r in radii if lower < r < upper)

    def tail_radius(self) -> float:
        return float(self.sample_radius(self.tail_floor))

    def tabulation_radii(self, nodes: int) -> np.ndarray:
        """Radii covering the bulk uniformly and the tail geometrically in survival."""
        quarter = max(nodes // 4, 4)
        median = float(self.sample_radius(0.5))
        bulk = np.linspace(0.0, median, quarter + 1)
        head = np.atleast_1d(self.sample_radius(1.0 - np.geomspace(1e-8, 0.5, quarter)))
        tail = np.atleast_1d(self.sample_radius(np.geomspace(0.5, self.tail_floor, nodes - 2 * quarter)))
        radii = np.unique(np.concatenate([bulk, head, tail]))
        return radii[(radii >= 0) & (radii < self._support_upper)]

    def scaled(self, c: float) -> "RadialModel":
        """Law of cX."""
        if c <= 0:
            raise InvalidParameter("Scale factor must be positive, got {c}".format(c=c))
        density = self._density
        quantile = self._quantile
        return RadialModel(
            survival=lambda x: self._survival(np.asarray(x) / c),
            dim=self._dim,
            tail=self._tail,
            support_upper=self._support_upper * c,
            density=None if density is None else (lambda x: np.asarray(density(np.asarray(x) / c)) / c),
            quantile=None if quantile is None else (lambda u: np.asarray(quantile(u)) * c),
            scale=self._scale * c,
            name=self._name,
            params={**self._params, "scale": c * self._params.get("scale", 1.0)},
        )

    @classmethod
    def from_radial_density(
        cls,
        radial_density: ArrayFn,
        dim: int,
        tail: TailFamily,
        support_upper: float = math.inf,
        scale: float = 1.0,
        nodes: int = 400,
        name: str = "tabulated",
    ) -> "RadialModel":
        """Model whose survival is tabulated by quadrature of a radial density, PCHIP in between."""
        if math.isinf(support_upper):
            xi_nodes = np.linspace(0.0, math.log1p(1e6), nodes)
            radii = scale * np.expm1(xi_nodes)
        else:
            radii = support_upper * np.linspace(0.0, 1.0, nodes)
            xi_nodes = radii / support_upper
        masses = np.array([quad(radial_density, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0] for a, b in zip(radii[:-1], radii[1:])])
        last = quad(radial_density, radii[-1], support_upper, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        tail_mass = np.concatenate([np.cumsum(masses[::-1])[::-1] + last, [last]])
        if abs(tail_mass[0] - 1.0) > 1e-6:
            raise InvalidParameter("Radial density integrates to {mass}, not 1".format(mass=tail_mass[0]))
        tail_mass = tail_mass / tail_mass[0]
        positive = tail_mass > 0
        log_mass = PchipInterpolator(xi_nodes[positive], np.log(tail_mass[positive]), extrapolate=False)

        def survival(x: Any) -> Any:
            x_arr = np.asarray(x, dtype=float)
            xi = np.log1p(x_arr / scale) if math.isinf(support_upper) else x_arr / support_upper
            with np.errstate(all="ignore"):
                out = np.exp(log_mass(xi))
            return np.where(np.isnan(out), 0.0, out)

        return cls(
            survival=survival,
            dim=dim,
            tail=tail,
            support_upper=support_upper,
            density=radial_density,
            scale=scale,
            name=name,
        )


def grid_coordinate(x: Any, scale: float, support_upper: float) -> Any:
    """Smooth coordinate for tabulation: ~x near the origin, log-like toward the support end."""
    x_arr = np.asarray(x, dtype=float)
    if math.isinf(support_upper):
        return np.log1p(x_arr / scale)
    with np.errstate(divide="ignore"):
        return -np.log1p(-np.minimum(x_arr, support_upper) / support_upper)


def grid_radius(xi: Any, scale: float, support_upper: float) -> Any:
    """Inverse of ``grid_coordinate``."""
    xi_arr = np.asarray(xi, dtype=float)
    if math.isinf(support_upper):
        return scale * np.expm1(xi_arr)
    return -support_upper * np.expm1(-xi_arr)


def _unit_direction(normal: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(normal))
    if norm < np.finfo(float).tiny:
        raise ZeroVector("Normal vector norm underflowed")
    return normal / norm


def check_dim(d: int) -> None:
    if int(d) != d or d < 2:
        raise InvalidParameter("Dimension must be an integer >= 2, got {d}".format(d=d))


def gaussian(d: int) -> RadialModel:
    check_dim(d)
    a = d / 2.0
    log_norm = (a - 1.0) * math.log(2.0) + special.gammaln(a)

    return RadialModel(
        survival=lambda x: special.gammaincc(a, np.square(x) / 2.0),
        density=lambda x: np.exp((d - 1) * np.log(x) - np.square(x) / 2.0 - log_norm),
        quantile=lambda u: np.sqrt(2.0 * special.gammainccinv(a, u)),
        dim=d,
        tail=TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.sqrt_log()),
        scale=math.sqrt(d),
        name="gaussian",
    )


def student_t(k: float, d: int) -> RadialModel:
    """Multivariate t with k degrees of freedom; |X|^2/d follows F(d, k)."""
    check_dim(d)
    if not k > 0:
        raise InvalidParameter("t model needs k > 0, got {k}".format(k=k))
    a, b = k / 2.0, d / 2.0
    log_norm = math.log(2.0) + (k / 2.0) * math.log(k) - special.betaln(a, b)
    tail_constant = math.exp(
        math.log(2.0) + special.gammaln((k + d) / 2.0) - special.gammaln(a) - special.gammaln(b) + (a - 1.0) * math.log(k)
    )

    def quantile(u: Any) -> Any:
        u_arr = np.asarray(u, dtype=float)
        t = special.betaincinv(a, b, np.minimum(u_arr, 0.5))
        s = special.betaincinv(b, a, np.maximum(1.0 - u_arr, 0.5))
        return np.where(u_arr <= 0.5, np.sqrt(k * (1.0 - t) / t), np.sqrt(k * s / (1.0 - s)))

    return RadialModel(
        survival=lambda x: special.betainc(a, b, k / (k + np.square(x))),
        density=lambda x: np.exp(log_norm + (d - 1) * np.log(x) - ((k + d) / 2.0) * np.log(k + np.square(x))),
        quantile=quantile,
        dim=d,
        tail=TailFamily(TailVariant.POLYNOMIAL, SlowlyVaryingFn.constant(tail_constant), k=k),
        scale=math.sqrt(d),
        name="t",
        params={"k": k},
    )


def uniform_ball(d: int) -> RadialModel:
    check_dim(d)
    return RadialModel(
        survival=lambda x: -np.expm1(d * np.log(x)),
        density=lambda x: d * np.power(x, d - 1),
        quantile=lambda u: np.exp(np.log1p(-np.asarray(u)) / d),
        dim=d,
        tail=TailFamily(TailVariant.TRUNCATED, SlowlyVaryingFn.constant(float(d)), k=1.0),
        support_upper=1.0,
        scale=0.5,
        name="uniform_ball",
    )


def beta_type(q: float, d: int) -> RadialModel:
    """Density proportional to (1 - |x|^2)^q on the unit ball."""
    check_dim(d)
    if not q > -1:
        raise InvalidParameter("beta-type model needs q > -1, got {q}".format(q=q))
    a, b = q + 1.0, d / 2.0
    log_beta = special.betaln(b, a)
    tail_constant = math.exp((q + 1.0) * math.log(2.0) - math.log(q + 1.0) - log_beta)

    def quantile(u: Any) -> Any:
        u_arr = np.asarray(u, dtype=float)
        gap = special.betaincinv(a, b, np.minimum(u_arr, 0.5))
        squared = special.betaincinv(b, a, np.maximum(1.0 - u_arr, 0.5))
        return np.where(u_arr <= 0.5, np.sqrt(1.0 - gap), np.sqrt(squared))

    return RadialModel(
        survival=lambda x: special.betainc(a, b, (1.0 - np.asarray(x)) * (1.0 + np.asarray(x))),
        density=lambda x: np.exp(
            math.log(2.0) + (d - 1) * np.log(x) + q * np.log((1.0 - np.asarray(x)) * (1.0 + np.asarray(x))) - log_beta
        ),
        quantile=quantile,
        dim=d,
        tail=TailFamily(TailVariant.TRUNCATED, SlowlyVaryingFn.constant(tail_constant), k=q + 1.0),
        support_upper=1.0,
        scale=0.5,
        name="beta_type",
        params={"q": q},
    )


def custom_model(
    survival: ArrayFn,
    tail: TailFamily,
    d: int,
    support_upper: float = math.inf,
    density: ArrayFn | None = None,
    quantile: ArrayFn | None = None,
    scale: float = 1.0,
    name: str = "custom",
) -> RadialModel:
    check_dim(d)
    return RadialModel(
        survival=survival,
        dim=d,
        tail=tail,
        support_upper=support_upper,
        density=density,
        quantile=quantile,
        scale=scale,
        name=name,
    )


def builtin_models() -> dict[str, Callable[..., RadialModel]]:
    return {
        "gaussian": gaussian,
        "t": student_t,
        "uniform_ball": uniform_ball,
        "beta_type": beta_type,
        "custom": custom_model,
    }

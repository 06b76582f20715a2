import math
import threading
import weakref
from typing import Any, Callable

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import special
from scipy.interpolate import PchipInterpolator

from hullfacets.geometry.distributions import RadialModel, check_dim, grid_coordinate, grid_radius
from hullfacets.geometry.errors import DomainError, QuadratureFailure
from hullfacets.geometry.quadrature import (
    KernelValue,
    QuadratureConfig,
    integrate,
    panel_quadrature,
    stieltjes,
)

DEFAULT_GRID_NODES = 240
LINE_DENSITY_DEGREE = 16
# survival levels closing the bulk panels of the line-distance density; the tail continues by factors of 100
LINE_DENSITY_BULK_LEVELS = (0.99, 0.9, 0.75, 0.5, 0.25, 0.1)

_TABLES: "weakref.WeakKeyDictionary[RadialModel, dict[tuple[Any, ...], Any]]" = weakref.WeakKeyDictionary()
_TABLES_LOCK = threading.Lock()


def cached_table(model: RadialModel, key: tuple[Any, ...], build: Callable[[], Any]) -> Any:
    """Per-model memo of tabulated kernels; the first finished build wins."""
    with _TABLES_LOCK:
        table = _TABLES.setdefault(model, {}).get(key)
    if table is None:
        table = build()
        with _TABLES_LOCK:
            table = _TABLES.setdefault(model, {}).setdefault(key, table)
    return table


def _cap_gap(d: int, gap: Any) -> Any:
    """kappa(1 - gap), accurate when the plane nearly touches the sphere."""
    gap = np.clip(gap, 0.0, 1.0)
    return 0.5 * special.betainc((d - 1) / 2.0, 0.5, gap * (2.0 - gap))


def _cap_angle(d: int, phi: Any) -> Any:
    """Surface fraction of the cap {u : u_1 >= cos(phi)} for phi in [0, pi]."""
    phi = np.asarray(phi, dtype=float)
    half = 0.5 * special.betainc((d - 1) / 2.0, 0.5, np.square(np.sin(phi)))
    return np.where(phi <= 0.5 * math.pi, half, 1.0 - half)


def _check_fraction(r: float) -> None:
    if not 0.0 <= r <= 1.0:
        raise DomainError("Ratio must lie in [0, 1], got {r}".format(r=r))


def _check_radius(x: float) -> None:
    if not x >= 0:
        raise DomainError("Radius must be non-negative, got {x}".format(x=x))


def kappa(d: int, r: float) -> float:
    check_dim(d)
    _check_fraction(r)
    return float(0.5 * special.betainc((d - 1) / 2.0, 0.5, (1.0 - r) * (1.0 + r)))


def lambda_d(d: int, r: float) -> float:
    check_dim(d)
    _check_fraction(r)
    if d == 2:
        return 1.0
    return float(((1.0 - r) * (1.0 + r)) ** ((d - 2) / 2.0))


def marginal_survival(model: RadialModel, x: float, cfg: QuadratureConfig) -> KernelValue:
    """G(x) = P(X_1 >= x)."""
    _check_radius(x)
    if x == 0:
        return KernelValue(0.5)
    if x >= model.support_upper:
        return KernelValue(0.0)
    d = model.dim
    return stieltjes(model, lambda y: float(_cap_gap(d, (y - x) / y)), x, cfg)


def pair_norm_survival(model: RadialModel, x: float, cfg: QuadratureConfig) -> KernelValue:
    """K(x) = P(X_1^2 + X_2^2 > x^2)."""
    _check_radius(x)
    if x == 0:
        return KernelValue(1.0)
    if x >= model.support_upper:
        return KernelValue(0.0)
    d = model.dim
    if d == 2:
        return KernelValue(model.survival(x))
    exponent = (d - 2) / 2.0

    def weight(y: float) -> float:
        gap = (y - x) / y
        return (gap * (2.0 - gap)) ** exponent

    return stieltjes(model, weight, x, cfg)


class PairNormTable:
    """Monotone interpolant of log K against the model's grid coordinate."""

    def __init__(self, model: RadialModel, cfg: QuadratureConfig, nodes: int):
        radii = model.tabulation_radii(nodes)
        values = [pair_norm_survival(model, float(r), cfg) for r in radii]
        logs = np.array([math.log(v.value) if v.value > 0 else -math.inf for v in values])
        keep = np.isfinite(logs)
        self._scale = model.scale
        self._support_upper = model.support_upper
        self._xi = grid_coordinate(radii[keep], self._scale, self._support_upper)
        self._log_k = logs[keep]
        self._interp = PchipInterpolator(self._xi, self._log_k)
        self._tail_slope = (self._log_k[-1] - self._log_k[-2]) / (self._xi[-1] - self._xi[-2])
        self._abs_error = max(v.abs_error_estimate for v in values)

    @property
    def abs_error_estimate(self) -> float:
        return self._abs_error

    @property
    def nodes(self) -> int:
        return len(self._xi)

    def __call__(self, y: Any) -> Any:
        y_arr = np.asarray(y, dtype=float)
        xi = grid_coordinate(np.maximum(y_arr, 0.0), self._scale, self._support_upper)
        last = self._xi[-1]
        with np.errstate(all="ignore"):
            log_k = np.where(
                xi <= last,
                self._interp(np.minimum(xi, last)),
                self._log_k[-1] + self._tail_slope * (xi - last),
            )
            out = np.where(y_arr <= 0, 1.0, np.where(y_arr >= self._support_upper, 0.0, np.exp(log_k)))
        return float(out) if out.ndim == 0 else out


def pair_norm_function(model: RadialModel, cfg: QuadratureConfig, nodes: int = DEFAULT_GRID_NODES) -> Callable[[Any], Any]:
    if model.dim == 2:
        return model.survival
    return cached_table(model, ("K", cfg, nodes), lambda: PairNormTable(model, cfg, nodes))


def plane_distance_survival(
    model: RadialModel, x: float, cfg: QuadratureConfig, nodes: int = DEFAULT_GRID_NODES
) -> KernelValue:
    """H(x): survival of the distance from the origin to the hyperplane through d samples.

    Integrated by parts against arccos(x/y), which leaves
    (2/pi) int K(y)^d x / (y sqrt(y^2 - x^2)) dy; with the substitution
    y = x cosh(t) the integrand becomes K(x cosh t)^d / cosh t.
    """
    _check_radius(x)
    if x == 0:
        return KernelValue(1.0)
    if x >= model.support_upper:
        return KernelValue(0.0)
    d = model.dim
    pair_norm = pair_norm_function(model, cfg, nodes)
    y_cut = model.support_upper if math.isfinite(model.support_upper) else model.tail_radius()
    if x >= y_cut:
        return KernelValue(0.0)
    abs_tol = cfg.abs_tol * max(float(pair_norm(x)) ** d, np.finfo(float).tiny)
    if cfg.singularity_substitution:
        points = [math.acosh(q / x) for q in model.breakpoints(x, y_cut)]
        value = integrate(
            lambda t: float(pair_norm(x * math.cosh(t))) ** d / math.cosh(t),
            0.0,
            math.acosh(y_cut / x),
            cfg,
            points=points,
            abs_tol=abs_tol,
        )
    else:
        value = integrate(
            lambda y: float(pair_norm(y)) ** d * x / (y * math.sqrt(y + x)),
            x,
            y_cut,
            cfg,
            abs_tol=abs_tol,
            weight="alg",
            wvar=(-0.5, 0.0),
        )
    return value.scaled(2.0 / math.pi)


def _zone_quadrature(
    integrand: Callable[[np.ndarray], np.ndarray], upper: float, cfg: QuadratureConfig, abs_tol: float
) -> float:
    """Integral over (0, upper); adaptive subdivision takes over when the panels stall at a singular support end."""
    try:
        return panel_quadrature(integrand, 0.0, upper, cfg.rel_tol, abs_tol).value
    except QuadratureFailure:
        return integrate(lambda s: float(integrand(np.array([s]))[0]), 0.0, upper, cfg, abs_tol=abs_tol).value


def pair_plane_survival(model: RadialModel, x: float, cfg: QuadratureConfig) -> KernelValue:
    """F0(x): survival of the distance from the origin to the line through two samples.

    For sample radii x < z < y the line misses the ball of radius x with the
    probability of a spherical zone between the angles theta2 -/+ theta1, where
    cos(theta1) = x / z and cos(theta2) = x / y. The z-integral runs over
    z = x cosh(s).
    """
    _check_radius(x)
    if x == 0:
        return KernelValue(1.0)
    if x >= model.support_upper:
        return KernelValue(0.0)
    d = model.dim
    inner_tol = cfg.abs_tol * model.survival(x)

    def zone_mass(y: float) -> float:
        theta2 = math.atan2(math.sqrt((y - x) * (y + x)), x)

        def integrand(s: np.ndarray) -> np.ndarray:
            theta1 = np.arctan(np.sinh(s))
            zone = _cap_angle(d, theta2 + theta1) - _cap_angle(d, theta2 - theta1)
            return model.density(x * np.cosh(s)) * zone * x * np.sinh(s)

        return _zone_quadrature(integrand, math.acosh(y / x), cfg, inner_tol)

    return stieltjes(model, zone_mass, x, cfg).scaled(2.0)


def pair_plane_density(model: RadialModel, x: float, cfg: QuadratureConfig) -> KernelValue:
    """-dF0/dx, differentiated under the integral of ``pair_plane_survival``."""
    if not x > 0:
        raise DomainError("Line distance density needs x > 0, got {x}".format(x=x))
    if x >= model.support_upper:
        return KernelValue(0.0)
    d = model.dim
    inner_tol = cfg.abs_tol * model.survival(x)

    def zone_rate(y: float) -> float:
        root = math.sqrt((y - x) * (y + x))
        theta2 = math.atan2(root, x)

        def integrand(s: np.ndarray) -> np.ndarray:
            sinh = np.sinh(s)
            theta1 = np.arctan(sinh)
            ratio = x * sinh / root
            outer = np.sin(theta2 + theta1) ** (d - 2)
            inner = np.sin(theta2 - theta1) ** (d - 2)
            return model.density(x * np.cosh(s)) * (outer * (1.0 + ratio) + inner * (1.0 - ratio))

        return _zone_quadrature(integrand, math.acosh(y / x), cfg, inner_tol)

    return stieltjes(model, zone_rate, x, cfg).scaled(2.0 / special.beta(0.5, (d - 1) / 2.0))


class IdentityCheck:
    def __init__(self, x: float, lhs: float, rhs: float):
        self._x = x
        self._lhs = lhs
        self._rhs = rhs

    @property
    def x(self) -> float:
        return self._x

    @property
    def lhs(self) -> float:
        return self._lhs

    @property
    def rhs(self) -> float:
        return self._rhs

    @property
    def gap(self) -> float:
        return abs(self._lhs - self._rhs)


class LineDistanceDensity:
    """Piecewise Chebyshev interpolant of -dF0/dy from ``start`` to the model's tail radius.

    Panels end at survival quantiles of the radial law, in the bulk at
    ``LINE_DENSITY_BULK_LEVELS`` and past it at every factor of 100 down to
    the tail floor. Each panel is interpolated in the grid coordinate, where
    power-law and support-end behaviour become exponentials.
    """

    def __init__(self, model: RadialModel, start: float, cfg: QuadratureConfig, degree: int = LINE_DENSITY_DEGREE):
        if not start > 0:
            raise DomainError("Line distance density needs a positive start, got {x}".format(x=start))
        self._scale = model.scale
        self._support_upper = model.support_upper
        self._upper = min(model.tail_radius(), model.support_upper)
        tail_levels = np.geomspace(1e-2, model.tail_floor, int(round(math.log10(1e-2 / model.tail_floor) / 2)) + 1)
        levels = np.concatenate([LINE_DENSITY_BULK_LEVELS, tail_levels])
        radii = np.atleast_1d(model.sample_radius(levels))
        inner = [float(r) for r in radii if start < r < self._upper]
        self._edges = np.unique(np.array([start, *inner, self._upper])) if start < self._upper else np.array([])
        self._xi_edges = grid_coordinate(self._edges, self._scale, self._support_upper)

        def sample(xi: np.ndarray) -> np.ndarray:
            ys = grid_radius(xi, self._scale, self._support_upper)
            return np.array([pair_plane_density(model, float(y), cfg).value for y in ys])

        self._pieces = [
            Chebyshev.interpolate(sample, degree, domain=[a, b])
            for a, b in zip(self._xi_edges[:-1], self._xi_edges[1:])
        ]

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    @property
    def upper(self) -> float:
        return self._upper

    def __call__(self, y: float) -> float:
        if not self._pieces or y < self._edges[0] or y >= self._upper:
            return 0.0
        xi = float(grid_coordinate(y, self._scale, self._support_upper))
        piece = min(max(int(np.searchsorted(self._xi_edges, xi, side="right")) - 1, 0), len(self._pieces) - 1)
        return float(self._pieces[piece](xi))


def pair_plane_identity(
    model: RadialModel, xs: list[float], cfg: QuadratureConfig, degree: int = LINE_DENSITY_DEGREE
) -> list[IdentityCheck]:
    """Both sides of int (1 - x^2/y^2)^((d-3)/2) |dF0(y)| = K(x)^2 at each x.

    The left side integrates a ``LineDistanceDensity`` built once from the
    smallest requested x, with y = x cosh(t) absorbing the weight's
    singularity at y = x.
    """
    if not xs:
        return []
    if min(xs) <= 0:
        raise DomainError("Identity check needs positive radii")
    d = model.dim
    density = LineDistanceDensity(model, min(xs), cfg, degree)
    checks = []
    for u in xs:
        rhs = pair_norm_survival(model, u, cfg).value ** 2
        if u >= density.upper:
            checks.append(IdentityCheck(u, 0.0, rhs))
            continue
        lhs = integrate(
            lambda t: density(u * math.cosh(t)) * u * math.sinh(t) ** (d - 2) / math.cosh(t) ** (d - 3),
            0.0,
            math.acosh(density.upper / u),
            cfg,
            points=[math.acosh(float(edge) / u) for edge in density.edges if edge > u],
        )
        checks.append(IdentityCheck(u, lhs.value, rhs))
    return checks


def _check_h_args(n: int, c: float) -> None:
    if int(n) != n or n < 0:
        raise DomainError("n must be a non-negative integer, got {n}".format(n=n))
    if not 0.0 < c < 1.0:
        raise DomainError("c must lie in (0, 1), got {c}".format(c=c))


def h_closed_form(n: int, c: float) -> float:
    _check_h_args(n, c)
    return math.exp(special.betaln((n + 1) / 2.0, 0.5) + n * math.log(c) - (n + 1) / 2.0 * math.log1p(-c * c))


def h_quadrature(n: int, c: float, cfg: QuadratureConfig) -> float:
    """int_0^c [(1-t)^-(n+1) + (1+t)^-(n+1)] (c^2 - t^2)^((n-1)/2) dt."""
    _check_h_args(n, c)
    if cfg.singularity_substitution:
        # t = c sin(theta)
        value = integrate(
            lambda theta: (
                (1.0 - c * math.sin(theta)) ** (-(n + 1)) + (1.0 + c * math.sin(theta)) ** (-(n + 1))
            )
            * (c * math.cos(theta)) ** n,
            0.0,
            0.5 * math.pi,
            cfg,
        )
        return value.value
    return integrate(
        lambda t: ((1.0 - t) ** (-(n + 1)) + (1.0 + t) ** (-(n + 1))) * (c + t) ** ((n - 1) / 2.0),
        0.0,
        c,
        cfg,
        weight="alg",
        wvar=(0.0, (n - 1) / 2.0),
    ).value

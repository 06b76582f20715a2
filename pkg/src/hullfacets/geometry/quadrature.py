import functools
import math
import sys
from typing import TYPE_CHECKING, Any, Annotated, Callable, Iterable

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import quad

from hullfacets.geometry.errors import QuadratureFailure

if TYPE_CHECKING:
    from hullfacets.geometry.distributions import RadialModel


class QuadratureConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rel_tol: Annotated[float, Field(gt=0.0)] = 1e-9
    abs_tol: Annotated[float, Field(gt=0.0)] = 1e-12
    max_subdivisions: Annotated[int, Field(ge=10)] = 2000
    singularity_substitution: bool = True


class KernelValue:
    def __init__(self, value: float, abs_error_estimate: float = 0.0, evaluations: int = 0):
        self._value = float(value)
        self._abs_error_estimate = float(abs_error_estimate)
        self._evaluations = int(evaluations)

    @property
    def value(self) -> float:
        return self._value

    @property
    def abs_error_estimate(self) -> float:
        return self._abs_error_estimate

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def scaled(self, factor: float) -> "KernelValue":
        return KernelValue(
            value=self._value * factor,
            abs_error_estimate=self._abs_error_estimate * abs(factor),
            evaluations=self._evaluations,
        )

    def combine(self, other: Self) -> Self:
        self._value += other.value
        self._abs_error_estimate += other.abs_error_estimate
        self._evaluations += other.evaluations
        return self

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, type(self)):
            return NotImplemented
        return (self.value, self.abs_error_estimate, self.evaluations) == (
            other.value,
            other.abs_error_estimate,
            other.evaluations,
        )

    def __repr__(self) -> str:
        return "KernelValue(value={value!r}, abs_error_estimate={err!r}, evaluations={n})".format(
            value=self._value, err=self._abs_error_estimate, n=self._evaluations
        )


def integrate(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    cfg: QuadratureConfig,
    points: Iterable[float] | None = None,
    abs_tol: float | None = None,
    **weight: Any,
) -> KernelValue:
    """Adaptive Gauss-Kronrod quadrature (QUADPACK) with failure reporting.

    ``abs_tol`` overrides ``cfg.abs_tol`` so callers can scale the absolute
    tolerance to the probability mass they integrate over.
    """
    if upper <= lower:
        return KernelValue(0.0)
    epsabs = cfg.abs_tol if abs_tol is None else abs_tol
    inner_points = None
    if points is not None and math.isfinite(upper) and not weight:
        inner_points = sorted({p for p in points if lower < p < upper})
    limit = max(cfg.max_subdivisions, 2 * len(inner_points) + 10 if inner_points else 0)
    result = quad(
        func,
        lower,
        upper,
        epsabs=epsabs,
        epsrel=cfg.rel_tol,
        limit=limit,
        points=inner_points or None,
        full_output=1,
        **weight,
    )
    value, abserr, info = result[0], result[1], result[2]
    if len(result) > 3:
        tolerance = max(epsabs, cfg.rel_tol * abs(value))
        exhausted = info.get("last", 0) >= limit
        if not math.isfinite(value) or (exhausted and abserr > tolerance) or abserr > 100 * tolerance:
            raise QuadratureFailure(
                "Quadrature on [{lower}, {upper}] did not reach tolerance: {msg}".format(
                    lower=lower, upper=upper, msg=str(result[3]).strip().splitlines()[0]
                )
            )
    return KernelValue(value=value, abs_error_estimate=abserr, evaluations=info.get("neval", 0))


@functools.lru_cache(maxsize=8)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _panels(func: Callable[[np.ndarray], np.ndarray], lower: float, upper: float, panels: int, order: int) -> float:
    nodes, weights = _legendre(order)
    edges = np.linspace(lower, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    fx = np.asarray(func(x), dtype=float).reshape(panels, order)
    return float(np.sum(half * (fx @ weights)))


def panel_quadrature(
    func: Callable[[np.ndarray], np.ndarray],
    lower: float,
    upper: float,
    rel_tol: float,
    abs_tol: float,
    panels: int = 4,
    order: int = 16,
    max_panels: int = 1024,
) -> KernelValue:
    """Composite Gauss-Legendre on a vectorized integrand, doubling panels until two passes agree."""
    if upper <= lower:
        return KernelValue(0.0)
    evaluations = panels * order
    previous = _panels(func, lower, upper, panels, order)
    while True:
        panels *= 2
        current = _panels(func, lower, upper, panels, order)
        evaluations += panels * order
        error = abs(current - previous)
        if error <= max(abs_tol, rel_tol * abs(current)):
            return KernelValue(value=current, abs_error_estimate=error, evaluations=evaluations)
        if panels >= max_panels:
            raise QuadratureFailure(
                "Panel quadrature on [{lower}, {upper}] stalled at error {error:.3e}".format(
                    lower=lower, upper=upper, error=error
                )
            )
        previous = current


def stieltjes(
    model: "RadialModel",
    weight: Callable[[float], float],
    lower: float,
    cfg: QuadratureConfig,
    upper: float | None = None,
) -> KernelValue:
    """Integral of weight(y) |dF(y)| over (lower, upper) for the model's radial law.

    The range is split at survival quantiles of the model and an infinite last
    piece is mapped onto (0, 1] through y = b / t.
    """
    upper = model.support_upper if upper is None else min(upper, model.support_upper)
    if upper <= lower:
        return KernelValue(0.0)
    mass = model.survival(lower) - (0.0 if math.isinf(upper) else model.survival(upper))
    if mass <= 0:
        return KernelValue(0.0)
    abs_tol = cfg.abs_tol * mass
    edges = [lower, *model.breakpoints(lower, upper)]
    total = KernelValue(0.0)
    for a, b in zip(edges[:-1], edges[1:]):
        total.combine(integrate(lambda y: weight(y) * model.density(y), a, b, cfg, abs_tol=abs_tol))
    last = edges[-1]
    if math.isinf(upper):

        def mapped(t: float) -> float:
            y = last / t
            density = model.density(y)
            return 0.0 if density == 0 else weight(y) * density * y / t

        total.combine(integrate(mapped, 0.0, 1.0, cfg, abs_tol=abs_tol))
    else:
        total.combine(integrate(lambda y: weight(y) * model.density(y), last, upper, cfg, abs_tol=abs_tol))
    return total

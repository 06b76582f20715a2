import math
from enum import Enum
from typing import Any

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from hullfacets.geometry.distributions import RadialModel, SlowlyVaryingFn, TailFamily, TailVariant, check_dim
from hullfacets.geometry.errors import ConvergenceFailure, InvalidArgs, NonPositiveEpsilon
from hullfacets.geometry.kernels import (
    DEFAULT_GRID_NODES,
    cached_table,
    marginal_survival,
    plane_distance_survival,
)
from hullfacets.geometry.quadrature import QuadratureConfig, integrate

# log of the largest double; beyond it G^(N-d) underflows next to (1-G)^(N-d)
UNDERFLOW_LOG = 745.0


class Regime(str, Enum):
    FIXED_D = "fixed-d"
    HIGH_DIM = "high-dim"
    FINITE_N = "finite-n"


class ExactExpectation:
    def __init__(self, value: float, n: int, d: int, quadrature_error: float, used_simplified_form: bool):
        self._value = value
        self._n = n
        self._d = d
        self._quadrature_error = quadrature_error
        self._used_simplified_form = used_simplified_form

    @property
    def value(self) -> float:
        return self._value

    @property
    def n(self) -> int:
        return self._n

    @property
    def d(self) -> int:
        return self._d

    @property
    def quadrature_error(self) -> float:
        return self._quadrature_error

    @property
    def used_simplified_form(self) -> bool:
        return self._used_simplified_form

    def __repr__(self) -> str:
        return "ExactExpectation(value={value!r}, n={n}, d={d})".format(value=self._value, n=self._n, d=self._d)


class AsymptoticValue:
    """Closed-form E[F_N], kept in log space so high-dimensional values never overflow."""

    def __init__(self, log_value: float, regime: Regime, family: TailVariant, leading_term: str):
        if not math.isfinite(log_value):
            raise InvalidArgs("Asymptotic value is not finite: log value {v}".format(v=log_value))
        self._log_value = log_value
        self._regime = regime
        self._family = family
        self._leading_term = leading_term

    @property
    def log_value(self) -> float:
        return self._log_value

    @property
    def value(self) -> float:
        return math.exp(self._log_value) if self._log_value < 709.0 else math.inf

    @property
    def regime(self) -> Regime:
        return self._regime

    @property
    def family(self) -> TailVariant:
        return self._family

    @property
    def leading_term(self) -> str:
        return self._leading_term

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, type(self)):
            return NotImplemented
        return (self.log_value, self.regime, self.family) == (other.log_value, other.regime, other.family)

    def __repr__(self) -> str:
        return "AsymptoticValue(value={value!r}, regime={regime}, family={family})".format(
            value=self.value, regime=self._regime.value, family=self._family.value
        )


class FacetKernelTable:
    """h(w) = H(G^-1(w)) tabulated as log H against log G on the model's radii."""

    def __init__(self, model: RadialModel, cfg: QuadratureConfig, nodes: int):
        radii = model.tabulation_radii(nodes)
        g_values = [marginal_survival(model, float(r), cfg) for r in radii]
        h_values = [plane_distance_survival(model, float(r), cfg, nodes) for r in radii]
        pairs = sorted(
            (math.log(g.value), math.log(h.value)) for g, h in zip(g_values, h_values) if g.value > 0 and h.value > 0
        )
        log_g, index = np.unique(np.array([p[0] for p in pairs]), return_index=True)
        log_h = np.maximum.accumulate(np.array([p[1] for p in pairs])[index])
        log_h = np.minimum(log_h, 0.0)
        self._log_g = log_g
        self._log_h = log_h
        self._interp = PchipInterpolator(log_g, log_h)
        self._low_slope = (log_h[1] - log_h[0]) / (log_g[1] - log_g[0])
        self._abs_error = max(v.abs_error_estimate for v in [*g_values, *h_values])

    @property
    def log_w_min(self) -> float:
        return float(self._log_g[0])

    @property
    def abs_error_estimate(self) -> float:
        return self._abs_error

    def log_h(self, log_w: float) -> float:
        if log_w >= self._log_g[-1]:
            return float(self._log_h[-1])
        if log_w < self._log_g[0]:
            return float(self._log_h[0] + self._low_slope * (log_w - self._log_g[0]))
        return float(self._interp(log_w))


def facet_kernel_table(model: RadialModel, cfg: QuadratureConfig, nodes: int = DEFAULT_GRID_NODES) -> FacetKernelTable:
    return cached_table(model, ("GH", cfg, nodes), lambda: FacetKernelTable(model, cfg, nodes))


def log_binomial(n: float, d: int) -> float:
    return float(special.gammaln(n + 1) - special.gammaln(d + 1) - special.gammaln(n - d + 1))


def _check_sample_size(n: int, d: int) -> None:
    check_dim(d)
    if int(n) != n or n <= d:
        raise InvalidArgs("Need an integer N >= d + 1, got N={n} with d={d}".format(n=n, d=d))


def expected_facets_exact(
    model: RadialModel, n: int, d: int, cfg: QuadratureConfig, nodes: int = DEFAULT_GRID_NODES
) -> ExactExpectation:
    """E[F_N] from the master formula, integrated by parts in w = G(x).

    With h = H o G^-1 and m = N - d the formula reads
    C(N, d) [2^(1-m) + m int_0^(1/2) h(w) ((1-w)^(m-1) - w^(m-1)) dw],
    evaluated over s = log w with every power kept in log space.
    """
    _check_sample_size(n, d)
    if model.dim != d:
        raise InvalidArgs("Model lives in d={dim}, asked for d={d}".format(dim=model.dim, d=d))
    m = n - d
    if m == 1:
        return ExactExpectation(float(d + 1), n, d, 0.0, False)
    table = facet_kernel_table(model, cfg, nodes)
    log_c = log_binomial(n, d) + math.log(m)
    simplified = m * math.log(2.0) > UNDERFLOW_LOG

    def integrand(s: float) -> float:
        w = math.exp(s)
        log_one_minus = math.log1p(-w)
        log_term = log_c + table.log_h(s) + s + (m - 1) * log_one_minus
        if simplified:
            return math.exp(log_term)
        return math.exp(log_term) * -math.expm1((m - 1) * (s - log_one_minus))

    s_hi = math.log(0.5)
    s_lo = math.log((d + 1) / m * 1e-8)
    points = [math.log(c / m) for c in (1.0, d + 1.0, 10.0 * (d + 1)) if s_lo < math.log(c / m) < s_hi]
    integral = integrate(integrand, s_lo, s_hi, cfg, points=points, abs_tol=cfg.abs_tol * (d + 1))
    boundary = 0.0 if simplified else math.exp(log_binomial(n, d) + (1 - m) * math.log(2.0))
    return ExactExpectation(
        value=boundary + integral.value,
        n=n,
        d=d,
        quadrature_error=integral.abs_error_estimate,
        used_simplified_form=simplified,
    )


def gamma_ratio(n: float, v: float) -> float:
    """Gamma(n + v) / (Gamma(n) n^v), which tends to 1."""
    return math.exp(special.gammaln(n + v) - special.gammaln(n) - v * math.log(n))


def log_falling_ratio(n: float, d: int) -> float:
    return float(sum(math.log1p((d - j) / (n - d)) for j in range(d)))


def falling_ratio(n: float, d: int) -> float:
    """N! / ((N-d)! (N-d)^d); bounded by exp(d^2 / (N-d))."""
    if n <= d:
        raise InvalidArgs("Need N > d, got N={n} with d={d}".format(n=n, d=d))
    return math.exp(log_falling_ratio(n, d))


def epsilon_fn(L: SlowlyVaryingFn, s: float) -> float:
    if not s > 1:
        raise InvalidArgs("epsilon needs s > 1, got {s}".format(s=s))
    return L.epsilon(s)


def tail_index_v(model: RadialModel, u: float) -> float:
    """v(u) = -1 / (u (log F(u))'), a diagnostic of exponential tails."""
    density = model.density(u)
    if density <= 0:
        raise InvalidArgs("Density vanishes at u={u}".format(u=u))
    return float(model.survival(u) / (u * density))


def log_polynomial_constant(k: float, d: int) -> float:
    return float(
        d * math.log(2.0)
        + (d - 1) / 2.0 * math.log(math.pi)
        + d * special.gammaln(k / 2.0 + 1.0)
        + special.gammaln((d * k + 1) / 2.0)
        - d * special.gammaln((k + 1) / 2.0)
        - special.gammaln(d * k / 2.0 + 1.0)
    )


def algebraic_base(k: float) -> float:
    """c = sqrt(pi) k Gamma(k/2) / Gamma((k+1)/2)."""
    return math.exp(0.5 * math.log(math.pi) + math.log(k) + special.gammaln(k / 2.0) - special.gammaln((k + 1) / 2.0))


def _log_n(n: float | None, log_n: float | None) -> float:
    if log_n is not None:
        return log_n
    if n is None or n <= 1:
        raise InvalidArgs("Need N > 1, got {n}".format(n=n))
    return math.log(n)


def asymptotic_poly(
    k: float, d: int, regime: Regime = Regime.FIXED_D, n: float | None = None
) -> AsymptoticValue:
    check_dim(d)
    if k < 0:
        raise InvalidArgs("Polynomial tail needs k >= 0, got {k}".format(k=k))
    if regime == Regime.HIGH_DIM:
        if k == 0:
            raise InvalidArgs("High-dimensional polynomial asymptotic needs k > 0")
        log_value = 0.5 * math.log(2.0 / (math.pi * d * k)) + d * math.log(algebraic_base(k))
        return AsymptoticValue(log_value, regime, TailVariant.POLYNOMIAL, "sqrt(2/(pi d k)) c^d")
    log_value = log_polynomial_constant(k, d)
    if regime == Regime.FINITE_N:
        if n is None:
            raise InvalidArgs("Finite-N regime needs N")
        if n <= d:
            raise InvalidArgs("Need N > d, got N={n} with d={d}".format(n=n, d=d))
        log_value += log_falling_ratio(n, d)
        return AsymptoticValue(log_value, regime, TailVariant.POLYNOMIAL, "N!/((N-d)!(N-d)^d) g(k, d)")
    return AsymptoticValue(log_value, regime, TailVariant.POLYNOMIAL, "g(k, d)")


def _log_exponential_constant(d: int) -> float:
    return (d - 1) / 2.0 * math.log(math.pi) + (d + 1) / 2.0 * math.log(2.0) - 0.5 * math.log(d)


def asymptotic_exp(
    tail: TailFamily,
    n: float | None,
    d: int,
    regime: Regime = Regime.FIXED_D,
    log_n: float | None = None,
) -> AsymptoticValue:
    check_dim(d)
    if tail.variant != TailVariant.EXPONENTIAL:
        raise InvalidArgs("Exponential asymptotic needs an exponential tail, got {v}".format(v=tail.variant.value))
    log_size = _log_n(n, log_n)
    log_value = _log_exponential_constant(d)
    if regime == Regime.FINITE_N:
        if n is None or n <= d:
            raise InvalidArgs("Finite-N regime needs an integer N > d")
        log_size = math.log(n - d)
        log_value += log_falling_ratio(n, d)
    epsilon = tail.L.epsilon_at_log(log_size)
    if epsilon <= 0:
        raise NonPositiveEpsilon("epsilon(N) = {e} is not positive".format(e=epsilon))
    log_value -= (d - 1) / 2.0 * math.log(epsilon)
    return AsymptoticValue(log_value, regime, TailVariant.EXPONENTIAL, "pi^((d-1)/2) 2^((d+1)/2) / sqrt(d) eps(N)^(-(d-1)/2)")


def coefficient_a(k: float, d: int) -> float:
    """Leading coefficient of the marginal survival near the support end."""
    check_dim(d)
    if not k > 0:
        raise InvalidArgs("Coefficient a needs k > 0, got {k}".format(k=k))
    gamma_form = coefficient_a_gamma_form(k, d)
    beta_form = coefficient_a_beta_form(k, d)
    if not math.isclose(gamma_form, beta_form, rel_tol=1e-10):
        raise ConvergenceFailure("Forms of a disagree: {g} vs {b}".format(g=gamma_form, b=beta_form))
    return gamma_form


def coefficient_a_gamma_form(k: float, d: int) -> float:
    return math.exp(
        (d - 3) / 2.0 * math.log(2.0)
        + math.log(k)
        + special.gammaln(d / 2.0)
        + special.gammaln(k)
        - 0.5 * math.log(math.pi)
        - special.gammaln(k + (d + 1) / 2.0)
    )


def coefficient_a_beta_form(k: float, d: int) -> float:
    return math.exp(
        (d - 1) / 2.0 * math.log(2.0)
        + math.log(k)
        + special.gammaln(d / 2.0)
        + special.betaln(k, (d + 1) / 2.0)
        - math.log(d - 1)
        - 0.5 * math.log(math.pi)
        - special.gammaln((d - 1) / 2.0)
    )


def log_coefficient_b(k: float, d: int) -> float:
    return float(
        d * math.log(k)
        - math.log(math.pi)
        + (0.5 + d * (d / 2.0 - 1.0)) * math.log(2.0)
        + d * special.betaln(k, d / 2.0)
        + special.betaln(0.5, d * (k + d / 2.0 - 1.0) + 1.0)
    )


def coefficient_b(k: float, d: int) -> float:
    """Leading coefficient of the plane-distance survival near the support end."""
    check_dim(d)
    if not k > 0:
        raise InvalidArgs("Coefficient b needs k > 0, got {k}".format(k=k))
    return math.exp(log_coefficient_b(k, d))


def truncated_exponent(k: float, d: int) -> float:
    return (d - 1) / (2.0 * k + d - 1)


def asymptotic_trunc(
    k: float,
    L: SlowlyVaryingFn,
    n: float | None,
    d: int,
    regime: Regime = Regime.FIXED_D,
    log_n: float | None = None,
) -> AsymptoticValue:
    check_dim(d)
    if not k > 0:
        raise InvalidArgs("Truncated tail needs k > 0, got {k}".format(k=k))
    e = truncated_exponent(k, d)
    log_size = _log_n(n, log_n)
    if regime == Regime.HIGH_DIM:
        log_value = (
            (d + 2 * k) / 2.0 * math.log(2.0)
            + (d - 2) / 2.0 * math.log(math.pi)
            + math.log(k)
            + special.gammaln(k)
            + k
            + ((d - 3) / 2.0 - k) * math.log(d)
            + e * (log_size + math.log(L.at_log(log_size)))
        )
        return AsymptoticValue(log_value, regime, TailVariant.TRUNCATED, "2^((d+2k)/2) pi^((d-2)/2) k Gamma(k) e^k d^((d-3)/2-k) (N L(N))^e")
    log_a = math.log(coefficient_a(k, d))
    log_value = log_coefficient_b(k, d) - special.gammaln(d + 1) + (e - d) * log_a + special.gammaln(d + 1 - e)
    if regime == Regime.FINITE_N:
        if n is None or n <= d:
            raise InvalidArgs("Finite-N regime needs an integer N > d")
        log_size = math.log(n - d)
        log_value += log_falling_ratio(n, d)
    log_value += e * (log_size + math.log(L.at_log(log_size)))
    return AsymptoticValue(log_value, regime, TailVariant.TRUNCATED, "b/d! a^(e-d) Gamma(d+1-e) (N L(N))^e")


def asymptotic_expected_facets(
    model: RadialModel, n: float | None, regime: Regime = Regime.FIXED_D, log_n: float | None = None
) -> AsymptoticValue:
    """Family-appropriate asymptotic E[F_N]; consults only the model's tail parameters."""
    tail = model.tail
    if tail.variant == TailVariant.POLYNOMIAL:
        return asymptotic_poly(tail.k, model.dim, regime, n=n)
    if tail.variant == TailVariant.EXPONENTIAL:
        return asymptotic_exp(tail, n, model.dim, regime, log_n=log_n)
    return asymptotic_trunc(tail.k, tail.L, n, model.dim, regime, log_n=log_n)


def marginal_tail(model: RadialModel, x: float) -> float:
    """Leading behaviour of G(x) toward the end of the support."""
    tail, d = model.tail, model.dim
    if tail.variant == TailVariant.POLYNOMIAL:
        ratio = math.exp(special.betaln((tail.k + 1) / 2.0, (d - 1) / 2.0) - special.betaln(0.5, (d - 1) / 2.0))
        return 0.5 * ratio * model.survival(x)
    if tail.variant == TailVariant.EXPONENTIAL:
        v = tail_index_v(model, x)
        log_factor = (d - 3) / 2.0 * math.log(2.0) - 0.5 * math.log(math.pi) + special.gammaln(d / 2.0)
        return math.exp(log_factor + (d - 1) / 2.0 * math.log(v)) * model.survival(x)
    gap = model.support_upper - x
    return coefficient_a(tail.k, d) * tail.L(1.0 / gap) * gap ** (tail.k + (d - 1) / 2.0)


def plane_distance_tail(model: RadialModel, x: float) -> float:
    """Leading behaviour of H(x) toward the end of the support."""
    tail, d = model.tail, model.dim
    if tail.variant == TailVariant.POLYNOMIAL:
        return math.exp(log_polynomial_constant(tail.k, d)) * marginal_tail(model, x) ** d
    if tail.variant == TailVariant.EXPONENTIAL:
        v = tail_index_v(model, x)
        return math.exp(_log_exponential_constant(d) - (d - 1) / 2.0 * math.log(v)) * marginal_tail(model, x) ** d
    gap = model.support_upper - x
    exponent = d * (tail.k + d / 2.0 - 1.0) + 0.5
    return coefficient_b(tail.k, d) * tail.L(1.0 / gap) ** d * gap**exponent

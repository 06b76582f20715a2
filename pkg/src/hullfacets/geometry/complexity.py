import concurrent.futures
import math
from typing import Any, Callable

from hullfacets.geometry.distributions import SlowlyVaryingFn, TailFamily, TailVariant, check_dim
from hullfacets.geometry.errors import InvalidArgs, NoSolutionInRange
from hullfacets.geometry.expectation import (
    AsymptoticValue,
    Regime,
    algebraic_base,
    asymptotic_exp,
    asymptotic_poly,
    asymptotic_trunc,
    truncated_exponent,
)

DEFAULT_MARGIN = 10.0
DEFAULT_MAX_LOG_N = 690.0

TailFactory = Callable[[int], TailFamily]


class ComplexityReport:
    """One sample-complexity evaluation; lhs and rhs are kept as natural logarithms."""

    def __init__(
        self,
        family: TailVariant,
        d: int,
        log_n: float,
        log_lhs: float,
        log_rhs: float,
        margin: float,
        p_bound: float,
        label: str | None = None,
    ):
        self._family = family
        self._d = d
        self._log_n = log_n
        self._log_lhs = log_lhs
        self._log_rhs = log_rhs
        self._margin = margin
        self._p_bound = p_bound
        self._label = label or family.value

    @property
    def family(self) -> TailVariant:
        return self._family

    @property
    def label(self) -> str:
        return self._label

    @property
    def d(self) -> int:
        return self._d

    @property
    def log_n(self) -> float:
        return self._log_n

    @property
    def n(self) -> float:
        return _safe_exp(self._log_n)

    @property
    def log_lhs(self) -> float:
        return self._log_lhs

    @property
    def log_rhs(self) -> float:
        return self._log_rhs

    @property
    def lhs(self) -> float:
        return _safe_exp(self._log_lhs)

    @property
    def rhs(self) -> float:
        return _safe_exp(self._log_rhs)

    @property
    def log_ratio(self) -> float:
        return self._log_lhs - self._log_rhs

    @property
    def margin(self) -> float:
        return self._margin

    @property
    def satisfied(self) -> bool:
        return self._log_lhs > self._log_rhs + math.log(self._margin)

    @property
    def p_bound(self) -> float:
        return self._p_bound

    def __repr__(self) -> str:
        return "ComplexityReport({label}, d={d}, log N={log_n:.6g}, satisfied={ok})".format(
            label=self._label, d=self._d, log_n=self._log_n, ok=self.satisfied
        )


def _safe_exp(value: float) -> float:
    return math.exp(value) if value < 709.0 else math.inf


def p_upper_bound(e_fn: float, n: float, d: int) -> float:
    """min(1, E[F_N] / (d N)), asymptotic in N >> d."""
    if not e_fn > 0 or n <= d:
        raise InvalidArgs("Need E[F_N] > 0 and N > d")
    return min(1.0, e_fn / (d * n))


def p_vertex_bound(e_fn: float, n: float, d: int) -> float:
    """min(1, (E[F_N] + (d+1)(d-2)) / ((d-1) N)) from F >= (d-1)V - (d+1)(d-2)."""
    if not e_fn > 0 or n <= d:
        raise InvalidArgs("Need E[F_N] > 0 and N > d")
    return min(1.0, (e_fn + (d + 1) * (d - 2)) / ((d - 1) * n))


def _p_bound_from(value: AsymptoticValue, log_n: float, d: int) -> float:
    return min(1.0, _safe_exp(value.log_value - math.log(d) - log_n))


def table1_condition(
    family: TailFamily,
    d: int,
    n: float | None = None,
    margin: float = DEFAULT_MARGIN,
    log_n: float | None = None,
    label: str | None = None,
) -> ComplexityReport:
    """Evaluate the sample-complexity condition for the family at (d, N); N may be passed as log N."""
    check_dim(d)
    if log_n is None:
        if n is None or n <= d:
            raise InvalidArgs("Need N > d, got N={n} with d={d}".format(n=n, d=d))
        log_n = math.log(n)
    elif log_n <= math.log(d):
        raise InvalidArgs("Need N > d, got log N={log_n} with d={d}".format(log_n=log_n, d=d))
    if not margin > 0:
        raise InvalidArgs("Margin must be positive, got {margin}".format(margin=margin))
    log_d = math.log(d)
    log_two_pi = math.log(2.0 * math.pi)

    if family.variant == TailVariant.POLYNOMIAL:
        if not family.k > 0:
            raise InvalidArgs("Algebraic row needs k > 0")
        c = algebraic_base(family.k)
        if not c > 1:
            raise InvalidArgs("Algebraic row needs c > 1, got c={c}".format(c=c))
        log_lhs = log_n
        log_rhs = d * math.log(c) - 1.5 * log_d
        asymptotic = asymptotic_poly(family.k, d, Regime.HIGH_DIM)
    elif family.variant == TailVariant.EXPONENTIAL:
        epsilon = family.L.epsilon_at_log(log_n)
        if not epsilon > 0:
            raise InvalidArgs("Exponential row needs eps(N) > 0, got {e}".format(e=epsilon))
        log_lhs = log_n + (d - 1) / 2.0 * math.log(epsilon)
        log_rhs = d / 2.0 * log_two_pi - 1.5 * log_d
        asymptotic = asymptotic_exp(family, None, d, Regime.HIGH_DIM, log_n=log_n)
    else:
        # row as tabulated: N^(2k/d) / L(N)^((d-1)/(2k+d-1))
        e = truncated_exponent(family.k, d)
        log_lhs = (2.0 * family.k / d) * log_n - e * math.log(family.L.at_log(log_n))
        log_rhs = d / 2.0 * log_two_pi + (d - 5) / 2.0 * log_d
        asymptotic = asymptotic_trunc(family.k, family.L, None, d, Regime.HIGH_DIM, log_n=log_n)

    return ComplexityReport(
        family=family.variant,
        d=d,
        log_n=log_n,
        log_lhs=log_lhs,
        log_rhs=log_rhs,
        margin=margin,
        p_bound=_p_bound_from(asymptotic, log_n, d),
        label=label,
    )


def minimal_sample_size(
    family: TailFamily,
    d: int,
    margin: float = DEFAULT_MARGIN,
    max_log_n: float = DEFAULT_MAX_LOG_N,
    scan_points: int = 400,
    label: str | None = None,
) -> ComplexityReport:
    """Smallest N (in log space) meeting the sample-complexity condition with the given margin.

    The exponential row is not monotone for small N, so a coarse scan locates
    the first satisfied point before bisecting.
    """
    lower = math.log(d + 1)
    if max_log_n <= lower:
        raise InvalidArgs("max_log_n must exceed log(d + 1)")

    def report(log_n: float) -> ComplexityReport:
        return table1_condition(family, d, margin=margin, log_n=log_n, label=label)

    first = report(lower)
    if first.satisfied:
        return first
    step = (max_log_n - lower) / scan_points
    previous = lower
    found: float | None = None
    for i in range(1, scan_points + 1):
        candidate = lower + i * step
        if report(candidate).satisfied:
            found = candidate
            break
        previous = candidate
    if found is None:
        raise NoSolutionInRange(
            "{label} at d={d} needs log N beyond {max_log_n}".format(label=label or family.variant.value, d=d, max_log_n=max_log_n)
        )
    lo, hi = previous, found
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if report(mid).satisfied:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return report(hi)


def complexity_table(
    families: dict[str, TailFactory],
    d_grid: list[int],
    margin: float = DEFAULT_MARGIN,
    max_log_n: float = DEFAULT_MAX_LOG_N,
    max_workers: int | None = None,
) -> list[ComplexityReport]:
    """Minimal-N reports for every (family, d), ordered as the inputs."""
    if not families or not d_grid:
        raise InvalidArgs("Family and dimension grids must be nonempty")
    tasks = [(label, factory, d) for label, factory in families.items() for d in d_grid]
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = [
                executor.submit(minimal_sample_size, factory(d), d, margin, max_log_n, label=label)
                for label, factory, d in tasks
            ]
            return [future.result() for future in futures]
    except KeyboardInterrupt as e:
        executor.shutdown(wait=True, cancel_futures=True)
        raise e


def builtin_families(k: float | None = None) -> dict[str, TailFactory]:
    """Tail factories by CLI family name; ``k`` parametrizes the algebraic and truncated rows."""
    families: dict[str, TailFactory] = {
        "gaussian": lambda d: TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.sqrt_log()),
        "uniform-ball": lambda d: TailFamily(TailVariant.TRUNCATED, SlowlyVaryingFn.constant(float(d)), k=1.0),
        "exp": lambda d: TailFamily(TailVariant.EXPONENTIAL, SlowlyVaryingFn.sqrt_log()),
    }
    if k is not None:
        families["poly"] = lambda d: TailFamily(TailVariant.POLYNOMIAL, SlowlyVaryingFn.constant(1.0), k=k)
        families["trunc"] = lambda d: TailFamily(TailVariant.TRUNCATED, SlowlyVaryingFn.constant(1.0), k=k)
    return families


def family_factory(name: str, k: float | None = None) -> TailFactory:
    families = builtin_families(k)
    if name not in families:
        raise InvalidArgs(
            "Unknown family {name}{hint}".format(name=name, hint=" (poly and trunc need --k)" if name in ("poly", "trunc") else "")
        )
    return families[name]


def report_row(report: ComplexityReport) -> dict[str, Any]:
    return {
        "family": report.label,
        "d": report.d,
        "log10_min_N": report.log_n / math.log(10.0),
        "lhs": report.lhs,
        "rhs": report.rhs,
        "ratio": _safe_exp(report.log_ratio),
    }

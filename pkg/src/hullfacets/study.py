import datetime
import json
import math
import os
import time
from typing import Annotated, Any, Callable, Literal, Optional

import click
import humanize
import yaml
from pydantic import BaseModel, Field, computed_field, model_validator

from hullfacets.geometry import complexity, montecarlo
from hullfacets.geometry import kernels as kernel_ops
from hullfacets.geometry.distributions import RadialModel, TailVariant, builtin_models
from hullfacets.geometry.errors import Disagreement, InvalidArgs
from hullfacets.geometry.expectation import Regime, asymptotic_expected_facets, expected_facets_exact
from hullfacets.geometry.kernels import DEFAULT_GRID_NODES
from hullfacets.geometry.quadrature import KernelValue, QuadratureConfig
from hullfacets.geometry.results import ResultTable, RunManifest, spec_hash

DEFAULT_CONFIG_PATH = "config.yaml"
SEED_ENVVAR = "HULLFACETS_SEED"

# relative agreement expected between the asymptotic and exact values
ASYMPTOTIC_TOLERANCE = {
    TailVariant.POLYNOMIAL: 0.03,
    TailVariant.EXPONENTIAL: 0.10,
    TailVariant.TRUNCATED: 0.05,
}
MC_AGREEMENT_SE = 3.0
CI_99_Z = 2.5758293035489004

KERNEL_CHOICES = ("G", "K", "H", "F0", "F0D", "kappa", "lambda")

_CUSTOM_MODELS: dict[str, Callable[[int], RadialModel]] = {}


class HullfacetsConfig(BaseModel):
    quadrature: QuadratureConfig = QuadratureConfig()
    grid_nodes: Annotated[int, Field(ge=50)] = DEFAULT_GRID_NODES
    max_workers: Optional[Annotated[int, Field(gt=0)]] = None
    precision: Annotated[int, Field(ge=1, le=17)] = 17
    seed: Optional[Annotated[int, Field(ge=0)]] = None


def load_config(path: str = DEFAULT_CONFIG_PATH, required: bool = False) -> HullfacetsConfig:
    if not required and not os.path.exists(path):
        return HullfacetsConfig()
    with open(path) as file:
        config = yaml.load(file, Loader=yaml.FullLoader)
    return HullfacetsConfig(**(config or {}))


def register_custom_model(name: str, factory: Callable[[int], RadialModel]) -> None:
    """Make a user-defined model reachable from model spec files as {"family": "custom", "name": ...}."""
    _CUSTOM_MODELS[name] = factory


class ModelSpec(BaseModel):
    family: Literal["gaussian", "t", "uniform_ball", "beta_type", "custom"]
    d: Annotated[int, Field(ge=2)]
    k: Optional[Annotated[float, Field(gt=0.0)]] = None
    q: Optional[Annotated[float, Field(gt=-1.0)]] = None
    name: Optional[str] = None

    @model_validator(mode="after")
    def check_family_params(self) -> "ModelSpec":
        if self.family == "t" and self.k is None:
            raise ValueError("t model needs k")
        if self.family == "beta_type" and self.q is None:
            raise ValueError("beta_type model needs q")
        if self.family == "custom" and self.name not in _CUSTOM_MODELS:
            raise ValueError("custom model {name!r} is not registered".format(name=self.name))
        return self

    # https://github.com/python/mypy/issues/14461
    @computed_field  # type: ignore[misc]
    @property
    def spec_hash(self) -> str:
        fields = {"family": self.family, "d": self.d, "k": self.k, "q": self.q, "name": self.name}
        return spec_hash({key: value for key, value in fields.items() if value is not None})

    def build(self) -> RadialModel:
        if self.family == "custom":
            assert self.name is not None
            return _CUSTOM_MODELS[self.name](self.d)
        factory = builtin_models()[self.family]
        if self.family == "t":
            return factory(self.k, self.d)
        if self.family == "beta_type":
            return factory(self.q, self.d)
        return factory(self.d)

    @classmethod
    def resolve(
        cls, model: str, d: int | None = None, k: float | None = None, q: float | None = None
    ) -> "ModelSpec":
        """Model from a JSON spec file or a bare family name; explicit d, k and q take precedence."""
        data: dict[str, Any] = {"family": model}
        if os.path.isfile(model):
            with open(model) as file:
                data = json.load(file)
        overrides = {"d": d, "k": k, "q": q}
        data.update({key: value for key, value in overrides.items() if value is not None})
        if "d" not in data:
            raise InvalidArgs("Model {model} needs a dimension (--d)".format(model=model))
        return cls(**data)


class Study:
    """Runs one CLI command against a model and collects its output table."""

    def __init__(self, config: HullfacetsConfig, command: str = "", quiet: bool = False):
        self._config = config
        self._command = command
        self._quiet = quiet

    @property
    def config(self) -> HullfacetsConfig:
        return self._config

    def resolve_seed(self, seed: int | None) -> int:
        if seed is not None:
            return seed
        if self._config.seed is not None:
            return self._config.seed
        return 0

    def _table(self, columns: list[str], digest: str, seed: int | None = None) -> ResultTable:
        manifest = RunManifest(command=self._command, model_spec_hash=digest, seed=seed)
        return ResultTable(columns, manifest=manifest, precision=self._config.precision)

    def _print_msg(self, msg: str, started: float, success: bool = True) -> None:
        if self._quiet:
            return
        click.secho(
            "[{status}] {msg} Took {elapsed}.".format(
                status="SUCCESS" if success else "FAILED",
                msg=msg,
                elapsed=humanize.naturaldelta(datetime.timedelta(seconds=time.monotonic() - started)),
            ),
            fg="green" if success else "red",
            err=True,
        )

    def kernels(self, spec: ModelSpec, kernel: str, xs: list[float]) -> ResultTable:
        if kernel not in KERNEL_CHOICES:
            raise InvalidArgs("Unknown kernel {kernel}".format(kernel=kernel))
        started = time.monotonic()
        model = spec.build()
        cfg = self._config.quadrature
        table = self._table(["x", "value", "abs_error"], spec.spec_hash)
        for x in xs:
            if kernel == "kappa":
                row = {"x": x, "value": kernel_ops.kappa(spec.d, x), "abs_error": 0.0}
            elif kernel == "lambda":
                row = {"x": x, "value": kernel_ops.lambda_d(spec.d, x), "abs_error": 0.0}
            else:
                value = self._kernel_value(model, kernel, x, cfg)
                row = {"x": x, "value": value.value, "abs_error": value.abs_error_estimate}
            table.add(row)
        self._print_msg(
            "Kernel {kernel} of {model} evaluated at {count} points.".format(
                kernel=kernel, model=model.model_id, count=humanize.intcomma(len(xs))
            ),
            started,
        )
        return table

    def _kernel_value(self, model: RadialModel, kernel: str, x: float, cfg: QuadratureConfig) -> KernelValue:
        if kernel == "G":
            return kernel_ops.marginal_survival(model, x, cfg)
        if kernel == "K":
            return kernel_ops.pair_norm_survival(model, x, cfg)
        if kernel == "H":
            return kernel_ops.plane_distance_survival(model, x, cfg, self._config.grid_nodes)
        if kernel == "F0":
            return kernel_ops.pair_plane_survival(model, x, cfg)
        return kernel_ops.pair_plane_density(model, x, cfg)

    def expect(self, spec: ModelSpec, ns: list[int], method: str = "both", regime: Regime = Regime.FIXED_D) -> ResultTable:
        if method not in ("exact", "asymptotic", "both"):
            raise InvalidArgs("Unknown method {method}".format(method=method))
        if not ns:
            raise InvalidArgs("Need at least one N")
        started = time.monotonic()
        model = spec.build()
        table = self._table(
            ["N", "d", "exact", "quadrature_error", "simplified", "asymptotic", "regime", "ratio"], spec.spec_hash
        )
        for n in ns:
            exact = None
            asymptotic = None
            if method in ("exact", "both"):
                exact = expected_facets_exact(model, n, spec.d, self._config.quadrature, self._config.grid_nodes)
            if method in ("asymptotic", "both"):
                asymptotic = asymptotic_expected_facets(model, n, regime)
            table.add(
                {
                    "N": n,
                    "d": spec.d,
                    "exact": None if exact is None else exact.value,
                    "quadrature_error": None if exact is None else exact.quadrature_error,
                    "simplified": None if exact is None else exact.used_simplified_form,
                    "asymptotic": None if asymptotic is None else asymptotic.value,
                    "regime": None if asymptotic is None else regime.value,
                    "ratio": None if exact is None or asymptotic is None else asymptotic.value / exact.value,
                }
            )
        self._print_msg(
            "Expected facet counts of {model} computed for {count} sample sizes.".format(
                model=model.model_id, count=humanize.intcomma(len(ns))
            ),
            started,
        )
        return table

    def mc(
        self,
        spec: ModelSpec,
        n: int,
        reps: int,
        seed: int | None = None,
        p_outside: bool = False,
        kernel: str | None = None,
        xs: list[float] | None = None,
    ) -> ResultTable:
        started = time.monotonic()
        model = spec.build()
        seed = self.resolve_seed(seed)
        workers = self._config.max_workers
        if kernel is not None:
            if not xs:
                raise InvalidArgs("Empirical kernels need an x grid (--x)")
            table = self._table(["x", "value", "std_error"], spec.spec_hash, seed)
            for estimate in montecarlo.empirical_kernel(model, spec.d, kernel, xs, reps, seed):
                table.add({"x": estimate.x, "value": estimate.value, "std_error": estimate.std_error})
            self._print_msg(
                "Empirical kernel {kernel} of {model} from {reps} samples.".format(
                    kernel=kernel, model=model.model_id, reps=humanize.intcomma(reps)
                ),
                started,
            )
            return table

        estimate = montecarlo.estimate_expected_facets(model, n, spec.d, reps, seed, workers, quiet=self._quiet)
        row: dict[str, Any] = {
            "N": n,
            "d": spec.d,
            "reps": reps,
            "seed": seed,
            "mean": estimate.mean,
            "std_error": estimate.std_error,
            "vertex_mean": estimate.vertex_mean,
            "vertex_std_error": estimate.vertex_std_error,
        }
        columns = list(row)
        if p_outside:
            membership = montecarlo.estimate_outside_probability(model, n, spec.d, reps, seed, workers, quiet=self._quiet)
            row.update(
                {
                    "p_hat": membership.p_hat,
                    "p_std_error": membership.std_error,
                    "vertex_ratio": membership.vertex_ratio,
                    "vertex_ratio_std_error": membership.vertex_ratio_std_error,
                    "p_upper_bound": complexity.p_upper_bound(estimate.mean, n, spec.d),
                    "p_vertex_bound": complexity.p_vertex_bound(estimate.mean, n, spec.d),
                }
            )
            columns = list(row)
        table = self._table(columns, spec.spec_hash, seed)
        table.add(row)
        self._print_msg(
            "Monte Carlo finished. {reps} replicates of {model} at N={n}.".format(
                reps=humanize.intcomma(reps), model=model.model_id, n=humanize.intcomma(n)
            ),
            started,
        )
        return table

    def compare(
        self,
        spec: ModelSpec,
        n: int,
        reps: int,
        seed: int | None = None,
        regime: Regime = Regime.FIXED_D,
        strict: bool = False,
    ) -> ResultTable:
        started = time.monotonic()
        model = spec.build()
        seed = self.resolve_seed(seed)
        exact = expected_facets_exact(model, n, spec.d, self._config.quadrature, self._config.grid_nodes)
        asymptotic = asymptotic_expected_facets(model, n, regime)
        estimate = montecarlo.estimate_expected_facets(
            model, n, spec.d, reps, seed, self._config.max_workers, quiet=self._quiet
        )
        tolerance = ASYMPTOTIC_TOLERANCE[model.tail.variant]
        asymptotic_ratio = asymptotic.value / exact.value
        mc_agrees = abs(estimate.mean - exact.value) <= MC_AGREEMENT_SE * estimate.std_error
        asymptotic_agrees = abs(asymptotic_ratio - 1.0) <= tolerance
        row = {
            "model": model.model_id,
            "N": n,
            "d": spec.d,
            "exact": exact.value,
            "asymptotic": asymptotic.value,
            "regime": regime.value,
            "mc_mean": estimate.mean,
            "mc_std_error": estimate.std_error,
            "ci99_low": estimate.mean - CI_99_Z * estimate.std_error,
            "ci99_high": estimate.mean + CI_99_Z * estimate.std_error,
            "asymptotic_ratio": asymptotic_ratio,
            "mc_ratio": estimate.mean / exact.value,
            "mc_agrees": mc_agrees,
            "asymptotic_agrees": asymptotic_agrees,
            "tolerance": tolerance,
        }
        table = self._table(list(row), spec.spec_hash, seed)
        table.add(row)
        agreed = mc_agrees and asymptotic_agrees
        self._print_msg(
            "Comparison of {model} at N={n}: MC {mc}, asymptotic {asym}.".format(
                model=model.model_id,
                n=humanize.intcomma(n),
                mc="agrees" if mc_agrees else "disagrees",
                asym="agrees" if asymptotic_agrees else "disagrees",
            ),
            started,
            success=agreed or not strict,
        )
        if strict and not agreed:
            raise Disagreement(
                "MC/exact {mc:.6g} and asymptotic/exact {asym:.6g} at N={n}".format(
                    mc=row["mc_ratio"], asym=asymptotic_ratio, n=n
                )
            )
        return table

    def table(
        self,
        families: list[str],
        d_grid: list[int],
        k: float | None = None,
        margin: float = complexity.DEFAULT_MARGIN,
        max_log_n: float = complexity.DEFAULT_MAX_LOG_N,
    ) -> ResultTable:
        started = time.monotonic()
        factories = {family: complexity.family_factory(family, k) for family in families}
        reports = complexity.complexity_table(factories, d_grid, margin, max_log_n, self._config.max_workers)
        digest = spec_hash({"families": families, "k": k, "margin": margin, "max_log_n": max_log_n})
        table = self._table(["family", "d", "log10_min_N", "lhs", "rhs", "ratio"], digest)
        for report in reports:
            table.add(complexity.report_row(report))
        self._print_msg(
            "Sample complexity for {count} rows, largest log10 N {top:.4g}.".format(
                count=humanize.intcomma(len(reports)),
                top=max(report.log_n for report in reports) / math.log(10.0),
            ),
            started,
        )
        return table

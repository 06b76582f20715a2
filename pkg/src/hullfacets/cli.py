import json
import math
import signal
import sys
from types import FrameType
from typing import Any

import click
import yaml
from click import Context
from pydantic import ValidationError

from hullfacets.geometry.errors import HullFacetsError
from hullfacets.geometry.expectation import Regime
from hullfacets.geometry.montecarlo import KERNEL_TAGS
from hullfacets.geometry.results import ResultTable
from hullfacets.study import (
    DEFAULT_CONFIG_PATH,
    KERNEL_CHOICES,
    SEED_ENVVAR,
    HullfacetsConfig,
    ModelSpec,
    Study,
    load_config,
)

FAMILY_CHOICES = ("poly", "exp", "trunc", "gaussian", "uniform-ball")
REGIME_CHOICES = tuple(regime.value for regime in Regime)


def signal_handler(signum: int, frame: FrameType | None) -> None:
    click.echo("Received signal {}. Attempting graceful shutdown. Please wait...".format(signum), err=True)
    raise KeyboardInterrupt


class GridType(click.ParamType):
    """Either start:stop:step (stop included) or a comma separated list."""

    name = "grid"

    def convert(self, value: Any, param: click.Parameter | None, ctx: Context | None) -> list[float]:
        if isinstance(value, list):
            return value
        try:
            if ":" in value:
                start, stop, step = (float(part) for part in value.split(":"))
                if not step > 0 or stop < start:
                    self.fail("{value!r} needs step > 0 and stop >= start".format(value=value), param, ctx)
                count = math.floor((stop - start) / step + 1e-9) + 1
                return [start + i * step for i in range(count)]
            return [float(part) for part in value.split(",") if part.strip()]
        except ValueError:
            self.fail("{value!r} is not a grid".format(value=value), param, ctx)


class IntListType(click.ParamType):
    name = "int-list"

    def convert(self, value: Any, param: click.Parameter | None, ctx: Context | None) -> list[int]:
        if isinstance(value, list):
            return value
        try:
            return [int(part) for part in value.split(",") if part.strip()]
        except ValueError:
            self.fail("{value!r} is not a comma separated list of integers".format(value=value), param, ctx)


GRID = GridType()
INT_LIST = IntListType()


def model_options(func: Any) -> Any:
    func = click.option("--q", type=float, default=None, help="Beta-type shape parameter.")(func)
    func = click.option("--k", type=float, default=None, help="Degrees of freedom of the t model.")(func)
    func = click.option("--d", type=int, default=None, help="Dimension; overrides the model file.")(func)
    func = click.option("--model", required=True, help="Model spec JSON file or family name.")(func)
    return func


def output_options(func: Any) -> Any:
    func = click.option("--output", type=click.Path(dir_okay=False), default=None, help="Write to file instead of stdout.")(
        func
    )
    func = click.option("--precision", type=click.IntRange(1, 17), default=None, help="Significant digits.")(func)
    func = click.option("--out", type=click.Choice(["csv", "json"]), default="csv", show_default=True)(func)
    return func


def make_study(ctx: Context, precision: int | None = None, threads: int | None = None) -> Study:
    config: HullfacetsConfig = ctx.obj["config"]
    update: dict[str, Any] = {}
    if precision is not None:
        update["precision"] = precision
    if threads is not None:
        update["max_workers"] = threads
    if update:
        config = HullfacetsConfig(**{**config.model_dump(), **update})
    return Study(config, command=ctx.obj["command"], quiet=ctx.obj["quiet"])


def emit(table: ResultTable, out: str, output: str | None) -> None:
    if output is None:
        click.echo(table.render(out), nl=False)
    else:
        table.save(output, out)


@click.group()
@click.option("--config", "config_path", default=DEFAULT_CONFIG_PATH, show_default=True, help="YAML configuration file.")
@click.option("--quiet", is_flag=True, default=False, help="Suppress status lines.")
@click.pass_context
def cli(ctx: Context, config_path: str, quiet: bool) -> None:
    ctx.ensure_object(dict)
    required = ctx.get_parameter_source("config_path") != click.core.ParameterSource.DEFAULT
    ctx.obj["config"] = load_config(config_path, required=required)
    ctx.obj["quiet"] = quiet
    ctx.obj.setdefault("command", " ".join(sys.argv[1:]))


@cli.command()
@model_options
@click.option("--kernel", type=click.Choice(KERNEL_CHOICES), required=True)
@click.option("--x", "xs", type=GRID, required=True, help="Grid as start:stop:step or a comma list.")
@output_options
@click.pass_context
def kernels(
    ctx: Context,
    model: str,
    d: int | None,
    k: float | None,
    q: float | None,
    kernel: str,
    xs: list[float],
    out: str,
    precision: int | None,
    output: str | None,
) -> None:
    study = make_study(ctx, precision)
    emit(study.kernels(ModelSpec.resolve(model, d, k, q), kernel, xs), out, output)


@cli.command()
@model_options
@click.option("--N", "ns", type=INT_LIST, required=True, help="Sample size or comma list of sizes.")
@click.option("--method", type=click.Choice(["exact", "asymptotic", "both"]), default="both", show_default=True)
@click.option("--regime", type=click.Choice(REGIME_CHOICES), default=Regime.FIXED_D.value, show_default=True)
@output_options
@click.pass_context
def expect(
    ctx: Context,
    model: str,
    d: int | None,
    k: float | None,
    q: float | None,
    ns: list[int],
    method: str,
    regime: str,
    out: str,
    precision: int | None,
    output: str | None,
) -> None:
    study = make_study(ctx, precision)
    emit(study.expect(ModelSpec.resolve(model, d, k, q), ns, method, Regime(regime)), out, output)


@cli.command()
@model_options
@click.option("--N", "n", type=int, required=True)
@click.option("--reps", type=click.IntRange(min=2), default=1000, show_default=True, help="Replicates or kernel samples.")
@click.option("--seed", type=click.IntRange(min=0), default=None, envvar=SEED_ENVVAR)
@click.option("--p-outside", is_flag=True, default=False, help="Also estimate P(X_{N+1} outside the hull).")
@click.option("--kernel", type=click.Choice(KERNEL_TAGS), default=None, help="Estimate an empirical kernel instead.")
@click.option("--x", "xs", type=GRID, default=None)
@click.option("--threads", type=click.IntRange(min=1), default=None)
@output_options
@click.pass_context
def mc(
    ctx: Context,
    model: str,
    d: int | None,
    k: float | None,
    q: float | None,
    n: int,
    reps: int,
    seed: int | None,
    p_outside: bool,
    kernel: str | None,
    xs: list[float] | None,
    threads: int | None,
    out: str,
    precision: int | None,
    output: str | None,
) -> None:
    study = make_study(ctx, precision, threads)
    table = study.mc(ModelSpec.resolve(model, d, k, q), n, reps, seed, p_outside=p_outside, kernel=kernel, xs=xs)
    emit(table, out, output)


@cli.command()
@model_options
@click.option("--N", "n", type=int, required=True)
@click.option("--reps", type=click.IntRange(min=2), default=1000, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None, envvar=SEED_ENVVAR)
@click.option("--regime", type=click.Choice(REGIME_CHOICES), default=Regime.FIXED_D.value, show_default=True)
@click.option("--threads", type=click.IntRange(min=1), default=None)
@click.option("--strict", is_flag=True, default=False, help="Exit with code 3 when the estimates disagree.")
@output_options
@click.pass_context
def compare(
    ctx: Context,
    model: str,
    d: int | None,
    k: float | None,
    q: float | None,
    n: int,
    reps: int,
    seed: int | None,
    regime: str,
    threads: int | None,
    strict: bool,
    out: str,
    precision: int | None,
    output: str | None,
) -> None:
    study = make_study(ctx, precision, threads)
    table = study.compare(ModelSpec.resolve(model, d, k, q), n, reps, seed, Regime(regime), strict=strict)
    emit(table, out, output)


@cli.command()
@click.option("--family", "families", type=click.Choice(FAMILY_CHOICES), multiple=True, required=True)
@click.option("--k", type=float, default=None, help="Tail exponent for the poly and trunc rows.")
@click.option("--d", "d_grid", type=INT_LIST, required=True, help="Comma list of dimensions.")
@click.option("--margin", type=float, default=10.0, show_default=True)
@click.option("--max-log-n", type=float, default=690.0, show_default=True, help="Upper end of the log N search.")
@click.option("--threads", type=click.IntRange(min=1), default=None)
@output_options
@click.pass_context
def table(
    ctx: Context,
    families: tuple[str, ...],
    k: float | None,
    d_grid: list[int],
    margin: float,
    max_log_n: float,
    threads: int | None,
    out: str,
    precision: int | None,
    output: str | None,
) -> None:
    study = make_study(ctx, precision, threads)
    emit(study.table(list(families), d_grid, k, margin, max_log_n), out, output)


def report_error(error: BaseException, exit_code: int) -> int:
    message = error.format_message() if isinstance(error, click.ClickException) else str(error)
    click.echo(json.dumps({"error": type(error).__name__, "message": message, "exit_code": exit_code}), err=True)
    return exit_code


def run(argv: list[str] | None = None) -> int:
    """Run the CLI on argv and return the process exit code."""
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        cli.main(args=args, prog_name="hullfacets", standalone_mode=False, obj={"command": " ".join(args)})
    except (KeyboardInterrupt, click.exceptions.Abort) as e:
        return report_error(e, 130)
    except click.ClickException as e:
        return report_error(e, 1)
    except HullFacetsError as e:
        return report_error(e, e.exit_code)
    except (ValidationError, OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        return report_error(e, 1)
    return 0


def main() -> None:
    signal.signal(signal.SIGINT, signal_handler)
    sys.exit(run())


if __name__ == "__main__":
    main()

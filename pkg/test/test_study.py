import math
import os.path
import tempfile
import textwrap
from unittest.mock import patch

import pytest
import yaml
from pydantic import ValidationError

from hullfacets.geometry import montecarlo
from hullfacets.geometry.distributions import gaussian
from hullfacets.geometry.errors import Disagreement, InvalidArgs
from hullfacets.geometry.expectation import ExactExpectation, Regime, asymptotic_expected_facets
from hullfacets.geometry.montecarlo import FacetEstimate, MembershipEstimate
from hullfacets.geometry.quadrature import QuadratureConfig
from hullfacets.study import HullfacetsConfig, ModelSpec, Study, load_config, register_custom_model
from test.geometry.helper import gen_model_file


def quiet_study(**config):
    return Study(HullfacetsConfig(**config), command="test", quiet=True)


def test_config_from_yaml():
    yaml_str = textwrap.dedent(
        """\
        quadrature:
          rel_tol: 1.0e-8
          singularity_substitution: false
        grid_nodes: 120
        max_workers: 2
        precision: 8
        seed: 5
        """
    )
    config = HullfacetsConfig(**yaml.safe_load(yaml_str))
    assert config.quadrature == QuadratureConfig(rel_tol=1e-8, singularity_substitution=False)
    assert (config.grid_nodes, config.max_workers, config.precision, config.seed) == (120, 2, 8, 5)


def test_config_defaults():
    config = HullfacetsConfig()
    assert config.quadrature == QuadratureConfig()
    assert (config.max_workers, config.precision, config.seed) == (None, 17, None)


@pytest.mark.parametrize(
    "data",
    [
        {"grid_nodes": 10},
        {"max_workers": 0},
        {"precision": 18},
        {"seed": -1},
        {"quadrature": {"rel_tol": 0.0}},
    ],
)
def test_config_validation(data):
    with pytest.raises(ValidationError):
        HullfacetsConfig(**data)


def test_load_config():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "config.yaml")
        with open(path, "w") as file:
            file.write("seed: 3\nprecision: 6\n")
        config = load_config(path, required=True)
    assert (config.seed, config.precision) == (3, 6)


def test_load_config_empty_file():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "config.yaml")
        open(path, "w").close()
        assert load_config(path) == HullfacetsConfig()


def test_load_config_missing_file():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "config.yaml")
        assert load_config(path) == HullfacetsConfig()
        with pytest.raises(FileNotFoundError):
            load_config(path, required=True)


@pytest.mark.parametrize(
    "data, model_id",
    [
        ({"family": "gaussian", "d": 3}, "gaussian(d=3)"),
        ({"family": "t", "d": 3, "k": 2.0}, "t(d=3, k=2.0)"),
        ({"family": "uniform_ball", "d": 2}, "uniform_ball(d=2)"),
    ],
)
def test_model_spec_build(data, model_id):
    model = ModelSpec(**data).build()
    assert model.model_id == model_id
    assert model.dim == data["d"]


def test_model_spec_build_beta_type():
    model = ModelSpec(family="beta_type", d=3, q=0.5).build()
    assert model.dim == 3
    assert model.tail.k == 1.5


@pytest.mark.parametrize(
    "data",
    [
        {"family": "t", "d": 3},
        {"family": "beta_type", "d": 3},
        {"family": "beta_type", "d": 3, "q": -1.0},
        {"family": "t", "d": 3, "k": 0.0},
        {"family": "gaussian", "d": 1},
        {"family": "cauchy", "d": 2},
        {"family": "custom", "d": 2, "name": "not-registered"},
    ],
)
def test_model_spec_validation(data):
    with pytest.raises(ValidationError):
        ModelSpec(**data)


def test_model_spec_hash():
    spec = ModelSpec(family="t", d=3, k=2.0)
    assert spec.spec_hash == ModelSpec(family="t", d=3, k=2.0).spec_hash
    assert spec.spec_hash != ModelSpec(family="t", d=3, k=2.5).spec_hash
    assert spec.model_dump()["spec_hash"] == spec.spec_hash


def test_model_spec_custom_model():
    register_custom_model("scaled-gaussian", lambda d: gaussian(d).scaled(2.0))
    model = ModelSpec(family="custom", d=2, name="scaled-gaussian").build()
    assert model.survival(2.0) == pytest.approx(gaussian(2).survival(1.0))


def test_model_spec_resolve_family_name():
    assert ModelSpec.resolve("t", d=4, k=3.0) == ModelSpec(family="t", d=4, k=3.0)


def test_model_spec_resolve_file():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "model.json")
        gen_model_file({"family": "t", "d": 3, "k": 2.5}, path)
        assert ModelSpec.resolve(path) == ModelSpec(family="t", d=3, k=2.5)
        assert ModelSpec.resolve(path, d=5) == ModelSpec(family="t", d=5, k=2.5)


def test_model_spec_resolve_needs_dimension():
    with pytest.raises(InvalidArgs):
        ModelSpec.resolve("gaussian")


@pytest.mark.parametrize("seed, config_seed, expected", [(4, 9, 4), (None, 9, 9), (None, None, 0)])
def test_study_resolve_seed(seed, config_seed, expected):
    assert quiet_study(seed=config_seed).resolve_seed(seed) == expected


def test_study_kernels():
    table = quiet_study(precision=10).kernels(ModelSpec(family="gaussian", d=3), "K", [0.0, 1.0, 2.0])
    assert table.columns == ["x", "value", "abs_error"]
    for x, value in zip(table.column("x"), table.column("value")):
        assert value == pytest.approx(math.exp(-x * x / 2.0), abs=1e-8)
    assert table.manifest.model_spec_hash == ModelSpec(family="gaussian", d=3).spec_hash
    assert table.manifest.seed is None


def test_study_kernels_helper_functions():
    study = quiet_study()
    assert study.kernels(ModelSpec(family="gaussian", d=3), "kappa", [0.5]).column("value") == [pytest.approx(0.25)]
    assert study.kernels(ModelSpec(family="gaussian", d=4), "lambda", [0.6]).column("value") == [pytest.approx(0.64)]
    with pytest.raises(InvalidArgs):
        study.kernels(ModelSpec(family="gaussian", d=3), "Z", [0.5])


@patch("hullfacets.study.expected_facets_exact", return_value=ExactExpectation(12.0, 1000, 2, 1e-10, True))
def test_study_expect(exact_mock):
    spec = ModelSpec(family="gaussian", d=2)
    table = quiet_study().expect(spec, [1000], method="both")
    row = table.rows[0]
    asymptotic = asymptotic_expected_facets(spec.build(), 1000).value
    assert (row["N"], row["d"], row["exact"], row["simplified"], row["regime"]) == (1000, 2, 12.0, True, "fixed-d")
    assert row["asymptotic"] == pytest.approx(asymptotic)
    assert row["ratio"] == pytest.approx(asymptotic / 12.0)
    assert exact_mock.call_count == 1


@patch("hullfacets.study.expected_facets_exact")
def test_study_expect_asymptotic_only(exact_mock):
    table = quiet_study().expect(ModelSpec(family="t", d=2, k=3.0), [100, 1000], method="asymptotic", regime=Regime.FINITE_N)
    assert exact_mock.call_count == 0
    assert table.column("exact") == [None, None]
    assert table.column("ratio") == [None, None]
    assert table.column("regime") == ["finite-n", "finite-n"]


@pytest.mark.parametrize("method, ns", [("quadrature", [100]), ("both", [])])
def test_study_expect_arguments(method, ns):
    with pytest.raises(InvalidArgs):
        quiet_study().expect(ModelSpec(family="gaussian", d=2), ns, method=method)


def facet_estimate(counts, n=100, d=2, seed=0):
    return FacetEstimate(counts=counts, vertices=counts, n=n, d=d, model_id="gaussian(d=2)", seed=seed)


@patch.object(montecarlo, "estimate_expected_facets")
def test_study_mc(estimate_mock):
    estimate_mock.return_value = facet_estimate([9, 11, 10, 10])
    table = quiet_study(seed=5, max_workers=3).mc(ModelSpec(family="gaussian", d=2), 100, 4)
    assert table.columns == ["N", "d", "reps", "seed", "mean", "std_error", "vertex_mean", "vertex_std_error"]
    assert table.rows[0]["mean"] == 10.0
    assert table.manifest.seed == 5
    assert estimate_mock.call_args.args[1:] == (100, 2, 4, 5, 3)


@patch.object(montecarlo, "estimate_outside_probability")
@patch.object(montecarlo, "estimate_expected_facets")
def test_study_mc_outside_probability(estimate_mock, membership_mock):
    estimate_mock.return_value = facet_estimate([10, 10])
    membership_mock.return_value = MembershipEstimate(outside=[True, False], vertex_ratios=[0.1, 0.05])
    row = quiet_study().mc(ModelSpec(family="gaussian", d=2), 100, 2, seed=1, p_outside=True).rows[0]
    assert row["p_hat"] == 0.5
    assert row["vertex_ratio"] == pytest.approx(0.075)
    assert row["p_upper_bound"] == pytest.approx(10.0 / 200.0)
    assert row["p_vertex_bound"] == pytest.approx(10.0 / 100.0)


def test_study_mc_kernel():
    table = quiet_study().mc(ModelSpec(family="gaussian", d=3), 3, 20_000, seed=2, kernel="G", xs=[0.0, 1.0])
    assert table.columns == ["x", "value", "std_error"]
    assert table.column("x") == [0.0, 1.0]
    assert abs(table.column("value")[0] - 0.5) < 0.02


def test_study_mc_kernel_needs_grid():
    with pytest.raises(InvalidArgs):
        quiet_study().mc(ModelSpec(family="gaussian", d=3), 3, 20_000, kernel="G")


def test_study_compare_agrees(capsys):
    spec = ModelSpec(family="gaussian", d=2)
    asymptotic = asymptotic_expected_facets(spec.build(), 1000).value
    exact = ExactExpectation(asymptotic * 1.02, 1000, 2, 1e-10, True)
    counts = [round(asymptotic) - 1, round(asymptotic) + 1] * 10
    with patch("hullfacets.study.expected_facets_exact", return_value=exact):
        with patch.object(montecarlo, "estimate_expected_facets", return_value=facet_estimate(counts, n=1000)):
            study = Study(HullfacetsConfig(), command="compare", quiet=False)
            row = study.compare(spec, 1000, 20, seed=3, strict=True).rows[0]
    assert row["mc_agrees"] and row["asymptotic_agrees"]
    assert row["tolerance"] == 0.10
    assert row["ci99_low"] < row["mc_mean"] < row["ci99_high"]
    assert "[SUCCESS] Comparison of gaussian(d=2) at N=1,000" in capsys.readouterr().err


def test_study_compare_disagreement(capsys):
    spec = ModelSpec(family="gaussian", d=2)
    exact = ExactExpectation(15.0, 1000, 2, 1e-10, True)
    with patch("hullfacets.study.expected_facets_exact", return_value=exact):
        with patch.object(montecarlo, "estimate_expected_facets", return_value=facet_estimate([20, 21] * 10, n=1000)):
            study = Study(HullfacetsConfig(), command="compare", quiet=False)
            row = study.compare(spec, 1000, 20, seed=3).rows[0]
            assert not row["mc_agrees"]
            with pytest.raises(Disagreement):
                study.compare(spec, 1000, 20, seed=3, strict=True)
    assert "[FAILED]" in capsys.readouterr().err


def test_study_quiet_prints_nothing(capsys):
    quiet_study().kernels(ModelSpec(family="gaussian", d=3), "kappa", [0.5])
    assert capsys.readouterr().err == ""


def test_study_table():
    table = quiet_study().table(["gaussian", "poly"], [5, 10], k=1.0)
    assert table.column("family") == ["gaussian", "gaussian", "poly", "poly"]
    assert table.column("d") == [5, 10, 5, 10]
    assert table.rows[2]["log10_min_N"] == pytest.approx(5.61 / math.log(10.0), rel=0.01)
    assert table.manifest.model_spec_hash != quiet_study().table(["gaussian", "poly"], [5, 10], k=2.0).manifest.model_spec_hash


def test_study_table_poly_needs_k():
    with pytest.raises(InvalidArgs):
        quiet_study().table(["poly"], [5])

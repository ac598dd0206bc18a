"""Unit testing for core utilities, attributes and run configuration."""
import os
import json
import pytest
import numpy as np
import xarray as xr

from unetslim.core.attributes import attrs, AttrDict, set_attributes
from unetslim.core.utils import as_array, to_tensor, as_generator, spawn_seeds, fun_width
from unetslim.core.config import DEFAULTS, RunConfig, parse_kwargs
from unetslim.core.report import Report, jsonable
from unetslim.core.exceptions import ShapeError, DomainError, ArgumentError, TensorFileError


def test_attrs_axes():
    assert attrs.TIMENAME == "T"
    assert attrs.CHANNAME == "C"
    assert set(attrs.AXES) >= {"T", "C", "H", "W", "L", "I", "O", "Kh", "Kw"}
    assert attrs.ATTRS.area.units == "1"


def test_attrdict():
    d = AttrDict({"a": {"b": 1}})
    assert d.a.b == 1
    assert isinstance(d.a, AttrDict)
    d.c = {"e": 2}
    assert d["c"].e == 2
    assert isinstance(d.missing, AttrDict) and "missing" in d
    with pytest.raises(TypeError):
        AttrDict([1, 2])


def test_set_attributes():
    darr = set_attributes(xr.DataArray([0.5], dims=("dim_0",), name="p"))
    assert darr.attrs["standard_name"] == "inclusion_probability"
    dset = set_attributes(xr.Dataset({"area": ((), 0.5), "other": ((), 1.0)}))
    assert dset.area.attrs["standard_name"] == "motion_area"
    assert dset["other"].attrs == {}
    assert set_attributes(xr.DataArray([1.0])).attrs == {}


def test_as_array():
    out = as_array([1, 2, 3], ndim=1)
    assert out.dtype == np.float64
    with pytest.raises(ShapeError):
        as_array([1, 2, 3], ndim=2)
    with pytest.raises(DomainError):
        as_array([1.0, np.inf])
    assert np.isnan(as_array([np.nan], finite=False)[0])


def test_to_tensor():
    tensor = to_tensor(np.zeros((2, 3)), dims=("O", "I"), name="W1")
    assert tensor.dims == ("O", "I")
    assert tensor.dtype == np.float64
    assert to_tensor(np.zeros((2, 3))).dims == ("dim_0", "dim_1")
    with pytest.raises(ShapeError):
        to_tensor(np.zeros((2, 3)), dims=("O",))
    with pytest.raises(ShapeError):
        to_tensor(np.zeros(2), dims=("freq",))


def test_seeds_are_deterministic():
    a = [np.random.default_rng(s).random() for s in spawn_seeds(7, 3)]
    b = [np.random.default_rng(s).random() for s in spawn_seeds(7, 3)]
    assert a == b
    assert len(set(a)) == 3
    rng = np.random.default_rng(0)
    assert as_generator(rng) is rng
    assert as_generator(1).random() == np.random.default_rng(1).random()


@pytest.mark.parametrize(
    "fun_factor, c_inner, expected",
    [(0.5, 8, 4), (0.25, 8, 2), (1.0, 8, 8), (0.5, 3, 2), (0.5, 1, 1), (0.9, 4, 3), (0.01, 8, 1)],
)
def test_fun_width(fun_factor, c_inner, expected):
    assert fun_width(fun_factor, c_inner) == expected


def test_exceptions_hierarchy():
    for exc in (ShapeError, DomainError, ArgumentError):
        assert issubclass(exc, ValueError)
    err = TensorFileError("File not found", path="/tmp/x.mvdt")
    assert isinstance(err, OSError)
    assert "/tmp/x.mvdt" in str(err)
    assert err.path == "/tmp/x.mvdt"


class TestRunConfig:

    def test_defaults(self):
        config = RunConfig.load()
        assert config.seed == DEFAULTS["seed"]
        assert config.funnel.fun_factor == 0.5
        assert config.verify.fun_factors == [0.25, 0.5, 0.75, 1.0]
        assert config.prune.draws == 100000

    def test_overrides(self):
        overrides = parse_kwargs([("verify.solver_cases", "10"), ("toy.rate", "0.8")])
        assert overrides == {"verify": {"solver_cases": 10}, "toy": {"rate": 0.8}}
        config = RunConfig.load(overrides=overrides, seed=3)
        assert config.verify.solver_cases == 10
        assert config.toy.rate == 0.8
        assert config.seed == 3

    def test_toy_spec_replaced(self):
        config = RunConfig.load(overrides={"toy": {"spec": {"frames": 4}}})
        assert config.toy.spec == {"frames": 4}

    def test_unknown_option(self):
        with pytest.raises(ArgumentError):
            RunConfig.load(overrides={"verify": {"nope": 1}})
        with pytest.raises(ArgumentError):
            RunConfig.load(overrides={"nope": 1})

    @pytest.mark.parametrize("seed", [-1, 2**64, "a", True])
    def test_bad_seed(self, seed):
        with pytest.raises(ArgumentError):
            RunConfig.from_dict({"seed": seed})

    def test_file(self, tmpdir):
        filename = str(tmpdir / "config.json")
        with open(filename, "w") as fp:
            json.dump({"seed": 11, "prune": {"method": "systematic"}}, fp)
        config = RunConfig.load(filename, overrides={"seed": 12})
        assert config.seed == 12
        assert config.prune.method == "systematic"

    def test_missing_file(self, tmpdir):
        with pytest.raises(OSError):
            RunConfig.load(str(tmpdir / "missing.yml"))

    def test_digest(self):
        assert RunConfig.load().digest() == RunConfig.load().digest()
        assert RunConfig.load().digest() != RunConfig.load(seed=1).digest()


class TestReport:

    def test_jsonable(self):
        out = jsonable({"a": np.float64(0.1), "b": np.arange(2), "c": (np.bool_(True),)})
        assert out == {"a": 0.1, "b": [0, 1], "c": [True]}
        assert type(out["b"][0]) is int

    def test_to_json_sorted(self):
        report = Report("verify", "abc", {"z": 1, "a": 1.0 / 3.0}, passed=True)
        text = report.to_json()
        data = json.loads(text)
        assert data["metrics"]["a"] == 1.0 / 3.0
        assert text.index('"a"') < text.index('"z"')
        assert "wall_time" not in data

    def test_write(self, tmpdir):
        filename = str(tmpdir / "report.json")
        Report("motion", "abc", {"area": 1.0}, wall_time=0.5).write(filename)
        with open(filename) as fp:
            data = json.load(fp)
        assert "passed" not in data
        assert data["wall_time"] == 0.5
        assert os.path.isfile(filename)

"""Test the console script."""
import os
import json
import pytest
import numpy as np
from click.testing import CliRunner

from unetslim import cli
from unetslim.attention import random_cross_attn_layer
from unetslim.core.utils import to_tensor
from unetslim.funnel.pairs import LinearPair, ConvPair
from unetslim.manifest import write_layers

SMALL_SPEC = """\
frames: 4
height: 8
width: 8
channels: [8, 16]
down_blocks: 2
mid_blocks: 1
up_blocks: 2
context_width: 8
"""

SMALL_CONFIG = """\
toy:
    spec:
        frames: 4
        height: 8
        width: 8
        channels: [8]
        down_blocks: 1
        mid_blocks: 1
        up_blocks: 1
        context_width: 8
verify:
    csi_pairs: 4
    csi_max_dim: 10
    merge_inputs: 10
    rewrite_trials: 5
    solver_cases: 40
    jacobian_points: 4
    sampling_vectors: 2
    sampling_size: 5
    sampling_draws: 5000
    svd_like: false
"""


def report(dirname, command):
    with open(os.path.join(dirname, f"{command}.json")) as fp:
        return json.load(fp)


@pytest.fixture(scope="module")
def runner():
    instance = CliRunner()
    yield instance


@pytest.fixture(scope="module")
def layers(tmpdir_factory):
    rng = np.random.default_rng(0)
    bundle = {
        "mlp": LinearPair(W1=rng.standard_normal((8, 12)), W2=rng.standard_normal((10, 8))),
        "res": ConvPair(
            K1=rng.standard_normal((3, 3, 6, 4)) / 6.0, K2=rng.standard_normal((3, 3, 5, 6)) / 6.0
        ),
        "attn": random_cross_attn_layer(rng, c_in=8, c_ctx=6, c_head=8, c_out=8, heads=2),
    }
    filename = str(tmpdir_factory.mktemp("layers") / "layers.json")
    write_layers(bundle, filename)
    return filename


@pytest.fixture(scope="module")
def config(tmpdir_factory):
    filename = str(tmpdir_factory.mktemp("config") / "config.yml")
    with open(filename, "w") as fp:
        fp.write(SMALL_CONFIG)
    return filename


@pytest.fixture(scope="module")
def spec(tmpdir_factory):
    filename = str(tmpdir_factory.mktemp("spec") / "spec.yml")
    with open(filename, "w") as fp:
        fp.write(SMALL_SPEC)
    return filename


def tensor_file(dirname, values, name="tensor.mvdt"):
    filename = os.path.join(str(dirname), name)
    to_tensor(np.asarray(values, dtype=float)).tensor.to_mvdt(filename)
    return filename


def test_main(runner):
    result = runner.invoke(cli.main, ["--help"])
    assert result.exit_code == 0
    for command in ("funnel", "prune", "toy", "motion", "verify"):
        assert command in result.output


def test_version(runner):
    result = runner.invoke(cli.main, ["--version"])
    assert result.exit_code == 0
    assert "0.1.0" in result.output


class TestFunnel:

    def test_csi(self, runner, layers, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["funnel", "csi", layers, "-o", out])
        assert result.exit_code == 0, result.output
        assert "funnel csi: passed" in result.output
        metrics = report(out, "funnel_csi")["metrics"]
        assert sorted(metrics["funnels"]) == ["attn.qk", "attn.vo", "mlp", "res"]
        assert metrics["funnels"]["mlp"]["width"] == 4
        assert os.path.isfile(os.path.join(out, "funnels.json"))

    def test_he(self, runner, layers, tmpdir):
        out = str(tmpdir / "out")
        args = ["funnel", "csi", layers, "-i", "he", "-f", "0.25", "-o", out]
        result = runner.invoke(cli.main, args)
        assert result.exit_code == 0, result.output
        funnels = report(out, "funnel_csi")["metrics"]["funnels"]
        assert funnels["mlp"]["residual"] > funnels["mlp"]["oracle"]
        assert funnels["mlp"]["relative_gap"] <= 1e-8

    def test_merge(self, runner, layers, tmpdir):
        out = str(tmpdir / "out")
        runner.invoke(cli.main, ["funnel", "csi", layers, "-o", out])
        funnels = os.path.join(out, "funnels.json")
        merged = str(tmpdir / "merged")
        result = runner.invoke(cli.main, ["funnel", "merge", layers, funnels, "-o", merged])
        assert result.exit_code == 0, result.output
        metrics = report(merged, "funnel_merge")["metrics"]
        assert max(metrics["max_abs_diff"].values()) <= 1e-12
        assert metrics["merged_params"]["mlp"] < metrics["params"]["mlp"]
        assert metrics["digests"]["mlp.W1"] != metrics["merged_digests"]["mlp.W1"]
        assert os.path.isfile(os.path.join(merged, "merged.json"))

    def test_baseline(self, runner, layers, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["funnel", "baseline", layers, "-r", "0.25", "-o", out])
        assert result.exit_code == 0, result.output
        data = report(out, "funnel_baseline")
        assert "passed" not in data
        weights = data["metrics"]["weights"]
        assert "res.K1" not in weights
        assert weights["mlp.W1"]["rank"] == 2
        assert weights["mlp.W1"]["reduces_params"]

    def test_missing_manifest(self, runner, tmpdir):
        result = runner.invoke(cli.main, ["funnel", "csi", str(tmpdir / "nope.json")])
        assert result.exit_code == 3
        assert "nope.json" in result.output


class TestPrune:

    def test_solve(self, runner, tmpdir):
        qfile = tensor_file(tmpdir, [0.9, 0.8, 0.05])
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["prune", "solve", qfile, "2", "-j", "-o", out])
        assert result.exit_code == 0, result.output
        metrics = report(out, "prune_solve")["metrics"]
        assert metrics["t"] == 2
        assert metrics["p"][0] == 1.0
        assert abs(sum(metrics["p"]) - 2) <= 1e-9
        assert np.allclose(np.sum(metrics["jacobian"], axis=0), 0.0, atol=1e-10)
        assert os.path.isfile(os.path.join(out, "p.mvdt"))

    def test_bad_budget(self, runner, tmpdir):
        qfile = tensor_file(tmpdir, [0.9, 0.8, 0.05])
        result = runner.invoke(cli.main, ["prune", "solve", qfile, "3"])
        assert result.exit_code == 2
        assert "Error" in result.output

    def test_missing_file(self, runner, tmpdir):
        result = runner.invoke(cli.main, ["prune", "solve", str(tmpdir / "q.mvdt"), "1"])
        assert result.exit_code == 3

    def test_malformed_file(self, runner, tmpdir):
        filename = str(tmpdir / "q.mvdt")
        with open(filename, "wb") as fp:
            fp.write(b"NOPE0000")
        result = runner.invoke(cli.main, ["prune", "solve", filename, "1"])
        assert result.exit_code == 3
        assert "q.mvdt" in result.output

    def test_malformed_json(self, runner, tmpdir):
        filename = str(tmpdir / "q.json")
        with open(filename, "w") as fp:
            fp.write("{not json")
        result = runner.invoke(cli.main, ["prune", "solve", filename, "2"])
        assert result.exit_code == 3
        assert "q.json" in result.output

    @pytest.mark.parametrize("method", ["brewer", "systematic"])
    def test_sample(self, runner, tmpdir, method):
        pfile = tensor_file(tmpdir, [1.0, 0.5, 0.5])
        out = str(tmpdir / "out")
        result = runner.invoke(
            cli.main, ["prune", "sample", pfile, "2", "-d", "2000", "-m", method, "-o", out]
        )
        assert result.exit_code == 0, result.output
        data = report(out, "prune_sample")
        assert data["passed"]
        assert data["metrics"]["frequencies"][0] == 1.0
        assert sum(data["metrics"]["first_sample"]) == 2

    def test_sample_bad_sum(self, runner, tmpdir):
        pfile = tensor_file(tmpdir, [0.5, 0.5, 0.5])
        result = runner.invoke(cli.main, ["prune", "sample", pfile, "2", "-d", "10"])
        assert result.exit_code == 2


class TestToy:

    def test_run(self, runner, spec, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["toy", "run", "--spec", spec, "-o", out])
        assert result.exit_code == 0, result.output
        metrics = report(out, "toy_run")["metrics"]
        assert metrics["shape"] == [4, 4, 8, 8]
        assert metrics["temporal_blocks"] == 10
        assert metrics["removed"] == []
        assert metrics["multiscaling_reduction"] == 0.0
        assert len(metrics["digest"]) == 64
        assert os.path.isfile(os.path.join(out, "output.mvdt"))

    def test_json_is_deterministic(self, runner, spec):
        args = ["toy", "run", "--spec", spec, "--json", "--gates", "-s", "5"]
        first = runner.invoke(cli.main, args)
        second = runner.invoke(cli.main, args)
        assert first.exit_code == 0, first.output
        assert first.output == second.output
        assert "wall_time" not in first.output

    def test_seed_changes_output(self, runner, spec, tmpdir):
        digests = []
        for seed in ("1", "2"):
            out = str(tmpdir / seed)
            runner.invoke(cli.main, ["toy", "run", "--spec", spec, "-s", seed, "-o", out])
            digests.append(report(out, "toy_run")["metrics"]["digest"])
        assert digests[0] != digests[1]

    def test_variants(self, runner, spec, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(
            cli.main,
            [
                "toy", "run", "--spec", spec, "-m", "temporal", "--optimized", "--prune",
                "--funnels", "--stack", "--timing", "-o", out,
            ],
        )
        assert result.exit_code == 0, result.output
        data = report(out, "toy_run")
        metrics = data["metrics"]
        assert "wall_time" in data
        assert len(metrics["removed"]) == 7
        assert metrics["spec"]["multiscaling"] == "temporal"
        assert metrics["spec"]["optimized_cross_attention"]
        assert 0 < metrics["multiscaling_reduction"] < 1
        flops = [row["flops"] for row in metrics["stacked"]]
        assert flops == sorted(flops, reverse=True)

    def test_gates(self, runner, spec, tmpdir):
        out = str(tmpdir / "out")
        args = ["toy", "run", "--spec", spec, "--gates", "-r", "0.8", "-o", out]
        result = runner.invoke(cli.main, args)
        assert result.exit_code == 0, result.output
        assert sum(report(out, "toy_run")["metrics"]["gates"]) == 2

    def test_grid(self, runner, spec, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["toy", "run", "--spec", spec, "--grid", "-o", out])
        assert result.exit_code == 0, result.output
        grid = report(out, "toy_run")["metrics"]["grid"]
        assert len(grid) == 16
        assert all(shape == [4, 4, 8, 8] for shape in grid.values())

    def test_config_spec(self, runner, config, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["toy", "run", "-c", config, "-o", out])
        assert result.exit_code == 0, result.output
        assert report(out, "toy_run")["metrics"]["temporal_blocks"] == 6

    def test_bad_spec(self, runner, tmpdir):
        filename = str(tmpdir / "spec.yml")
        with open(filename, "w") as fp:
            fp.write("frames: 4\nlayers: 3\n")
        result = runner.invoke(cli.main, ["toy", "run", "--spec", filename])
        assert result.exit_code == 2
        assert "Unknown spec fields" in result.output


def write_clip(dirname, frames, fps=24.0):
    """Write uint8 frames (T, H, W, 3) as raw files plus the sidecar."""
    T, H, W, _ = frames.shape
    os.makedirs(dirname, exist_ok=True)
    with open(os.path.join(dirname, "clip.json"), "w") as fp:
        json.dump({"fps": fps, "height": H, "width": W}, fp)
    for t in range(T):
        with open(os.path.join(dirname, f"frame{t:03d}.rgb"), "wb") as stream:
            stream.write(frames[t].astype(np.uint8).tobytes())


class TestMotion:

    def test_frames_directory(self, runner, tmpdir):
        frame = np.random.default_rng(0).integers(1, 256, (16, 8, 3))
        dirname = str(tmpdir / "clip")
        write_clip(dirname, np.repeat(frame[None], 6, axis=0), fps=30.0)
        out = str(tmpdir / "out")
        result = runner.invoke(
            cli.main,
            ["motion", dirname, "-k", "motion.height", "16", "-k", "motion.width", "8", "-o", out],
        )
        assert result.exit_code == 0, result.output
        metrics = report(out, "motion")["metrics"]
        assert metrics["area"] == pytest.approx(1.0, abs=1e-12)
        assert metrics["frames"] == 6
        assert metrics["native_fps"] == 30.0
        assert metrics["bucket_id"] == 0
        assert os.path.isfile(os.path.join(out, "motion.nc"))

    def test_tensor_file(self, runner, tmpdir):
        frames = np.zeros((4, 1, 8, 8))
        for t in range(4):
            frames[t, 0, 2 * t : 2 * t + 2] = 0.5
        filename = tensor_file(tmpdir, frames, name="clip.mvdt")
        out = str(tmpdir / "out")
        result = runner.invoke(
            cli.main,
            [
                "motion", filename, "--fps", "12", "-k", "motion.height", "8",
                "-k", "motion.width", "8", "-k", "motion.orientation", "area", "-o", out,
            ],
        )
        assert result.exit_code == 0, result.output
        metrics = report(out, "motion")["metrics"]
        assert metrics["area"] == pytest.approx(5 / 8, abs=1e-12)
        assert metrics["native_fps"] == 12.0
        assert metrics["bucket_id"] == 159

    def test_zero_clip(self, runner, tmpdir):
        filename = tensor_file(tmpdir, np.zeros((3, 1, 4, 4)), name="clip.mvdt")
        result = runner.invoke(cli.main, ["motion", filename])
        assert result.exit_code == 2


class TestVerify:

    def test_group(self, runner, config, tmpdir):
        out = str(tmpdir / "out")
        args = ["verify", "attention,conditioning", "-c", config, "-o", out]
        result = runner.invoke(cli.main, args)
        assert result.exit_code == 0, result.output
        data = report(out, "verify")
        assert data["passed"]
        assert data["metrics"]["selected"] == ["cross_attention_rewrite", "motion_descriptor"]

    def test_all(self, runner, config, tmpdir):
        out = str(tmpdir / "out")
        result = runner.invoke(cli.main, ["verify", "-c", config, "--progress", "-o", out])
        assert result.exit_code == 0, result.output
        checks = report(out, "verify")["metrics"]["checks"]
        assert len(checks) == 11
        assert all(check["passed"] for check in checks.values())

    def test_json_is_deterministic(self, runner, config):
        args = ["verify", "pruning", "-c", config, "--json"]
        first = runner.invoke(cli.main, args)
        second = runner.invoke(cli.main, args)
        assert first.exit_code == 0, first.output
        assert first.output == second.output

    @pytest.mark.parametrize(
        "selector, fault",
        [
            ("attention", "cross_attention_rewrite"),
            ("pruning", "solver_oracle"),
            ("pruning", "fixed_size_sampling"),
            ("toyunet", "toy_structure"),
            ("funnel", "merge_exactness"),
        ],
    )
    def test_fault(self, runner, config, selector, fault):
        result = runner.invoke(cli.main, ["verify", selector, "-c", config, "--fault", fault])
        assert result.exit_code == 1
        assert "verify: FAILED" in result.output

    def test_timing(self, runner, config, tmpdir):
        out = str(tmpdir / "out")
        runner.invoke(cli.main, ["verify", "attention", "-c", config, "--timing", "-o", out])
        data = report(out, "verify")
        assert "wall_time" in data
        assert "wall_time" in data["metrics"]["checks"]["cross_attention_rewrite"]

    @pytest.mark.parametrize(
        "args",
        [
            ["verify", ""],
            ["verify", "nothing"],
            ["verify", "attention", "--fault", "solver_oracle"],
            ["verify", "attention", "-k", "verify.unknown", "1"],
            ["verify", "attention", "-s", "-1"],
        ],
    )
    def test_usage_errors(self, runner, args):
        result = runner.invoke(cli.main, args)
        assert result.exit_code == 2

    def test_bad_config_file(self, runner, tmpdir):
        filename = str(tmpdir / "config.yml")
        with open(filename, "w") as fp:
            fp.write("verify: [unclosed\n")
        assert runner.invoke(cli.main, ["verify", "attention", "-c", filename]).exit_code == 2
        missing = str(tmpdir / "missing.yml")
        assert runner.invoke(cli.main, ["verify", "attention", "-c", missing]).exit_code == 3

"""Console script for unetslim."""
import os
import time
import hashlib
import logging
from functools import wraps
from dataclasses import replace

import click
import numpy as np
import yaml

from unetslim import __version__
from unetslim.conditioning import Clip, motion_descriptor, motion_bucket_id
from unetslim.core.attributes import AttrDict
from unetslim.core.config import RunConfig, parse_kwargs
from unetslim.core.report import Report
from unetslim.core.utils import to_tensor, spawn_seeds
from unetslim.funnel.baselines import truncated_layer_baseline, count_params
from unetslim.funnel.csi import effective_residual, funnel_factors
from unetslim.input.frames import read_frames
from unetslim.manifest import (
    INITS,
    LAYER_TENSORS,
    read_tensor,
    read_layers,
    read_funnels,
    write_layers,
    write_funnels,
    layer_type,
    fit_funnels,
    merge_layers,
    merge_equivalence,
    layer_digests,
)
from unetslim.pruning.inclusion import solve_inclusion, solver_jacobian, budget_from_rate
from unetslim.pruning.sampling import METHODS, draw_fixed_size
from unetslim.pruning.gates import importance_from_alpha
from unetslim.toyunet.spec import MULTISCALING
from unetslim.toyunet.network import build, inject_funnels, inject_gates, prune
from unetslim.toyunet.flops import count_flops, stacked_flops
from unetslim.verify import FAULTABLE, run_suite, toy_spec, check_toy_structure

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


def run_options(function):
    """Options shared by every command."""
    function = click.option(
        "-k",
        "--kwargs",
        "overrides",
        type=(str, str),
        nargs=2,
        multiple=True,
        help="Config options as dotted key and yaml value, repeat for multiple pairs",
        show_default=False,
    )(function)
    function = click.option(
        "--timing", is_flag=True, help="Include wall times in the report"
    )(function)
    function = click.option(
        "--json", "as_json", is_flag=True, help="Print the json report to stdout"
    )(function)
    function = click.option(
        "-o", "--out", default=None, help="Directory to write the report and artifacts to"
    )(function)
    function = click.option(
        "-c", "--config", "config_file", default=None, help="Yaml or json config file"
    )(function)
    function = click.option(
        "-s", "--seed", type=int, default=None, help="Root seed, 64-bit unsigned"
    )(function)
    return function


def _digest_inputs(config, paths):
    """Sha256 of the run config and the bytes of every input file or directory."""
    sha = hashlib.sha256(config.digest().encode())
    for path in paths:
        if os.path.isdir(path):
            names = sorted(os.path.join(path, name) for name in os.listdir(path))
        else:
            names = [path]
        for name in names:
            with open(name, "rb") as stream:
                sha.update(stream.read())
    return sha.hexdigest()


def _summary(report):
    status = {None: "done", True: "passed", False: "FAILED"}[report.passed]
    lines = [f"{report.command}: {status}"]
    for key, value in sorted(report.to_dict()["metrics"].items()):
        if isinstance(value, dict) and "passed" in value:
            lines.append(f"  {key}: {'passed' if value['passed'] else 'FAILED'}")
        elif not isinstance(value, (dict, list)):
            lines.append(f"  {key}: {value!r}")
    return "\n".join(lines)


def reported(command):
    """Run a command body and emit its report, mapping errors to exit codes.

    The decorated body takes the RunConfig, the output directory and the command
    arguments, and returns (metrics, passed, input paths).
    """

    def decorator(body):
        @wraps(body)
        def wrapper(seed, config_file, out, as_json, timing, overrides, **kwargs):
            ctx = click.get_current_context()
            try:
                config = RunConfig.load(config_file, parse_kwargs(overrides), seed=seed)
                start = time.perf_counter()
                metrics, passed, paths = body(config, out, **kwargs)
                wall_time = time.perf_counter() - start if timing else None
                report = Report(
                    command=command,
                    inputs=_digest_inputs(config, paths),
                    metrics=metrics,
                    passed=passed,
                    wall_time=wall_time,
                )
                if out is not None:
                    os.makedirs(out, exist_ok=True)
                    report.write(os.path.join(out, f"{command.replace(' ', '_')}.json"))
            except (ValueError, yaml.YAMLError) as exc:
                click.echo(f"Error: {exc}", err=True)
                ctx.exit(EXIT_USAGE)
            except OSError as exc:
                click.echo(f"Error: {exc}", err=True)
                ctx.exit(EXIT_IO)
            click.echo(report.to_json() if as_json else _summary(report))
            if passed is False:
                ctx.exit(EXIT_FAILED)

        return wrapper

    return decorator


def _artifact(out, filename):
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, filename)


@click.group()
@click.version_option(__version__)
@click.option(
    "--loglevel",
    default="WARNING",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging level",
    show_default=True,
)
def main(loglevel):
    logging.basicConfig(level=loglevel.upper())


# =====================================================================================
# Funnel commands
# =====================================================================================
@main.group()
def funnel():
    pass


@funnel.command()
@click.argument("layers")
@click.option("-f", "--fun-factor", type=float, default=None, help="Ratio c'/c_inner")
@click.option("-i", "--init", type=click.Choice(INITS), default=None, help="Funnel init")
@run_options
@reported("funnel csi")
def csi(config, out, layers, fun_factor, init):
    """Fit funnels on every layer of the LAYERS manifest.

    Reports the residual of each funneled effective matrix next to the truncated-SVD
    oracle. With `--init he` the He-initialized funnels are compared to CSI instead.
    """
    fun_factor = config.funnel.fun_factor if fun_factor is None else fun_factor
    init = init or config.funnel.init
    bundle = read_layers(layers)
    funnels = fit_funnels(bundle, fun_factor, init=init, seed=config.seed)
    reference = funnels if init == "csi" else fit_funnels(bundle, fun_factor, init="csi")
    metrics, passed = {"fun_factor": fun_factor, "init": init, "funnels": {}}, True
    for name, fitted in funnels.items():
        layer = bundle[fitted.target]
        residual, oracle = effective_residual(layer, fitted)
        csi_residual, _ = effective_residual(layer, reference[name])
        left, right = funnel_factors(layer, fitted.kind)
        gap = abs(csi_residual - oracle) / max(1.0, np.linalg.norm(left @ right))
        metrics["funnels"][name] = {
            "target": fitted.target,
            "type": fitted.kind,
            "width": fitted.width,
            "c_inner": fitted.c_inner,
            "residual": residual,
            "oracle": oracle,
            "csi_residual": csi_residual,
            "relative_gap": gap,
        }
        passed &= gap <= config.verify.csi_tolerance
    filename = _artifact(out, "funnels.json")
    if filename is not None:
        write_funnels(funnels, filename)
    return metrics, bool(passed), [layers]


@funnel.command()
@click.argument("layers")
@click.argument("funnels")
@run_options
@reported("funnel merge")
def merge(config, out, layers, funnels):
    """Merge the FUNNELS manifest into the LAYERS manifest.

    The merged and funneled forwards are compared on random inputs.
    """
    bundle = read_layers(layers)
    fitted = read_funnels(funnels)
    merged = merge_layers(bundle, fitted)
    diffs = merge_equivalence(
        bundle, fitted, merged, seed=config.seed, batch=config.funnel.merge_inputs
    )
    metrics = {
        "max_abs_diff": diffs,
        "digests": layer_digests(bundle),
        "merged_digests": layer_digests(merged),
        "params": {name: _nparams(layer) for name, layer in bundle.items()},
        "merged_params": {name: _nparams(layer) for name, layer in merged.items()},
    }
    filename = _artifact(out, "merged.json")
    if filename is not None:
        write_layers(merged, filename)
    passed = all(diff <= config.funnel.merge_tolerance for diff in diffs.values())
    return metrics, passed, [layers, funnels]


def _nparams(layer):
    return count_params(*(getattr(layer, key) for key in LAYER_TENSORS[layer_type(layer)]))


@funnel.command()
@click.argument("layers")
@click.option("-r", "--rate", type=float, default=None, help="Rank reduction rate")
@run_options
@reported("funnel baseline")
def baseline(config, out, layers, rate):
    """Truncated-layer baseline of every matrix of the LAYERS manifest.

    Each weight is replaced by two thinner layers of rank round(rate min(c_in, c_out)).
    Convolution kernels are skipped.
    """
    rate = config.funnel.baseline_rate if rate is None else rate
    bundle = read_layers(layers)
    weights = {}
    for name, layer in bundle.items():
        if layer_type(layer) == "conv":
            continue
        for key in LAYER_TENSORS[layer_type(layer)]:
            W = getattr(layer, key)
            W1, W2 = truncated_layer_baseline(W, rate)
            weights[f"{name}.{key}"] = {
                "rank": W1.shape[0],
                "params": count_params(W),
                "truncated_params": count_params(W1, W2),
                "reduces_params": count_params(W1, W2) < count_params(W),
                "residual": float(np.linalg.norm(W2 @ W1 - W)),
            }
    return {"rate": rate, "weights": weights}, None, [layers]


# =====================================================================================
# Pruning commands
# =====================================================================================
@main.group(name="prune")
def prune_group():
    pass


@prune_group.command()
@click.argument("qfile")
@click.argument("n", type=int)
@click.option("-j", "--jacobian", is_flag=True, help="Include the Jacobian dp/dq")
@click.option("--ste", is_flag=True, help="Straight-through rows for clamped units")
@run_options
@reported("prune solve")
def solve(config, out, qfile, n, jacobian, ste):
    """Inclusion probabilities for the importances in QFILE and budget N."""
    q = read_tensor(qfile).values.ravel()
    solution = solve_inclusion(q, n)
    metrics = {"n": n, **solution.to_dict()}
    if jacobian:
        metrics["jacobian"] = solver_jacobian(q, n, ste=ste)
    filename = _artifact(out, "p.mvdt")
    if filename is not None:
        to_tensor(solution.p, name="p").tensor.to_mvdt(filename)
    return metrics, None, [qfile]


@prune_group.command()
@click.argument("pfile")
@click.argument("n", type=int)
@click.option("-d", "--draws", type=int, default=None, help="Number of samples")
@click.option("-m", "--method", type=click.Choice(METHODS), default=None, help="Sampler")
@run_options
@reported("prune sample")
def sample(config, out, pfile, n, draws, method):
    """Fixed-size samples of N units with the inclusion probabilities in PFILE.

    Reports the empirical inclusion frequencies and checks them against p within
    the configured number of binomial standard deviations.
    """
    draws = config.prune.draws if draws is None else draws
    method = method or config.prune.method
    p = read_tensor(pfile).values.ravel()
    z = draw_fixed_size(p, n, size=draws, rng=spawn_seeds(config.seed, 1)[0], method=method)
    freq = z.mean(axis=0)
    sigma = np.sqrt(np.clip(p * (1 - p), 0.0, None) / draws)
    deviation = np.abs(freq - p)
    exact_sizes = bool(np.all(z.sum(axis=1) == n))
    within = bool(np.all(deviation <= config.prune.sigmas * sigma + 1e-12))
    metrics = {
        "n": n,
        "draws": draws,
        "method": method,
        "p": p,
        "frequencies": freq,
        "first_sample": z[0],
        "exact_sizes": exact_sizes,
        "within_sigmas": within,
    }
    return metrics, exact_sizes and within, [pfile]


# =====================================================================================
# Toy UNet commands
# =====================================================================================
@main.group()
def toy():
    pass


@toy.command()
@click.option("--spec", "spec_file", default=None, help="Yaml or json toy UNet spec")
@click.option("-m", "--multiscaling", type=click.Choice(MULTISCALING), default=None)
@click.option("--optimized", is_flag=True, help="Single-token cross-attention rewrite")
@click.option("--funnels", is_flag=True, help="Install attention funnels")
@click.option("--gates", is_flag=True, help="Sample temporal block gates")
@click.option("--prune", "pruned", is_flag=True, help="Delete the least important blocks")
@click.option("-r", "--rate", type=float, default=None, help="Temporal block pruning rate")
@click.option("--stack", is_flag=True, help="Report stacked-optimization FLOPs")
@click.option("--grid", is_flag=True, help="Run the structural variant grid")
@run_options
@reported("toy run")
def run(config, out, spec_file, multiscaling, optimized, funnels, gates, pruned, rate, stack, grid):
    """Forward pass of the toy UNet with the selected variants.

    Reports the sha256 digest of the output, its counted FLOPs and the reduction
    relative to the same network without multiscaling.
    """
    spec = toy_spec(config, spec_file)
    updates = {"optimized_cross_attention": optimized or spec.optimized_cross_attention}
    if multiscaling is not None:
        updates["multiscaling"] = multiscaling
    spec = spec.replace(**updates)
    rate = config.toy.rate if rate is None else rate
    data_seed, gate_seed = spawn_seeds(config.seed, 2)
    rng = np.random.default_rng(data_seed)
    latent = rng.standard_normal(spec.latent_shape)
    context = rng.standard_normal((1, spec.context_width))

    net = build(spec)
    q = importance_from_alpha(net.alpha).q
    n = budget_from_rate(rate, spec.ntemporal)
    if pruned:
        net = prune(net, q, n)
    if funnels:
        net = inject_funnels(net, config.toy.fun_factor, tuple(config.toy.funnel_targets))
    if gates:
        net = inject_gates(net, q, n, rng=gate_seed, method=config.prune.method)
    output = to_tensor(net(latent, context), name="output")

    flops = count_flops(net)
    base = count_flops(spec.replace(multiscaling="none"))
    metrics = {
        "spec": spec.to_dict(),
        "digest": output.tensor.digest(),
        "shape": list(output.shape),
        "flops": flops["total"],
        "softmax": flops["softmax"],
        "temporal_blocks": spec.ntemporal,
        "removed": list(net.removed),
        "multiscaling_reduction": 1.0 - flops["total"] / base["total"],
    }
    if gates:
        metrics["gates"] = net.gate_sample.z
    if stack:
        metrics["stacked"] = stacked_flops(spec, rate=rate, fun_factor=config.toy.fun_factor)
    passed = output.shape == spec.latent_shape
    if grid:
        grid_config = replace(config, toy=AttrDict({**config.toy, "spec": spec.to_dict()}))
        structure = check_toy_structure(grid_config, spawn_seeds(config.seed, 3)[2])
        metrics["grid"] = structure["grid"]
        passed = passed and structure["shapes_preserved"] and structure["multiscaled_frames"]
    filename = _artifact(out, "output.mvdt")
    if filename is not None:
        output.tensor.to_mvdt(filename)
    return metrics, bool(passed), [spec_file] if spec_file else []


# =====================================================================================
# Motion command
# =====================================================================================
@main.command()
@click.argument("clip")
@click.option("--fps", type=float, default=None, help="Native frame rate of tensor clips")
@run_options
@reported("motion")
def motion(config, out, clip, fps):
    """Motion descriptor of CLIP, a frames directory or a (T, C, H, W) tensor file."""
    if os.path.isdir(clip):
        frames = Clip.from_dataarray(read_frames(clip))
    else:
        frames = Clip.from_dataarray(read_tensor(clip, name="frames"), fps=fps)
    opts = config.motion
    descriptor = motion_descriptor(frames, opts.height, opts.width)
    lo, hi = opts.area_range
    metrics = {
        **descriptor.to_dict(),
        "frames": frames.nframes,
        "native_fps": frames.native_fps,
        "bucket_id": motion_bucket_id(descriptor.area, opts.orientation, lo, hi),
    }
    filename = _artifact(out, "motion.nc")
    if filename is not None:
        descriptor.to_dataset().to_netcdf(filename)
    return metrics, None, [clip]


# =====================================================================================
# Verification command
# =====================================================================================
@main.command()
@click.argument("selector", default="all")
@click.option(
    "--fault",
    type=click.Choice(FAULTABLE),
    default=None,
    help="Inject a perturbation into one check, which must then fail",
)
@click.option("--progress", is_flag=True, help="Show a progress bar")
@run_options
@reported("verify")
def verify(config, out, selector, fault, progress):
    """Run the property suite on the checks or groups in SELECTOR (comma separated).

    Exits with 1 if any selected check fails.
    """
    timing = click.get_current_context().params["timing"]
    results = run_suite(config, selector, fault=fault, progress=progress, timing=timing)
    passed = all(result["passed"] for result in results.values())
    return {"checks": results, "selected": list(results)}, passed, []

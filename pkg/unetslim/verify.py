"""Property suite checking every transform against an exact oracle.

Each check takes the run configuration, its own seed and a fault flag and
returns a dict of metrics with a boolean `passed`. Checks are independent and run
in parallel threads through dask, each seeded by its position in `CHECKS` so the
results do not depend on which checks are selected or on scheduling.

Fault injection perturbs one quantity of a check by 1e-4 so that it must fail.

"""
import time
import logging
from contextlib import nullcontext

import dask
import numpy as np
import yaml
from dask.diagnostics.progress import ProgressBar

from unetslim.attention import rewrite_equivalence_check, random_cross_attn_layer
from unetslim.conditioning import (
    motion_descriptor,
    static_clip,
    orthogonal_clip,
    moving_square_clip,
    Clip,
)
from unetslim.core.exceptions import ArgumentError
from unetslim.core.utils import spawn_seeds
from unetslim.funnel.pairs import LinearPair, ConvPair, FunnelPair
from unetslim.funnel.csi import csi_linear_pair, effective_residual
from unetslim.funnel.baselines import he_init_baseline
from unetslim.manifest import fit_funnels, merge_layers, merge_equivalence
from unetslim.pruning.inclusion import (
    solve_inclusion,
    oracle_active_set,
    solver_jacobian,
    budget_from_rate,
)
from unetslim.pruning.sampling import METHODS, draw_fixed_size
from unetslim.pruning.gates import (
    gate_forward,
    gate_grad,
    temporal_update_grad,
    select_top_n,
    importance_from_alpha,
)
from unetslim.toyunet.spec import ToyUNetSpec, MULTISCALING, TEMPORAL_BLOCKS
from unetslim.toyunet.network import (
    build,
    inject_funnels,
    merge_funnels,
    inject_gates,
    set_gates,
    prune,
)
from unetslim.toyunet.flops import count_flops, stacked_flops, multiscaling_reductions

logger = logging.getLogger(__name__)


FAULT_SCALE = 1e-4


def _int_seed(rng):
    return int(rng.integers(2**63))


def toy_spec(config, filename=None):
    """Toy UNet spec of a run, seeded by the run seed unless the spec sets one.

    Fields come from `filename` (yaml or json) when given, else from the config.
    """
    data = dict(config.toy.spec)
    if filename is not None:
        with open(filename) as stream:
            data = yaml.safe_load(stream) or {}
        if not isinstance(data, dict):
            raise ArgumentError(f"Toy spec file {filename} must hold a mapping")
    data.setdefault("seed", config.seed)
    return ToyUNetSpec.from_dict(data)


def check_csi_optimality(config, seed, fault=False):
    """CSI residuals equal the truncated-SVD residual and beat He funnels."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    worst, he_worse, compared = 0.0, 0, 0
    for _ in range(opts.csi_pairs):
        c_in, c_out = (int(c) for c in rng.integers(2, opts.csi_max_dim + 1, size=2))
        c_inner = int(rng.integers(1, min(c_in, c_out) + 1))
        pair = LinearPair(
            W1=rng.standard_normal((c_inner, c_in)), W2=rng.standard_normal((c_out, c_inner))
        )
        scale = max(1.0, float(np.linalg.norm(pair.W2 @ pair.W1)))
        for fun_factor in opts.fun_factors:
            funnel = csi_linear_pair(pair, fun_factor)
            if fault:
                F1 = funnel.F1 + FAULT_SCALE * rng.standard_normal(funnel.F1.shape)
                funnel = FunnelPair(F1=F1, F2=funnel.F2, fun_factor=fun_factor)
            residual, oracle = effective_residual(pair, funnel)
            worst = max(worst, abs(residual - oracle) / scale)
            he = he_init_baseline(funnel.F1.shape, funnel.F2.shape, seed=rng)
            he_residual, _ = effective_residual(pair, he)
            compared += 1
            he_worse += he_residual > residual
    he_fraction = he_worse / compared
    return {
        "pairs": int(opts.csi_pairs),
        "fun_factors": list(opts.fun_factors),
        "max_relative_gap": worst,
        "he_worse_fraction": he_fraction,
        "passed": worst <= opts.csi_tolerance and he_fraction >= 0.95,
    }


def check_merge_exactness(config, seed, fault=False):
    """Merged and funneled forwards agree for linear, conv and attention pairs."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    layers = {
        "linear": LinearPair(
            W1=rng.standard_normal((8, 12)), W2=rng.standard_normal((10, 8)), nonlinearity="relu"
        ),
        "conv": ConvPair(
            K1=rng.standard_normal((3, 3, 6, 4)) / 6.0,
            K2=rng.standard_normal((3, 3, 5, 6)) / 6.0,
            nonlinearity="silu",
        ),
        "attention": random_cross_attn_layer(rng, c_in=8, c_ctx=6, c_head=8, c_out=8, heads=2),
    }
    out = {"passed": True}
    for init in ("csi", "he"):
        funnels = fit_funnels(layers, config.funnel.fun_factor, init=init, seed=_int_seed(rng))
        merged = merge_layers(layers, funnels)
        if fault:
            pair = merged["linear"]
            W1 = pair.W1 + FAULT_SCALE * rng.standard_normal(pair.W1.shape)
            merged["linear"] = LinearPair(W1=W1, W2=pair.W2, nonlinearity=pair.nonlinearity)
        diffs = merge_equivalence(
            layers, funnels, merged, seed=_int_seed(rng), batch=opts.merge_inputs
        )
        out[init] = diffs
        out["passed"] &= max(diffs.values()) <= opts.merge_tolerance
    return out


def check_cross_attention_rewrite(config, seed, fault=False):
    """Single-token cross-attention rewrite is exact and cheaper."""
    opts = config.verify
    report = rewrite_equivalence_check(
        trials=opts.rewrite_trials,
        seed=seed,
        perturb=FAULT_SCALE if fault else 0.0,
    )
    report["passed"] = report["passed"] and report["max_abs_deviation"] <= opts.rewrite_tolerance
    return report


def check_solver_oracle(config, seed, fault=False):
    """Closed-form inclusion probabilities match the exhaustive active-set oracle."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    worst_objective = worst_sum = worst_box = 0.0
    for case in range(opts.solver_cases):
        N = int(rng.integers(2, opts.solver_max_size + 1))
        n = int(rng.integers(1, N))
        q = rng.uniform(0.01, 1.0, N)
        if case % 10 == 0:
            q[: max(2, N // 2)] = q[0]
        solution = solve_inclusion(q, n)
        oracle = oracle_active_set(q, n)
        p = solution.p.copy()
        if fault and case == 0:
            p[0] += FAULT_SCALE
        worst_objective = max(worst_objective, abs(solution.objective - oracle.objective))
        worst_sum = max(worst_sum, abs(p.sum() - n))
        worst_box = max(worst_box, -p.min(), p.max() - 1.0)
    symmetric = True
    for N in range(2, opts.solver_max_size + 1):
        q = np.full(N, rng.uniform(0.01, 1.0))
        for n in range(1, N):
            symmetric &= bool(np.all(solve_inclusion(q, n).p == n / N))
    return {
        "cases": int(opts.solver_cases),
        "max_objective_gap": worst_objective,
        "max_sum_error": worst_sum,
        "max_box_violation": max(worst_box, 0.0),
        "symmetric_exact": symmetric,
        "passed": (
            worst_objective <= opts.solver_tolerance
            and worst_sum <= opts.solver_tolerance
            and worst_box <= 1e-12
            and symmetric
        ),
    }


def _finite_difference(q, n, step):
    N = q.size
    fd = np.empty((N, N))
    for j in range(N):
        shift = np.zeros(N)
        shift[j] = step
        fd[:, j] = (solve_inclusion(q + shift, n).p - solve_inclusion(q - shift, n).p) / (2 * step)
    return fd


def check_solver_jacobian(config, seed, fault=False):
    """Analytic dp/dq matches central differences and its columns sum to zero."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    points, attempts = 0, 0
    worst = worst_colsum = 0.0
    while points < opts.jacobian_points and attempts < 50 * opts.jacobian_points:
        attempts += 1
        N = int(rng.integers(3, 11))
        n = int(rng.integers(1, N))
        q = rng.uniform(0.05, 1.0, N)
        solution = solve_inclusion(q, n)
        if solution.t > n or solution.margin <= opts.jacobian_margin:
            continue
        jac = solver_jacobian(q, n)
        if fault:
            jac[0, 0] += FAULT_SCALE
        fd = _finite_difference(q, n, opts.jacobian_step)
        worst = max(worst, float(np.max(np.abs(jac - fd))))
        worst_colsum = max(worst_colsum, float(np.max(np.abs(jac.sum(axis=0)))))
        points += 1
    return {
        "points": points,
        "attempts": attempts,
        "max_abs_error": worst,
        "max_column_sum": worst_colsum,
        "passed": (
            points == opts.jacobian_points
            and worst <= opts.jacobian_tolerance
            and worst_colsum <= 1e-10
        ),
    }


def check_fixed_size_sampling(config, seed, fault=False):
    """Every sample has n units and frequencies lie within k sigma of p."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    draws = int(opts.sampling_draws)
    sizes_ok, within = True, True
    worst_ratio = 0.0
    vectors = []
    for _ in range(opts.sampling_vectors):
        N = int(rng.integers(4, opts.sampling_size + 1))
        n = int(rng.integers(1, N))
        vectors.append((solve_inclusion(rng.uniform(0.05, 1.0, N), n).p, n))
    vectors.append((np.array([1.0, 0.5, 0.5]), 2))
    vectors.append((np.full(6, 0.5), 3))
    for p, n in vectors:
        for method in METHODS:
            z = draw_fixed_size(p, n, size=draws, rng=rng, method=method)
            sizes_ok &= bool(np.all(z.sum(axis=1) == n))
            freq = z.mean(axis=0)
            if fault:
                freq[0] += 100 * FAULT_SCALE
            sigma = np.sqrt(np.clip(p * (1 - p), 0.0, None) / draws)
            deviation = np.abs(freq - p)
            within &= bool(np.all(deviation <= opts.sampling_sigmas * sigma + 1e-12))
            ratio = deviation[sigma > 0] / sigma[sigma > 0]
            worst_ratio = max(worst_ratio, float(ratio.max()) if ratio.size else 0.0)
    return {
        "vectors": len(vectors),
        "draws": draws,
        "methods": list(METHODS),
        "exact_sizes": sizes_ok,
        "max_sigma_ratio": worst_ratio,
        "passed": sizes_ok and within,
    }


def _temporal_width(block):
    return block.attn.layer.c_in if block.attn is not None else block.K1.shape[2]


def check_gate_semantics(config, seed, fault=False):
    """Gate values equal z, gradients pass through and the block gradient is (1 - alpha) r."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, 16)
    p = rng.uniform(0.0, 1.0, 16)
    zhat = gate_forward(z, p)
    forward_ok = bool(np.array_equal(zhat, z) and np.all((zhat == 0) | (zhat == 1)))
    grad_ok = bool(np.all(gate_grad(p) == 1.0) and gate_grad() == 1.0)
    step, worst = opts.gate_step, 0.0
    for kind in TEMPORAL_BLOCKS:
        spec = ToyUNetSpec(
            frames=6, height=4, width=4, channels=(8,), down_blocks=1, mid_blocks=0,
            up_blocks=1, temporal_block=kind, context_width=8, seed=_int_seed(rng),
        )
        for block in build(spec).temporal:
            h = rng.standard_normal((spec.frames, _temporal_width(block), 4, 4))
            analytic = temporal_update_grad(block.residual(h), block.alpha)
            if fault:
                analytic = analytic * (1 + FAULT_SCALE)
            fd = (block(h, 1.0 + step) - block(h, 1.0 - step)) / (2 * step)
            worst = max(worst, float(np.max(np.abs(analytic - fd))))
    return {
        "forward_equals_z": forward_ok,
        "gradient_is_one": grad_ok,
        "max_block_gradient_error": worst,
        "passed": forward_ok and grad_ok and worst <= opts.gate_tolerance,
    }


def check_toy_structure(config, seed, fault=False):
    """Shapes over the variant grid, multiscaled frames, zero gates and stacked FLOPs."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    spec = toy_spec(config)
    latent = rng.standard_normal(spec.latent_shape)
    context = rng.standard_normal((1, spec.context_width))
    N = spec.ntemporal
    n = budget_from_rate(config.toy.rate, N)
    targets = tuple(config.toy.funnel_targets)

    grid, shapes_ok, frames_ok = {}, True, True
    for multiscaling in MULTISCALING:
        net = build(spec.replace(multiscaling=multiscaling))
        q = importance_from_alpha(net.alpha).q
        for gates in (False, True):
            for funnels in (False, True):
                variant = net
                if funnels:
                    variant = inject_funnels(variant, config.toy.fun_factor, targets)
                if gates:
                    variant = inject_gates(variant, q, n, rng=rng)
                shapes = {}
                out = variant(
                    latent, context, hook=lambda name, h: shapes.setdefault(name, h.shape)
                )
                key = f"{multiscaling}/gates={int(gates)}/funnels={int(funnels)}"
                grid[key] = list(out.shape)
                shapes_ok &= out.shape == latent.shape
                if variant.spec.temporal_multiscaling:
                    frames_ok &= shapes["multiscale_down"][0] == -(-spec.frames // 2)

    net = build(spec)
    q = importance_from_alpha(net.alpha).q
    z = np.zeros(N)
    z[select_top_n(q, n)] = 1.0
    if fault:
        z[np.flatnonzero(z == 0)[0]] = FAULT_SCALE
    gated = set_gates(net, z)(latent, context)
    deleted = prune(net, q, n)(latent, context)
    gate_deviation = float(np.max(np.abs(gated - deleted)))

    funneled = inject_funnels(net, config.toy.fun_factor, targets)
    merge_deviation = float(
        np.max(np.abs(funneled(latent, context) - merge_funnels(funneled)(latent, context)))
    )

    stack = stacked_flops(spec, rate=config.toy.rate, fun_factor=config.toy.fun_factor)
    flops = [row["flops"] for row in stack]
    monotone = all(b < a for a, b in zip(flops[:-1], flops[1:]))
    return {
        "grid": grid,
        "shapes_preserved": bool(shapes_ok),
        "multiscaled_frames": bool(frames_ok),
        "zero_gate_deviation": gate_deviation,
        "funnel_merge_deviation": merge_deviation,
        "stacked_flops": stack,
        "stacked_monotone": monotone,
        "passed": bool(
            shapes_ok
            and frames_ok
            and gate_deviation <= opts.structure_tolerance
            and merge_deviation <= opts.structure_tolerance
            and monotone
        ),
    }


def check_pruning_rates(config, seed, fault=False):
    """FLOPs saved by pruning equal the counts of the deleted temporal blocks."""
    opts = config.verify
    rng = np.random.default_rng(seed)
    spec = toy_spec(config)
    latent = rng.standard_normal(spec.latent_shape)
    context = rng.standard_normal((1, spec.context_width))
    net = build(spec)
    q = importance_from_alpha(net.alpha).q
    base = count_flops(net)
    rates, passed = {}, True
    for rate in opts.pruning_rates:
        n = budget_from_rate(rate, spec.ntemporal)
        pruned = prune(net, q, n)
        reduction = base["total"] - count_flops(pruned)["total"]
        expected = sum(base["temporal"][index] for index in pruned.removed)
        executes = pruned(latent, context).shape == latent.shape
        exact = reduction == expected and reduction > 0
        rates[f"{rate:g}"] = {
            "kept": n,
            "removed": list(pruned.removed),
            "flops_reduction": int(reduction),
            "relative_reduction": reduction / base["total"],
            "exact": bool(exact),
            "executes": bool(executes),
        }
        passed &= exact and executes
    return {"base_flops": base["total"], "rates": rates, "passed": bool(passed)}


def check_motion_descriptor(config, seed, fault=False):
    """Static clips give area 1, orthogonal frames (T+1)/2T, scaling changes nothing."""
    opts = config.verify
    height, width = config.motion.height, config.motion.width
    rng = np.random.default_rng(seed)
    moving = moving_square_clip(height=height, width=width)
    static = static_clip(moving.frames[0])
    static_area = motion_descriptor(static, height, width).area
    moving_area = motion_descriptor(moving, height, width).area
    T = static.nframes
    orthogonal_area = motion_descriptor(orthogonal_clip(T, height, width), height, width).area
    random_clip = Clip(frames=rng.uniform(0.0, 0.5, (T, 3, height, width)))
    area = motion_descriptor(random_clip, height, width).area
    scaled = motion_descriptor(Clip(frames=2.0 * random_clip.frames), height, width).area
    expected = (T + 1) / (2 * T)
    return {
        "static_area": static_area,
        "moving_area": moving_area,
        "orthogonal_area": orthogonal_area,
        "orthogonal_expected": expected,
        "scale_deviation": abs(area - scaled),
        "passed": bool(
            static_area == 1.0
            and abs(orthogonal_area - expected) <= opts.motion_tolerance
            and abs(area - scaled) <= opts.motion_tolerance
            and moving_area < static_area
        ),
    }


def check_svd_like_flops(config, seed, fault=False):
    """Multiscaling FLOPs reductions of the large preset, informative only."""
    if not config.verify.svd_like:
        return {"skipped": True, "passed": True}
    reductions = multiscaling_reductions(ToyUNetSpec.svd_like())
    return {"reductions": reductions, "gating": False, "passed": True}


CHECKS = {
    "csi_optimality": check_csi_optimality,
    "merge_exactness": check_merge_exactness,
    "cross_attention_rewrite": check_cross_attention_rewrite,
    "solver_oracle": check_solver_oracle,
    "solver_jacobian": check_solver_jacobian,
    "fixed_size_sampling": check_fixed_size_sampling,
    "gate_semantics": check_gate_semantics,
    "toy_structure": check_toy_structure,
    "pruning_rates": check_pruning_rates,
    "motion_descriptor": check_motion_descriptor,
    "svd_like_flops": check_svd_like_flops,
}
GROUPS = {
    "funnel": ("csi_optimality", "merge_exactness"),
    "attention": ("cross_attention_rewrite",),
    "pruning": (
        "solver_oracle",
        "solver_jacobian",
        "fixed_size_sampling",
        "gate_semantics",
        "pruning_rates",
    ),
    "toyunet": ("toy_structure", "pruning_rates", "svd_like_flops"),
    "conditioning": ("motion_descriptor",),
    "all": tuple(CHECKS),
}
FAULTABLE = (
    "csi_optimality",
    "merge_exactness",
    "cross_attention_rewrite",
    "solver_oracle",
    "solver_jacobian",
    "fixed_size_sampling",
    "gate_semantics",
    "toy_structure",
)


def select_checks(selector):
    """Check names from a comma separated list of check and group names.

    Returns:
        - names (list): Selected checks in suite order.

    """
    if isinstance(selector, str):
        selector = selector.split(",")
    items = [item.strip() for item in selector or () if item and item.strip()]
    if not items:
        raise ArgumentError(
            f"Empty check selector, choose among {sorted(GROUPS)} or {list(CHECKS)}"
        )
    selected = set()
    for item in items:
        if item in GROUPS:
            selected.update(GROUPS[item])
        elif item in CHECKS:
            selected.add(item)
        else:
            raise ArgumentError(
                f"Unknown check '{item}', valid are {sorted(GROUPS)} and {list(CHECKS)}"
            )
    return [name for name in CHECKS if name in selected]


def _run_check(name, config, seed, fault, timing):
    start = time.perf_counter()
    result = CHECKS[name](config, seed, fault=fault)
    if timing:
        result["wall_time"] = time.perf_counter() - start
    logger.info(f"Check {name}: {'passed' if result['passed'] else 'FAILED'}")
    return result


def run_suite(config, selector="all", fault=None, progress=False, timing=False):
    """Run the selected checks in parallel threads.

    Args:
        - config (RunConfig): Run configuration, its seed seeds every check.
        - selector (str, list): Check and group names, see `select_checks`.
        - fault (str): Name of a selected check to run with an injected fault.
        - progress (bool): Show a dask progress bar.
        - timing (bool): Record the wall time of each check.

    Returns:
        - results (dict): Check results by name in suite order.

    """
    names = select_checks(selector)
    if fault is not None and (fault not in FAULTABLE or fault not in names):
        raise ArgumentError(f"Fault must name a selected check among {FAULTABLE}, got {fault}")
    children = spawn_seeds(config.seed, len(CHECKS))
    seeds = {
        name: int(child.generate_state(1, np.uint64)[0]) for name, child in zip(CHECKS, children)
    }
    tasks = [
        dask.delayed(_run_check, pure=False)(name, config, seeds[name], name == fault, timing)
        for name in names
    ]
    with ProgressBar() if progress else nullcontext():
        results = dask.compute(*tasks, scheduler="threads")
    return dict(zip(names, results))

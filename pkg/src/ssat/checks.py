"""Registered gradient checks and quick invariant checks.

Shared by the ``gradcheck``/``selfcheck`` commands and the test suite.
Every gradient case builds a small random input and a scalar function of
it; inputs that feed a kink (``abs``, ``relu``) are kept away from zero so
that central differences stay on one side.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .correspondence import correlation, soft_warp
from .gradcheck import grad_check
from .layers import Conv, ConvBlock, Discriminator, NetWidths, Spade, SpadeResBlock
from .losses import (
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    l1,
    makeup_spl_loss,
    overall_loss,
    reconstruction_loss,
    semantic_loss,
)
from .tensor import Tensor

GRAD_TOL = 1e-3
GRAD_STEP = 1e-3


def _away(rng, shape, low: float = 0.1) -> np.ndarray:
    """Random values with magnitude in ``[low, 1]`` and random sign."""
    return rng.uniform(low, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _weighted(y: Tensor, rng) -> Tensor:
    """Random linear functional of ``y``, so every output entry matters."""
    return T.tsum(y * _probe(rng, y.shape))


def _double(module) -> None:
    for p in module.parameters():
        p.data = p.data.astype(np.float64)
        p.requires_grad = False


Case = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]
GRAD_CASES: dict[str, Case] = {}


def register(name: str):
    def deco(fn: Case) -> Case:
        GRAD_CASES[name] = fn
        return fn

    return deco


@register("add")
def _(rng):
    b, w = _probe(rng, (3, 4)), _probe(rng, (3, 4))
    return (lambda x: T.tsum((x + b) * w)), rng.standard_normal((3, 4))


@register("add_broadcast")
def _(rng):
    b, w = _probe(rng, (3, 4)), _probe(rng, (3, 4))
    return (lambda x: T.tsum((b + x) * w)), rng.standard_normal((1, 4))


@register("sub")
def _(rng):
    b, w = _probe(rng, (3, 4)), _probe(rng, (3, 4))
    return (lambda x: T.tsum((b - x) * w)), rng.standard_normal((3, 4))


@register("mul")
def _(rng):
    b, w = _probe(rng, (3, 4)), _probe(rng, (3, 4))
    return (lambda x: T.tsum(x * b * w)), rng.standard_normal((3, 4))


@register("div")
def _(rng):
    b, w = Tensor(_away(rng, (3, 4), 0.5)), _probe(rng, (3, 4))
    return (lambda x: T.tsum((x / b + b / x) * w)), _away(rng, (3, 4), 0.5)


@register("square")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.square(x) * w)), rng.standard_normal((3, 4))


@register("sqrt")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.sqrt(x) * w)), rng.uniform(0.5, 2.0, (3, 4))


@register("exp")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.exp(x) * w)), rng.standard_normal((3, 4))


@register("abs")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.tabs(x) * w)), _away(rng, (3, 4))


@register("tanh")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.tanh(x) * w)), rng.standard_normal((3, 4))


@register("relu")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.relu(x) * w)), _away(rng, (3, 4))


@register("leaky_relu")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.leaky_relu(x, 0.2) * w)), _away(rng, (3, 4))


@register("clamp_min")
def _(rng):
    w = _probe(rng, (3, 4))
    return (lambda x: T.tsum(T.clamp_min(x, 0.05) * w)), 0.05 + _away(rng, (3, 4))


@register("reshape_transpose")
def _(rng):
    w = _probe(rng, (4, 2, 3))
    return (lambda x: T.tsum(T.transpose(T.reshape(x, (2, 3, 4)), (2, 0, 1)) * w)), rng.standard_normal((6, 4))


@register("getitem")
def _(rng):
    w1, w2 = _probe(rng, (2, 3)), _probe(rng, (3, 5))
    idx = np.array([0, 2, 2])

    def f(x):
        return T.tsum(x[1:3, ::2] * w1) + T.tsum(x[idx] * w2)

    return f, rng.standard_normal((4, 5))


@register("split_concat")
def _(rng):
    w = _probe(rng, (6, 3))

    def f(x):
        a, b, c = T.split(x, [1, 2, 2], axis=0)
        return T.tsum(T.concat([c, a * 2.0, b, a], axis=0) * w)

    return f, rng.standard_normal((5, 3))


@register("sum_mean")
def _(rng):
    w = _probe(rng, (1, 4))
    return (lambda x: T.tsum(T.tsum(x, axis=0, keepdims=True) * w) + T.mean(x) * 3.0), rng.standard_normal((3, 4))


@register("matmul")
def _(rng):
    b, w = _probe(rng, (4, 2)), _probe(rng, (3, 2))
    return (lambda x: T.tsum(T.matmul(x, b) * w) + T.tsum(T.matmul(b.T, T.transpose(x)) * w.T)), rng.standard_normal((3, 4))


def _conv_case(c, o, k, pad, stride, size=5, wrt="x"):
    def case(rng):
        x0 = rng.standard_normal((c, size, size))
        w0 = rng.standard_normal((o, c, k, k)) * 0.5
        b = _probe(rng, (o,))
        ho = T.conv_output_size(size, k, pad, stride)
        probe = _probe(rng, (o, ho, ho))
        if wrt == "x":
            wt = Tensor(w0)
            return (lambda x: T.tsum(T.conv2d(x, wt, b, pad, stride) * probe)), x0
        xt = Tensor(x0)
        return (lambda w: T.tsum(T.conv2d(xt, w, b, pad, stride) * probe)), w0

    return case


register("conv2d_im2col")(_conv_case(2, 3, 3, 1, 1))
register("conv2d_shift")(_conv_case(3, 2, 3, 1, 1))
register("conv2d_stride2")(_conv_case(2, 3, 3, 1, 2))
register("conv2d_1x1")(_conv_case(3, 4, 1, 0, 1))
register("conv2d_7x7")(_conv_case(2, 2, 7, 3, 1, size=4))
register("conv2d_weight_im2col")(_conv_case(2, 3, 3, 1, 2, wrt="w"))
register("conv2d_weight_shift")(_conv_case(3, 2, 3, 1, 1, wrt="w"))


@register("conv2d_upsampled_input")
def _(rng):
    w, b = Tensor(rng.standard_normal((3, 2, 3, 3))), Tensor(rng.standard_normal(3))
    probe = _probe(rng, (3, 12, 12))
    return (lambda x: T.tsum(T.conv2d_upsampled(x, w, b, 4) * probe)), rng.standard_normal((2, 3, 3))


@register("conv2d_upsampled_weight")
def _(rng):
    x, b = Tensor(rng.standard_normal((2, 3, 3))), Tensor(rng.standard_normal(3))
    probe = _probe(rng, (3, 6, 6))
    return (lambda w: T.tsum(T.conv2d_upsampled(x, w, b, 2) * probe)), rng.standard_normal((3, 2, 3, 3))


@register("conv2d_bias")
def _(rng):
    x, w = Tensor(rng.standard_normal((2, 4, 4))), Tensor(rng.standard_normal((2, 2, 3, 3)))
    probe = _probe(rng, (2, 4, 4))
    return (lambda b: T.tsum(T.conv2d(x, w, b, 1, 1) * probe)), rng.standard_normal(2)


@register("instance_norm")
def _(rng):
    w = _probe(rng, (2, 3, 3))
    return (lambda x: T.tsum(T.instance_norm(x) * w)), rng.standard_normal((2, 3, 3))


@register("scaled_softmax_rows")
def _(rng):
    w = _probe(rng, (4, 5))
    return (lambda x: T.tsum(T.scaled_softmax_rows(x, 100.0) * w)), rng.uniform(-1, 1, (4, 5))


@register("upsample_nearest")
def _(rng):
    w = _probe(rng, (2, 6, 6))
    return (lambda x: T.tsum(T.upsample_nearest(x, 2) * w)), rng.standard_normal((2, 3, 3))


@register("avg_pool")
def _(rng):
    w = _probe(rng, (2, 2, 2))
    return (lambda x: T.tsum(T.avg_pool(x, 2) * w)), rng.standard_normal((2, 4, 4))


@register("correlation")
def _(rng):
    y = Tensor(rng.standard_normal((5, 2, 2)))
    w = _probe(rng, (4, 4))
    return (lambda x: T.tsum(correlation(x, y).values * w)), rng.standard_normal((5, 2, 2))


@register("soft_warp")
def _(rng):
    x = Tensor(rng.standard_normal((4, 2, 2)))
    w = _probe(rng, (3, 2, 2))

    def f(v):
        a = correlation(x, v[:4], sigma=10.0)
        return T.tsum(soft_warp(a, v[4:], "ref_to_target") * w)

    return f, rng.standard_normal((7, 2, 2))


@register("loss_l1")
def _(rng):
    b = rng.standard_normal((3, 4))
    return (lambda x: l1(x, Tensor(b))), b + _away(rng, (3, 4))


@register("loss_semantic")
def _(rng):
    s_t, s_r, wt = (Tensor(rng.uniform(0, 1, (3, 2, 2))) for _ in range(3))
    return (lambda x: semantic_loss(s_t, s_r, wt, x)), s_t.data + _away(rng, (3, 2, 2))


@register("loss_makeup_spl")
def _(rng):
    ident = rng.standard_normal((3, 4, 4))
    color = rng.standard_normal((3, 4, 4))
    # keep generated away from the colour target and its gradients away from the source's
    x0 = color + _away(rng, (3, 4, 4), 0.2)
    return (lambda x: makeup_spl_loss(x, Tensor(ident), Tensor(color))), x0


@register("loss_reconstruction")
def _(rng):
    x_t, y_r, a, b, c = (Tensor(rng.standard_normal((3, 3, 3))) for _ in range(5))
    return (lambda x: reconstruction_loss(x_t, x, a, y_r, b, c)), x_t.data + _away(rng, (3, 3, 3))


@register("loss_adv_discriminator")
def _(rng):
    fake = [Tensor(rng.standard_normal((1, 2, 2)))]
    return (lambda x: adversarial_loss_discriminator([x, x * 0.5], fake)), rng.standard_normal((1, 3, 3))


@register("loss_adv_generator")
def _(rng):
    return (lambda x: adversarial_loss_generator([x, T.avg_pool(x, 2)])), rng.standard_normal((1, 4, 4))


@register("loss_overall")
def _(rng):
    b = Tensor(rng.standard_normal((2, 3)))
    weights = LossWeights(1.0, 0.5, 2.0, 1.0)

    def f(x):
        terms = {"sem": l1(x, b), "makeup": T.mean(T.square(x)), "rec": T.mean(x * b), "adv": T.mean(T.exp(x))}
        return overall_loss(terms, weights)[0]

    return f, b.data + _away(rng, (2, 3))


def _module_case(build, shape, wrt_mod=False):
    def case(rng):
        mod = build(np.random.default_rng(int(rng.integers(1 << 31))))
        _double(mod)
        if wrt_mod:
            x = Tensor(rng.standard_normal(shape[0]))
            w = _probe(rng, tuple(mod(x, Tensor(np.zeros(shape[1]))).shape))
            return (lambda m: T.tsum(mod(x, m) * w)), rng.standard_normal(shape[1])
        x0 = rng.standard_normal(shape)
        out = mod(Tensor(x0))
        out = out if isinstance(out, Tensor) else out[0]
        w = _probe(rng, out.shape)

        def f(x):
            y = mod(x)
            return T.tsum((y if isinstance(y, Tensor) else y[0]) * w)

        return f, x0

    return case


register("layer_conv_block")(_module_case(lambda r: ConvBlock(2, 3, 3, 1, 2, r), (2, 4, 4)))
register("layer_spade")(_module_case(lambda r: _scaled(Spade(2, 3, 2, r)), ((2, 2, 2), (3, 2, 2)), wrt_mod=True))
register("layer_spade_resblock")(_module_case(lambda r: _scaled(SpadeResBlock(3, 2, 2, 2, r)), ((3, 2, 2), (2, 2, 2)), wrt_mod=True))


def _scaled(mod, std: float = 0.5):
    """Larger weights than the training init so gradients are not vanishingly small."""
    rng = np.random.default_rng(0)
    for p in mod.parameters():
        p.data = rng.normal(0.0, std, p.shape).astype(np.float32)
    return mod


register("layer_conv_head")(_module_case(lambda r: _scaled(Conv(2, 3, 3, 1, 1, r)), (2, 3, 3)))


@register("layer_discriminator")
def _(rng):
    # 32x32 keeps every block above 1x1 (instance norm of one pixel is 0);
    # the input moves in a random 8-dim subspace to keep the check cheap
    d = Discriminator(NetWidths(base=2, semantic=2, n_classes=2, disc_scales=2), np.random.default_rng(int(rng.integers(1 << 31))))
    _scaled(d)
    _double(d)
    base = Tensor(rng.standard_normal((3 * 32 * 32, 1)) * 0.5)
    basis = Tensor(rng.standard_normal((3 * 32 * 32, 8)) * 0.05)

    def f(z):
        x = T.reshape(base + T.matmul(basis, T.reshape(z, (8, 1))), (3, 32, 32))
        return adversarial_loss_generator(d(x))

    return f, rng.standard_normal(8)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""
    seconds: float = 0.0


def run_gradchecks(seeds=range(5), names=None, tol: float = GRAD_TOL, h: float = GRAD_STEP) -> list[CheckResult]:
    """Worst relative error over ``seeds`` for each registered case."""
    results = []
    for name in names or GRAD_CASES:
        t0 = time.perf_counter()
        worst = 0.0
        for seed in seeds:
            f, x0 = GRAD_CASES[name](np.random.default_rng([seed, len(name)]))
            worst = max(worst, grad_check(f, x0, h))
        results.append(CheckResult(name, worst < tol, worst, f"max rel err {worst:.2e}", time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max((len(r.name) for r in results), default=4)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)


# -- invariant checks ----------------------------------------------------------


def check_sscft_invariants(n: int = 100, seed: int = 0) -> list[CheckResult]:
    """Correlation range, row sums, transpose symmetry, simplex and convexity on random instances."""
    from .correspondence import warp_weights
    from .datagen.faces import one_hot

    rng = np.random.default_rng(seed)
    worst = {"range": 0.0, "rowsum": 0.0, "symmetry": 0.0, "simplex": 0.0, "convexity": 0.0}
    for _ in range(n):
        d, h = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        x = Tensor(rng.standard_normal((d, h, h)).astype(np.float32))
        y = Tensor(rng.standard_normal((d, h, h)).astype(np.float32))
        a = correlation(x, y)
        worst["range"] = max(worst["range"], float(np.abs(a.values.data).max()) - 1.0)
        for direction in ("ref_to_target", "target_to_ref"):
            w = warp_weights(a, direction).data.astype(np.float64)
            worst["rowsum"] = max(worst["rowsum"], float(np.abs(w.sum(axis=1) - 1.0).max()))
        swapped = correlation(y, x)
        worst["symmetry"] = max(worst["symmetry"], float(np.abs(swapped.values.data - a.values.data.T).max()))
        labels = rng.integers(0, 4, (h, h))
        s = Tensor(one_hot(labels, 4))
        ws = soft_warp(a, s, "ref_to_target").data.astype(np.float64)
        worst["simplex"] = max(worst["simplex"], float(np.abs(ws.sum(axis=0) - 1.0).max()), float(-ws.min()))
        v = Tensor(rng.standard_normal((3, h, h)).astype(np.float32))
        wv = soft_warp(a, v, "ref_to_target").data
        lo, hi = v.data.reshape(3, -1).min(axis=1), v.data.reshape(3, -1).max(axis=1)
        over = max(float((wv.reshape(3, -1) - hi[:, None]).max()), float((lo[:, None] - wv.reshape(3, -1)).max()))
        worst["convexity"] = max(worst["convexity"], over)
    limits = {"range": 1e-6, "rowsum": 1e-6, "symmetry": 1e-5, "simplex": 1e-6, "convexity": 1e-6}
    return [
        CheckResult(f"sscft_{k}", worst[k] <= limits[k], worst[k], f"worst {worst[k]:.2e} (limit {limits[k]:g}, {n} instances)")
        for k in worst
    ]


def _small_model_and_faces(seed: int = 0):
    from .datagen.faces import generate_face
    from .network import SSATModel

    model = SSATModel(NetWidths.desk(), seed=seed)
    t = generate_face(seed, domain="non_makeup")
    r1 = generate_face(seed + 1, domain="makeup")
    r2 = generate_face(seed + 2, domain="makeup")
    return model, t, r1, r2


def check_exactness(seed: int = 0) -> list[CheckResult]:
    """Endpoint identities that must hold bit for bit."""
    from .datagen.warp import piecewise_affine_warp
    from .network import InterpolationWeights, PartialMaskSet
    from .tensor import no_grad

    model, t, r1, r2 = _small_model_and_faces(seed)
    out = []
    with no_grad():
        plain = model.forward_transfer(t.rgb, t.parsing, r1.rgb, r1.parsing).y_hat_t.data
        interp = model.interpolate_styles(t.rgb, t.parsing, (r1.rgb, r1.parsing), (r2.rgb, r2.parsing), InterpolationWeights(1.0, 0.0)).data
        out.append(CheckResult("interpolation_alpha1", np.array_equal(interp, plain), float(np.abs(interp - plain).max()), "alpha1=1 vs plain transfer"))
        small = model.encode(t.rgb, t.parsing).parsing_small.data
        masks = PartialMaskSet.from_parsing(small, complete=True)
        part = model.partial_transfer(t.rgb, t.parsing, [(r1.rgb, r1.parsing)], {k: 0 for k in masks.masks}, masks).data
        out.append(CheckResult("partial_full_masks", np.array_equal(part, plain), float(np.abs(part - plain).max()), "tiling masks, one reference"))
    ident = piecewise_affine_warp(t.rgb, t.landmarks, t.landmarks)
    out.append(CheckResult("identity_warp", np.array_equal(ident, t.rgb), float(np.abs(ident - t.rgb).max()), "warp onto own landmarks"))
    return out


def marker_alignment_error(src, dst) -> float:
    """Largest distance between where source landmarks land after warping and the destination landmarks.

    Each source pixel is painted with a unique colour, its own ``(x, y)``
    position. After warping, an output pixel's colour names the source point it
    came from, so each landmark is located by inverting the warped colour field
    around the pixel whose colour is nearest to that landmark.
    """
    from .datagen.faces import N_FACE_POINTS
    from .datagen.warp import piecewise_affine_warp

    h, w = src.size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = piecewise_affine_warp(np.stack([xs, ys]), src.landmarks, dst.landmarks)
    gy_x, gx_x = np.gradient(warped[0])
    gy_y, gx_y = np.gradient(warped[1])
    worst = 0.0
    for k in range(N_FACE_POINTS):
        sx, sy = src.landmarks[k]
        d2 = (warped[0] - sx) ** 2 + (warped[1] - sy) ** 2
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        jac = np.array([[gx_x[i, j], gy_x[i, j]], [gx_y[i, j], gy_y[i, j]]])
        step = np.linalg.solve(jac, [sx - warped[0, i, j], sy - warped[1, i, j]])
        qx, qy = j + step[0], i + step[1]
        worst = max(worst, float(np.hypot(qx - dst.landmarks[k, 0], qy - dst.landmarks[k, 1])))
    return worst


def quantile_error_levels(matched: np.ndarray, reference: np.ndarray) -> int:
    """Largest per-rank gap, in 8-bit levels, between sorted outputs and reference quantiles.

    The expected value at 0-based rank ``k`` of ``n`` is the reference value
    at empirical quantile ``(k + 1) / n``.
    """
    from .datagen.histogram import to_levels

    out = np.sort(to_levels(matched))
    ref = np.sort(to_levels(reference))
    n, m = out.size, ref.size
    k = np.arange(n)
    expected = ref[np.ceil((k + 1) * m / n - 1e-9).astype(np.int64) - 1]
    return int(np.abs(out - expected).max())


def check_pseudo_pairs(n: int = 6, seed: int = 0) -> list[CheckResult]:
    """Landmark alignment, preserved interiors and ear/neck quantiles of generated pairs."""
    from .datagen.faces import EAR_NECK, EYE, MOUTH
    from .datagen.pairs import FaceBank, enumerate_pairs

    bank = FaceBank(n, n, seed)
    specs = enumerate_pairs(n, n, seed)[:: max(1, n)][: 2 * n]
    align, interior, quant = 0.0, 0.0, 0
    for spec in specs:
        p = bank.pair(spec)
        for gt, keep, src in ((p.y_bar_t, p.target, p.reference), (p.x_bar_r, p.reference, p.target)):
            align = max(align, marker_alignment_error(src, keep))
            for cls in (EYE, MOUTH):
                m = keep.region(cls)
                interior = max(interior, float(np.abs(gt[:, m] - keep.rgb[:, m]).max()) if m.any() else 0.0)
            m, rm = keep.region(EAR_NECK), src.region(EAR_NECK)
            if m.any() and rm.any():
                for ch in range(3):
                    quant = max(quant, quantile_error_levels(gt[ch][m], src.rgb[ch][rm]))
    return [
        CheckResult("pair_landmark_alignment", align <= 0.5, align, f"max marker offset {align:.3f} px (limit 0.5)"),
        CheckResult("pair_interiors_preserved", interior == 0.0, interior, "eye/mouth interiors bit-equal"),
        CheckResult("pair_ear_neck_quantiles", quant <= 1, float(quant), f"max gap {quant} levels (limit 1/255)"),
    ]


def check_lr_schedule() -> list[CheckResult]:
    from .trainer import TrainConfig, lr_schedule

    cfg = TrainConfig.paper()
    expected = {0: 2e-4, 150_000: 2e-4, 225_000: 1e-4, 300_000: 0.0}
    err = max(abs(lr_schedule(i, cfg) - v) for i, v in expected.items())
    return [CheckResult("lr_schedule_paper", err <= 1e-12, err, "lr at 0, 150k, 225k, 300k")]


def check_checkpoint_roundtrip(tmp_dir) -> list[CheckResult]:
    from pathlib import Path

    from . import checkpoint
    from .network import SSATModel

    model = SSATModel(NetWidths.desk(), seed=3)
    arrays = {f"G.{k}": p.data for k, p in model.G.named_parameters().items()}
    path = Path(tmp_dir) / "roundtrip.ssat"
    checkpoint.save(path, model.config(), arrays)
    back = checkpoint.load(path)
    same = back.config == model.config() and all(np.array_equal(back.arrays[k], v) and back.arrays[k].dtype == v.dtype for k, v in arrays.items())
    return [CheckResult("checkpoint_bit_exact", same, 0.0 if same else 1.0, f"{len(arrays)} arrays")]


def run_selfchecks(tmp_dir, seed: int = 0) -> list[CheckResult]:
    results = []
    for fn in (
        lambda: check_sscft_invariants(100, seed),
        lambda: check_exactness(seed),
        lambda: check_pseudo_pairs(6, seed),
        check_lr_schedule,
        lambda: check_checkpoint_roundtrip(tmp_dir),
    ):
        t0 = time.perf_counter()
        rs = fn()
        dt = (time.perf_counter() - t0) / max(1, len(rs))
        for r in rs:
            r.seconds = dt
        results.extend(rs)
    return results

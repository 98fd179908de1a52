"""Finite-difference suites, one per module, shared by the CLI and the tests.

Each suite returns a list of ``(case name, worst relative error, coords)``.
"""
from __future__ import annotations

import numpy as np

from .memory import MemoryBank, wmm_loss
from .modulation import BlockInput, Rm3Params, instance_normalize, layer_normalize, rm3_forward
from .objectives import (
    FeaturePyramid,
    LossWeights,
    MultiScaleDiscriminator,
    adversarial_losses,
    component_contextual_loss,
    contextual_similarity,
    huber,
    perceptual_loss,
    total_loss,
)
from .tensor import (
    Tensor,
    avg_pool,
    broadcast_spatial,
    broadcast_to,
    concat,
    conv2d,
    fully_connected,
    l2_norm,
    leaky_relu,
    matmul,
    normalize,
    resize_bilinear,
    resize_nearest,
    softmax,
    split,
)
from .tensor.gradcheck import check_gradients

TOLERANCE = 1e-4
MIN_COORDS = 50


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _weighted(out, rng):
    """Random projection of ``out`` to a scalar, so every output entry matters."""
    w = Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


def _case(name, build, rng, n_coords=MIN_COORDS, floor=1e-8):
    fn, params = build(rng)
    worst, records = check_gradients(fn, params, rng, n_coords=n_coords)
    if floor > 1e-8:
        worst = max((abs(a - n) / max(abs(a), abs(n), floor) for _, _, a, n, _ in records),
                    default=0.0)
    return name, worst, len(records)


def tensor_core_suite(rng):
    cases = []

    def elementwise(r):
        a = _param(r, 3, 4)
        b = Tensor(r.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        w = Tensor(r.normal(size=(3, 4)))

        def fn():
            y = (a * b + a / b - b.sqrt() + (a * 0.3).exp() + b.log() + a.tanh() + a.sigmoid()
                 + (a ** 2) * 0.1)
            return (y * w).sum() + a.max(axis=1).sum() + b.min()
        return fn, [a, b]

    def conv(r):
        x = _param(r, 2, 3, 7, 6)
        k = _param(r, 4, 3, 3, 3)
        bias = _param(r, 4)
        k2 = _param(r, 2, 4, 5, 5)
        w = Tensor(r.normal(size=(2, 2, 3, 2)))
        return (lambda: (conv2d(conv2d(x, k, bias, 1, 1), k2, None, 2, 1) * w).sum()), [x, k, bias, k2]

    def dense(r):
        x = _param(r, 5, 6)
        wt = _param(r, 4, 6)
        b = _param(r, 4)
        m = _param(r, 4, 3)
        w = Tensor(r.normal(size=(5, 3)))
        return (lambda: (softmax(matmul(leaky_relu(fully_connected(x, wt, b)), m), axis=1) * w).sum()), \
            [x, wt, b, m]

    def shape_ops(r):
        x = _param(r, 2, 4, 4, 4)
        v = _param(r, 2, 4)
        w1 = Tensor(r.normal(size=(2, 4, 6, 5)))
        w2 = Tensor(r.normal(size=(2, 2, 8, 8)))
        w3 = Tensor(r.normal(size=(2, 8, 2, 2)))

        def fn():
            a, b = split(x, 2, axis=1)
            up = resize_nearest(concat([a, b], axis=1), 2)
            s = (resize_bilinear(x, (6, 5)) * w1).sum()
            s = s + (split(up, 2, axis=1)[0] * w2).sum()
            s = s + (concat([avg_pool(x, 2), broadcast_spatial(v, 2, 2)], axis=1) * w3).sum()
            s = s + (x.transpose(0, 2, 3, 1).reshape(2, -1)[:, ::3] * 0.5).sum()
            return s + l2_norm(x.reshape(2, -1), axis=1).sum() + (normalize(v, axis=1) * v).sum()
        return fn, [x, v]

    def broadcast(r):
        x = _param(r, 3, 1, 1)
        w = Tensor(r.normal(size=(3, 4, 5)))
        return (lambda: (broadcast_to(x, (3, 4, 5)) * w).sum()), [x]

    for name, build in (("elementwise", elementwise), ("conv2d", conv), ("dense", dense),
                        ("shape_ops", shape_ops), ("broadcast", broadcast)):
        cases.append(_case(name, build, rng))
    return cases


def memory_suite(rng):
    def build(r):
        bank = MemoryBank(8, 6, 5)
        for i in range(8):
            k = r.normal(size=6)
            bank.keys[i] = k / np.linalg.norm(k)
            bank.values[i] = r.normal(size=5) * (0.1 if i % 2 else 3.0)
            bank.occupied[i] = True
        z = np.zeros(5)
        q = _param(r, 6)
        return (lambda: wmm_loss(bank, normalize(q, axis=0), z, margin=1.5).loss), [q]
    return [_case("wmm_loss", build, rng)]


def modulation_suite(rng):
    def norms(r):
        h = _param(r, 2, 3, 4, 5)
        w = Tensor(r.normal(size=(2, 3, 4, 5)))
        return (lambda: (instance_normalize(h)[0] * w).sum() + (layer_normalize(h)[0] * w * 0.7).sum()), [h]

    def block(r):
        p = Rm3Params(4, 3, 5, 6, r)
        h = _param(r, 2, 4, 6, 6)
        zs = _param(r, 2, 3, 3, 3)
        zn = _param(r, 2, 5)
        zw = _param(r, 2, 6)
        w = Tensor(r.normal(size=(2, 4, 6, 6)))
        return (lambda: (rm3_forward(BlockInput(h, zs, zn, zw), p) * w).sum()), \
            [h, zs, zn, zw] + p.parameters()

    return [_case("normalization", norms, rng), _case("rm3_block", block, rng, n_coords=100)]


def objectives_suite(rng):
    def rec(r):
        pred = _param(r, 2, 3, 5, 5, scale=0.2)
        target = r.normal(0, 0.2, (2, 3, 5, 5))
        return (lambda: huber(pred, target, 0.1)), [pred]

    def adversarial(r):
        d = MultiScaleDiscriminator(r, (1, 2, 4, 8), width=4)
        real = r.uniform(-1, 1, (2, 3, 16, 16))
        fake = _param(r, 2, 3, 16, 16, scale=0.5)

        def fn():
            ld, lg = adversarial_losses(d, Tensor(real), fake)
            return ld + lg
        return fn, [fake] + d.parameters()

    def perceptual(r):
        net = FeaturePyramid(seed=0)
        pred = _param(r, 2, 3, 16, 16, scale=0.5)
        target = r.normal(0, 0.5, (2, 3, 16, 16))
        return (lambda: perceptual_loss(net, pred, target)), [pred]

    def contextual(r):
        a = _param(r, 6, 5)
        b = r.normal(size=(7, 5))
        return (lambda: contextual_similarity(a, b, 0.5).log() * -1.0), [a]

    def component(r):
        net = FeaturePyramid(seed=0)
        pred = _param(r, 3, 20, 20, scale=0.5)
        target = r.normal(0, 0.5, (3, 20, 20))
        boxes = {"left_eye": (2, 2, 9, 10), "right_eye": (2, 10, 9, 18), "mouth": (12, 4, 19, 16)}
        return (lambda: component_contextual_loss(pred, target, boxes, net)), [pred]

    return [_case("huber", rec, rng), _case("adversarial", adversarial, rng, n_coords=80),
            _case("perceptual", perceptual, rng), _case("contextual", contextual, rng),
            _case("component_contextual", component, rng)]


def end_to_end_case(rng, resolution=16, blocks=2, n_coords=None):
    """Generator + every loss term on a small configuration; all generator parameters."""
    from .pipeline.networks import Generator, GeneratorConfig

    cfg = GeneratorConfig(resolution=resolution, rm3_block_count=blocks, wavelet_levels=2,
                          widths=(4, 6), mapping_width=8, mapping_layers=4, noise_embed_dim=5,
                          noise_dim=8)
    gen = Generator(cfg, rng)
    disc = MultiScaleDiscriminator(rng, (1, 2, 4, 8), width=4)
    feat = FeaturePyramid(seed=0)
    lq = rng.uniform(-0.8, 0.8, (1, 3, resolution // 4, resolution // 4))
    target = rng.uniform(-0.9, 0.9, (1, 3, resolution, resolution))
    noise = rng.normal(size=(1, cfg.noise_dim))
    z_w = rng.normal(0, 0.1, (1, cfg.wavelet_dim))
    h = resolution
    boxes = [{"left_eye": (1, 1, h // 2, h // 2), "right_eye": (1, h // 2, h // 2, h - 1),
              "mouth": (h // 2, 2, h - 1, h - 2)}]
    weights = LossWeights()
    base = gen(lq, noise, z_w)[1].data.copy()

    def fn():
        restored, x_mr = gen(lq, noise, z_w, base=base)
        _, adv = adversarial_losses(disc, None, restored, weights.adv_scale_weights)
        parts = {"adv": adv, "rec_prime": huber(x_mr, target), "rec": huber(restored, target),
                 "vgg": perceptual_loss(feat, restored, target),
                 "cCX": component_contextual_loss(restored, target, boxes, feat)}
        return total_loss(parts, weights)

    params = gen.parameters()
    n = n_coords or max(MIN_COORDS, 2 * len(params))
    worst, records = check_gradients(fn, params, rng, n_coords=n)
    return "end_to_end", worst, len(records)


def pipeline_suite(rng):
    return [end_to_end_case(rng)]


SUITES = {
    "tensor_core": tensor_core_suite,
    "memory": memory_suite,
    "modulation": modulation_suite,
    "objectives": objectives_suite,
    "pipeline": pipeline_suite,
}


def run_all(seed=0, modules=None):
    """Dict module -> list of case results, each suite on its own seeded stream."""
    out = {}
    for i, (name, suite) in enumerate(SUITES.items()):
        if modules and name not in modules:
            continue
        out[name] = suite(np.random.default_rng([seed, i]))
    return out

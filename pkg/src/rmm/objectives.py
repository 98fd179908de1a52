"""Training objectives: Huber reconstruction, multi-scale adversarial, feature-pyramid
perceptual loss, component contextual loss and their weighted total.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import (
    Conv2d,
    Module,
    Tensor,
    as_tensor,
    avg_pool,
    broadcast_to,
    clamp,
    l2_norm,
    leaky_relu,
    matmul,
    normalize,
    resize_bilinear,
)
from .tensor.core import _make

PROB_CLAMP = 1e-7
COMPONENTS = ("left_eye", "right_eye", "mouth")


@dataclass
class LossWeights:
    lambda_rec: float = 100.0
    lambda_rec_prime: float = 100.0
    lambda_cCX: float = 1.0
    adv_scale_weights: tuple = (4.0, 2.0, 1.0, 1.0)
    adv_scales: tuple = (1, 2, 4, 8)
    vgg_layer_weights: tuple = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
    huber_delta: float = 0.1
    cx_bandwidth: float = 0.5
    cx_stages: tuple = (2, 3)

    def __post_init__(self):
        scalars = [self.lambda_rec, self.lambda_rec_prime, self.lambda_cCX, self.huber_delta]
        if min(scalars + list(self.adv_scale_weights) + list(self.vgg_layer_weights)) < 0:
            raise ContractError("loss weights must be non-negative")


# -- reconstruction ------------------------------------------------------------------
def huber(pred, target, delta=0.1):
    """Mean of 0.5*d^2 for |d| <= delta, else delta*(|d| - delta/2)."""
    pred = as_tensor(pred)
    t = getattr(target, "data", target)
    d = pred.data - t
    ad = np.abs(d)
    quad = ad <= delta
    per = np.where(quad, 0.5 * d * d, delta * (ad - 0.5 * delta))
    n = d.size
    dpred = np.where(quad, d, delta * np.sign(d)) / n
    parents = (pred,) + ((target,) if isinstance(target, Tensor) else ())
    return _make(np.asarray(per.mean()), parents,
                 lambda g: (g * dpred, -g * dpred)[:len(parents)], "huber")


# -- adversarial ------------------------------------------------------------------------
class PatchDiscriminator(Module):
    """Three strided 3x3 convs -> per-patch logits."""

    def __init__(self, rng, in_ch=3, width=8):
        self.c1 = Conv2d(in_ch, width, 3, rng, stride=2)
        self.c2 = Conv2d(width, 2 * width, 3, rng, stride=2)
        self.c3 = Conv2d(2 * width, 1, 3, rng, stride=1)

    def __call__(self, x):
        return self.c3(leaky_relu(self.c2(leaky_relu(self.c1(x)))))


class MultiScaleDiscriminator(Module):
    def __init__(self, rng, scales=(1, 2, 4, 8), width=8):
        self.scales = tuple(scales)
        self.nets = [PatchDiscriminator(rng, width=width) for _ in self.scales]

    def __call__(self, x):
        """Sigmoid probabilities from each scale's discriminator."""
        return [net(avg_pool(x, s)).sigmoid() for net, s in zip(self.nets, self.scales)]


def _log_clamped(p):
    return clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP).log()


def adversarial_losses(discriminators, x_real, x_fake, weights=(4.0, 2.0, 1.0, 1.0)):
    """Per-scale log losses, weighted and summed in scale order.

    Returns ``(loss_D, loss_G)`` where ``loss_D = sum_i w_i (E log D_i(real)
    + E log(1 - D_i(fake)))`` is the value the discriminator ascends and
    ``loss_G = sum_i w_i E[-log D_i(fake)]`` is the non-saturating generator
    loss. ``discriminators`` is a callable returning one probability map per
    scale, or precomputed ``(probs_real, probs_fake)`` lists.
    """
    if callable(discriminators):
        p_real = discriminators(x_real) if x_real is not None else None
        p_fake = discriminators(x_fake)
    else:
        p_real, p_fake = discriminators
    loss_d = loss_g = None
    for i, pf in enumerate(p_fake):
        w = float(weights[i])
        log_fake = _log_clamped(1.0 - pf).mean()
        term_g = (-_log_clamped(pf).mean()) * w
        loss_g = term_g if loss_g is None else loss_g + term_g
        if p_real is not None:
            term_d = (_log_clamped(p_real[i]).mean() + log_fake) * w
            loss_d = term_d if loss_d is None else loss_d + term_d
    return loss_d, loss_g


# -- perceptual -------------------------------------------------------------------------
class FeaturePyramid(Module):
    """Frozen random 5-stage strided conv pyramid standing in for a pretrained extractor."""

    def __init__(self, seed=0, widths=(8, 16, 32, 32, 32), in_ch=3):
        rng = np.random.default_rng(seed)
        chans = (in_ch,) + tuple(widths)
        self.stages = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2) for i in range(len(widths))]
        for p in self.parameters():
            p.requires_grad = False

    def __call__(self, x, upto=None):
        feats = []
        for i, conv in enumerate(self.stages):
            x = leaky_relu(conv(x))
            feats.append(x)
            if upto is not None and i >= upto:
                break
        return feats


def _per_sample_norm(diff):
    if diff.ndim == 4:
        n = diff.shape[0]
        return l2_norm(diff.reshape(n, -1), axis=1).mean()
    return l2_norm(diff)


def perceptual_loss(feature_net, pred, target, layer_weights=(1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)):
    """sum_i w_i ||F_i(pred) - F_i(target)||_2 (per-sample norm, batch-averaged)."""
    fp = feature_net(pred)
    ft = feature_net(as_tensor(target).detach())
    total = Tensor(0.0)
    for w, a, b in zip(layer_weights, fp, ft):
        if w == 0:
            continue
        total = total + _per_sample_norm(a - b.detach()) * float(w)
    return total


# -- contextual ------------------------------------------------------------------------
def contextual_similarity(feat_a, feat_b, bandwidth=0.5):
    """Contextual similarity of two vector sets, shapes (n_a, d) and (n_b, d).

    Cosine distances are normalized by each a-vector's nearest distance,
    exponentiated, normalized over b for every a, then
    ``CX = mean_j max_i CX_ij``.
    """
    a = normalize(as_tensor(feat_a), axis=1)
    b = normalize(as_tensor(feat_b), axis=1)
    d = 1.0 - matmul(a, b.T)
    d_rel = d / broadcast_to(d.min(axis=1, keepdims=True) + 1e-5, d.shape)
    w = ((1.0 - d_rel) * (1.0 / bandwidth)).exp()
    cx = w / broadcast_to(w.sum(axis=1, keepdims=True), w.shape)
    return cx.max(axis=0).mean()


def _feature_set(fmap):
    c = fmap.shape[0]
    return fmap.reshape(c, -1).T


def crop(x, box, size=32):
    """Differentiable crop of (C,H,W) to ``box = (top, left, bottom, right)``, resized to size^2."""
    top, left, bottom, right = (int(v) for v in box)
    if bottom <= top or right <= left:
        raise ContractError(f"empty crop box {box}")
    patch = x[:, top:bottom, left:right]
    return resize_bilinear(patch, (size, size))


def component_contextual_loss(pred, target, crop_boxes, feature_net, stages=(2, 3),
                              bandwidth=0.5, crop_size=32):
    """Mean of -log CX over components x feature stages (x batch).

    ``crop_boxes`` holds one mapping ``component -> box`` per image (a single
    mapping is accepted for unbatched input).
    """
    pred = as_tensor(pred)
    target = as_tensor(target).detach()
    if pred.ndim == 3:
        pred, target = pred.reshape((1,) + pred.shape), target.reshape((1,) + target.shape)
        crop_boxes = [crop_boxes]
    terms = []
    for i, boxes in enumerate(crop_boxes or []):
        for comp in COMPONENTS:
            if not boxes or comp not in boxes:
                continue
            fp = feature_net(crop(pred[i], boxes[comp], crop_size), upto=max(stages))
            ft = feature_net(crop(target[i], boxes[comp], crop_size), upto=max(stages))
            for s in stages:
                cx = contextual_similarity(_feature_set(fp[s]), _feature_set(ft[s].detach()), bandwidth)
                terms.append(-(cx.log()))
    if not terms:
        warnings.warn("component contextual loss: no crop boxes, returning 0", stacklevel=2)
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# -- total ------------------------------------------------------------------------------------
PART_KEYS = ("adv", "rec_prime", "rec", "vgg", "cCX")


def total_loss(parts, weights: LossWeights = None):
    """adv + l'_rec * rec' + l_rec * rec + vgg + l_cCX * cCX."""
    weights = weights or LossWeights()
    missing = [k for k in PART_KEYS if k not in parts]
    if missing:
        raise ContractError(f"missing loss parts: {missing}")
    coef = {"adv": 1.0, "rec_prime": weights.lambda_rec_prime, "rec": weights.lambda_rec,
            "vgg": 1.0, "cCX": weights.lambda_cCX}
    total = 0.0
    for k in PART_KEYS:
        total = total + parts[k] * coef[k]
    return total

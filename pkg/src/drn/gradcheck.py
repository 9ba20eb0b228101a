"""Autodiff-versus-central-difference checks for every op and loss, in float64."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import losses as L
from .model import drn_forward, init_model
from .tensor import (
    Tensor, abs_, add, conv2d, diff_x, diff_y, grad_check, mul, pixel_shuffle, relu, scale,
    separable_resample, sub, sum_,
)
from .imaging import resample_matrix

THRESHOLD = 1e-4


def _rand(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape))


def _weighted(rng, shape) -> Callable[[Tensor], Tensor]:
    # random linear read-out so non-scalar ops have a generic scalar objective
    w = Tensor(rng.standard_normal(shape))
    return lambda t: sum_(mul(t, w))


def checks(seed: int = 0) -> dict[str, Callable[[float], float]]:
    """Named checks; each takes the step h and returns the max relative error."""
    rng = np.random.default_rng(seed)
    c = {}

    x = _rand(rng, 2, 3, 7, 6)
    w = _rand(rng, 4, 3, 3, 3)
    b = _rand(rng, 4)
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        probe = _weighted(rng, conv2d(x, w, b, stride, pad).shape)
        tag = f"s{stride}p{pad}"
        c[f"conv2d.input.{tag}"] = lambda h, p=probe, s=stride, q=pad: grad_check(lambda t: p(conv2d(t, w, b, s, q)), x, h)
        c[f"conv2d.weight.{tag}"] = lambda h, p=probe, s=stride, q=pad: grad_check(lambda t: p(conv2d(x, t, b, s, q)), w, h)
        c[f"conv2d.bias.{tag}"] = lambda h, p=probe, s=stride, q=pad: grad_check(lambda t: p(conv2d(x, w, t, s, q)), b, h)

    xs = _rand(rng, 1, 8, 3, 2)
    probe = _weighted(rng, (1, 2, 6, 4))
    c["pixel_shuffle"] = lambda h, probe=probe: grad_check(lambda t: probe(pixel_shuffle(t, 2)), xs, h)

    a, bb = _rand(rng, 1, 2, 4, 5), _rand(rng, 1, 2, 4, 5)
    probe = _weighted(rng, a.shape)
    c["add"] = lambda h, probe=probe: grad_check(lambda t: probe(add(t, bb)), a, h)
    c["sub"] = lambda h, probe=probe: grad_check(lambda t: probe(sub(bb, t)), a, h)
    c["mul"] = lambda h, probe=probe: grad_check(lambda t: probe(mul(t, bb)), a, h)
    c["scale"] = lambda h, probe=probe: grad_check(lambda t: probe(scale(t, -2.5)), a, h)
    c["relu"] = lambda h, probe=probe: grad_check(lambda t: probe(relu(t)), a, h)
    c["abs"] = lambda h, probe=probe: grad_check(lambda t: probe(abs_(t)), a, h)
    c["diff_x"] = lambda h, probe=probe: grad_check(lambda t: probe(diff_x(t)), a, h)
    c["diff_y"] = lambda h, probe=probe: grad_check(lambda t: probe(diff_y(t)), a, h)
    up_r, up_c = resample_matrix(4, 8, 2.0), resample_matrix(5, 10, 2.0)
    probe_up = _weighted(rng, (1, 2, 8, 10))
    c["resample"] = lambda h: grad_check(lambda t: probe_up(separable_resample(t, up_r, up_c)), a, h)

    ref = _rand(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    pred = _rand(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    c["mse"] = lambda h: grad_check(lambda t: L.loss_mse(ref, t), pred, h)
    c["mae"] = lambda h: grad_check(lambda t: L.loss_mae(ref, t), pred, h)
    c["loss_g"] = lambda h: grad_check(lambda t: L.loss_gradient(ref, t), pred, h)
    c["loss_gp"] = lambda h: grad_check(lambda t: L.loss_gp(ref, t, 2.0), pred, h)
    c["loss_gs"] = lambda h: grad_check(lambda t: L.loss_gs(ref, t, 2.0), pred, h)

    lr_img = _rand(rng, 1, 3, 4, 4, lo=0.0, hi=1.0)
    hr_img = _rand(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    px = _rand(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    dpx = _rand(rng, 1, 3, 4, 4, lo=0.0, hi=1.0)
    c["loss_dual.primal"] = lambda h: grad_check(lambda t: L.loss_dual(lr_img, hr_img, t, dpx), px, h)
    c["loss_dual.dual"] = lambda h: grad_check(lambda t: L.loss_dual(lr_img, hr_img, px, t), dpx, h)

    for r in (2, 4):
        model = init_model(r, width=4, n_res=1, seed=seed, dtype=np.float64)
        xin = _rand(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
        ys = [_rand(rng, 1, 3, 8 << l, 8 << l, lo=0.0, hi=1.0) for l in range(1, r.bit_length())]

        # masks are constants of the objective: freeze them at the base point
        base = drn_forward(model, xin)
        masks = L.level_masks(ys, base.inputs)

        def objective(_t, model=model, xin=xin, ys=ys, masks=masks):
            out = drn_forward(model, xin)
            return L.loss_total(out.preds, out.duals, ys, out.inputs, masks=masks)

        c[f"loss_total.r{r}.input"] = lambda h, f=objective, xin=xin: grad_check(f, xin, h)
        for name in ("primal1.entry.weight", "primal1.exit.bias", f"primal{r.bit_length() - 1}.res0.conv1.weight",
                     "dual1.conv1.weight", "dual1.conv2.bias"):
            c[f"loss_total.r{r}.{name}"] = lambda h, f=objective, p=model.params[name]: grad_check(f, p, h)
    return c


def run_all(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    return {name: fn(h) for name, fn in checks(seed).items()}

"""Reconstruction losses as differentiable scalar tensors.

All losses are sums over (C, H, W) and means over the batch axis, so a
single-image batch gives exactly the per-image formula. Gradient masks are
computed from the reference image and never differentiated.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .imaging import mask_array
from .tensor import Tensor, abs_, add, diff_x, diff_y, mul, scale, sub, sum_


class Kind(str, Enum):
    MSE = "mse"
    MAE = "mae"
    G = "g"
    GP = "gp"
    GS = "gs"


@dataclass(frozen=True)
class LossKind:
    kind: Kind = Kind.GS
    lam: float = 2.0
    pixel: Kind = Kind.MAE  # pixel term inside GP / GS

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "pixel", Kind(self.pixel))
        if self.lam < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lam}")
        if self.pixel not in (Kind.MSE, Kind.MAE):
            raise ContractError("pixel term must be mse or mae")

    def __call__(self, ref: Tensor, pred: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return loss_by_kind(self, ref, pred, mask)


def _check(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _batch_mean(total: Tensor, ref: Tensor) -> Tensor:
    n = ref.shape[0] if ref.data.ndim == 4 else 1
    return total if n == 1 else scale(total, 1.0 / n)


def _const(arr: np.ndarray, like: Tensor) -> Tensor:
    return Tensor(np.asarray(arr, dtype=like.dtype))


def loss_mse(ref: Tensor, pred: Tensor) -> Tensor:
    _check(ref, pred, "loss_mse")
    d = sub(ref, pred)
    return _batch_mean(sum_(mul(d, d)), ref)


def loss_mae(ref: Tensor, pred: Tensor) -> Tensor:
    _check(ref, pred, "loss_mae")
    return _batch_mean(sum_(abs_(sub(ref, pred))), ref)


def loss_gradient(ref: Tensor, pred: Tensor) -> Tensor:
    _check(ref, pred, "loss_gradient")
    ex = abs_(sub(diff_x(ref), diff_x(pred)))
    ey = abs_(sub(diff_y(ref), diff_y(pred)))
    return _batch_mean(add(sum_(ex), sum_(ey)), ref)


def _pixel(kind: Kind):
    return loss_mse if kind is Kind.MSE else loss_mae


def loss_gp(ref: Tensor, pred: Tensor, lam: float = 2.0, pixel: Kind = Kind.MAE) -> Tensor:
    _check(ref, pred, "loss_gp")
    return add(loss_gradient(ref, pred), scale(_pixel(Kind(pixel))(ref, pred), lam))


def loss_gs(ref: Tensor, pred: Tensor, lam: float = 2.0, pixel: Kind = Kind.MAE,
            mask: np.ndarray | None = None) -> Tensor:
    """Gradient loss on the masked part plus ``lam`` times pixel loss on the rest.

    ``mask`` defaults to the normalised gradient magnitude of ``ref``.
    """
    _check(ref, pred, "loss_gs")
    if mask is None:
        mask = mask_array(ref.data)
    m = _const(mask, ref)
    inv = _const(1.0 - np.asarray(mask), ref)
    high = loss_gradient(mul(m, ref), mul(m, pred))
    low = _pixel(Kind(pixel))(mul(inv, ref), mul(inv, pred))
    return add(high, scale(low, lam))


def loss_by_kind(lk: LossKind, ref: Tensor, pred: Tensor, mask: np.ndarray | None = None) -> Tensor:
    k = lk.kind
    if k is Kind.MSE:
        return loss_mse(ref, pred)
    if k is Kind.MAE:
        return loss_mae(ref, pred)
    if k is Kind.G:
        return loss_gradient(ref, pred)
    if k is Kind.GP:
        return loss_gp(ref, pred, lk.lam, lk.pixel)
    return loss_gs(ref, pred, lk.lam, lk.pixel, mask)


def loss_dual(x: Tensor, y: Tensor, px: Tensor, dpx: Tensor,
              l1: LossKind = LossKind(), l2: LossKind = LossKind()) -> Tensor:
    """Primal term l1(P(x), y) plus dual term l2(D(P(x)), x)."""
    _check(y, px, "loss_dual (primal)")
    _check(x, dpx, "loss_dual (dual)")
    return add(l1(y, px), l2(x, dpx))


def loss_total(preds: Sequence[Tensor], duals: Sequence[Tensor | None],
               targets: Sequence[Tensor], inputs: Sequence[Tensor],
               l1: LossKind = LossKind(), l2: LossKind = LossKind(),
               use_dual: bool = True, progressive: bool = True,
               masks: Sequence[tuple[np.ndarray, np.ndarray]] | None = None) -> Tensor:
    """Multi-scale objective summed over levels 1..L.

    ``preds[l]`` is the level-(l+1) prediction, ``duals[l]`` its dual
    reconstruction, ``targets[l]`` the ground truth at that scale and
    ``inputs[l]`` the block input it should reconstruct. For GS terms the
    dual mask comes from the block input's values (no gradient through it).

    ``progressive=False`` keeps only the final level's primal term;
    ``use_dual=False`` drops every dual term. ``masks`` optionally fixes the
    (primal, dual) GS masks per level, e.g. from :func:`level_masks`.
    """
    n = len(preds)
    if n == 0 or not (len(duals) == len(targets) == len(inputs) == n):
        raise ContractError(
            f"loss_total: level mismatch (preds={len(preds)}, duals={len(duals)}, "
            f"targets={len(targets)}, inputs={len(inputs)})")
    total: Tensor | None = None
    for level in range(n):
        terms = []
        if progressive or level == n - 1:
            _check(targets[level], preds[level], f"loss_total level {level + 1} (primal)")
            terms.append(l1(targets[level], preds[level], masks[level][0] if masks else None))
        if use_dual:
            dual = duals[level]
            if dual is None:
                raise ContractError(f"loss_total: level {level + 1} has no dual output")
            _check(inputs[level], dual, f"loss_total level {level + 1} (dual)")
            terms.append(l2(inputs[level], dual, masks[level][1] if masks else None))
        for t in terms:
            total = t if total is None else add(total, t)
    return total


def level_masks(targets: Sequence[Tensor], inputs: Sequence[Tensor]) -> list[tuple[np.ndarray, np.ndarray]]:
    """GS masks of every level's primal target and dual target, as constants."""
    return [(mask_array(t.data), mask_array(i.data)) for t, i in zip(targets, inputs)]

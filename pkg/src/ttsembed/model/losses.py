"""Training losses: L1+L2 reconstruction, stop-token BCE, angular softmax.

The joint objective is l1 + l2 + stop_bce + w * l_spk. The speaker loss is
the multiplicative-margin angular softmax with margin m and the usual
annealing between plain cosine logits and the margin-penalized target
logit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DataError, DimensionError
from .network import div


@dataclass
class JointLossBreakdown:
    l1: float
    l2: float
    stop_bce: float
    l_spk: float
    total: float


def loss_tts(pred: Tensor, target: np.ndarray, stop_logits: Tensor,
             positive_weight: float = 5.0):
    """Returns (l1, l2, stop_bce) tensors; stop target is 1 at the last step."""
    if pred.data.shape != target.shape:
        raise DimensionError(
            f"prediction {pred.data.shape} vs target {target.shape}")
    diff = ad.sub(pred, Tensor(target))
    l1 = ad.tmean(ad.absolute(diff))
    l2 = ad.tmean(ad.square(diff))

    steps = stop_logits.data.shape[0]
    y = np.zeros((steps, 1))
    y[-1, 0] = 1.0
    # bce = w_pos*y*softplus(-z) + (1-y)*softplus(z), stable in z
    pos = ad.mul(Tensor(positive_weight * y), ad.softplus(ad.neg(stop_logits)))
    negpart = ad.mul(Tensor(1.0 - y), ad.softplus(stop_logits))
    stop_bce = ad.tmean(ad.add(pos, negpart))
    return l1, l2, stop_bce


def _chebyshev(c: Tensor, m: int) -> Tensor:
    """T_m(c) where c = cos(theta), so T_m(c) = cos(m*theta)."""
    if m == 1:
        return c
    t_prev, t_cur = Tensor(np.ones(())), c
    for _ in range(m - 1):
        t_next = ad.sub(ad.mul(2.0, ad.mul(c, t_cur)), t_prev)
        t_prev, t_cur = t_cur, t_next
    return t_cur


def loss_speaker(e: Tensor, label: int, proj: Tensor, margin: int,
                 anneal_lambda: float) -> Tensor:
    """Angular softmax: psi(theta) = (-1)^k cos(m*theta) - 2k on the target
    logit, blended as (lambda*cos + psi) / (1 + lambda), scaled by ||e||."""
    n_classes = proj.data.shape[1]
    if not (0 <= label < n_classes):
        raise DataError(f"speaker label {label} out of range [0, {n_classes})")
    col_norms = ad.sqrt(ad.tsum(ad.square(proj), axis=0, keepdims=True))  # 1 x S
    p_hat = div(proj, col_norms)
    e_norm = ad.sqrt(ad.tsum(ad.square(e)))                               # scalar
    cos_all = div(ad.matmul(e, p_hat), e_norm)                            # 1 x S

    c = ad.getitem(cos_all, (0, label))
    theta = math.acos(float(np.clip(c.data, -1.0, 1.0)))
    k = min(int(theta * margin / math.pi), margin - 1)
    psi = ad.sub(ad.mul(float((-1) ** k), _chebyshev(c, margin)), float(2 * k))
    blended = div(ad.add(ad.mul(anneal_lambda, c), psi), 1.0 + anneal_lambda)

    onehot = np.zeros((1, n_classes))
    onehot[0, label] = 1.0
    logits = ad.mul(e_norm, cos_all)
    logits = ad.add(ad.mul(logits, Tensor(1.0 - onehot)),
                    ad.mul(ad.mul(e_norm, blended), Tensor(onehot)))
    shift = float(logits.data.max())
    shifted = ad.sub(logits, shift)
    return ad.sub(ad.log(ad.tsum(ad.exp(shifted))),
                  ad.getitem(shifted, (0, label)))


def anneal_lambda(step: int) -> float:
    return max(5.0, 1000.0 / (1.0 + 0.1 * step))


def loss_joint(l1: Tensor, l2: Tensor, stop_bce: Tensor,
               l_spk: Tensor | None, weight: float) -> Tensor:
    total = ad.add(ad.add(l1, l2), stop_bce)
    if l_spk is not None and weight > 0:
        total = ad.add(total, ad.mul(weight, l_spk))
    return total

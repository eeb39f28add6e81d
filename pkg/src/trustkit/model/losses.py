"""Training objectives: pixel losses optionally blended with a structural term."""

from __future__ import annotations

import numpy as np

from .. import ndtensor as nd
from ..errors import ParameterError
from ..metrics import ssim_tensor


def loss(kind: str, pred: nd.Tensor, target, lambda_l1: float = 0.1,
         lambda_ssim: float = 0.5) -> nd.Tensor:
    """Scalar training loss; differentiable through ``pred``."""
    if not isinstance(target, nd.Tensor):
        target = nd.Tensor(np.asarray(target, dtype=np.float64))
    diff = nd.sub(pred, target)
    l2 = nd.reduce_mean(nd.mul(diff, diff))
    if kind == "l2":
        return l2
    if kind == "l2_l1":
        return nd.add(l2, nd.scalar_mul(nd.reduce_mean(nd.absolute(diff)), lambda_l1))
    if kind == "l2_ssim":
        dissim = nd.scalar_add(nd.scalar_mul(ssim_tensor(pred, target), -1.0), 1.0)
        return nd.add(l2, nd.scalar_mul(dissim, lambda_ssim))
    raise ParameterError(f"unknown loss kind {kind!r}")

"""Adversarial, Lab L1 and staining losses, and their weighted total.

All reductions are means rather than sums so that loss weights do not depend
on image size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stainsep import OdParams, StainMatrix
from .tensornet import autograd as ag
from .tensornet.autograd import Tensor
from .tensornet.colorops import extract_he_t

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    gan: float = 0.1
    l1: float = 1.0
    staining: float = 1.0

    def __post_init__(self):
        if min(self.gan, self.l1, self.staining) < 0:
            raise ValueError("loss weights must be >= 0")


def _log_scores(scores: Tensor) -> Tensor:
    return ag.log(ag.clamp(scores, SCORE_EPS, 1.0 - SCORE_EPS, name="score.clamp"))


def gan_loss_d(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """-mean(log D(real)) - mean(log(1 - D(fake)))."""
    return -ag.mean(_log_scores(real_scores)) - ag.mean(_log_scores(1.0 - fake_scores))


def gan_loss_g(fake_scores: Tensor) -> Tensor:
    """Non-saturating generator loss -mean(log D(fake))."""
    return -ag.mean(_log_scores(fake_scores))


def _check_shapes(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def l1_lab_loss(pred: Tensor, target) -> Tensor:
    """Mean |pred - target| over pixels and the L, a, b channels."""
    target = ag.as_tensor(target)
    _check_shapes(pred, target, "l1_lab_loss")
    return ag.mean(ag.abs_(pred - target))


def staining_loss(pred_rgb: Tensor, H, E, sm: StainMatrix = StainMatrix(),
                  odp: OdParams = OdParams()) -> Tensor:
    """Mean L1 between the input dye planes and those re-extracted from the prediction.

    ``pred_rgb`` is (N,3,H,W) on the 0..255 scale; ``H``/``E`` are (N,1,H,W) or (N,H,W).
    """
    h_pred, e_pred = extract_he_t(pred_rgb, sm, odp)
    H = ag.as_tensor(np.asarray(H.data if isinstance(H, Tensor) else H).reshape(h_pred.shape))
    E = ag.as_tensor(np.asarray(E.data if isinstance(E, Tensor) else E).reshape(e_pred.shape))
    return 0.5 * (ag.mean(ag.abs_(h_pred - H)) + ag.mean(ag.abs_(e_pred - E)))


def total_loss(gan_g, l1, staining, w: LossWeights = LossWeights()):
    """Weighted sum; works on floats and on tensors."""
    return w.gan * gan_g + w.l1 * l1 + w.staining * staining

"""Differentiable Lab <-> RGB and RGB -> dye-concentration chains on NCHW tensors.

Uses the same kernels and constants as :mod:`restain.colorspace` and
:mod:`restain.stainsep`, without clamping or rounding.
"""

from __future__ import annotations

import numpy as np

from .. import colorspace as cs
from ..stainsep import OdParams, StainMatrix
from . import autograd as ag
from .autograd import Tensor


def lab_to_rgb_t(lab: Tensor) -> Tensor:
    """(N,3,H,W) Lab -> (N,3,H,W) RGB on the 0..255 scale (unclamped)."""
    f = ag.channel_mix(lab, cs.LAB_TO_F, cs.LAB_TO_F_BIAS, name="lab.to_f")
    t = ag.unary(f, cs.lab_f_inv, cs.lab_f_inv_grad, "lab.f_inv")
    lin = ag.channel_mix(t, cs.XYZ_TO_SRGB * cs.WHITE_D65[None, :], name="xyz.to_linear")
    srgb = ag.unary(lin, cs.srgb_encode, cs.srgb_encode_grad, "srgb.encode")
    return srgb * 255.0


def rgb_to_lab_t(rgb: Tensor) -> Tensor:
    """(N,3,H,W) RGB on the 0..255 scale -> Lab."""
    lin = ag.unary(rgb * (1.0 / 255.0), cs.srgb_decode, cs.srgb_decode_grad, "srgb.decode")
    t = ag.channel_mix(lin, cs.SRGB_TO_XYZ / cs.WHITE_D65[:, None], name="linear.to_xyz")
    f = ag.unary(t, cs.lab_f, cs.lab_f_grad, "lab.f")
    return ag.channel_mix(f, cs.F_TO_LAB, cs.F_TO_LAB_BIAS, name="f.to_lab")


def rgb_to_od_t(rgb: Tensor, p: OdParams = OdParams()) -> Tensor:
    """-ln(max(v, floor) / i0); the floor has zero gradient."""
    v = ag.clamp(rgb, lo=p.floor, name="od.floor")
    return -ag.log(v * (1.0 / p.i0))


def deconvolve_t(od: Tensor, sm: StainMatrix = StainMatrix()) -> Tensor:
    """Concentrations A = y M^-1 per pixel; channels H, E, residual (unclamped)."""
    return ag.channel_mix(od, sm.m_inv.T, name="deconvolve")


def extract_he_t(rgb: Tensor, sm: StainMatrix = StainMatrix(), p: OdParams = OdParams()) -> tuple[Tensor, Tensor]:
    """(N,1,H,W) H and E planes clamped at zero, matching :func:`restain.stainsep.extract_he`."""
    conc = deconvolve_t(rgb_to_od_t(rgb, p), sm)
    he = ag.clamp(conc[:, 0:2], lo=0.0, name="dyes.nonneg")
    return he[:, 0:1], he[:, 1:2]


def rgb_image_to_tensor(rgb: np.ndarray) -> Tensor:
    """(H,W,3) or (N,H,W,3) array -> NCHW tensor."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr.transpose(0, 3, 1, 2))

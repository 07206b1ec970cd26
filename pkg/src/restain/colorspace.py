"""sRGB <-> CIE Lab (D65) conversion and L-channel de-staining.

The scalar kernels here (transfer curves and the Lab companding function) are
shared with the differentiable tensor variant in ``restain.tensornet.colorops``
so both paths use one set of constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import PlaneImage, RgbImage

# sRGB primaries -> CIE XYZ, D65 (IEC 61966-2-1).
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# White = image of linear (1,1,1) so that sRGB white maps to L=100, a=b=0 exactly.
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)

DELTA = 6.0 / 29.0
EPSILON = DELTA**3

# Lab from companded (fx, fy, fz): rows give L, a, b.
F_TO_LAB = np.array([
    [0.0, 116.0, 0.0],
    [500.0, -500.0, 0.0],
    [0.0, 200.0, -200.0],
])
F_TO_LAB_BIAS = np.array([-16.0, 0.0, 0.0])
LAB_TO_F = np.linalg.inv(F_TO_LAB)
LAB_TO_F_BIAS = -LAB_TO_F @ F_TO_LAB_BIAS


def srgb_decode(u):
    """Companded sRGB in [0,1] -> linear RGB."""
    u = np.asarray(u, dtype=np.float64)
    safe = np.maximum(u, 0.04045)
    return np.where(u <= 0.04045, u / 12.92, ((safe + 0.055) / 1.055) ** 2.4)


def srgb_decode_grad(u):
    u = np.asarray(u, dtype=np.float64)
    safe = np.maximum(u, 0.04045)
    return np.where(u <= 0.04045, 1 / 12.92, (2.4 / 1.055) * ((safe + 0.055) / 1.055) ** 1.4)


def srgb_encode(lin):
    """Linear RGB -> companded sRGB. The power branch never sees values near zero."""
    lin = np.asarray(lin, dtype=np.float64)
    safe = np.maximum(lin, 0.0031308)
    return np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * safe ** (1 / 2.4) - 0.055)


def srgb_encode_grad(lin):
    lin = np.asarray(lin, dtype=np.float64)
    safe = np.maximum(lin, 0.0031308)
    return np.where(lin <= 0.0031308, 12.92, (1.055 / 2.4) * safe ** (1 / 2.4 - 1))


def lab_f(t):
    t = np.asarray(t, dtype=np.float64)
    safe = np.maximum(t, EPSILON)
    return np.where(t > EPSILON, np.cbrt(safe), t / (3 * DELTA**2) + 4.0 / 29.0)


def lab_f_grad(t):
    t = np.asarray(t, dtype=np.float64)
    safe = np.maximum(t, EPSILON)
    return np.where(t > EPSILON, (1.0 / 3.0) * np.cbrt(safe) ** -2, 1 / (3 * DELTA**2))


def lab_f_inv(f):
    f = np.asarray(f, dtype=np.float64)
    return np.where(f > DELTA, f**3, 3 * DELTA**2 * (f - 4.0 / 29.0))


def lab_f_inv_grad(f):
    f = np.asarray(f, dtype=np.float64)
    return np.where(f > DELTA, 3 * f**2, 3 * DELTA**2)


@dataclass(frozen=True)
class LabImage:
    """Planar Lab image; each plane is (height, width) float64."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        planes = [np.asarray(p, dtype=np.float64) for p in (self.L, self.a, self.b)]
        if any(p.ndim != 2 for p in planes) or len({p.shape for p in planes}) != 1:
            raise ValueError("Lab planes must be 2-D and share one shape")
        if not all(np.all(np.isfinite(p)) for p in planes):
            raise ValueError("Lab values must be finite")
        for name, p in zip("Lab", planes):
            object.__setattr__(self, name, p)

    @property
    def width(self) -> int:
        return self.L.shape[1]

    @property
    def height(self) -> int:
        return self.L.shape[0]

    def stack(self) -> np.ndarray:
        """(3, H, W) array in L, a, b order."""
        return np.stack([self.L, self.a, self.b])

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "LabImage":
        return cls(arr[0], arr[1], arr[2])


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) 8-bit-scale RGB -> (..., 3) Lab, float64."""
    lin = srgb_decode(np.asarray(rgb, dtype=np.float64) / 255.0)
    xyz = lin @ SRGB_TO_XYZ.T
    f = lab_f(xyz / WHITE_D65)
    return f @ F_TO_LAB.T + F_TO_LAB_BIAS


def lab_array_to_rgb(lab: np.ndarray) -> np.ndarray:
    """(..., 3) Lab -> (..., 3) unclamped float RGB on the 0..255 scale."""
    f = np.asarray(lab, dtype=np.float64) @ LAB_TO_F.T + LAB_TO_F_BIAS
    xyz = lab_f_inv(f) * WHITE_D65
    lin = xyz @ XYZ_TO_SRGB.T
    return 255.0 * srgb_encode(lin)


def rgb_to_lab(img: RgbImage) -> LabImage:
    lab = rgb_array_to_lab(img.data)
    return LabImage(lab[..., 0], lab[..., 1], lab[..., 2])


def lab_to_rgb(img: LabImage) -> RgbImage:
    """Inverse chain; out-of-gamut values are clamped, then rounded half away from zero."""
    rgb = lab_array_to_rgb(np.stack([img.L, img.a, img.b], axis=-1))
    return RgbImage.from_float(rgb)


def extract_L(img: RgbImage) -> PlaneImage:
    return PlaneImage(rgb_to_lab(img).L)

"""Beer-Lambert optical density, colour deconvolution and re-staining.

Optical density uses the natural logarithm throughout, matching the
exponential attenuation model I_r = I_0 * exp(-A c).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import PlaneImage, RgbImage

__all__ = [
    "DEFAULT_STAIN_MATRIX",
    "StainMatrix",
    "StainImage",
    "OdParams",
    "rgb_to_od",
    "od_to_rgb",
    "deconvolve",
    "deconvolve_od",
    "restain",
    "extract_he",
    "load_stain_matrix",
    "save_stain_matrix",
]

# Rows: hematoxylin, eosin, residual pure-stain OD vectors.
DEFAULT_STAIN_MATRIX = ((0.65, 0.70, 0.29),
                        (0.07, 0.99, 0.11),
                        (0.27, 0.57, 0.78))


def _inverse3(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Closed-form adjugate inverse of a 3x3 matrix."""
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    cof = np.array([
        [e * i - f * h, -(d * i - f * g), d * h - e * g],
        [-(b * i - c * h), a * i - c * g, -(a * h - b * g)],
        [b * f - c * e, -(a * f - c * d), a * e - b * d],
    ])
    det = a * cof[0, 0] + b * cof[0, 1] + c * cof[0, 2]
    if det == 0:
        return np.full((3, 3), np.nan), 0.0
    return cof.T / det, float(det)


@dataclass(frozen=True)
class StainMatrix:
    """3x3 pure-stain OD matrix (rows H, E, residual) with its cached inverse."""

    m: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_STAIN_MATRIX))
    m_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("stain matrix must be finite")
        inv, det = _inverse3(m)
        if abs(det) <= 1e-6:
            raise ValueError(f"stain matrix is singular (det={det:.3g})")
        m.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "m_inv", inv)

    @classmethod
    def from_vectors(cls, h, e, residual=None) -> "StainMatrix":
        """Unit-normalise H and E; the residual defaults to their normalised cross product."""
        h = np.asarray(h, dtype=np.float64)
        e = np.asarray(e, dtype=np.float64)
        h, e = h / np.linalg.norm(h), e / np.linalg.norm(e)
        if residual is None:
            residual = np.cross(h, e)
        residual = np.asarray(residual, dtype=np.float64)
        residual = residual / np.linalg.norm(residual)
        return cls(np.stack([h, e, residual]))

    __hash__ = None


@dataclass(frozen=True)
class OdParams:
    """Incident light ``i0`` and the transmitted-intensity floor applied before the log."""

    i0: float = 255.0
    floor: float = 1.0

    def __post_init__(self):
        if not (1 <= self.floor < self.i0 <= 255):
            raise ValueError(f"need 1 <= floor < i0 <= 255, got floor={self.floor}, i0={self.i0}")


@dataclass(frozen=True)
class StainImage:
    """Per-pixel dye concentrations: H and E clamped at zero, residual signed."""

    H: PlaneImage
    E: PlaneImage
    residual: PlaneImage

    def __post_init__(self):
        if not (self.H.data.shape == self.E.data.shape == self.residual.data.shape):
            raise ValueError("stain planes must share one shape")

    @property
    def width(self) -> int:
        return self.H.width

    @property
    def height(self) -> int:
        return self.H.height


def rgb_to_od(img: RgbImage, p: OdParams = OdParams()) -> np.ndarray:
    """(H, W, 3) optical density: -ln(max(v, floor) / i0)."""
    v = np.maximum(img.data.astype(np.float64), p.floor)
    return -np.log(v / p.i0)


def od_to_rgb(od: np.ndarray, p: OdParams = OdParams()) -> RgbImage:
    od = np.asarray(od, dtype=np.float64)
    if not np.all(np.isfinite(od)):
        raise ValueError("optical density must be finite")
    return RgbImage.from_float(p.i0 * np.exp(-od))


def deconvolve_od(od: np.ndarray, sm: StainMatrix) -> np.ndarray:
    """Unclamped concentrations A = y M^-1 for (..., 3) row vectors y."""
    return np.asarray(od, dtype=np.float64) @ sm.m_inv


def deconvolve(img: RgbImage, sm: StainMatrix = StainMatrix(), p: OdParams = OdParams()) -> StainImage:
    conc = deconvolve_od(rgb_to_od(img, p), sm)
    return StainImage(
        H=PlaneImage(np.maximum(conc[..., 0], 0.0)),
        E=PlaneImage(np.maximum(conc[..., 1], 0.0)),
        residual=PlaneImage(conc[..., 2]),
    )


def restain(stain: StainImage, sm: StainMatrix = StainMatrix(), p: OdParams = OdParams()) -> RgbImage:
    conc = np.stack([stain.H.data, stain.E.data, stain.residual.data], axis=-1)
    return od_to_rgb(conc @ sm.m, p)


def extract_he(img: RgbImage, sm: StainMatrix = StainMatrix(),
               p: OdParams = OdParams()) -> tuple[PlaneImage, PlaneImage]:
    """Hematoxylin and eosin planes, the digital dyes fed to the re-stainer."""
    stain = deconvolve(img, sm, p)
    return stain.H, stain.E


def load_stain_matrix(path) -> StainMatrix:
    """Nine whitespace-separated floats, row-major."""
    tokens = Path(path).read_text(encoding="utf-8").split()
    if len(tokens) != 9:
        raise ValueError(f"{path}: expected 9 floats, found {len(tokens)}")
    return StainMatrix(np.array([float(t) for t in tokens]).reshape(3, 3))


def save_stain_matrix(sm: StainMatrix, path) -> None:
    rows = [" ".join(f"{v:.17g}" for v in row) for row in sm.m]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

"""Classical stain normalisers: Reinhard Lab statistics transfer and Macenko."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .colorspace import lab_array_to_rgb, rgb_array_to_lab
from .imagecore import RgbImage
from .stainsep import OdParams, StainMatrix, deconvolve_od, od_to_rgb, rgb_to_od

__all__ = [
    "LabStats",
    "MacenkoParams",
    "InsufficientTissueError",
    "DegenerateStainError",
    "lab_stats",
    "reinhard_normalize",
    "nearest_rank_percentile",
    "macenko_estimate",
    "macenko_concentrations",
    "macenko_target",
    "macenko_normalize",
    "save_lab_stats",
    "load_lab_stats",
]

_STAT_FIELDS = ("mean_l", "mean_a", "mean_b", "std_l", "std_a", "std_b")


class InsufficientTissueError(ValueError):
    pass


class DegenerateStainError(ValueError):
    pass


@dataclass(frozen=True)
class LabStats:
    mean_l: float
    mean_a: float
    mean_b: float
    std_l: float
    std_a: float
    std_b: float

    def __post_init__(self):
        if min(self.std_l, self.std_a, self.std_b) < 0:
            raise ValueError("standard deviations must be >= 0")

    @property
    def means(self) -> np.ndarray:
        return np.array([self.mean_l, self.mean_a, self.mean_b])

    @property
    def stds(self) -> np.ndarray:
        return np.array([self.std_l, self.std_a, self.std_b])


@dataclass(frozen=True)
class MacenkoParams:
    alpha_percentile: float = 1.0
    beta_od_threshold: float = 0.15
    conc_percentile: float = 99.0

    def __post_init__(self):
        if not 0 < self.alpha_percentile < 50:
            raise ValueError("alpha_percentile must lie in (0, 50)")
        if self.beta_od_threshold <= 0:
            raise ValueError("beta_od_threshold must be > 0")
        if not 0 < self.conc_percentile <= 100:
            raise ValueError("conc_percentile must lie in (0, 100]")


def lab_stats(img: RgbImage) -> LabStats:
    """Per-channel mean and population standard deviation in Lab."""
    lab = rgb_array_to_lab(img.data).reshape(-1, 3)
    mu = lab.mean(axis=0)
    sd = lab.std(axis=0)
    return LabStats(*mu, *sd)


def reinhard_transfer_lab(lab: np.ndarray, src: LabStats, target: LabStats) -> np.ndarray:
    """Affine per-channel Lab map; channels with ~zero spread are only shifted."""
    out = np.empty_like(lab)
    for c in range(3):
        mu_s, sd_s = src.means[c], src.stds[c]
        mu_t, sd_t = target.means[c], target.stds[c]
        if sd_s < 1e-6:
            out[..., c] = lab[..., c] - mu_s + mu_t
        else:
            out[..., c] = (lab[..., c] - mu_s) * (sd_t / sd_s) + mu_t
    return out


def reinhard_normalize(src: RgbImage, target: LabStats) -> RgbImage:
    lab = rgb_array_to_lab(src.data)
    mapped = reinhard_transfer_lab(lab, lab_stats(src), target)
    return RgbImage.from_float(lab_array_to_rgb(mapped))


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of empty set")
    rank = int(np.ceil(pct / 100.0 * v.size))
    return float(v[min(max(rank, 1), v.size) - 1])


def macenko_estimate(img: RgbImage, p: MacenkoParams = MacenkoParams(),
                     odp: OdParams = OdParams()) -> StainMatrix:
    """Estimate H and E OD vectors from the plane spanned by the tissue OD cloud.

    Raises:
        InsufficientTissueError: fewer than 100 pixels above the OD threshold.
        DegenerateStainError: the tissue OD covariance has rank < 2.
    """
    od = rgb_to_od(img, odp).reshape(-1, 3)
    tissue = od[np.linalg.norm(od, axis=1) > p.beta_od_threshold]
    if tissue.shape[0] < 100:
        raise InsufficientTissueError(
            f"insufficient tissue: {tissue.shape[0]} pixels above OD {p.beta_od_threshold} (need 100)")

    evals, evecs = np.linalg.eigh(np.cov(tissue, rowvar=False))
    # eigh sorts ascending
    if evals[-1] <= 0 or evals[-2] < 1e-3 * evals[-1]:
        raise DegenerateStainError("degenerate OD covariance (rank < 2): need two distinct dyes")
    plane = evecs[:, [2, 1]]
    # orient the basis so the OD cloud sits at positive coordinates
    mean_proj = tissue.mean(axis=0) @ plane
    plane = plane * np.where(mean_proj < 0, -1.0, 1.0)

    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo = nearest_rank_percentile(phi, p.alpha_percentile)
    hi = nearest_rank_percentile(phi, 100 - p.alpha_percentile)
    v1 = plane @ np.array([np.cos(lo), np.sin(lo)])
    v2 = plane @ np.array([np.cos(hi), np.sin(hi)])
    v1 = v1 if v1.sum() >= 0 else -v1
    v2 = v2 if v2.sum() >= 0 else -v2
    h, e = (v1, v2) if v1[0] >= v2[0] else (v2, v1)
    return StainMatrix.from_vectors(h, e)


def macenko_concentrations(img: RgbImage, sm: StainMatrix, odp: OdParams = OdParams()) -> np.ndarray:
    """(H, W, 3) concentrations with H and E clamped at zero."""
    conc = deconvolve_od(rgb_to_od(img, odp), sm)
    conc[..., :2] = np.maximum(conc[..., :2], 0.0)
    return conc


def macenko_target(img: RgbImage, p: MacenkoParams = MacenkoParams(),
                   odp: OdParams = OdParams()) -> tuple[StainMatrix, tuple[float, float]]:
    """Stain matrix and reference maximum concentrations of a target image."""
    sm = macenko_estimate(img, p, odp)
    conc = macenko_concentrations(img, sm, odp)
    max_c = (nearest_rank_percentile(conc[..., 0], p.conc_percentile),
             nearest_rank_percentile(conc[..., 1], p.conc_percentile))
    return sm, max_c


def macenko_normalize(src: RgbImage, target_sm: StainMatrix, target_max_c: tuple[float, float],
                      p: MacenkoParams = MacenkoParams(), odp: OdParams = OdParams()) -> RgbImage:
    """Rescale the source's H/E concentrations to the target's and re-stain with its matrix.

    The residual concentration is carried over unscaled.
    """
    src_sm, src_max = macenko_target(src, p, odp)
    conc = macenko_concentrations(src, src_sm, odp)
    for c in range(2):
        if src_max[c] > 0:
            conc[..., c] *= target_max_c[c] / src_max[c]
    return od_to_rgb(conc @ target_sm.m, odp)


def save_lab_stats(stats: LabStats, path) -> None:
    lines = [f"{k}\t{v:.17g}" for k, v in asdict(stats).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lab_stats(path) -> LabStats:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, val = line.split()
            values[key] = float(val)
    missing = set(_STAT_FIELDS) - values.keys()
    if missing:
        raise ValueError(f"{path}: missing fields {sorted(missing)}")
    return LabStats(**{k: values[k] for k in _STAT_FIELDS})

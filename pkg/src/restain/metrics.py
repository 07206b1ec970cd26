"""Full-reference image quality metrics.

The first argument is always the reference. SSIM, MS-SSIM and UQI run on the
ITU-R 601 luma of the images with valid-mode windows (no padding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import correlate2d

from .imagecore import RgbImage, load_png

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
UQI_WINDOW = 8

METRICS = ("mse", "rmse", "psnr", "ssim", "ms_ssim", "uqi", "ergas", "rase")


def _pair(x: RgbImage, y: RgbImage) -> tuple[np.ndarray, np.ndarray]:
    if x.data.shape != y.data.shape:
        raise ValueError(f"image dimensions differ: {x.data.shape} vs {y.data.shape}")
    return x.data.astype(np.float64), y.data.astype(np.float64)


def luma(img: RgbImage) -> np.ndarray:
    return img.data.astype(np.float64) @ np.array([0.299, 0.587, 0.114])


def mse(x: RgbImage, y: RgbImage) -> float:
    a, b = _pair(x, y)
    return float(np.mean((a - b) ** 2))


def rmse(x: RgbImage, y: RgbImage) -> float:
    return math.sqrt(mse(x, y))


def psnr(x: RgbImage, y: RgbImage) -> float:
    err = mse(x, y)
    if err < 255.0**2 * 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_maps(a: np.ndarray, b: np.ndarray, data_range: float = 255.0):
    """Luminance and contrast-structure maps over every valid window position."""
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image too small for SSIM: need >= {SSIM_WINDOW} px per side, got {a.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = gaussian_window()

    def filt(z):
        return correlate2d(z, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim_gray(a: np.ndarray, b: np.ndarray) -> float:
    lum, cs = _ssim_maps(a, b)
    return float(np.mean(lum * cs))


def ssim(x: RgbImage, y: RgbImage) -> float:
    _pair(x, y)
    return ssim_gray(luma(x), luma(y))


def _downsample2(z: np.ndarray) -> np.ndarray:
    h, w = (z.shape[0] // 2) * 2, (z.shape[1] // 2) * 2
    z = z[:h, :w]
    return 0.25 * (z[0::2, 0::2] + z[1::2, 0::2] + z[0::2, 1::2] + z[1::2, 1::2])


def ms_ssim_scales(shape: tuple[int, int]) -> int:
    """Number of dyadic scales (<= 5) whose coarsest level still fits an SSIM window."""
    side = min(shape)
    if side < SSIM_WINDOW:
        raise ValueError(f"image too small for MS-SSIM: need >= {SSIM_WINDOW} px per side, got {shape}")
    n = 1
    while n < len(MS_SSIM_WEIGHTS) and side // 2**n >= SSIM_WINDOW:
        n += 1
    return n


def ms_ssim_gray(a: np.ndarray, b: np.ndarray) -> float:
    """Product of per-scale contrast-structure terms and the coarsest luminance term.

    Negative per-scale terms are clipped to 0 before the fractional powers.
    """
    scales = ms_ssim_scales(a.shape)
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    out = 1.0
    for j in range(scales):
        lum, cs = _ssim_maps(a, b)
        if j == scales - 1:
            term = float(np.mean(lum * cs))
        else:
            term = float(np.mean(cs))
            a, b = _downsample2(a), _downsample2(b)
        out *= max(term, 0.0) ** weights[j]
    return out


def ms_ssim(x: RgbImage, y: RgbImage) -> float:
    _pair(x, y)
    return ms_ssim_gray(luma(x), luma(y))


def uqi_gray(a: np.ndarray, b: np.ndarray, window: int = UQI_WINDOW) -> float:
    """Universal quality index, 8x8 uniform sliding windows, population moments."""
    if min(a.shape) < window:
        raise ValueError(f"image too small for UQI: need >= {window} px per side")
    k = np.full((window, window), 1.0 / window**2)

    def filt(z):
        return correlate2d(z, k, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = np.maximum(filt(a * a) - mu_a**2, 0.0)
    var_b = np.maximum(filt(b * b) - mu_b**2, 0.0)
    cov = filt(a * b) - mu_a * mu_b
    return float(np.mean(_uqi_terms(mu_a, mu_b, var_a, var_b, cov)))


def _uqi_terms(mu_a, mu_b, var_a, var_b, cov, tol: float = 1e-12):
    """Q per window, with the usual limits when a denominator factor vanishes."""
    d_var = var_a + var_b
    d_mu = mu_a**2 + mu_b**2
    q = np.ones_like(mu_a)
    both = (d_var > tol) & (d_mu > tol)
    var_only = (d_var > tol) & ~both
    mu_only = (d_mu > tol) & ~both
    q[both] = 4 * cov[both] * mu_a[both] * mu_b[both] / (d_var[both] * d_mu[both])
    q[var_only] = 2 * cov[var_only] / d_var[var_only]
    q[mu_only] = 2 * mu_a[mu_only] * mu_b[mu_only] / d_mu[mu_only]
    return q


def uqi(x: RgbImage, y: RgbImage) -> float:
    _pair(x, y)
    return uqi_gray(luma(x), luma(y))


def _band_stats(x: RgbImage, y: RgbImage) -> tuple[np.ndarray, np.ndarray]:
    a, b = _pair(x, y)
    rmse_b = np.sqrt(np.mean((a - b) ** 2, axis=(0, 1)))
    mu_b = a.mean(axis=(0, 1))
    if np.any(mu_b == 0):
        raise ValueError("zero-mean band in reference image")
    return rmse_b, mu_b


def ergas(x: RgbImage, y: RgbImage, ratio: float = 1.0) -> float:
    rmse_b, mu_b = _band_stats(x, y)
    return float(100.0 * ratio * np.sqrt(np.mean((rmse_b / mu_b) ** 2)))


def rase(x: RgbImage, y: RgbImage) -> float:
    rmse_b, mu_b = _band_stats(x, y)
    return float(100.0 / mu_b.mean() * np.sqrt(np.mean(rmse_b**2)))


METRIC_FUNCS = {
    "mse": mse, "rmse": rmse, "psnr": psnr, "ssim": ssim,
    "ms_ssim": ms_ssim, "uqi": uqi, "ergas": ergas, "rase": rase,
}


@dataclass
class MetricReport:
    names: list[str]
    pairs: list[str]
    values: np.ndarray  # (n_pairs, n_metrics)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.values.std(axis=0)

    def to_tsv(self) -> str:
        lines = ["pair\t" + "\t".join(self.names)]
        for label, row in zip(self.pairs, self.values):
            lines.append(label + "\t" + "\t".join(f"{v:.6g}" for v in row))
        lines.append("AGGREGATE\tmean\tstd")
        for name, mu, sd in zip(self.names, self.mean, self.std):
            lines.append(f"{name}\t{mu:.6g}\t{sd:.6g}")
        return "\n".join(lines) + "\n"


def compute_metrics(ref: RgbImage, test: RgbImage, names=METRICS) -> list[float]:
    return [METRIC_FUNCS[n](ref, test) for n in names]


def read_pairs_manifest(path) -> list[tuple[Path, Path]]:
    """``reference<TAB>candidate`` per line, paths relative to the manifest."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected reference<TAB>candidate")
        pairs.append((path.parent / parts[0], path.parent / parts[1]))
    return pairs


def evaluate_images(pairs, names=METRICS, labels=None) -> MetricReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no image pairs to evaluate")
    unknown = [n for n in names if n not in METRIC_FUNCS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}; valid: {', '.join(METRICS)}")
    labels = labels or [f"pair{i}" for i in range(len(pairs))]
    values = np.array([compute_metrics(r, t, names) for r, t in pairs], dtype=np.float64)
    return MetricReport(list(names), list(labels), values)


def evaluate_set(pairs_manifest, names=METRICS) -> MetricReport:
    records = read_pairs_manifest(pairs_manifest)
    if not records:
        raise ValueError(f"{pairs_manifest}: empty manifest")
    images = [(load_png(r), load_png(t)) for r, t in records]
    labels = [f"{r.name}|{t.name}" for r, t in records]
    return evaluate_images(images, names, labels)

"""Image containers, PNG I/O, patch tiling and the synthetic two-style H&E corpus."""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "RgbImage",
    "PlaneImage",
    "SynthStyle",
    "load_png",
    "save_png",
    "extract_patches",
    "compose_stained",
    "synth_concentrations",
    "synth_image",
    "synth_corpus",
    "default_styles",
    "read_manifest",
    "round_half_away",
]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
MANIFEST_NAME = "manifest.tsv"
MAX_CONCENTRATION = 2.5


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (np.round rounds ties to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class RgbImage:
    """8-bit interleaved RGB raster, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"RgbImage needs an HxWx3 array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("RgbImage dimensions must be >= 1")
        if data.dtype != np.uint8:
            raise TypeError(f"RgbImage data must be uint8, got {data.dtype}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_float(cls, values: np.ndarray) -> "RgbImage":
        """Clamp to [0, 255], round half away from zero and wrap."""
        values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 255.0)
        return cls(round_half_away(values).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class PlaneImage:
    """Single-channel float64 plane, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"PlaneImage needs a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("PlaneImage values must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    __hash__ = None


def _png_header(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 and PNG_SIGNATURE.startswith(head[:8]):
        raise OSError(f"{path}: truncated PNG header")
    if head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ValueError(f"{path}: not a PNG file")
    bit_depth, colour_type = struct.unpack(">BB", head[24:26])
    return bit_depth, colour_type


def load_png(path) -> RgbImage:
    """Read an 8-bit RGB or RGBA PNG. Alpha is dropped.

    Raises:
        OSError: unreadable or truncated file.
        ValueError: bit depth other than 8, or a non-colour PNG.
    """
    path = Path(path)
    bit_depth, colour_type = _png_header(path)
    if bit_depth != 8:
        raise ValueError(f"{path}: unsupported bit depth {bit_depth} (only 8-bit PNG is accepted)")
    # 2 = truecolour, 6 = truecolour with alpha
    if colour_type not in (2, 6):
        raise ValueError(f"{path}: unsupported colour type {colour_type} (RGB or RGBA required)")
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (SyntaxError, zlib.error) as exc:
        raise OSError(f"{path}: corrupt PNG ({exc})") from exc
    return RgbImage(arr)


def save_png(img: RgbImage, path) -> None:
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(img.data)).save(path, format="PNG")


def extract_patches(img: RgbImage, size: int) -> list[RgbImage]:
    """Non-overlapping size x size tiles in row-major order; partial tiles are dropped."""
    if size < 1:
        raise ValueError("patch size must be >= 1")
    rows, cols = img.height // size, img.width // size
    return [
        RgbImage(img.data[r * size:(r + 1) * size, c * size:(c + 1) * size])
        for r in range(rows)
        for c in range(cols)
    ]


@dataclass(frozen=True)
class SynthStyle:
    """Rendering parameters of one synthetic scanner/staining style.

    The stain matrix rows are normalised to unit length on construction; only
    the H (row 0) and E (row 1) vectors are used for rendering.
    """

    stain_matrix: np.ndarray
    intensity_scale: tuple[float, float] = (1.0, 1.0)
    background: tuple[int, int, int] = (255, 255, 255)
    seed: int = 0
    name: str = field(default="style", compare=False)

    def __post_init__(self):
        m = np.array(self.stain_matrix, dtype=np.float64).reshape(3, 3)
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("stain vectors must be non-zero")
        m = m / norms
        m.setflags(write=False)
        object.__setattr__(self, "stain_matrix", m)
        s_h, s_e = (float(v) for v in self.intensity_scale)
        if not (0 < s_h <= 4 and 0 < s_e <= 4):
            raise ValueError("intensity scales must lie in (0, 4]")
        object.__setattr__(self, "intensity_scale", (s_h, s_e))
        bg = tuple(int(v) for v in self.background)
        if len(bg) != 3 or any(v < 0 or v > 255 for v in bg):
            raise ValueError("background must be three 8-bit values")
        object.__setattr__(self, "background", bg)


def default_styles(seed: int = 0) -> tuple[SynthStyle, SynthStyle]:
    """The two built-in scanner styles.

    A renders with the reference H&E vectors on a white background. B mimics a
    second scanner: hematoxylin shifted towards red, eosin less saturated and a
    tinted (per-channel gain) background.
    """
    a = SynthStyle(
        [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]],
        (1.0, 1.0), (255, 255, 255), seed=seed, name="A")
    b = SynthStyle(
        [[0.75, 0.62, 0.25], [0.20, 0.95, 0.15], [0.27, 0.57, 0.78]],
        (1.0, 1.0), (235, 225, 240), seed=seed + 100_000, name="B")
    return a, b


def compose_stained(style: SynthStyle, conc_h: np.ndarray, conc_e: np.ndarray) -> RgbImage:
    """Render concentration maps through Beer-Lambert with the style's dyes.

    pixel = background * exp(-(s_H * A_H * h + s_E * A_E * e)) per channel.
    """
    conc_h = np.asarray(conc_h, dtype=np.float64)
    conc_e = np.asarray(conc_e, dtype=np.float64)
    s_h, s_e = style.intensity_scale
    m = style.stain_matrix
    od = (s_h * conc_h)[..., None] * m[0] + (s_e * conc_e)[..., None] * m[1]
    bg = np.asarray(style.background, dtype=np.float64)
    return RgbImage.from_float(bg * np.exp(-od))


def _gaussian_bumps(rng: np.random.Generator, yy, xx, count: int, scale: float) -> np.ndarray:
    h, w = yy.shape
    out = np.zeros((h, w))
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(0.5, 1.5) * scale
        out += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return out


def synth_concentrations(width: int, height: int, rng_seed: int, n_blobs: int | None = None,
                         cytoplasm: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Random hematoxylin/eosin concentration maps, both in [0, 2.5].

    Nuclei are elliptical hematoxylin blobs; cytoplasm is a smooth eosin field
    with empty (background) lumen regions where the field is weak.
    """
    if width < 1 or height < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    conc_h = np.zeros((height, width))
    conc_e = np.zeros((height, width))

    if cytoplasm:
        field_ = _gaussian_bumps(rng, yy, xx, 8, max(width, height) / 4)
        field_ /= field_.max()
        tissue = field_ > 0.25
        grain = 1.0 + 0.08 * rng.standard_normal((height, width))
        conc_e = np.where(tissue, (0.3 + 0.7 * field_) * grain, 0.0)
        conc_h = np.where(tissue, 0.08 * field_ * grain, 0.0)

    if n_blobs is None:
        n_blobs = int(rng.integers(5, 21))
    r_max = max(2.0, min(width, height) / 10)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.4, 1.0, size=2) * r_max
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
        rr = u**2 + v**2
        inside = rr <= 1.0
        edge = np.clip(1.2 - rr, 0.0, 1.0)
        conc_h = np.where(inside, np.maximum(conc_h, rng.uniform(0.7, 1.5) * edge), conc_h)
        conc_e = np.where(inside, np.maximum(conc_e, 0.15 * edge), conc_e)

    return np.clip(conc_h, 0, MAX_CONCENTRATION), np.clip(conc_e, 0, MAX_CONCENTRATION)


def synth_image(style: SynthStyle, width: int, height: int, rng_seed: int,
                n_blobs: int | None = None, cytoplasm: bool = True) -> RgbImage:
    """Deterministic synthetic H&E image.

    The tissue layout depends only on ``rng_seed`` so two styles rendered with the
    same seed differ only through their dye vectors, intensities and background.
    """
    conc_h, conc_e = synth_concentrations(width, height, rng_seed, n_blobs, cytoplasm)
    return compose_stained(style, conc_h, conc_e)


def synth_corpus(style_a: SynthStyle, style_b: SynthStyle, count_per_style: int, out_dir,
                 size: int = 256, labels: tuple[str, str] = ("A", "B")) -> Path:
    """Write ``count_per_style`` PNGs per style and a ``path<TAB>label`` manifest."""
    if count_per_style < 1:
        raise ValueError("count_per_style must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for style, label in zip((style_a, style_b), labels):
        sub = out_dir / label
        sub.mkdir(exist_ok=True)
        for i in range(count_per_style):
            img = synth_image(style, size, size, rng_seed=style.seed + i)
            rel = f"{label}/{label}_{i:04d}.png"
            save_png(img, out_dir / rel)
            lines.append(f"{rel}\t{label}\n")
    manifest = out_dir / MANIFEST_NAME
    tmp = manifest.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    os.replace(tmp, manifest)
    return manifest


def read_manifest(path) -> list[tuple[Path, str]]:
    """Parse a ``relative_path<TAB>label`` manifest; paths resolve against its directory."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields")
            records.append((path.parent / parts[0], parts[1]))
    return records

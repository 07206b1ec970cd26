"""Training loop, re-stain inference and the dye-perturbation / histogram experiments."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colorspace import LabImage, lab_to_rgb, rgb_array_to_lab
from .imagecore import RgbImage, extract_patches, load_png, read_manifest
from .losses import LossWeights, gan_loss_d, gan_loss_g, l1_lab_loss, staining_loss, total_loss
from .stainsep import OdParams, StainMatrix, extract_he
from .tensornet.autograd import Tensor
from .tensornet.checkpoint import load_checkpoint, restore, save_checkpoint
from .tensornet.colorops import lab_to_rgb_t
from .tensornet.nets import DiscriminatorNet, GeneratorNet, normalize_inputs
from .tensornet.optim import AdamState, adam_step, lr_decay

log = logging.getLogger(__name__)

STABILITY_COEFFICIENTS = (0.6, 0.9, 1.0, 1.1, 1.2)
HIST_RANGE = (0.0, 3.0)

LOSS_COLUMNS = ("step", "epoch", "lr", "d_loss", "g_gan", "l1", "staining", "total")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    data: Path
    style_label: str = "A"
    epochs: int = 1
    batch_size: int = 4
    patch_size: int = 256
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    odp: OdParams = field(default_factory=OdParams)
    stain_matrix: StainMatrix = field(default_factory=StainMatrix)
    checkpoint: Path | None = None
    resume: bool = False
    steps_per_epoch: int | None = None
    max_images: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patch_size < 4 or self.patch_size % 4:
            raise ValueError("patch_size must be a positive multiple of 4")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")


@dataclass
class Sample:
    """Network inputs and Lab target for one training patch."""

    L: np.ndarray
    H: np.ndarray
    E: np.ndarray
    lab: np.ndarray  # (3, h, w)


def decompose(img: RgbImage, sm: StainMatrix = StainMatrix(), odp: OdParams = OdParams()) -> Sample:
    lab = rgb_array_to_lab(img.data).transpose(2, 0, 1)
    H, E = extract_he(img, sm, odp)
    return Sample(L=lab[0], H=H.data, E=E.data, lab=lab)


def load_domain(cfg: TrainConfig) -> list[Sample]:
    records = [p for p, label in read_manifest(cfg.data) if label == cfg.style_label]
    if cfg.max_images is not None:
        records = records[:cfg.max_images]
    samples = []
    for path in records:
        for patch in extract_patches(load_png(path), cfg.patch_size):
            samples.append(decompose(patch, cfg.stain_matrix, cfg.odp))
    if not samples:
        raise TrainingError(f"no {cfg.patch_size}px patches of style {cfg.style_label!r} in {cfg.data}")
    return samples


def _stack(batch: list[Sample]):
    L = np.stack([s.L for s in batch])
    H = np.stack([s.H for s in batch])
    E = np.stack([s.E for s in batch])
    lab = np.stack([s.lab for s in batch])
    return L, H, E, lab


class Trainer:
    """Alternating discriminator / generator updates on one target domain."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.gen = GeneratorNet(seed=cfg.seed)
        self.disc = DiscriminatorNet(seed=cfg.seed + 1)
        self.opt_g = AdamState()
        self.opt_d = AdamState()
        self.epoch = 0
        self.step = 0
        self.history: list[dict] = []
        if cfg.resume and cfg.checkpoint is not None and Path(cfg.checkpoint).exists():
            self.epoch = restore(load_checkpoint(cfg.checkpoint), self.gen, self.disc, self.opt_g, self.opt_d)
            self.step = self.opt_g.step
            log.info("resumed from %s at epoch %d", cfg.checkpoint, self.epoch)

    def train_step(self, batch: list[Sample]) -> dict:
        cfg = self.cfg
        L, H, E, lab = _stack(batch)
        x = Tensor(normalize_inputs(L, H, E))
        fake = self.gen(x)

        self.disc.zero_grad()
        d_loss = gan_loss_d(self.disc(Tensor(lab)), self.disc(Tensor(fake.data)))
        d_loss.backward()
        adam_step(self.opt_d, self.disc.parameters())

        self.gen.zero_grad()
        self.disc.zero_grad()
        g_gan = gan_loss_g(self.disc(fake))
        l1 = l1_lab_loss(fake, lab)
        stain = staining_loss(lab_to_rgb_t(fake), H, E, cfg.stain_matrix, cfg.odp)
        total = total_loss(g_gan, l1, stain, cfg.weights)
        total.backward()
        adam_step(self.opt_g, self.gen.parameters())
        self.step += 1

        row = {
            "step": self.step, "epoch": self.epoch, "lr": self.opt_g.lr,
            "d_loss": float(d_loss.data), "g_gan": float(g_gan.data), "l1": float(l1.data),
            "staining": float(stain.data), "total": float(total.data),
        }
        if not all(math.isfinite(v) for v in row.values()):
            raise TrainingError(f"non-finite loss at step {self.step}")
        self.history.append(row)
        return row

    def run(self, samples: list[Sample] | None = None) -> list[dict]:
        cfg = self.cfg
        samples = samples if samples is not None else load_domain(cfg)
        per_epoch = cfg.steps_per_epoch or math.ceil(len(samples) / cfg.batch_size)
        first = self.epoch
        for epoch in range(first, first + cfg.epochs):
            self.epoch = epoch
            lr_decay(self.opt_g, epoch)
            lr_decay(self.opt_d, epoch)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = np.array([], dtype=int)
            for _ in range(per_epoch):
                if order.size < cfg.batch_size:
                    order = np.concatenate([order, rng.permutation(len(samples))])
                idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
                try:
                    row = self.train_step([samples[i] for i in idx])
                except FloatingPointError as exc:
                    raise TrainingError(f"non-finite value at step {self.step + 1}: {exc}") from exc
                log.debug("step %(step)d total %(total).4f l1 %(l1).4f staining %(staining).4f", row)
            self.epoch = epoch + 1
            recent = self.history[-per_epoch:]
            log.info("epoch %d done: mean total %.4f", epoch, np.mean([r["total"] for r in recent]))
            if cfg.checkpoint is not None:
                save_checkpoint(cfg.checkpoint, self.gen, self.disc, self.opt_g, self.opt_d, epoch=self.epoch)
        return self.history


def write_loss_log(history: list[dict], path) -> None:
    lines = ["\t".join(LOSS_COLUMNS)]
    for row in history:
        lines.append("\t".join(f"{row[c]:.6g}" for c in LOSS_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_generator(path) -> GeneratorNet:
    gen = GeneratorNet()
    restore(load_checkpoint(path), gen)
    return gen


def center_crop4(img: RgbImage) -> RgbImage:
    """Crop to the largest centred region whose sides are multiples of 4."""
    h, w = img.height - img.height % 4, img.width - img.width % 4
    if (h, w) == (img.height, img.width):
        return img
    if h == 0 or w == 0:
        raise ValueError(f"image {img.width}x{img.height} is smaller than 4 px")
    log.warning("cropping %dx%d to %dx%d (sides must be multiples of 4)", img.width, img.height, w, h)
    top, left = (img.height - h) // 2, (img.width - w) // 2
    return RgbImage(img.data[top:top + h, left:left + w])


def generate_lab(gen: GeneratorNet, L, H, E) -> np.ndarray:
    """(3, h, w) Lab from a single set of planes."""
    return gen.forward_planes(L, H, E).data[0]


def restain_image(gen: GeneratorNet, img: RgbImage, keep_l: bool = True, dye_scale: float = 1.0,
                  sm: StainMatrix = StainMatrix(), odp: OdParams = OdParams()) -> tuple[RgbImage, LabImage]:
    """Re-stain one image with a trained generator.

    With ``keep_l`` the input luminance replaces the generated one before
    converting back to RGB.
    """
    img = center_crop4(img)
    s = decompose(img, sm, odp)
    lab = generate_lab(gen, s.L, dye_scale * s.H, dye_scale * s.E)
    if keep_l:
        lab[0] = s.L
    out = LabImage.from_stack(lab)
    return lab_to_rgb(out), out


def stability_experiment(gen: GeneratorNet, img: RgbImage, coefficients=STABILITY_COEFFICIENTS,
                         keep_l: bool = True, sm: StainMatrix = StainMatrix(),
                         odp: OdParams = OdParams()) -> tuple[list[RgbImage], list[float]]:
    """Re-stain with H and E scaled by each coefficient.

    Returns the outputs and the mean per-pixel Lab distance of each to the
    unscaled (c = 1.0) output.
    """
    coefficients = list(coefficients)
    outputs, labs = [], []
    for c in coefficients:
        rgb, lab = restain_image(gen, img, keep_l, c, sm, odp)
        outputs.append(rgb)
        labs.append(lab.stack())
    ref = restain_image(gen, img, keep_l, 1.0, sm, odp)[1].stack()
    dists = [float(np.mean(np.sqrt(np.sum((lab - ref) ** 2, axis=0)))) for lab in labs]
    return outputs, dists


def dye_histogram(plane: np.ndarray, bins: int = 64, value_range=HIST_RANGE) -> np.ndarray:
    """Normalised histogram; values outside the range land in the edge bins."""
    lo, hi = value_range
    counts, _ = np.histogram(np.clip(np.ravel(plane), lo, hi), bins=bins, range=value_range)
    return counts / counts.sum()


def wasserstein1(p: np.ndarray, q: np.ndarray, value_range=HIST_RANGE) -> float:
    """Earth mover's distance between two histograms on the same uniform bins."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histograms must have the same number of bins")
    width = (value_range[1] - value_range[0]) / p.size
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))) * width)


@dataclass
class HistComparison:
    bins: int
    hist_a: dict[str, np.ndarray]
    hist_b: dict[str, np.ndarray]
    distance: dict[str, float]

    def to_tsv(self) -> str:
        lo, hi = HIST_RANGE
        edges = np.linspace(lo, hi, self.bins + 1)
        lines = ["bin_lo\tbin_hi\tH_a\tH_b\tE_a\tE_b"]
        for i in range(self.bins):
            vals = (self.hist_a["H"][i], self.hist_b["H"][i], self.hist_a["E"][i], self.hist_b["E"][i])
            lines.append(f"{edges[i]:.6g}\t{edges[i + 1]:.6g}\t" + "\t".join(f"{v:.6g}" for v in vals))
        lines.append("DISTANCE\tW1")
        lines += [f"{dye}\t{d:.6g}" for dye, d in self.distance.items()]
        return "\n".join(lines) + "\n"


def histogram_compare(img_a: RgbImage, img_b: RgbImage, bins: int = 64, sm: StainMatrix = StainMatrix(),
                      odp: OdParams = OdParams()) -> HistComparison:
    ha, ea = extract_he(img_a, sm, odp)
    hb, eb = extract_he(img_b, sm, odp)
    hist_a = {"H": dye_histogram(ha.data, bins), "E": dye_histogram(ea.data, bins)}
    hist_b = {"H": dye_histogram(hb.data, bins), "E": dye_histogram(eb.data, bins)}
    dist = {dye: wasserstein1(hist_a[dye], hist_b[dye]) for dye in ("H", "E")}
    return HistComparison(bins, hist_a, hist_b, dist)

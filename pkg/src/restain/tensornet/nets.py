"""Re-stainer generator (two-down/two-up U-net) and patch discriminator."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LEAKY_SLOPE = 0.2
L_SCALE = 100.0
AB_SCALE = 127.0
DYE_CLIP = 3.0


class Conv2d:
    """Convolution layer with uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights and zero bias."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 pad: int | None = None, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.stride = stride
        self.pad = (kernel - 1) // 2 if pad is None else pad
        bound = np.sqrt(1.0 / (c_in * kernel * kernel))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel)),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.pad, name=self.name)

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


class Module:
    layers: list[Conv2d]

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


def normalize_inputs(L: np.ndarray, H: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Stack (N,H,W) planes into a (N,3,H,W) network input in [0, 1]."""
    L = np.asarray(L, dtype=np.float64) / L_SCALE
    H = np.clip(np.asarray(H, dtype=np.float64), 0.0, DYE_CLIP) / DYE_CLIP
    E = np.clip(np.asarray(E, dtype=np.float64), 0.0, DYE_CLIP) / DYE_CLIP
    return np.stack([L, H, E], axis=1)


class GeneratorNet(Module):
    """Maps (L, H, E) to a Lab image of the same size.

    Encoder 3->16 (s1), 16->32 (s2), 32->64 (s2); decoder upsamples twice with
    skip concatenation; output heads sigmoid*100 for L and tanh*127 for a, b.
    """

    def __init__(self, seed: int = 0, prefix: str = "gen"):
        rng = np.random.default_rng(seed)
        self.enc1 = Conv2d(f"{prefix}.enc1", 3, 16, 3, 1, rng=rng)
        self.enc2 = Conv2d(f"{prefix}.enc2", 16, 32, 3, 2, rng=rng)
        self.enc3 = Conv2d(f"{prefix}.enc3", 32, 64, 3, 2, rng=rng)
        self.dec1 = Conv2d(f"{prefix}.dec1", 64, 32, 3, 1, rng=rng)
        self.dec2 = Conv2d(f"{prefix}.dec2", 64, 16, 3, 1, rng=rng)
        self.out = Conv2d(f"{prefix}.out", 32, 3, 3, 1, rng=rng)
        self.layers = [self.enc1, self.enc2, self.enc3, self.dec1, self.dec2, self.out]

    def __call__(self, x: Tensor) -> Tensor:
        """``x`` is the normalised (N,3,H,W) input; returns raw Lab (N,3,H,W)."""
        h, w = x.shape[2], x.shape[3]
        if h % 4 or w % 4:
            raise ValueError(f"generator input {h}x{w} must have both sides divisible by 4; pad or crop first")
        e1 = ag.leaky_relu(self.enc1(x), LEAKY_SLOPE, "gen.enc1.act")
        e2 = ag.leaky_relu(self.enc2(e1), LEAKY_SLOPE, "gen.enc2.act")
        e3 = ag.leaky_relu(self.enc3(e2), LEAKY_SLOPE, "gen.enc3.act")
        d1 = ag.leaky_relu(self.dec1(ag.upsample2x(e3)), LEAKY_SLOPE, "gen.dec1.act")
        d1 = ag.concat([d1, e2])
        d2 = ag.leaky_relu(self.dec2(ag.upsample2x(d1)), LEAKY_SLOPE, "gen.dec2.act")
        d2 = ag.concat([d2, e1])
        raw = self.out(d2)
        L = ag.sigmoid(raw[:, 0:1]) * L_SCALE
        ab = ag.tanh(raw[:, 1:3]) * AB_SCALE
        return ag.concat([L, ab], name="gen.lab")

    def forward_planes(self, L, H, E) -> Tensor:
        """Convenience wrapper taking (N,H,W) or (H,W) raw planes."""
        L, H, E = (np.asarray(p, dtype=np.float64) for p in (L, H, E))
        if not (L.shape == H.shape == E.shape):
            raise ValueError("L, H and E planes must share one shape")
        if L.ndim == 2:
            L, H, E = L[None], H[None], E[None]
        return self(Tensor(normalize_inputs(L, H, E)))


def lab_to_disc_input(lab: Tensor) -> Tensor:
    """Raw Lab -> roughly [-1, 1] per channel for the discriminator."""
    return ag.channel_mix(lab, np.diag([2.0 / L_SCALE, 1.0 / AB_SCALE, 1.0 / AB_SCALE]),
                          bias=[-1.0, 0.0, 0.0], name="disc.in")


class DiscriminatorNet(Module):
    """Patch discriminator: three 4x4 stride-2 convs then a 4x4 stride-1 conv and sigmoid."""

    def __init__(self, seed: int = 1, prefix: str = "disc"):
        rng = np.random.default_rng(seed)
        self.c1 = Conv2d(f"{prefix}.c1", 3, 16, 4, 2, pad=1, rng=rng)
        self.c2 = Conv2d(f"{prefix}.c2", 16, 32, 4, 2, pad=1, rng=rng)
        self.c3 = Conv2d(f"{prefix}.c3", 32, 64, 4, 2, pad=1, rng=rng)
        self.c4 = Conv2d(f"{prefix}.c4", 64, 1, 4, 1, pad=1, rng=rng)
        self.layers = [self.c1, self.c2, self.c3, self.c4]

    def __call__(self, lab: Tensor) -> Tensor:
        x = lab_to_disc_input(lab)
        x = ag.leaky_relu(self.c1(x), LEAKY_SLOPE, "disc.c1.act")
        x = ag.leaky_relu(self.c2(x), LEAKY_SLOPE, "disc.c2.act")
        x = ag.leaky_relu(self.c3(x), LEAKY_SLOPE, "disc.c3.act")
        return ag.sigmoid(self.c4(x))

"""Style-based generator, mirror discriminator, and the adversarial losses.

The generator maps a latent draw through an RMS-normalized MLP to a style
vector, then synthesizes from a learned 4x4 constant: each block applies a
style-modulated, weight-demodulated 3x3 convolution, adds scaled per-pixel
noise, bias and a leaky ReLU, upsampling 2x between blocks.  A 1x1 toRGB
layer produces linear output; values are clamped to [-1,1] only at export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .rng import Rng

LEAK = 0.2


@dataclass
class ModelConfig:
    resolution: int = 64
    dim_z: int = 64
    dim_w: int = 64
    mapping_layers: int = 4
    channel_base: int = 128
    channel_max: int = 128
    demod_eps: float = 1e-8

    def __post_init__(self):
        r = self.resolution
        if r < 8 or r > 512 or r & (r - 1):
            raise ConfigError(f"resolution must be a power of two in [8, 512], got {r}")
        if min(self.dim_z, self.dim_w, self.mapping_layers) < 1:
            raise ConfigError("dim_z, dim_w and mapping_layers must be >= 1")

    def channels(self, res: int) -> int:
        stage = int(np.log2(res)) - 2
        return max(4, min(self.channel_max, self.channel_base >> stage))

    @property
    def block_resolutions(self) -> list[int]:
        return [4 * 2 ** i for i in range(int(np.log2(self.resolution)) - 1)]


def _param(rng: Rng, shape, gain: float = 1.0) -> Tensor:
    t = Tensor(rng.normal(shape) * gain)
    t.requires_grad = True
    return t


def _zeros(shape) -> Tensor:
    t = Tensor(np.zeros(shape))
    t.requires_grad = True
    return t


class GeneratorParams:
    """All learnable tensors of the generator, in a stable named order."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None):
        self.config = config
        c = config
        init = rng is not None
        self.mapping = []
        dims = [c.dim_z] + [c.dim_w] * c.mapping_layers
        for i in range(c.mapping_layers):
            fan_in = dims[i]
            w = _param(rng, (dims[i], dims[i + 1]), fan_in ** -0.5) if init \
                else _zeros((dims[i], dims[i + 1]))
            self.mapping.append((w, _zeros((dims[i + 1],))))
        c0 = c.channels(4)
        self.const = _param(rng, (c0, 4, 4)) if init else _zeros((c0, 4, 4))
        self.blocks = []
        in_ch = c0
        for res in c.block_resolutions:
            out_ch = c.channels(res)
            affine_w = _param(rng, (c.dim_w, in_ch), c.dim_w ** -0.5) if init \
                else _zeros((c.dim_w, in_ch))
            affine_b = _zeros((in_ch,))
            affine_b.data += 1.0  # styles start at identity scale
            conv = _param(rng, (out_ch, in_ch, 3, 3), (in_ch * 9) ** -0.5) if init \
                else _zeros((out_ch, in_ch, 3, 3))
            self.blocks.append({
                "affine_w": affine_w,
                "affine_b": affine_b,
                "conv": conv,
                "noise_strength": _zeros(()),
                "bias": _zeros((out_ch,)),
            })
            in_ch = out_ch
        self.torgb_w = _param(rng, (3, in_ch, 1, 1), in_ch ** -0.5) if init \
            else _zeros((3, in_ch, 1, 1))
        self.torgb_b = _zeros((3,))

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.mapping):
            out.append((f"map{i}/w", w))
            out.append((f"map{i}/b", b))
        out.append(("const", self.const))
        for i, blk in enumerate(self.blocks):
            for key in ("affine_w", "affine_b", "conv", "noise_strength", "bias"):
                out.append((f"b{i}/{key}", blk[key]))
        out.append(("torgb/w", self.torgb_w))
        out.append(("torgb/b", self.torgb_b))
        return out


class DiscriminatorParams:
    """Downsampling mirror of the generator plus a final dense logit layer."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None):
        self.config = config
        c = config
        init = rng is not None
        top = c.channels(c.resolution)
        self.from_rgb_w = _param(rng, (top, 3, 1, 1), 3 ** -0.5) if init \
            else _zeros((top, 3, 1, 1))
        self.from_rgb_b = _zeros((top,))
        self.blocks = []
        for res in reversed(config.block_resolutions):
            in_ch = c.channels(res)
            out_ch = c.channels(max(res // 2, 4))
            conv = _param(rng, (out_ch, in_ch, 3, 3), (in_ch * 9) ** -0.5) if init \
                else _zeros((out_ch, in_ch, 3, 3))
            self.blocks.append({"conv": conv, "bias": _zeros((out_ch,)), "res": res})
        bottom = c.channels(4) * 16
        self.dense_w = _param(rng, (bottom, 1), bottom ** -0.5) if init \
            else _zeros((bottom, 1))
        self.dense_b = _zeros((1,))

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = [("from_rgb/w", self.from_rgb_w), ("from_rgb/b", self.from_rgb_b)]
        for i, blk in enumerate(self.blocks):
            out.append((f"b{i}/conv", blk["conv"]))
            out.append((f"b{i}/bias", blk["bias"]))
        out.append(("dense/w", self.dense_w))
        out.append(("dense/b", self.dense_b))
        return out


# ---------------------------------------------------------------------------
# forward passes


def mapping_forward(z, params: GeneratorParams, eps: float = 1e-8) -> Tensor:
    """Latent -> style vector: RMS-normalize, then a leaky-ReLU MLP."""
    z = ad.as_tensor(z)
    single = z.data.ndim == 1
    if single:
        z = ad.reshape(z, (1, z.shape[0]))
    if z.shape[1] != params.config.dim_z:
        raise ShapeError(f"latent dim {z.shape[1]} != configured {params.config.dim_z}")
    ss = ad.scale(ad.sum_axes(ad.square(z), (1,)), 1.0 / z.shape[1])
    h = ad.scale_axis(z, ad.rsqrt(ad.add(ss, eps)), 0)
    for w, b in params.mapping:
        h = ad.leaky_relu(ad.bias_axis(ad.matmul(h, w), b, 1), LEAK)
    return ad.reshape(h, (h.shape[1],)) if single else h


def demodulate_weights(kernel, style_scales, eps: float = 1e-8) -> Tensor:
    """Scale kernel input channels by styles, then renormalize each output
    channel slice to (near) unit Frobenius norm."""
    kernel, style_scales = ad.as_tensor(kernel), ad.as_tensor(style_scales)
    if style_scales.data.ndim != 1 or style_scales.shape[0] != kernel.shape[1]:
        raise ShapeError("style_scales must be a vector over kernel input channels")
    if eps < 0:
        raise ConfigError("demodulation epsilon must be >= 0")
    w1 = ad.einsum2("fcij,c->fcij", kernel, style_scales)
    ss = ad.sum_axes(ad.square(w1), (1, 2, 3))
    d = ad.rsqrt(ad.add(ss, float(eps)) if eps else ss)
    return ad.einsum2("fcij,f->fcij", w1, d)


def _demodulate_batched(kernel, styles, eps: float) -> Tensor:
    """Per-sample variant: [F,C,kh,kw] x [N,C] -> [N,F,C,kh,kw]."""
    w1 = ad.einsum2("fcij,nc->nfcij", kernel, styles)
    ss = ad.sum_axes(ad.square(w1), (2, 3, 4))
    d = ad.rsqrt(ad.add(ss, float(eps)) if eps else ss)
    return ad.einsum2("nfcij,nf->nfcij", w1, d)


def generator_forward_batch(z, params: GeneratorParams, rng: Rng) -> Tensor:
    """Synthesize a [N,3,R,R] batch; fresh per-pixel noise drawn from rng."""
    cfg = params.config
    z = ad.as_tensor(z)
    n = z.shape[0]
    w = mapping_forward(z, params)
    x = ad.expand(params.const, (n,) + params.const.shape, (0,))
    for i, blk in enumerate(params.blocks):
        if i > 0:
            x = ad.upsample2x(x)
        res = x.shape[2]
        styles = ad.bias_axis(ad.matmul(w, blk["affine_w"]), blk["affine_b"], 1)
        kernels = _demodulate_batched(blk["conv"], styles, cfg.demod_eps)
        x = ad.conv2d_per_sample(x, kernels, stride=1, pad=1)
        out_ch = x.shape[1]
        noise = np.repeat(rng.normal((n, 1, res, res)), out_ch, axis=1)
        x = ad.add(x, ad.mul(Tensor(noise), blk["noise_strength"]))
        x = ad.bias_axis(x, blk["bias"], 1)
        x = ad.leaky_relu(x, LEAK)
    rgb = ad.conv2d(x, params.torgb_w, stride=1, pad=0)
    return ad.bias_axis(rgb, params.torgb_b, 1)


def generator_forward(z, params: GeneratorParams, noise_seed) -> Tensor:
    """Single-image synthesis: [dim_z] latent -> [3,R,R] linear output."""
    rng = noise_seed if isinstance(noise_seed, Rng) else Rng(int(noise_seed))
    z = ad.as_tensor(z)
    if z.data.ndim != 1:
        raise ShapeError("generator_forward expects a 1-D latent; use the batch variant")
    out = generator_forward_batch(ad.reshape(z, (1, z.shape[0])), params, rng)
    return ad.reshape(out, out.shape[1:])


def discriminator_forward(image, params: DiscriminatorParams) -> Tensor:
    """Score realness: [N,3,R,R] -> [N,1] logits (or [3,R,R] -> scalar)."""
    x = ad.as_tensor(image)
    single = x.data.ndim == 3
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    r = params.config.resolution
    if x.shape[1:] != (3, r, r):
        raise ShapeError(f"expected [N,3,{r},{r}] images, got {x.shape}")
    x = ad.leaky_relu(ad.bias_axis(ad.conv2d(x, params.from_rgb_w), params.from_rgb_b, 1), LEAK)
    for blk in params.blocks:
        x = ad.leaky_relu(ad.bias_axis(ad.conv2d(x, blk["conv"], stride=1, pad=1),
                                       blk["bias"], 1), LEAK)
        if blk["res"] > 4:
            x = ad.avgpool2x(x)
    n = x.shape[0]
    flat = ad.reshape(x, (n, x.shape[1] * x.shape[2] * x.shape[3]))
    logit = ad.bias_axis(ad.matmul(flat, params.dense_w), params.dense_b, 1)
    return ad.reshape(logit, ()) if single else logit


# ---------------------------------------------------------------------------
# losses


def generator_loss(d_fake) -> Tensor:
    """Non-saturating: softplus(-D(fake)), averaged over the batch."""
    return ad.mean(ad.softplus(ad.scale(ad.as_tensor(d_fake), -1.0)))


def discriminator_loss(d_real, d_fake) -> Tensor:
    """softplus(D(fake)) + softplus(-D(real)), each averaged over the batch."""
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    return ad.add(ad.mean(ad.softplus(d_fake)),
                  ad.mean(ad.softplus(ad.scale(d_real, -1.0))))


def gan_losses(d_real, d_fake, r1_penalty_term=None) -> tuple[Tensor, Tensor]:
    """Non-saturating logistic pair (loss_d, loss_g) from realness logits."""
    loss_d = discriminator_loss(d_real, d_fake)
    if r1_penalty_term is not None:
        loss_d = ad.add(loss_d, ad.as_tensor(r1_penalty_term))
    return loss_d, generator_loss(d_fake)


def r1_penalty(tape: ad.Tape, d_real: Tensor, x_real: Tensor, gamma: float) -> Tensor:
    """gamma/2 * E[ ||grad_x D(x)||^2 ] over the real batch.

    Differentiable in the discriminator parameters (the gradient is taken
    with create_graph), so it can be added to loss_d before backward.
    """
    total = ad.sum_axes(d_real)
    (gx,) = ad.grad(tape, total, [x_real], create_graph=True)
    axes = tuple(range(1, gx.data.ndim))
    per_sample = ad.sum_axes(ad.square(gx), axes)
    return ad.scale(ad.mean(per_sample), 0.5 * gamma)


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Clamp linear [-1,1] output and quantize to uint8 for export."""
    clipped = np.clip(images, -1.0, 1.0)
    return np.rint((clipped + 1.0) * 127.5).astype(np.uint8)

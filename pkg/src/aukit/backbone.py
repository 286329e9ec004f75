"""Frame feature extractor with per-label spatial attention.

The backbone stacks two multi-scale region layers, each followed by
2x2 max-pooling, so an l x l input frame becomes an 8c x l/4 x l/4
feature map.  A region layer runs one full-map 3x3 convolution, then
three chained per-patch convolution stages over successively coarser
partition grids (8x8, 4x4, 2x2 patches), concatenates the three stage
outputs along channels, and fuses them back with a 1x1 convolution;
every convolution is followed by a tanh nonlinearity.

On top of the shared feature map, one attention branch per label
produces a sigmoid attention map, multiplies it into every channel,
and reduces the result to a feature vector and an initial probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Xoshiro256pp

#: Partition grids of the three per-patch stages, finest first.
GRIDS = (8, 4, 2)


@dataclass
class ConvParams:
    kernels: T.Tensor  # (C_out, C_in, k, k)
    bias: T.Tensor     # (C_out,)


@dataclass
class PatchConvParams:
    kernels: T.Tensor  # (P, C_out, C_in, k, k)
    bias: T.Tensor     # (P, C_out)


@dataclass
class RegionLayerParams:
    input_conv: ConvParams
    stage_convs: Tuple[PatchConvParams, PatchConvParams, PatchConvParams]
    fusion_conv: ConvParams


@dataclass
class BackboneParams:
    layer1: RegionLayerParams  # 3 -> 4c channels at l x l
    layer2: RegionLayerParams  # 4c -> 8c channels at l/2 x l/2


@dataclass
class AttentionBranchParams:
    att_conv: ConvParams   # 8c -> 1
    feat_conv: ConvParams  # 8c -> 8c
    head_weight: T.Tensor  # (1, 8c)
    head_bias: T.Tensor    # (1,)


# ---------------------------------------------------------------------------
# Initialization: uniform fan-in scaling for weights, zero biases.
# ---------------------------------------------------------------------------


def _uniform(rng: Xoshiro256pp, shape: tuple[int, ...], fan_in: int) -> T.Tensor:
    # Uniform(-sqrt(3/fan_in), +sqrt(3/fan_in)) has variance 1/fan_in, so a
    # conv over fan_in inputs preserves activation variance layer to layer.
    scale = np.sqrt(3.0 / fan_in)
    return T.Tensor(rng.uniform_array(shape, -scale, scale), requires_grad=True)


def init_conv(rng: Xoshiro256pp, in_ch: int, out_ch: int, k: int) -> ConvParams:
    return ConvParams(
        kernels=_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k),
        bias=T.Tensor(np.zeros(out_ch), requires_grad=True),
    )


def init_patch_conv(
    rng: Xoshiro256pp, patches: int, in_ch: int, out_ch: int, k: int
) -> PatchConvParams:
    return PatchConvParams(
        kernels=_uniform(rng, (patches, out_ch, in_ch, k, k), in_ch * k * k),
        bias=T.Tensor(np.zeros((patches, out_ch)), requires_grad=True),
    )


def init_region_layer(rng: Xoshiro256pp, in_ch: int, out_ch: int) -> RegionLayerParams:
    stages = tuple(
        init_patch_conv(rng, grid * grid, out_ch, out_ch, 3) for grid in GRIDS
    )
    return RegionLayerParams(
        input_conv=init_conv(rng, in_ch, out_ch, 3),
        stage_convs=stages,  # type: ignore[arg-type]
        fusion_conv=init_conv(rng, 3 * out_ch, out_ch, 1),
    )


def init_backbone(rng: Xoshiro256pp, c: int) -> BackboneParams:
    return BackboneParams(
        layer1=init_region_layer(rng.fork(1), 3, 4 * c),
        layer2=init_region_layer(rng.fork(2), 4 * c, 8 * c),
    )


def init_attention_branch(rng: Xoshiro256pp, c: int) -> AttentionBranchParams:
    ch = 8 * c
    return AttentionBranchParams(
        att_conv=init_conv(rng, ch, 1, 3),
        feat_conv=init_conv(rng, ch, ch, 3),
        head_weight=_uniform(rng, (1, ch), ch),
        head_bias=T.Tensor(np.zeros(1), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _split_patches(x: T.Tensor, grid: int) -> T.Tensor:
    """(..., C, H, W) -> (..., g*g, C, H/g, W/g), patches in row-major order."""
    shape = x.shape
    height, width = shape[-2], shape[-1]
    if height % grid or width % grid:
        raise ShapeError(f"spatial size {height}x{width} not divisible by grid {grid}")
    ph, pw = height // grid, width // grid
    if len(shape) == 3:
        c = shape[0]
        r = T.reshape(x, (c, grid, ph, grid, pw))
        r = T.transpose(r, (1, 3, 0, 2, 4))
        return T.reshape(r, (grid * grid, c, ph, pw))
    b, c = shape[0], shape[1]
    r = T.reshape(x, (b, c, grid, ph, grid, pw))
    r = T.transpose(r, (0, 2, 4, 1, 3, 5))
    return T.reshape(r, (b, grid * grid, c, ph, pw))


def _merge_patches(x: T.Tensor, grid: int) -> T.Tensor:
    """Inverse of :func:`_split_patches`."""
    shape = x.shape
    if len(shape) == 4:
        _, c, ph, pw = shape
        r = T.reshape(x, (grid, grid, c, ph, pw))
        r = T.transpose(r, (2, 0, 3, 1, 4))
        return T.reshape(r, (c, grid * ph, grid * pw))
    b, _, c, ph, pw = shape
    r = T.reshape(x, (b, grid, grid, c, ph, pw))
    r = T.transpose(r, (0, 3, 1, 4, 2, 5))
    return T.reshape(r, (b, c, grid * ph, grid * pw))


def region_layer_forward(x: T.Tensor, params: RegionLayerParams) -> T.Tensor:
    current = T.tanh(
        T.conv2d(x, params.input_conv.kernels, params.input_conv.bias, padding=(1, 1))
    )
    stage_outputs = []
    for grid, bank in zip(GRIDS, params.stage_convs):
        patches = _split_patches(current, grid)
        convolved = T.conv2d_per_patch(patches, bank.kernels, bank.bias, padding=(1, 1))
        current = T.tanh(_merge_patches(convolved, grid))
        stage_outputs.append(current)
    channel_axis = 0 if len(x.shape) == 3 else 1
    stacked = T.concat(stage_outputs, axis=channel_axis)
    return T.tanh(
        T.conv2d(stacked, params.fusion_conv.kernels, params.fusion_conv.bias)
    )


def backbone_forward(frames: T.Tensor, params: BackboneParams) -> T.Tensor:
    shape = frames.shape
    if len(shape) not in (3, 4) or shape[-3] != 3 or shape[-2] != shape[-1]:
        raise ShapeError(f"frames must be (3, l, l) or (b, 3, l, l), got {shape}")
    l = shape[-1]
    if l % 32:
        raise ShapeError(f"frame size {l} must be divisible by 32")
    h = region_layer_forward(frames, params.layer1)
    h = T.maxpool2d(h)
    h = region_layer_forward(h, params.layer2)
    return T.maxpool2d(h)


def attention_branch_forward(
    feat: T.Tensor, branch: AttentionBranchParams
) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    """One label's attention pass over a feature map (or batch of maps).

    Returns (attention map M, pooled feature f0, initial probability).
    """
    batched = len(feat.shape) == 4
    logits = T.conv2d(feat, branch.att_conv.kernels, branch.att_conv.bias, padding=(1, 1))
    m = T.sigmoid(logits)
    spatial = m.shape[-2:]
    m = T.reshape(m, (m.shape[0],) + spatial if batched else spatial)
    weighted = T.broadcast_mul_channelwise(m, feat)
    refined = T.conv2d(
        weighted, branch.feat_conv.kernels, branch.feat_conv.bias, padding=(1, 1)
    )
    f0 = T.global_avg_pool(refined)
    rows = T.reshape(f0, (1, f0.shape[0])) if not batched else f0
    logit = T.bias_add_row(
        T.matmul(rows, T.transpose(branch.head_weight, (1, 0))), branch.head_bias
    )
    p0 = T.sigmoid(T.reshape(logit, (logit.shape[0],) if batched else ()))
    return m, f0, p0


def attention_stage_forward(
    frames: T.Tensor,
    backbone: BackboneParams,
    branches: list[AttentionBranchParams],
) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    """Run the backbone and every attention branch over a batch of frames.

    Returns stacked (M, f0, p0) with shapes (b, m, h, w), (b, m, 8c), (b, m).
    """
    if len(frames.shape) != 4:
        raise ShapeError(f"expected a batch of frames, got shape {frames.shape}")
    feat = backbone_forward(frames, backbone)
    b = feat.shape[0]
    maps, feats, probs = [], [], []
    for branch in branches:
        m, f0, p0 = attention_branch_forward(feat, branch)
        maps.append(T.reshape(m, (b, 1) + m.shape[1:]))
        feats.append(T.reshape(f0, (b, 1, f0.shape[1])))
        probs.append(T.reshape(p0, (b, 1)))
    return (
        T.concat(maps, axis=1),
        T.concat(feats, axis=1),
        T.concat(probs, axis=1),
    )


# ---------------------------------------------------------------------------
# Checkpoint naming
# ---------------------------------------------------------------------------


def _conv_entries(prefix: str, conv: ConvParams | PatchConvParams):
    yield f"{prefix}.kernels", conv.kernels
    yield f"{prefix}.bias", conv.bias


def region_layer_entries(prefix: str, layer: RegionLayerParams) -> Iterator[tuple[str, T.Tensor]]:
    yield from _conv_entries(f"{prefix}.input", layer.input_conv)
    for s, bank in enumerate(layer.stage_convs, start=1):
        yield from _conv_entries(f"{prefix}.stage{s}", bank)
    yield from _conv_entries(f"{prefix}.fusion", layer.fusion_conv)


def backbone_entries(params: BackboneParams) -> Iterator[tuple[str, T.Tensor]]:
    yield from region_layer_entries("backbone.layer1", params.layer1)
    yield from region_layer_entries("backbone.layer2", params.layer2)


def branch_entries(j: int, branch: AttentionBranchParams) -> Iterator[tuple[str, T.Tensor]]:
    """Checkpoint names for branch ``j`` (1-based, matching file formats)."""
    yield from _conv_entries(f"branch.{j}.att", branch.att_conv)
    yield from _conv_entries(f"branch.{j}.feat", branch.feat_conv)
    yield f"branch.{j}.head.weight", branch.head_weight
    yield f"branch.{j}.head.bias", branch.head_bias


def _conv_from(entries: Dict[str, T.Tensor], prefix: str) -> ConvParams:
    return ConvParams(entries[f"{prefix}.kernels"], entries[f"{prefix}.bias"])


def _patch_conv_from(entries: Dict[str, T.Tensor], prefix: str) -> PatchConvParams:
    return PatchConvParams(entries[f"{prefix}.kernels"], entries[f"{prefix}.bias"])


def region_layer_from(entries: Dict[str, T.Tensor], prefix: str) -> RegionLayerParams:
    return RegionLayerParams(
        input_conv=_conv_from(entries, f"{prefix}.input"),
        stage_convs=tuple(
            _patch_conv_from(entries, f"{prefix}.stage{s}") for s in (1, 2, 3)
        ),  # type: ignore[arg-type]
        fusion_conv=_conv_from(entries, f"{prefix}.fusion"),
    )


def backbone_from(entries: Dict[str, T.Tensor]) -> BackboneParams:
    return BackboneParams(
        layer1=region_layer_from(entries, "backbone.layer1"),
        layer2=region_layer_from(entries, "backbone.layer2"),
    )


def branch_from(entries: Dict[str, T.Tensor], j: int) -> AttentionBranchParams:
    return AttentionBranchParams(
        att_conv=_conv_from(entries, f"branch.{j}.att"),
        feat_conv=_conv_from(entries, f"branch.{j}.feat"),
        head_weight=entries[f"branch.{j}.head.weight"],
        head_bias=entries[f"branch.{j}.head.bias"],
    )

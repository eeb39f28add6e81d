"""Forward passes for the hybrid reconstructor and the convolutional baseline."""

from __future__ import annotations

import math

import numpy as np

from .. import ndtensor as nd
from ..errors import ContractError, DimensionError
from .config import TrustConfig, UnetConfig


def _as_image_tensor(image, size: int) -> nd.Tensor:
    if isinstance(image, nd.Tensor):
        t = image
    else:
        t = nd.Tensor(np.asarray(image, dtype=np.float64))
    if t.data.shape != (size, size):
        raise DimensionError(f"expected {size}x{size} image, got shape {t.data.shape}")
    if not np.isfinite(t.data).all():
        raise ContractError("input image contains non-finite values")
    return t


def _get(params: dict, name: str, shape: tuple[int, ...]) -> nd.Tensor:
    try:
        t = params[name]
    except KeyError:
        raise ContractError(f"missing parameter tensor {name!r}") from None
    if t.data.shape != shape:
        raise ContractError(
            f"parameter {name!r} has shape {t.data.shape}, config expects {shape}"
        )
    return t


def _linear(x: nd.Tensor, params: dict, prefix: str, d_in: int, d_out: int) -> nd.Tensor:
    w = _get(params, f"{prefix}.weight", (d_in, d_out))
    b = _get(params, f"{prefix}.bias", (d_out,))
    return nd.add(nd.matmul(x, w), b)


def _conv(x: nd.Tensor, params: dict, prefix: str, shape, stride=1, padding=0) -> nd.Tensor:
    w = _get(params, f"{prefix}.weight", shape)
    b = _get(params, f"{prefix}.bias", (shape[0],))
    out = nd.conv2d(x, w, stride=stride, padding=padding)
    return nd.add(out, nd.reshape(b, (shape[0], 1, 1)))


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(S, S) image -> (T, patch*patch) rows of row-major patches."""
    s = image.shape[0]
    g = s // patch
    return (
        image.reshape(g, patch, g, patch).transpose(0, 2, 1, 3).reshape(g * g, patch * patch)
    )


def _attention(x: nd.Tensor, params: dict, block: int, cfg: TrustConfig,
               capture: dict | None) -> nd.Tensor:
    d, dk, heads = cfg.embed_dim, cfg.head_dim, cfg.num_heads
    # scores are (Q K^T) / sqrt(d_k); folding the scale into Q is equivalent
    q = nd.scalar_mul(_linear(x, params, f"enc{block}.attn.q", d, d), 1.0 / math.sqrt(dk))
    k = nd.matmul(x, _get(params, f"enc{block}.attn.k.weight", (d, d)))
    v = _linear(x, params, f"enc{block}.attn.v", d, d)
    ctx = []
    for h in range(heads):
        qh = nd.narrow(q, 1, h * dk, dk)
        kh = nd.narrow(k, 1, h * dk, dk)
        vh = nd.narrow(v, 1, h * dk, dk)
        att = nd.softmax(nd.matmul(qh, nd.transpose(kh)), axis=-1)
        if capture is not None:
            capture[f"enc{block}.head{h}.attn"] = att.data.copy()
        ctx.append(nd.matmul(att, vh))
    merged = nd.concat(ctx, axis=1)
    return _linear(merged, params, f"enc{block}.attn.out", d, d)


def _encoder_block(x: nd.Tensor, params: dict, block: int, cfg: TrustConfig,
                   capture: dict | None) -> nd.Tensor:
    d = cfg.embed_dim
    attn = _attention(x, params, block, cfg, capture)
    x = nd.layernorm(
        nd.add(x, attn),
        _get(params, f"enc{block}.ln1.scale", (d,)),
        _get(params, f"enc{block}.ln1.shift", (d,)),
    )
    hidden = nd.gelu(_linear(x, params, f"enc{block}.mlp.fc1", d, cfg.mlp_dim))
    out = _linear(hidden, params, f"enc{block}.mlp.fc2", cfg.mlp_dim, d)
    return nd.layernorm(
        nd.add(x, out),
        _get(params, f"enc{block}.ln2.scale", (d,)),
        _get(params, f"enc{block}.ln2.shift", (d,)),
    )


def _tokens_to_grid(tokens: nd.Tensor, cfg: TrustConfig) -> nd.Tensor:
    g = cfg.token_grid
    return nd.reshape(nd.transpose(tokens), (cfg.embed_dim, g, g))


def forward_trust(params: dict, cfg: TrustConfig, image,
                  capture: dict | None = None) -> nd.Tensor:
    """Reconstruct an (S, S) observation image into an (S, S) estimate in (0, 1).

    Pass a dict as ``capture`` to collect per-head attention maps and block
    outputs for inspection.
    """
    img = _as_image_tensor(image, cfg.image_size)
    patches = nd.Tensor(patchify(img.data, cfg.patch_size))
    tokens = _linear(patches, params, "patch_embed", cfg.patch_dim, cfg.embed_dim)
    tokens = nd.add(tokens, _get(params, "pos_embed", (cfg.tokens, cfg.embed_dim)))

    block_outputs: list[nd.Tensor] = []
    for i in range(cfg.encoder_depth):
        tokens = _encoder_block(tokens, params, i, cfg, capture)
        block_outputs.append(tokens)
        if capture is not None:
            capture[f"enc{i}.tokens"] = tokens.data.copy()

    grid = _tokens_to_grid(tokens, cfg)
    cur = nd.adaptive_avg_pool(grid, cfg.pool_grid, cfg.pool_grid)

    in_ch = cfg.embed_dim
    for s, (res, out_ch, upsampled) in enumerate(cfg.stage_plan()):
        if upsampled:
            cur = nd.upsample_nearest(cur, 2)
        src_block = cfg.skip_for_stage(s)
        if src_block is not None:
            skip = _tokens_to_grid(block_outputs[src_block - 1], cfg)
            skip = _conv(skip, params, f"skip{s}.proj", (out_ch, cfg.embed_dim, 1, 1))
            skip = nd.resize_bilinear(skip, res, res)
            cur = nd.concat([cur, skip], axis=0)
            in_ch += out_ch
        cur = nd.relu(_conv(cur, params, f"dec{s}.conv", (out_ch, in_ch, 3, 3), padding=1))
        in_ch = out_ch

    out = nd.sigmoid(_conv(cur, params, "head", (1, in_ch, 1, 1)))
    return nd.reshape(out, (cfg.image_size, cfg.image_size))


def forward_unet(params: dict, cfg: UnetConfig, image) -> nd.Tensor:
    """Three-level encoder/decoder baseline; same I/O contract as forward_trust."""
    img = _as_image_tensor(image, cfg.image_size)
    c = cfg.base_channels
    x = nd.reshape(img, (1, cfg.image_size, cfg.image_size))
    e0 = nd.relu(_conv(x, params, "enc0.conv", (c, 1, 3, 3), padding=1))
    e1 = nd.relu(_conv(e0, params, "enc1.conv", (2 * c, c, 3, 3), stride=2, padding=1))
    e2 = nd.relu(_conv(e1, params, "enc2.conv", (4 * c, 2 * c, 3, 3), stride=2, padding=1))
    d1 = nd.concat([nd.upsample_nearest(e2, 2), e1], axis=0)
    d1 = nd.relu(_conv(d1, params, "dec1.conv", (2 * c, 6 * c, 3, 3), padding=1))
    d0 = nd.concat([nd.upsample_nearest(d1, 2), e0], axis=0)
    d0 = nd.relu(_conv(d0, params, "dec0.conv", (c, 3 * c, 3, 3), padding=1))
    out = nd.sigmoid(_conv(d0, params, "head", (1, c, 1, 1)))
    return nd.reshape(out, (cfg.image_size, cfg.image_size))


def token_gram(params: dict, cfg: TrustConfig, image, mode: str = "embedded") -> np.ndarray:
    """Pre-softmax scaled token similarity matrix at the first encoder block.

    ``embedded`` runs the learned patch embedding and block-1 query/key
    projections; ``raw`` takes plain pixel patches as tokens (the identity
    embedding mode used to compare observation and target geometry).
    """
    img = _as_image_tensor(image, cfg.image_size)
    patches = patchify(img.data, cfg.patch_size)
    if mode == "raw":
        return (patches @ patches.T) / math.sqrt(cfg.patch_dim)
    if mode != "embedded":
        raise ContractError(f"unknown token_gram mode {mode!r}")
    tokens = patches @ params["patch_embed.weight"].data + params["patch_embed.bias"].data
    tokens = tokens + params["pos_embed"].data
    q = tokens @ params["enc0.attn.q.weight"].data + params["enc0.attn.q.bias"].data
    k = tokens @ params["enc0.attn.k.weight"].data
    return (q @ k.T) / math.sqrt(cfg.head_dim)

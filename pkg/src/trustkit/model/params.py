"""Parameter sets: shape maps, seeded initialization, counting, checkpoints."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .. import ndtensor as nd
from ..errors import CheckpointError, ParameterError
from .config import TrustConfig, UnetConfig

CHECKPOINT_VERSION = 1

TRUST = "trust"
UNET = "unet"


def trust_param_shapes(cfg: TrustConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (cfg.patch_dim, cfg.embed_dim),
        "patch_embed.bias": (cfg.embed_dim,),
        "pos_embed": (cfg.tokens, cfg.embed_dim),
    }
    d = cfg.embed_dim
    for i in range(cfg.encoder_depth):
        for proj in ("q", "k", "v", "out"):
            shapes[f"enc{i}.attn.{proj}.weight"] = (d, d)
            if proj != "k":
                # a key bias shifts every score row by a constant, which the
                # row softmax cancels; the parameter would be dead weight
                shapes[f"enc{i}.attn.{proj}.bias"] = (d,)
        shapes[f"enc{i}.ln1.scale"] = (d,)
        shapes[f"enc{i}.ln1.shift"] = (d,)
        shapes[f"enc{i}.mlp.fc1.weight"] = (d, cfg.mlp_dim)
        shapes[f"enc{i}.mlp.fc1.bias"] = (cfg.mlp_dim,)
        shapes[f"enc{i}.mlp.fc2.weight"] = (cfg.mlp_dim, d)
        shapes[f"enc{i}.mlp.fc2.bias"] = (d,)
        shapes[f"enc{i}.ln2.scale"] = (d,)
        shapes[f"enc{i}.ln2.shift"] = (d,)
    in_ch = d
    for s, (_, out_ch, _) in enumerate(cfg.stage_plan()):
        if cfg.skip_for_stage(s) is not None:
            shapes[f"skip{s}.proj.weight"] = (out_ch, d, 1, 1)
            shapes[f"skip{s}.proj.bias"] = (out_ch,)
            in_ch += out_ch
        shapes[f"dec{s}.conv.weight"] = (out_ch, in_ch, 3, 3)
        shapes[f"dec{s}.conv.bias"] = (out_ch,)
        in_ch = out_ch
    shapes["head.weight"] = (1, in_ch, 1, 1)
    shapes["head.bias"] = (1,)
    return shapes


def unet_param_shapes(cfg: UnetConfig) -> dict[str, tuple[int, ...]]:
    c = cfg.base_channels
    return {
        "enc0.conv.weight": (c, 1, 3, 3),
        "enc0.conv.bias": (c,),
        "enc1.conv.weight": (2 * c, c, 3, 3),
        "enc1.conv.bias": (2 * c,),
        "enc2.conv.weight": (4 * c, 2 * c, 3, 3),
        "enc2.conv.bias": (4 * c,),
        "dec1.conv.weight": (2 * c, 4 * c + 2 * c, 3, 3),
        "dec1.conv.bias": (2 * c,),
        "dec0.conv.weight": (c, 2 * c + c, 3, 3),
        "dec0.conv.bias": (c,),
        "head.weight": (1, c, 1, 1),
        "head.bias": (1,),
    }


def param_shapes(model_kind: str, cfg) -> dict[str, tuple[int, ...]]:
    if model_kind == TRUST:
        return trust_param_shapes(cfg)
    if model_kind == UNET:
        return unet_param_shapes(cfg)
    raise ParameterError(f"unknown model kind {model_kind!r}")


def _init_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".bias") or name.endswith(".shift"):
        return np.zeros(shape)
    if name.endswith(".scale"):
        return np.ones(shape)
    if name == "pos_embed":
        return 0.02 * rng.standard_normal(shape)
    if len(shape) == 4:  # conv kernels: fan_in = C_in * kh * kw
        fan_in = shape[1] * shape[2] * shape[3]
    else:  # linear weights stored (in, out)
        fan_in = shape[0]
    return rng.standard_normal(shape) / np.sqrt(fan_in)


def init_params(model_kind: str, cfg) -> dict[str, nd.Tensor]:
    """Seeded parameter set; iteration order is the shape-map order."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0x1,)))
    return {
        name: nd.Tensor(_init_value(name, shape, rng), requires_grad=True, name=name)
        for name, shape in param_shapes(model_kind, cfg).items()
    }


def param_count(model_kind: str, cfg) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(model_kind, cfg).values())


def flop_estimate(model_kind: str, cfg) -> int:
    """Multiply-add estimate for one forward pass (pool/resize/pointwise excluded)."""
    if model_kind == UNET:
        s = cfg.image_size
        c = cfg.base_channels
        total = s * s * c * 1 * 9
        total += (s // 2) ** 2 * (2 * c) * c * 9
        total += (s // 4) ** 2 * (4 * c) * (2 * c) * 9
        total += (s // 2) ** 2 * (2 * c) * (6 * c) * 9
        total += s * s * c * (3 * c) * 9
        total += s * s * 1 * c
        return total
    t, d = cfg.tokens, cfg.embed_dim
    total = t * cfg.patch_dim * d  # patch embedding
    per_block = 4 * t * d * d  # q, k, v, out projections
    per_block += 2 * t * t * d  # scores and value aggregation across heads
    per_block += 2 * t * d * cfg.mlp_dim
    total += cfg.encoder_depth * per_block
    in_ch = d
    for s, (res, out_ch, _) in enumerate(cfg.stage_plan()):
        if cfg.skip_for_stage(s) is not None:
            total += cfg.token_grid**2 * out_ch * d  # 1x1 skip projection
            in_ch += out_ch
        total += res * res * out_ch * in_ch * 9
        in_ch = out_ch
    total += cfg.image_size**2 * in_ch  # 1x1 head
    return total


# ---- checkpoints -------------------------------------------------------------


def _blob_path(path: Path) -> Path:
    return path.with_name(path.name + ".bin")


def checkpoint_save(params: dict[str, nd.Tensor], model_kind: str, cfg,
                    path: str | Path) -> None:
    """JSON manifest at ``path`` plus a little-endian f64 blob at ``path + .bin``.

    Tensor payloads are concatenated in sorted-name order so repeated saves
    of the same parameters are byte-identical.
    """
    path = Path(path)
    names = sorted(params)
    blob = b"".join(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes() for n in names)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model_kind": model_kind,
        "config": cfg.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
        "blob": _blob_path(path).name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    _blob_path(path).write_bytes(blob)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def checkpoint_load(path: str | Path) -> tuple[dict[str, nd.Tensor], dict]:
    """Load and validate a checkpoint; returns (params, manifest).

    Validation is all-or-nothing: a truncated blob, digest mismatch, format
    version bump, or shape disagreement with the stored config raises
    before any tensor is returned.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} != {CHECKPOINT_VERSION}"
        )
    blob_file = path.parent / manifest["blob"]
    blob = blob_file.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError(f"checkpoint blob digest mismatch for {blob_file}")
    expected_len = sum(int(np.prod(t["shape"])) for t in manifest["tensors"]) * 8
    if len(blob) != expected_len:
        raise CheckpointError(
            f"checkpoint blob holds {len(blob)} bytes, expected {expected_len}"
        )
    cfg = config_from_manifest(manifest)
    expected_shapes = param_shapes(manifest["model_kind"], cfg)
    stored = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    if stored != expected_shapes:
        raise CheckpointError(
            "checkpoint tensor shapes disagree with the stored config"
        )
    params: dict[str, nd.Tensor] = {}
    offset = 0
    flat = np.frombuffer(blob, dtype="<f8")
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"]))
        data = flat[offset : offset + size].reshape(entry["shape"]).copy()
        params[entry["name"]] = nd.Tensor(data, requires_grad=True, name=entry["name"])
        offset += size
    return params, manifest


def config_from_manifest(manifest: dict):
    kind = manifest["model_kind"]
    raw = dict(manifest["config"])
    if kind == TRUST:
        return TrustConfig(**raw)
    if kind == UNET:
        return UnetConfig(**raw)
    raise CheckpointError(f"checkpoint names unknown model kind {kind!r}")

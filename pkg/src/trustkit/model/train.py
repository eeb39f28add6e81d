"""Single-threaded, fully seeded training loop with Adam and epoch logging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics, ndtensor as nd
from ..errors import ContractError
from .config import TrainConfig
from .forward import forward_trust, forward_unet
from .losses import loss as make_loss
from .params import TRUST, UNET, checkpoint_save, init_params


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: dict[str, nd.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)

    def zero_grad(self) -> None:
        nd.zero_grads(self.params.values())


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_ssim: float
    val_psnr: float
    val_fpr: float


@dataclass
class TrainResult:
    params: dict[str, nd.Tensor]
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_ssim,val_psnr,val_fpr"]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_ssim!r},"
                f"{r.val_psnr!r},{r.val_fpr!r}"
            )
        return "\n".join(lines) + "\n"


def _forward_fn(model_kind: str):
    if model_kind == TRUST:
        return forward_trust
    if model_kind == UNET:
        return forward_unet
    raise ContractError(f"unknown model kind {model_kind!r}")


def _abort_on_nonfinite(batch_loss: nd.Tensor, params: dict[str, nd.Tensor]) -> None:
    if math.isfinite(batch_loss.item()):
        return
    for tensor in nd.Tape.trace(batch_loss).nodes:
        if not np.isfinite(tensor.data).all():
            raise ContractError(
                f"training aborted: first non-finite tensor is "
                f"{tensor.name or f'<intermediate {tensor.data.shape}>'}"
            )
    for name, p in params.items():
        if not np.isfinite(p.data).all():
            raise ContractError(f"training aborted: first non-finite tensor is {name}")
    raise ContractError("training aborted: loss is non-finite")


def _detached(params: dict[str, nd.Tensor]) -> dict[str, nd.Tensor]:
    # zero-copy re-wrap: evaluation forwards skip graph construction
    return {k: nd.Tensor(p.data) for k, p in params.items()}


def evaluate(model_kind: str, params: dict[str, nd.Tensor], model_cfg,
             pairs, train_cfg: TrainConfig) -> tuple[float, float, float, float]:
    """Mean validation loss, SSIM, PSNR, FPR over (target, observation) pairs."""
    forward = _forward_fn(model_kind)
    frozen = _detached(params)
    losses, ssims, psnrs, fprs = [], [], [], []
    for x_img, y_img in pairs:
        pred = forward(frozen, model_cfg, y_img)
        losses.append(
            make_loss(train_cfg.loss_kind, pred, x_img,
                      train_cfg.lambda_l1, train_cfg.lambda_ssim).item()
        )
        ssims.append(metrics.ssim(pred.data, x_img))
        psnrs.append(metrics.psnr(pred.data, x_img))
        fprs.append(metrics.fpr(np.clip(pred.data, 0.0, 1.0), np.clip(x_img, 0.0, 1.0)))
    n = max(len(losses), 1)
    return (
        math.fsum(losses) / n,
        math.fsum(ssims) / n,
        math.fsum(psnrs) / n,
        math.fsum(fprs) / n,
    )


def train(model_kind: str, model_cfg, train_cfg: TrainConfig, train_pairs,
          val_pairs, out_dir: str | Path | None = None,
          params: dict[str, nd.Tensor] | None = None) -> TrainResult:
    """Train on (target, observation) pairs; deterministic for fixed seeds.

    Writes ``ckpt_best``/``ckpt_last`` checkpoints and ``epochs.csv`` under
    ``out_dir`` when given. Initial parameters come from the model config's
    seed unless an explicit set is passed.
    """
    forward = _forward_fn(model_kind)
    if params is None:
        params = init_params(model_kind, model_cfg)
    adam = Adam(params, train_cfg.learning_rate, train_cfg.adam_beta1,
                train_cfg.adam_beta2, train_cfg.adam_eps)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(0x5,))
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    result = TrainResult(params=params)
    best_val = math.inf
    n_train = len(train_pairs)
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        epoch_losses = []
        for lo in range(0, n_train, train_cfg.batch_size):
            batch = order[lo : lo + train_cfg.batch_size]
            adam.zero_grad()
            sample_losses = []
            for idx in batch:
                x_img, y_img = train_pairs[idx]
                pred = forward(params, model_cfg, y_img)
                sample_losses.append(
                    make_loss(train_cfg.loss_kind, pred, x_img,
                              train_cfg.lambda_l1, train_cfg.lambda_ssim)
                )
            total = sample_losses[0]
            for extra in sample_losses[1:]:
                total = nd.add(total, extra)
            batch_loss = nd.scalar_mul(total, 1.0 / len(sample_losses))
            _abort_on_nonfinite(batch_loss, params)
            batch_loss.backward()
            adam.step()
            epoch_losses.append(batch_loss.item() * len(sample_losses))
        train_loss = math.fsum(epoch_losses) / n_train
        val_loss, val_ssim, val_psnr, val_fpr = evaluate(
            model_kind, params, model_cfg, val_pairs, train_cfg
        )
        result.rows.append(EpochRow(epoch, train_loss, val_loss, val_ssim, val_psnr, val_fpr))
        if val_loss < best_val:
            best_val = val_loss
            result.best_epoch = epoch
            if out_dir is not None:
                checkpoint_save(params, model_kind, model_cfg, out_dir / "ckpt_best.json")
    if out_dir is not None:
        checkpoint_save(params, model_kind, model_cfg, out_dir / "ckpt_last.json")
        (out_dir / "epochs.csv").write_text(result.log_csv())
    return result

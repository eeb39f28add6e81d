"""Reconstruction quality metrics: MSE/MAE/RMSE, PSNR, windowed SSIM (also
usable as a differentiable loss term), and the hallucinated-pixel rate."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndtensor as nd
from .errors import DimensionError, ParameterError

PSNR_RMSE_FLOOR = 1e-12  # caps a perfect match at 240 dB
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 7


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    return float(np.mean(np.abs(pred - target)))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


def psnr(pred, target, max_value: float = 1.0) -> float:
    """20 * log10(MAX / RMSE), with RMSE floored at 1e-12."""
    if max_value <= 0:
        raise ParameterError(f"max_value must be > 0, got {max_value}")
    return 20.0 * math.log10(max_value / max(rmse(pred, target), PSNR_RMSE_FLOOR))


@dataclass
class FprThresholds:
    """A pixel is hallucinated when prediction > t_high while truth <= t_low."""

    t_high: float = 0.5
    t_low: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.t_low <= self.t_high <= 1.0):
            raise ParameterError(
                f"need 0 <= t_low <= t_high <= 1, got t_low={self.t_low}, t_high={self.t_high}"
            )


def fpr(pred, target, thresholds: FprThresholds | None = None) -> float:
    """Fraction of hallucinated pixels over the entire image.

    The paper's tables label this quantity FDR; both names refer to this
    whole-image-normalized count.
    """
    thresholds = thresholds or FprThresholds()
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    hallucinated = (pred > thresholds.t_high) & (target <= thresholds.t_low)
    return float(np.count_nonzero(hallucinated)) / pred.size


fdr = fpr


def ssim_tensor(pred: nd.Tensor, target: nd.Tensor, window: int = SSIM_WINDOW,
                c1: float = SSIM_C1, c2: float = SSIM_C2) -> nd.Tensor:
    """Mean SSIM over sliding uniform windows, built from autodiff primitives
    so the gradient flows when either input tracks gradients.

    Inputs are (H, W) or (1, H, W); dynamic range is assumed 1.
    """
    if pred.data.ndim == 2:
        pred = nd.reshape(pred, (1,) + pred.data.shape)
    if target.data.ndim == 2:
        target = nd.reshape(target, (1,) + target.data.shape)
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"shape mismatch: {pred.data.shape} vs {target.data.shape}")
    _, h, w = pred.data.shape
    if window > h or window > w:
        raise ParameterError(f"window {window} exceeds image {h}x{w}")

    kernel = nd.Tensor(np.full((1, 1, window, window), 1.0 / window**2))

    def box(t):
        return nd.conv2d(t, kernel)

    mu_p = box(pred)
    mu_t = box(target)
    mu_pt = nd.mul(mu_p, mu_t)
    mu_pp = nd.mul(mu_p, mu_p)
    mu_tt = nd.mul(mu_t, mu_t)
    var_p = nd.sub(box(nd.mul(pred, pred)), mu_pp)
    var_t = nd.sub(box(nd.mul(target, target)), mu_tt)
    cov = nd.sub(box(nd.mul(pred, target)), mu_pt)

    num = nd.mul(nd.scalar_add(nd.scalar_mul(mu_pt, 2.0), c1),
                 nd.scalar_add(nd.scalar_mul(cov, 2.0), c2))
    den = nd.mul(nd.scalar_add(nd.add(mu_pp, mu_tt), c1),
                 nd.scalar_add(nd.add(var_p, var_t), c2))
    return nd.reduce_mean(nd.div(num, den))


def ssim(pred, target, window: int = SSIM_WINDOW, c1: float = SSIM_C1,
         c2: float = SSIM_C2) -> float:
    """Scalar SSIM of two arrays (no gradient tracking)."""
    return ssim_tensor(
        nd.Tensor(np.asarray(pred, dtype=np.float64)),
        nd.Tensor(np.asarray(target, dtype=np.float64)),
        window=window, c1=c1, c2=c2,
    ).item()


@dataclass
class ImageMetrics:
    mse: float
    mae: float
    rmse: float
    psnr: float
    ssim: float
    fpr: float


def score_image(pred, target, thresholds: FprThresholds | None = None,
                window: int = SSIM_WINDOW) -> ImageMetrics:
    return ImageMetrics(
        mse=mse(pred, target),
        mae=mae(pred, target),
        rmse=rmse(pred, target),
        psnr=psnr(pred, target),
        ssim=ssim(pred, target, window=window),
        fpr=fpr(pred, target, thresholds),
    )


_FIELDS = ("mse", "mae", "rmse", "psnr", "ssim", "fpr")


@dataclass
class MetricReport:
    """Per-image metric rows plus mean/std aggregates.

    Aggregates use compensated summation (math.fsum) so sharded and serial
    evaluation produce identical numbers; std is the population standard
    deviation, matching a naive recomputation over the rows.
    """

    rows: list[ImageMetrics] = field(default_factory=list)
    thresholds: FprThresholds = field(default_factory=FprThresholds)
    ssim_window: int = SSIM_WINDOW
    ssim_c1: float = SSIM_C1
    ssim_c2: float = SSIM_C2

    def add(self, pred, target) -> ImageMetrics:
        row = score_image(pred, target, self.thresholds, self.ssim_window)
        self.rows.append(row)
        return row

    def aggregate(self) -> dict:
        out = {}
        n = len(self.rows)
        for name in _FIELDS:
            vals = [getattr(r, name) for r in self.rows]
            mean = math.fsum(vals) / n if n else float("nan")
            var = math.fsum((v - mean) ** 2 for v in vals) / n if n else float("nan")
            out[name] = {"mean": mean, "std": math.sqrt(var) if n else float("nan")}
        out["fdr"] = dict(out["fpr"])  # table alias for the same quantity
        return out

    def to_csv(self) -> str:
        lines = ["index," + ",".join(_FIELDS)]
        for i, r in enumerate(self.rows):
            lines.append(str(i) + "," + ",".join(repr(getattr(r, name)) for name in _FIELDS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "count": len(self.rows),
                "aggregate": self.aggregate(),
                "parameters": {
                    "t_high": self.thresholds.t_high,
                    "t_low": self.thresholds.t_low,
                    "ssim_window": self.ssim_window,
                    "ssim_c1": self.ssim_c1,
                    "ssim_c2": self.ssim_c2,
                    "psnr_max": 1.0,
                    "psnr_rmse_floor": PSNR_RMSE_FLOOR,
                },
            },
            sort_keys=True,
            indent=2,
        )

    def save(self, directory: str | Path, stem: str = "metrics") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}_per_image.csv").write_text(self.to_csv())
        (directory / f"{stem}_aggregate.json").write_text(self.to_json() + "\n")

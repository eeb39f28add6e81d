"""Command-line entry point: dataset generation, bound verification, sparse
solving, training, evaluation, and cross-run reporting.

Every command accepts both flags and a JSON config file (flags win), echoes
the fully resolved configuration into a run record next to its outputs, and
follows a fixed exit-code contract: 0 success, 1 verification failure,
2 usage or configuration error. The TRUST_THREADS environment variable caps
worker counts for the parallel paths (0 or unset: serial).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bound_lab, dataset, metrics, model, ndtensor as nd, sensing, solvers
from .errors import (
    CheckpointError,
    ContractError,
    DatasetError,
    DimensionError,
    EnumerationCapExceeded,
    ParameterError,
    SingularMatrixError,
)

_USAGE_ERRORS = (ParameterError, DatasetError, CheckpointError, DimensionError)

_LOSS_TOKENS = {"l2": "l2", "l2l1": "l2_l1", "l2ssim": "l2_ssim"}


def _workers() -> int:
    raw = os.environ.get("TRUST_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(ctx: click.Context, file_cfg: dict, **values) -> dict:
    """Flags override config-file entries, which override defaults."""
    from click.core import ParameterSource

    resolved = {}
    for key, flag_value in values.items():
        src = ctx.get_parameter_source(key)
        if src == ParameterSource.COMMANDLINE or key not in file_cfg:
            resolved[key] = flag_value
        else:
            resolved[key] = file_cfg[key]
    return resolved


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"not JSON serializable: {type(value)}")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


def write_run_record(out_dir: Path, command: str, config: dict,
                     input_digests: dict, outputs: list[str], started: float,
                     exit_status: int = 0) -> None:
    record = {
        "command": command,
        "config": config,
        "input_hash": hashlib.sha256(
            (_canonical(config) + _canonical(input_digests)).encode()
        ).hexdigest(),
        "inputs": input_digests,
        "outputs": sorted(outputs),
        "duration_seconds": round(time.monotonic() - started, 3),
        "exit_status": exit_status,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_record.json").write_text(
        json.dumps(record, sort_keys=True, indent=2, default=_json_default) + "\n"
    )


def _digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@click.group()
def main() -> None:
    """Sparse-recovery toolkit: data generation, bound verification, classical
    solvers, model training/evaluation, and run comparison reports."""


# ---- gen-data -----------------------------------------------------------------


@main.command("gen-data")
@click.option("--out", "out_dir", default="data", show_default=True)
@click.option("--config", "config_path", default=None, help="JSON config file; flags override.")
@click.option("--image-size", default=32, show_default=True)
@click.option("--train", default=2000, show_default=True)
@click.option("--val", default=400, show_default=True)
@click.option("--test", default=400, show_default=True)
@click.option("--operator", default="gaussian", show_default=True,
              type=click.Choice(["gaussian", "orthonormal", "fourier", "identity"]))
@click.option("--keep", default=0.25, show_default=True,
              help="Kept-frequency fraction for the fourier operator.")
@click.option("--noise-sigma", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--dtype", default="f32", type=click.Choice(["f32", "f64"]), show_default=True)
@click.pass_context
def gen_data(ctx, out_dir, config_path, image_size, train, val, test, operator,
             keep, noise_sigma, seed, dtype):
    """Generate a synthetic observation-target dataset with a manifest."""
    started = time.monotonic()
    cfg = _resolve(ctx, _load_config_file(config_path),
                   out=out_dir, image_size=image_size, train=train, val=val,
                   test=test, operator=operator, keep=keep,
                   noise_sigma=noise_sigma, seed=seed, dtype=dtype)
    kind_map = {
        "gaussian": sensing.DENSE,
        "orthonormal": sensing.ORTHONORMAL_SQUARE,
        "fourier": sensing.FOURIER_MASKED,
        "identity": sensing.IDENTITY,
    }
    try:
        spec = dataset.DatasetSpec(
            image_size=cfg["image_size"], train=cfg["train"], val=cfg["val"],
            test=cfg["test"], operator_kind=kind_map[cfg["operator"]],
            operator_keep=cfg["keep"], noise_sigma=cfg["noise_sigma"],
            seed=cfg["seed"], dtype=cfg["dtype"],
        )
        out = Path(cfg["out"])
        manifest = dataset.gen_dataset(spec, out)
    except _USAGE_ERRORS as exc:
        raise click.UsageError(str(exc))
    outputs = ["manifest.json"] + [
        name for info in manifest["splits"].values() for name in (info["pairs"], info["norm"])
    ]
    write_run_record(out, "gen-data", cfg, {}, outputs, started)
    click.echo(f"dataset written to {out}")


# ---- verify-bound --------------------------------------------------------------


def _int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise click.UsageError(f"--{flag} must be a comma-separated integer list, got {text!r}")
    if not values:
        raise click.UsageError(f"--{flag} must name at least one value")
    return values


@main.command("verify-bound")
@click.option("--out", "out_dir", default="bound_run", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--kinds", default="gaussian_fat,orthonormal_square", show_default=True)
@click.option("--m", "m_list", default="8,12", show_default=True)
@click.option("--n", "n_list", default="12", show_default=True)
@click.option("--k", "k_list", default="2", show_default=True)
@click.option("--trials", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--matrix", "emit_matrix", is_flag=True,
              help="Also emit a gnuplot-ready mean-deviation matrix per kind.")
@click.pass_context
def verify_bound(ctx, out_dir, config_path, kinds, m_list, n_list, k_list,
                 trials, seed, emit_matrix):
    """Sweep operator ensembles and check deviation <= delta on exact cells.

    Exits 1 if any exactly-enumerated cell violates the bound.
    """
    started = time.monotonic()
    cfg = _resolve(ctx, _load_config_file(config_path),
                   out=out_dir, kinds=kinds, m_list=m_list, n_list=n_list,
                   k_list=k_list, trials=trials, seed=seed, emit_matrix=emit_matrix)
    kind_names = [k.strip() for k in cfg["kinds"].split(",") if k.strip()]
    for k in kind_names:
        if k not in sensing.KINDS:
            raise click.UsageError(f"unknown operator kind {k!r}; choose from {sensing.KINDS}")
    if cfg["trials"] < 1:
        raise click.UsageError("--trials must be >= 1")
    try:
        result = bound_lab.attention_similarity_sweep(
            kinds=kind_names,
            ms=_int_list(cfg["m_list"], "m"),
            ns=_int_list(cfg["n_list"], "n"),
            ks=_int_list(cfg["k_list"], "k"),
            trials=cfg["trials"], seed=cfg["seed"], workers=_workers(),
        )
    except (EnumerationCapExceeded, *_USAGE_ERRORS) as exc:
        raise click.UsageError(str(exc))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(result.to_csv())
    outputs = ["sweep.csv"]
    if cfg["emit_matrix"]:
        for kind in kind_names:
            name = f"matrix_{kind}.txt"
            (out / name).write_text(result.to_matrix(kind))
            outputs.append(name)
    violations = result.violations()
    status = 1 if violations else 0
    write_run_record(out, "verify-bound", cfg, {}, outputs, started, exit_status=status)
    for cell in violations:
        click.echo(
            f"BOUND VIOLATION kind={cell.kind} m={cell.m} n={cell.n} k={cell.k}: "
            f"max_dev {cell.max_dev!r} > delta {cell.delta!r}",
            err=True,
        )
    click.echo(f"{len(result.cells)} cells -> {out / 'sweep.csv'}")
    if status:
        sys.exit(status)


# ---- solve ---------------------------------------------------------------------


@main.command("solve")
@click.option("--dataset", "dataset_dir", required=True)
@click.option("--out", "out_dir", default="solve_run", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--method", default="omp", type=click.Choice(["omp", "ista", "fista"]),
              show_default=True)
@click.option("--operator", "operator_mode", default="known",
              type=click.Choice(["known", "estimated"]), show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--sparsity", default=0, show_default=True,
              help="Greedy atom budget for omp; 0 means n // 4.")
@click.option("--lam", default=None, type=float,
              help="l1 weight for ista/fista; default 0.05 * |A^T y|_inf per problem.")
@click.option("--tol", default=1e-6, show_default=True)
@click.option("--max-iter", default=500, show_default=True)
@click.option("--ridge", default=None, type=float,
              help="Ridge for operator estimation; default trace-scaled.")
@click.option("--limit", default=0, show_default=True, help="Solve at most N samples (0: all).")
@click.pass_context
def solve(ctx, dataset_dir, out_dir, config_path, method, operator_mode, split,
          sparsity, lam, tol, max_iter, ridge, limit):
    """Sparse-recover a dataset split with a classical solver and score it."""
    started = time.monotonic()
    cfg = _resolve(ctx, _load_config_file(config_path),
                   dataset=dataset_dir, out=out_dir, method=method,
                   operator=operator_mode, split=split, sparsity=sparsity,
                   lam=lam, tol=tol, max_iter=max_iter, ridge=ridge, limit=limit)
    try:
        manifest = dataset.load_manifest(cfg["dataset"])
        pairs = dataset.load_split(manifest, cfg["split"])
        if cfg["limit"]:
            pairs = pairs[: cfg["limit"]]
        if cfg["operator"] == "known":
            op = dataset.operator_from_manifest(manifest)
        else:
            train_vecs = dataset.split_vectors(manifest, "train")
            op = solvers.estimate_operator(train_vecs, ridge=cfg["ridge"])
        report, recon = _solve_split(op, manifest, pairs, cfg)
    except (SingularMatrixError, *_USAGE_ERRORS) as exc:
        raise click.UsageError(str(exc))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.save(out, stem="metrics")
    (out / "reconstructions.f64").write_bytes(
        np.ascontiguousarray(np.stack(recon), dtype="<f8").tobytes()
    )
    digests = {"dataset_manifest": _digest_file(Path(manifest["_dir"]) / "manifest.json")}
    write_run_record(out, "solve", cfg, digests,
                     ["metrics_per_image.csv", "metrics_aggregate.json", "reconstructions.f64"],
                     started)
    agg = report.aggregate()
    click.echo(
        f"{len(report.rows)} samples: psnr {agg['psnr']['mean']:.2f} dB, "
        f"ssim {agg['ssim']['mean']:.4f} -> {out}"
    )


def _solve_split(op, manifest, pairs, cfg):
    size = manifest["image_size"]
    budget = cfg["sparsity"] if cfg["sparsity"] else max(1, op.n // 4)
    solver_cfg = solvers.SolverConfig(
        max_iterations=cfg["max_iter"], residual_tolerance=cfg["tol"],
        sparsity_budget=budget, lam=cfg["lam"],
    )
    method = {"omp": solvers.omp, "ista": solvers.ista, "fista": solvers.fista}[cfg["method"]]
    report = metrics.MetricReport()
    recon = []
    for pair in pairs:
        res = method(op, pair.de_normalize(), solver_cfg)
        x_hat = res.x_hat.reshape(size, size)
        recon.append(x_hat)
        report.add(np.clip(x_hat, 0.0, 1.0), pair.x)
    return report, recon


# ---- train ---------------------------------------------------------------------


def _parse_skips(mask: str, n_connections: int) -> tuple[bool, ...]:
    if mask == "all":
        return tuple([True] * n_connections)
    if mask == "none":
        return tuple([False] * n_connections)
    parts = mask.split(",")
    if len(parts) != n_connections or any(p not in ("0", "1") for p in parts):
        raise click.UsageError(
            f"--skips must be 'all', 'none', or {n_connections} comma-separated 0/1 flags"
        )
    return tuple(p == "1" for p in parts)


@main.command("train")
@click.option("--dataset", "dataset_dir", required=True)
@click.option("--out", "out_dir", default="train_run", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--model", "model_kind", default="trust",
              type=click.Choice(["trust", "unet"]), show_default=True)
@click.option("--loss", "loss_token", default="l2ssim",
              type=click.Choice(sorted(_LOSS_TOKENS)), show_default=True)
@click.option("--skips", default="all", show_default=True,
              help="Skip-connection mask: all, none, or per-connection 0/1 list.")
@click.option("--epochs", default=20, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--batch", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--embed-dim", default=64, show_default=True)
@click.option("--depth", default=4, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--base-channels", default=8, show_default=True, help="unet width")
@click.option("--limit", default=0, show_default=True,
              help="Train on at most N samples (0: all).")
@click.pass_context
def train_cmd(ctx, dataset_dir, out_dir, config_path, model_kind, loss_token, skips,
              epochs, lr, batch, seed, embed_dim, depth, heads, base_channels, limit):
    """Train a reconstruction model; writes checkpoints and an epoch log."""
    started = time.monotonic()
    cfg = _resolve(ctx, _load_config_file(config_path),
                   dataset=dataset_dir, out=out_dir, model=model_kind,
                   loss=loss_token, skips=skips, epochs=epochs, lr=lr, batch=batch,
                   seed=seed, embed_dim=embed_dim, depth=depth, heads=heads,
                   base_channels=base_channels, limit=limit)
    try:
        manifest = dataset.load_manifest(cfg["dataset"])
        size = manifest["image_size"]
        if manifest["observation_side"] != size:
            raise ParameterError(
                f"observation side {manifest['observation_side']} != image size {size}; "
                "training needs a square operator dataset"
            )
        if cfg["model"] == "trust":
            model_cfg = model.TrustConfig(
                image_size=size, embed_dim=cfg["embed_dim"], num_heads=cfg["heads"],
                encoder_depth=cfg["depth"],
                skip_enabled=_parse_skips(cfg["skips"], 2),
                skip_sources=(min(4, cfg["depth"]), min(2, cfg["depth"])),
                seed=cfg["seed"],
            )
        else:
            model_cfg = model.UnetConfig(image_size=size,
                                         base_channels=cfg["base_channels"],
                                         seed=cfg["seed"])
        train_cfg = model.TrainConfig(
            loss_kind=_LOSS_TOKENS[cfg["loss"]], learning_rate=cfg["lr"],
            batch_size=cfg["batch"], epochs=cfg["epochs"], seed=cfg["seed"],
        )
        train_pairs = [(p.x, p.y) for p in dataset.load_split(manifest, "train")]
        val_pairs = [(p.x, p.y) for p in dataset.load_split(manifest, "val")]
        if cfg["limit"]:
            train_pairs = train_pairs[: cfg["limit"]]
    except _USAGE_ERRORS as exc:
        raise click.UsageError(str(exc))
    out = Path(cfg["out"])
    result = model.train(cfg["model"], model_cfg, train_cfg, train_pairs, val_pairs,
                         out_dir=out)
    digests = {"dataset_manifest": _digest_file(Path(manifest["_dir"]) / "manifest.json")}
    record_cfg = dict(cfg)
    record_cfg["param_count"] = model.param_count(cfg["model"], model_cfg)
    write_run_record(out, "train", record_cfg, digests,
                     ["ckpt_best.json", "ckpt_best.json.bin", "ckpt_last.json",
                      "ckpt_last.json.bin", "epochs.csv"], started)
    last = result.rows[-1]
    click.echo(
        f"epoch {last.epoch}: val_loss {last.val_loss:.6f}, val_ssim {last.val_ssim:.4f} "
        f"(best epoch {result.best_epoch}) -> {out}"
    )


# ---- eval ----------------------------------------------------------------------


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--dataset", "dataset_dir", required=True)
@click.option("--out", "out_dir", default="eval_run", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--emit-images", "image_dir", default=None,
              help="Write (y, x, x_hat) PGM triplets into this directory.")
@click.option("--limit", default=0, show_default=True)
@click.pass_context
def eval_cmd(ctx, ckpt_path, dataset_dir, out_dir, config_path, split, image_dir, limit):
    """Score a checkpoint on a dataset split; optionally dump PGM images."""
    started = time.monotonic()
    cfg = _resolve(ctx, _load_config_file(config_path),
                   checkpoint=ckpt_path, dataset=dataset_dir, out=out_dir,
                   split=split, emit_images=image_dir, limit=limit)
    try:
        params, manifest_ckpt = model.checkpoint_load(cfg["checkpoint"])
        model_cfg = model.config_from_manifest(manifest_ckpt)
        model_kind = manifest_ckpt["model_kind"]
        data_manifest = dataset.load_manifest(cfg["dataset"])
        pairs = dataset.load_split(data_manifest, cfg["split"])
        if cfg["limit"]:
            pairs = pairs[: cfg["limit"]]
    except _USAGE_ERRORS as exc:
        raise click.UsageError(str(exc))

    forward = model.forward_trust if model_kind == model.TRUST else model.forward_unet
    frozen = {k: nd.Tensor(p.data) for k, p in params.items()}
    report = metrics.MetricReport()
    preds = []

    def score(pair):
        return forward(frozen, model_cfg, pair.y).data

    workers = _workers()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(score, pairs))
    else:
        preds = [score(p) for p in pairs]
    for pair, pred in zip(pairs, preds):
        report.add(pred, pair.x)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.save(out, stem="metrics")
    outputs = ["metrics_per_image.csv", "metrics_aggregate.json"]
    if cfg["emit_images"]:
        img_dir = Path(cfg["emit_images"])
        img_dir.mkdir(parents=True, exist_ok=True)
        for i, (pair, pred) in enumerate(zip(pairs, preds)):
            dataset.write_pgm(img_dir / f"{i:04d}_y.pgm", pair.y)
            dataset.write_pgm(img_dir / f"{i:04d}_x.pgm", pair.x)
            dataset.write_pgm(img_dir / f"{i:04d}_xhat.pgm", pred)
    digests = {
        "checkpoint": _digest_file(Path(cfg["checkpoint"])),
        "dataset_manifest": _digest_file(Path(data_manifest["_dir"]) / "manifest.json"),
    }
    record_cfg = dict(cfg)
    record_cfg["param_count"] = model.param_count(model_kind, model_cfg)
    record_cfg["model"] = model_kind
    write_run_record(out, "eval", record_cfg, digests, outputs, started)
    agg = report.aggregate()
    click.echo(
        f"{len(report.rows)} samples: psnr {agg['psnr']['mean']:.2f} dB, "
        f"ssim {agg['ssim']['mean']:.4f} -> {out}"
    )


# ---- report --------------------------------------------------------------------


_REPORT_FIELDS = ("mse", "mae", "psnr", "ssim", "fpr")


@main.command("report")
@click.option("--runs", "runs_dir", required=True,
              help="Directory whose subdirectories are solve/eval runs.")
@click.option("--out", "out_dir", default=None,
              help="Where to write report.md and report.csv (default: runs dir).")
def report_cmd(runs_dir, out_dir):
    """Comparison table over finished runs (one row per run directory)."""
    runs = Path(runs_dir)
    if not runs.is_dir():
        raise click.UsageError(f"{runs_dir} is not a directory")
    rows = []
    for sub in sorted(p for p in runs.iterdir() if p.is_dir()):
        agg_file = sub / "metrics_aggregate.json"
        record_file = sub / "run_record.json"
        if not agg_file.exists() or not record_file.exists():
            continue
        agg = json.loads(agg_file.read_text())["aggregate"]
        record = json.loads(record_file.read_text())
        label = record["config"].get("model") or record["config"].get("method") or "?"
        rows.append({
            "run": sub.name,
            "command": record["command"],
            "kind": label,
            "param_count": record["config"].get("param_count", ""),
            **{f: agg[f] for f in _REPORT_FIELDS},
        })
    if not rows:
        click.echo(f"no finished runs found under {runs_dir}", err=True)
        sys.exit(1)
    out = Path(out_dir) if out_dir else runs
    out.mkdir(parents=True, exist_ok=True)

    def fmt(cell):
        return f"{cell['mean']:.4g} ± {cell['std']:.2g}"

    md = ["| run | kind | params | " + " | ".join(f.upper() for f in _REPORT_FIELDS) + " |",
          "|" + "---|" * (3 + len(_REPORT_FIELDS))]
    csv_lines = ["run,command,kind,param_count,"
                 + ",".join(f"{f}_mean,{f}_std" for f in _REPORT_FIELDS)]
    for r in rows:
        md.append(
            f"| {r['run']} | {r['kind']} | {r['param_count']} | "
            + " | ".join(fmt(r[f]) for f in _REPORT_FIELDS) + " |"
        )
        csv_lines.append(
            f"{r['run']},{r['command']},{r['kind']},{r['param_count']},"
            + ",".join(f"{r[f]['mean']!r},{r[f]['std']!r}" for f in _REPORT_FIELDS)
        )
    (out / "report.md").write_text("\n".join(md) + "\n")
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n")
    click.echo(f"{len(rows)} runs -> {out / 'report.md'}")


if __name__ == "__main__":
    main()

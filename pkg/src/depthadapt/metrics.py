"""Depth-error metrics with range/crop handling, plus report emission.

MAE is the mean absolute error and RMSE the root of the mean squared
error, both in meters, computed over exactly the pixels that survive
validity mask, depth-range, and crop filtering. Aggregation uses median
over seeds as the headline (desk-scale runs are noisy).
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EvalConfig:
    depth_range: tuple[float, float] = (0.0, 80.0)
    crop: tuple[int, int, int, int] | None = None  # (y0, y1, x0, x1); None = full frame
    per_frame: bool = True

    def __post_init__(self):
        lo, hi = self.depth_range
        if not (0 <= lo < hi):
            raise ValidationError(f"eval depth range must satisfy 0 <= min < max, got {self.depth_range}")
        if self.crop is not None:
            y0, y1, x0, x1 = self.crop
            if not (0 <= y0 < y1 and 0 <= x0 < x1):
                raise ValidationError(f"invalid crop rectangle {self.crop}")


@dataclass(frozen=True)
class MetricRecord:
    frame_id: str
    mae: float
    rmse: float
    n_eval_pixels: int

    def __post_init__(self):
        if not (self.rmse >= self.mae >= 0):
            raise ValidationError(
                f"metric invariant violated on {self.frame_id!r}: "
                f"need rmse >= mae >= 0, got mae={self.mae}, rmse={self.rmse}"
            )


def _eval_mask(gt, gt_mask, cfg: EvalConfig):
    gt = np.asarray(gt)
    keep = np.asarray(gt_mask, dtype=bool).copy()
    lo, hi = cfg.depth_range
    keep &= (gt >= lo) & (gt <= hi)
    if cfg.crop is not None:
        y0, y1, x0, x1 = cfg.crop
        window = np.zeros_like(keep)
        window[y0:y1, x0:x1] = True
        keep &= window
    return keep


def mae(pred, gt, gt_mask, cfg: EvalConfig = EvalConfig()):
    keep = _eval_mask(gt, gt_mask, cfg)
    if not keep.any():
        raise ValidationError("no pixels survive mask/range/crop filtering")
    return float(np.abs(np.asarray(pred)[keep] - np.asarray(gt)[keep]).mean())


def rmse(pred, gt, gt_mask, cfg: EvalConfig = EvalConfig()):
    keep = _eval_mask(gt, gt_mask, cfg)
    if not keep.any():
        raise ValidationError("no pixels survive mask/range/crop filtering")
    diff = np.asarray(pred)[keep] - np.asarray(gt)[keep]
    return float(np.sqrt((diff * diff).mean()))


def evaluate_frame(pred, sample, cfg: EvalConfig = EvalConfig()) -> MetricRecord:
    if sample.dense_gt is None:
        raise ValidationError(f"sample {sample.frame_id!r} has no ground truth to evaluate")
    keep = _eval_mask(sample.dense_gt, sample.gt_mask, cfg)
    return MetricRecord(
        frame_id=sample.frame_id,
        mae=mae(pred, sample.dense_gt, sample.gt_mask, cfg),
        rmse=rmse(pred, sample.dense_gt, sample.gt_mask, cfg),
        n_eval_pixels=int(keep.sum()),
    )


def summarize(records, group_by=lambda r: "all"):
    """Aggregate records into {group: {mean_mae, median_mae, mean_rmse,
    median_rmse, n_frames}}; deterministic ordering by group key."""
    records = list(records)
    if not records:
        raise ValidationError("cannot summarize zero records")
    groups: dict = {}
    for r in records:
        groups.setdefault(group_by(r), []).append(r)
    out = {}
    for key in sorted(groups, key=str):
        rs = groups[key]
        out[key] = {
            "mean_mae": statistics.fmean(r.mae for r in rs),
            "median_mae": statistics.median(r.mae for r in rs),
            "mean_rmse": statistics.fmean(r.rmse for r in rs),
            "median_rmse": statistics.median(r.rmse for r in rs),
            "n_frames": len(rs),
        }
    return out


METRICS_COLUMNS = ["run_id", "frame_id", "phase", "mae_m", "rmse_m", "n_pixels"]


def write_metrics_csv(path, rows):
    """rows: iterables of (run_id, frame_id, phase, MetricRecord). Byte-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for run_id, frame_id, phase, record in rows:
            writer.writerow(
                [run_id, frame_id, phase, f"{record.mae:.6f}", f"{record.rmse:.6f}",
                 record.n_eval_pixels]
            )
    return path


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "run_id": row["run_id"],
                    "frame_id": row["frame_id"],
                    "phase": row["phase"],
                    "mae_m": float(row["mae_m"]),
                    "rmse_m": float(row["rmse_m"]),
                    "n_pixels": int(row["n_pixels"]),
                }
            )
    return out


def _median_by(rows, key, value="mae_m"):
    groups: dict = {}
    for r in rows:
        groups.setdefault(key(r), []).append(r[value])
    return {k: statistics.median(v) for k, v in sorted(groups.items(), key=lambda kv: str(kv[0]))}


def emit_report(run_dir) -> list[Path]:
    """Summarize a run directory into CSV + plot files.

    Expects ``metrics.csv`` (pre/post phases). Optional inputs, drawn when
    present: ``sweep_iters.csv`` (columns inner_iters, seed, median_mae)
    and ``sweep_region.csv`` (columns grid, seed, median_mae), plus
    ``energy_grids.npz`` (named arrays) rendered as heatmaps.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise ValidationError(f"no metrics.csv in run directory: {metrics_path}")
    rows = read_metrics_csv(metrics_path)
    written: list[Path] = []

    by_phase = _median_by(rows, key=lambda r: r["phase"])
    summary_path = run_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "median_mae_m", "median_rmse_m", "n_rows"])
        for phase in sorted(by_phase):
            sub = [r for r in rows if r["phase"] == phase]
            writer.writerow(
                [phase, f"{by_phase[phase]:.6f}",
                 f"{statistics.median(r['rmse_m'] for r in sub):.6f}", len(sub)]
            )
    written.append(summary_path)

    fig, ax = plt.subplots(figsize=(4, 3))
    phases = sorted(by_phase)
    ax.bar(range(len(phases)), [by_phase[p] for p in phases], color=["#777", "#2a6"][: len(phases)])
    ax.set_xticks(range(len(phases)), phases)
    ax.set_ylabel("median MAE (m)")
    fig.tight_layout()
    bars_path = run_dir / "mae_pre_post.png"
    fig.savefig(bars_path)
    plt.close(fig)
    written.append(bars_path)

    for name, column, xlabel in (
        ("sweep_iters", "inner_iters", "inner iterations"),
        ("sweep_region", "grid", "energy grid"),
    ):
        sweep_path = run_dir / f"{name}.csv"
        if not sweep_path.exists():
            continue
        with open(sweep_path, newline="") as fh:
            sweep = list(csv.DictReader(fh))
        med = _median_by(
            [{**r, "mae_m": float(r["median_mae"])} for r in sweep], key=lambda r: r[column]
        )
        fig, ax = plt.subplots(figsize=(4, 3))
        keys = list(med)
        ax.plot(range(len(keys)), [med[k] for k in keys], marker="o")
        ax.set_xticks(range(len(keys)), [str(k) for k in keys])
        ax.set_xlabel(xlabel)
        ax.set_ylabel("median MAE (m)")
        fig.tight_layout()
        out_path = run_dir / f"{name}.png"
        fig.savefig(out_path)
        plt.close(fig)
        written.append(out_path)

    grids_path = run_dir / "energy_grids.npz"
    if grids_path.exists():
        with np.load(grids_path) as grids:
            names = sorted(grids.files)[:8]
            if names:
                fig, axes = plt.subplots(1, len(names), figsize=(2.2 * len(names), 2.4))
                axes = np.atleast_1d(axes)
                for ax, name in zip(axes, names):
                    im = ax.imshow(grids[name], vmin=0, vmax=1, cmap="inferno")
                    ax.set_title(name, fontsize=7)
                    ax.axis("off")
                fig.colorbar(im, ax=list(axes), shrink=0.8)
                heat_path = run_dir / "energy_heatmaps.png"
                fig.savefig(heat_path)
                plt.close(fig)
                written.append(heat_path)
    return written

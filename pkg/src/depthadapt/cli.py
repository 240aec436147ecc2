"""Command-line pipeline runner.

Subcommands compose through on-disk artifacts under one output root::

    synth         data/source_train, data/target_stream
    train-depth   checkpoints/depth.pt
    train-energy  checkpoints/<name>.pt (default "energy")
    adapt         adapt/<name>/{adapt_report.csv, predictions.npz, ...}
    eval          metrics.csv (one row per frame and phase)
    report        summary.csv + plots
    all           the full pipeline for a named scenario (ETA + baseline)

Exit codes: 0 success, 2 config error, 3 missing/invalid artifact,
4 numerical failure (non-finite loss). Every failure prints the offending
path or config key; every run writes its resolved config and input
fingerprints next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import AdaptConfig, run_stream
from .checkpoint import (
    load_depth_checkpoint,
    load_energy_checkpoint,
    save_depth_checkpoint,
    save_energy_checkpoint,
)
from .config import RunConfig, load_config, parse_set_flags
from .dataset import DatasetManifest, load_all, save_dataset
from .depth_net import DepthArch, build_model, insert_adaptation
from .energy import EnergyArch, build_energy_model
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    DepthAdaptError,
    ModelBindingError,
    NumericalError,
    ValidationError,
)
from .metrics import EvalConfig, emit_report, evaluate_frame, write_metrics_csv
from .perturb import PerturbConfig
from .synth import ShiftSpec, apply_shift, make_samples
from .train_depth import TrainConfig, train_supervised
from .train_energy import EnergyTrainConfig, train_energy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_ENV = "DEPTHADAPT_OUT"
STREAM_SEED_OFFSET = 500_000


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_provenance(path, cfg: RunConfig, inputs: dict[str, Path]):
    lines = [f"seed: {cfg.get('run', 'seed')}", "inputs:"]
    for name, p in sorted(inputs.items()):
        lines.append(f"  {name}: {Path(p).resolve()} sha256={_sha256_file(p)}")
    lines.append("resolved config:")
    lines.append(cfg.to_ini())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines))


def _depth_arch(cfg: RunConfig) -> DepthArch:
    d = cfg.section("depth")
    return DepthArch(
        base_width=d["base_width"],
        stages=d["stages"],
        adapt_stage=d["adapt_stage"],
        adapt_reduction=d["adapt_reduction"],
        depth_min=cfg.get("data", "depth_min"),
        depth_max=cfg.get("data", "depth_max"),
    )


def _energy_arch(cfg: RunConfig) -> EnergyArch:
    e = cfg.section("energy")
    return EnergyArch(
        stages=e["stages"],
        base_width=e["base_width"],
        max_width=e["max_width"],
        global_pool=e["global_pool"],
        input_scale=e["input_scale"],
    )


def _eval_config(cfg: RunConfig) -> EvalConfig:
    crop_raw = str(cfg.get("eval", "crop")).strip()
    crop = None
    if crop_raw not in ("", "full"):
        try:
            y0, y1, x0, x1 = (int(v) for v in crop_raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"eval.crop must be 'full' or 'y0,y1,x0,x1', got {crop_raw!r}") from exc
        crop = (y0, y1, x0, x1)
    return EvalConfig(
        depth_range=(cfg.get("eval", "depth_min"), cfg.get("eval", "depth_max")), crop=crop
    )


def build_target_stream_samples(cfg: RunConfig, seed: int):
    """Shifted target frames; scene seeds are disjoint from the source's."""
    data = cfg.section("data")
    samples = make_samples(
        data["n_stream"],
        (data["height"], data["width"]),
        (data["target_depth_min"], data["target_depth_max"]),
        data["n_points"],
        data["sparse_strategy"],
        seed=seed + STREAM_SEED_OFFSET,
        id_prefix="stream",
        blind_top=data["sparse_blind_top"],
    )
    for kind, magnitude in cfg.shift_specs():
        samples = [
            apply_shift(s, ShiftSpec(kind, magnitude, seed + STREAM_SEED_OFFSET + i))
            for i, s in enumerate(samples)
        ]
    return samples


def cmd_synth(cfg: RunConfig, out: Path, args) -> int:
    data = cfg.section("data")
    seed = cfg.get("run", "seed")
    geometry = (data["height"], data["width"])

    source = make_samples(
        data["n_source"], geometry, (data["depth_min"], data["depth_max"]),
        data["n_points"], data["sparse_strategy"], seed=seed, id_prefix="source",
        blind_top=data["sparse_blind_top"],
    )
    src_manifest = DatasetManifest(
        root_path=str(out / "data" / "source_train"),
        sample_ids=[s.frame_id for s in source],
        split="source_train",
        geometry=geometry,
        depth_range=(data["depth_min"], data["depth_max"]),
    )
    src_path = save_dataset(source, src_manifest)

    stream = build_target_stream_samples(cfg, seed)
    stream_manifest = DatasetManifest(
        root_path=str(out / "data" / "target_stream"),
        sample_ids=[s.frame_id for s in stream],
        split="target_stream",
        geometry=geometry,
        depth_range=(data["target_depth_min"], data["target_depth_max"]),
    )
    stream_path = save_dataset(stream, stream_manifest)

    cfg.write_resolved(out / "data" / "config.resolved.ini")
    _write_provenance(out / "data" / "provenance.txt", cfg, {})
    print(f"wrote {src_path.resolve()}")
    print(f"wrote {stream_path.resolve()}")
    return EXIT_OK


def cmd_train_depth(cfg: RunConfig, out: Path, args) -> int:
    manifest_path = out / "data" / "source_train" / "manifest"
    if not manifest_path.exists():
        raise DatasetError(f"source dataset missing (run synth first): {manifest_path}")
    samples, _ = load_all(manifest_path)
    seed = cfg.get("run", "seed")
    model = build_model(_depth_arch(cfg), seed=seed)
    d = cfg.section("depth")
    model, history = train_supervised(
        model,
        samples,
        TrainConfig(
            epochs=d["epochs"], batch_size=d["batch_size"], learning_rate=d["learning_rate"],
            seed=seed, validation_fraction=d["validation_fraction"],
        ),
    )
    ckpt = save_depth_checkpoint(out / "checkpoints" / "depth.pt", model, train_seed=seed)
    curve = out / "checkpoints" / "depth_curve.csv"
    with open(curve, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (tr, va) in enumerate(zip(history.train_loss, history.val_loss)):
            fh.write(f"{i},{tr:.6f},{va:.6f}\n")
    cfg.write_resolved(out / "checkpoints" / "depth.config.resolved.ini")
    _write_provenance(
        out / "checkpoints" / "depth.provenance.txt", cfg, {"source_manifest": manifest_path}
    )
    print(f"wrote {ckpt.resolve()} (best val {min(history.val_loss):.4f} m)")
    return EXIT_OK


def cmd_train_energy(cfg: RunConfig, out: Path, args) -> int:
    depth_path = out / "checkpoints" / "depth.pt"
    if not depth_path.exists():
        raise CheckpointError(f"depth checkpoint missing (run train-depth first): {depth_path}")
    manifest_path = out / "data" / "source_train" / "manifest"
    if not manifest_path.exists():
        raise DatasetError(f"source dataset missing (run synth first): {manifest_path}")
    depth_model = load_depth_checkpoint(depth_path)
    samples, _ = load_all(manifest_path)
    e = cfg.section("energy")
    seed = cfg.get("run", "seed")
    energy_model = build_energy_model(_energy_arch(cfg), seed=seed)
    energy_model, history = train_energy(
        energy_model,
        depth_model,
        samples,
        PerturbConfig(e["eps_image"], e["eps_sparse"]),
        EnergyTrainConfig(
            epochs=e["epochs"], batch_size=e["batch_size"], learning_rate=e["learning_rate"],
            seed=seed, tau_percentile=e["tau_percentile"],
        ),
    )
    name = args.name or "energy"
    ckpt = save_energy_checkpoint(out / "checkpoints" / f"{name}.pt", energy_model)
    cfg.write_resolved(out / "checkpoints" / f"{name}.config.resolved.ini")
    _write_provenance(
        out / "checkpoints" / f"{name}.provenance.txt", cfg,
        {"depth_checkpoint": depth_path, "source_manifest": manifest_path},
    )
    print(
        f"wrote {ckpt.resolve()} (tau {energy_model.tau:.5f}, "
        f"final loss {history.loss[-1]:.4f}, clean/perturbed energy "
        f"{history.mean_energy_clean[-1]:.3f}/{history.mean_energy_perturbed[-1]:.3f})"
    )
    return EXIT_OK


def _adapt_config(cfg: RunConfig, baseline: bool) -> AdaptConfig:
    a = cfg.section("adapt")
    return AdaptConfig(
        w_energy=0.0 if baseline else a["w_energy"],
        w_sparse=a["w_sparse"],
        w_smooth=a["w_smooth"],
        learning_rate=a["learning_rate"],
        inner_iters=a["inner_iters"],
        norm_policy=a["norm_policy"],
        optimizer_state_policy=a["optimizer_state_policy"],
        energy_clamp=a["energy_clamp"],
        batch_size=a["batch_size"],
    )


def cmd_adapt(cfg: RunConfig, out: Path, args) -> int:
    depth_path = out / "checkpoints" / "depth.pt"
    if not depth_path.exists():
        raise CheckpointError(f"depth checkpoint missing (run train-depth first): {depth_path}")
    manifest_path = out / "data" / "target_stream" / "manifest"
    if not manifest_path.exists():
        raise DatasetError(f"target stream missing (run synth first): {manifest_path}")

    model = load_depth_checkpoint(depth_path)
    inputs = {"depth_checkpoint": depth_path, "target_manifest": manifest_path}
    energy_model = None
    if not args.baseline:
        energy_path = out / "checkpoints" / f"{args.energy or 'energy'}.pt"
        if not energy_path.exists():
            raise CheckpointError(
                f"energy checkpoint missing (run train-energy first or pass --baseline): {energy_path}"
            )
        energy_model = load_energy_checkpoint(energy_path, depth_model=model)
        inputs["energy_checkpoint"] = energy_path

    seed = cfg.get("run", "seed")
    if model.adapter is None:
        insert_adaptation(model, seed=seed)
    stream, manifest = load_all(manifest_path)
    adapt_cfg = _adapt_config(cfg, args.baseline)
    result = run_stream(
        model, energy_model, stream, adapt_cfg,
        expected_ids=manifest.sample_ids, record_energy_grids=not args.baseline,
    )

    name = args.name or ("baseline" if args.baseline else "eta")
    run_dir = out / "adapt" / name
    run_dir.mkdir(parents=True, exist_ok=True)
    result.report.to_csv(run_dir / "adapt_report.csv")
    np.savez(
        run_dir / "predictions.npz",
        frame_ids=np.array(result.frame_ids),
        pre=np.stack(result.pre_predictions),
        post=np.stack(result.post_predictions),
    )
    if result.report.energy_post:
        grids = {f"post_{k}": g.values for k, g in list(result.report.energy_post.items())[:8]}
        grids.update(
            {f"pre_{k}": g.values for k, g in list(result.report.energy_pre.items())[:8]}
        )
        np.savez(run_dir / "energy_grids.npz", **grids)
    cfg.write_resolved(run_dir / "config.resolved.ini")
    _write_provenance(run_dir / "provenance.txt", cfg, inputs)
    print(f"wrote {(run_dir / 'adapt_report.csv').resolve()}")
    print(f"wrote {(run_dir / 'predictions.npz').resolve()}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    manifest_path = out / "data" / "target_stream" / "manifest"
    if not manifest_path.exists():
        raise DatasetError(f"target stream missing: {manifest_path}")
    adapt_root = out / "adapt"
    run_dirs = sorted(p for p in adapt_root.glob("*") if (p / "predictions.npz").exists())
    if not run_dirs:
        raise DatasetError(f"no adaptation runs with predictions under {adapt_root}")
    stream, _ = load_all(manifest_path)
    by_id = {s.frame_id: s for s in stream}
    eval_cfg = _eval_config(cfg)
    rows = []
    for run_dir in run_dirs:
        with np.load(run_dir / "predictions.npz") as data:
            frame_ids = [str(f) for f in data["frame_ids"]]
            for phase in ("pre", "post"):
                for frame_id, pred in zip(frame_ids, data[phase]):
                    record = evaluate_frame(pred, by_id[frame_id], eval_cfg)
                    rows.append((run_dir.name, frame_id, phase, record))
    path = write_metrics_csv(out / "metrics.csv", rows)
    cfg.write_resolved(out / "metrics.config.resolved.ini")
    print(f"wrote {path.resolve()}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, out: Path, args) -> int:
    for path in emit_report(out):
        print(f"wrote {Path(path).resolve()}")
    return EXIT_OK


def cmd_all(cfg: RunConfig, out: Path, args) -> int:
    cmd_synth(cfg, out, args)
    cmd_train_depth(cfg, out, args)
    args.name = "energy"
    cmd_train_energy(cfg, out, args)
    args.baseline, args.name, args.energy = False, "eta", "energy"
    cmd_adapt(cfg, out, args)
    args.baseline, args.name = True, "baseline"
    cmd_adapt(cfg, out, args)
    cmd_eval(cfg, out, args)
    cmd_report(cfg, out, args)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-depth": cmd_train_depth,
    "train-energy": cmd_train_energy,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "report": cmd_report,
    "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthadapt",
        description="synthetic depth-completion test-time adaptation pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--scenario", help="preset: fog, illum, or range")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument(
            "--set", action="append", metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable)",
        )
        if name in ("train-energy", "adapt"):
            p.add_argument("--name", help="artifact name under its directory")
        if name == "adapt":
            p.add_argument("--baseline", action="store_true", help="disable the energy term")
            p.add_argument("--energy", help="energy checkpoint name (default 'energy')")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "baseline"):
        args.baseline = False
    if not hasattr(args, "name"):
        args.name = None
    if not hasattr(args, "energy"):
        args.energy = None
    try:
        overrides = parse_set_flags(args.set)
        if args.seed is not None:
            overrides[("run", "seed")] = args.seed
        cfg = load_config(args.config, scenario=args.scenario, overrides=overrides)
        out = Path(
            args.out or os.environ.get(OUTPUT_ROOT_ENV) or cfg.get("run", "output_root")
        )
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DatasetError, ModelBindingError, FileNotFoundError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DepthAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()

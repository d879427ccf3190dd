"""Command-line interface tying the pipeline together.

Subcommands: synth, preprocess, train, reconstruct, describe, validate,
report.  ``--config`` loads a JSON run configuration; ``--seed``,
``--threads``, and ``--out`` override it.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical divergence.

Result artifacts (checkpoints, descriptor stores, CSV/JSON reports,
images) are deterministic; anything carrying timestamps goes to a
separate log file so output trees can be diffed byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio, preprocess, synth
from .config import ConfigError, RunConfig
from .dataio import DataError
from .dictlearn import lambda_schedule
from .multichannel import CellRecord, build_descriptor, train_multichannel
from .pdhg import DivergenceError
from .validate import as_label_array, run_validation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

log = logging.getLogger("celldict")


def _setup_logging(out_dir) -> None:
    handlers = [logging.StreamHandler(sys.stderr)]
    if out_dir:
        logs = os.path.join(out_dir, "logs")
        os.makedirs(logs, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(logs, "run.log")))
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        handlers=handlers,
        force=True,
    )


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "seed", None) is not None:
        cfg.learn["seed"] = args.seed
        cfg.cluster["seed"] = args.seed
    return cfg


def _load_cells(manifest_dir, manifest: dataio.DatasetManifest):
    cells = []
    for entry in manifest.cells:
        images = []
        for name in manifest.channels:
            rel = entry["files"][name]
            images.append(dataio.read_image(os.path.join(manifest_dir, rel)))
        cells.append(CellRecord(cell_id=int(entry["id"]), images=images))
    return cells


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    h, w = (int(p) for p in args.shape.lower().split("x"))
    dataset = synth.generate_synthetic(
        n_cells=args.cells,
        channels=args.channels,
        shape=(h, w),
        k_true=args.k_true,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    out = cfg.out_dir
    if not out:
        raise ConfigError("no output directory given (use --out or config.out_dir)")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    path = synth.write_dataset(dataset, out)
    log.info("wrote synthetic dataset with %d cells to %s", args.cells, path)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    raw_dir = args.raw or cfg.dataset
    if not raw_dir:
        raise ConfigError("no input dataset given (use --raw or config.dataset)")
    out = cfg.out_dir
    if not out:
        raise ConfigError("no output directory given (use --out or config.out_dir)")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    manifest = dataio.read_manifest(os.path.join(raw_dir, "manifest.json"))
    if not manifest.cells:
        raise DataError(f"{raw_dir}: dataset manifest lists no cells")

    window = args.window if args.window else cfg.window
    failures = []
    crops = {}  # cell_id -> {channel: (crop, audit)}
    for entry in manifest.cells:
        cell_id = int(entry["id"])
        per_channel = {}
        try:
            for name in manifest.channels:
                frame = dataio.read_image(os.path.join(raw_dir, entry["files"][name]))
                result = preprocess.focus_select(frame, window=window)
                crop = preprocess.crop_focused(frame, result)
                lo, hi = float(crop.min()), float(crop.max())
                per_channel[name] = (
                    preprocess.normalize_minmax(crop),
                    {
                        "focus_y": result.y,
                        "focus_x": result.x,
                        "window": result.window,
                        "score": result.score,
                        "min": lo,
                        "max": hi,
                    },
                )
        except (DataError, ValueError) as exc:
            failures.append((cell_id, str(exc)))
            continue
        crops[cell_id] = per_channel

    if not crops:
        raise DataError("preprocessing failed for every cell")
    common = preprocess.common_crop_size(
        [img.shape for per in crops.values() for img, _ in per.values()]
    )
    frames_dir = os.path.join(out, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    cell_entries = []
    for cell_id in sorted(crops):
        files = {}
        audits = {}
        for name, (img, audit) in crops[cell_id].items():
            final = preprocess.center_crop(img, common)
            rel = os.path.join("frames", f"cell{cell_id:05d}_{name}.cdim")
            dataio.write_image(os.path.join(out, rel), final)
            files[name] = rel
            audits[name] = audit
        cell_entries.append({"id": cell_id, "files": files, "audit": audits})

    labels_rel = None
    if manifest.labels:
        src = os.path.join(raw_dir, manifest.labels)
        labels = dataio.read_labels_csv(src)
        labels = {cid: cls for cid, cls in labels.items() if cid in crops}
        labels_rel = "labels.csv"
        dataio.write_labels_csv(os.path.join(out, labels_rel), labels)

    out_manifest = dataio.DatasetManifest(
        channels=list(manifest.channels),
        shape=(common, common),
        cells=cell_entries,
        labels=labels_rel,
        provenance=f"preprocessed from {manifest.provenance or raw_dir}",
        extra={"common_size": common, "window_override": window, "config": cfg.digest()},
    )
    dataio.write_manifest(os.path.join(out, "manifest.json"), out_manifest)
    log.info("preprocessed %d cells to %dx%d crops", len(cell_entries), common, common)
    if failures:
        for cell_id, reason in failures:
            print(f"skipped cell {cell_id}: {reason}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_dir = args.manifest or cfg.dataset
    if not data_dir:
        raise ConfigError("no dataset given (use --manifest or config.dataset)")
    out = cfg.out_dir
    if not out:
        raise ConfigError("no output directory given")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    manifest = dataio.read_manifest(os.path.join(data_dir, "manifest.json"))
    cells = _load_cells(data_dir, manifest)
    learn_cfg = cfg.learn_config()
    digest = cfg.digest()

    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    dicts, descriptors, reports = train_multichannel(
        cells,
        learn_cfg,
        channel_names=manifest.channels,
        threads=cfg.threads,
        checkpoint_dir=ckpt_dir if args.history else None,
        trace_dir=os.path.join(out, "traces") if cfg.trace else None,
        epsilon=cfg.descriptor_epsilon,
    )

    for name, dictionary, report, codes in zip(
        manifest.channels,
        dicts,
        reports,
        (
            [d.Phi[:, c] for d in descriptors]
            for c in range(len(manifest.channels))
        ),
    ):
        dataio.save_checkpoint(
            os.path.join(ckpt_dir, f"{name}_final.ckpt"),
            dictionary,
            np.stack(codes),
            iteration=report.records[-1].iteration if report.records else -1,
            seed=learn_cfg.seed,
            config_hash=digest,
            fbar=report.records[-1].mean_fidelity if report.records else None,
            streak=0,
            tag=name,
        )

    reports_dir = os.path.join(out, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    summary = {}
    for name, report in zip(manifest.channels, reports):
        report.to_csv(os.path.join(reports_dir, f"{name}_learn.csv"))
        summary[name] = {
            "stop_reason": report.stop_reason,
            "iterations": len(report.records),
            "mean_rel_error": report.records[-1].mean_rel_error if report.records else None,
        }
    with open(os.path.join(reports_dir, "train_summary.json"), "w") as fh:
        json.dump({"config": digest, "channels": summary}, fh, sort_keys=True, indent=2)
        fh.write("\n")

    dataio.save_descriptor_store(
        os.path.join(out, "descriptors"), descriptors, manifest.channels, digest
    )
    log.info("trained %d channels on %d cells", len(manifest.channels), len(cells))
    return EXIT_OK


def _load_final_checkpoints(ckpt_dir, channels):
    out = {}
    for name in channels:
        path = os.path.join(ckpt_dir, f"{name}_final.ckpt")
        out[name] = dataio.load_checkpoint(path)
    return out


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    data_dir = args.manifest or cfg.dataset
    out = cfg.out_dir
    if not data_dir or not out:
        raise ConfigError("reconstruct needs --manifest/--checkpoints and --out")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    manifest = dataio.read_manifest(os.path.join(data_dir, "manifest.json"))
    ckpts = _load_final_checkpoints(args.checkpoints, manifest.channels)
    recon_dir = os.path.join(out, "reconstructions")
    os.makedirs(recon_dir, exist_ok=True)
    h, w = manifest.shape
    for idx, entry in enumerate(manifest.cells):
        cell_id = int(entry["id"])
        for name in manifest.channels:
            dictionary, codes, _ = ckpts[name]
            recon = (dictionary @ codes[idx]).reshape(h, w)
            dataio.write_image(
                os.path.join(recon_dir, f"cell{cell_id:05d}_{name}.cdim"), recon
            )
    log.info("wrote reconstructions for %d cells", len(manifest.cells))
    return EXIT_OK


def cmd_describe(args) -> int:
    cfg = _load_config(args)
    data_dir = args.manifest or cfg.dataset
    out = cfg.out_dir
    if not data_dir or not out:
        raise ConfigError("describe needs --manifest/--checkpoints and --out")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    manifest = dataio.read_manifest(os.path.join(data_dir, "manifest.json"))
    cells = _load_cells(data_dir, manifest)
    ckpts = _load_final_checkpoints(args.checkpoints, manifest.channels)
    learn_cfg = cfg.learn_config()
    lam = lambda_schedule(cfg.learn["outer_iters"] - 1, learn_cfg)
    params = replace(learn_cfg.pdhg, lambda_tv=lam)

    from concurrent.futures import ThreadPoolExecutor

    from . import pdhg as pdhg_mod

    def denoise(img):
        return pdhg_mod.solve(img, params)[0]

    descriptors = []
    for cell in cells:
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                denoised = list(pool.map(denoise, cell.images))
        else:
            denoised = [denoise(img) for img in cell.images]
        codes = [
            ckpts[name][0].T @ y.reshape(-1)
            for name, y in zip(manifest.channels, denoised)
        ]
        descriptors.append(
            build_descriptor(
                codes,
                [ckpts[name][0] for name in manifest.channels],
                cell.images,
                cell_id=cell.cell_id,
                epsilon=cfg.descriptor_epsilon,
            )
        )
    dataio.save_descriptor_store(
        os.path.join(out, "descriptors"), descriptors, manifest.channels, cfg.digest()
    )
    log.info("described %d cells", len(cells))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    out = cfg.out_dir
    if not out:
        raise ConfigError("validate needs --out")
    os.makedirs(out, exist_ok=True)
    _setup_logging(out)
    records, store_manifest = dataio.load_descriptor_store(args.descriptors)
    labels_map = dataio.read_labels_csv(args.labels)
    if args.classes:
        # restrict to a class subset (e.g. a two-class protocol that drops a
        # rare third class) and re-index the kept classes contiguously
        keep = sorted(int(c) for c in args.classes.split(","))
        remap = {cls: i for i, cls in enumerate(keep)}
        labels_map = {
            cid: remap[cls] for cid, cls in labels_map.items() if cls in remap
        }
    labeled = [r for r in records if r.cell_id in labels_map]
    cluster_cfg = cfg.cluster_config()
    if len(labeled) < cluster_cfg.k:
        raise DataError(
            f"need at least k = {cluster_cfg.k} labeled cells, found {len(labeled)}"
        )
    labeled.sort(key=lambda r: r.cell_id)
    phi = np.stack([r.phi for r in labeled])
    labels = as_label_array([labels_map[r.cell_id] for r in labeled])
    report = run_validation(
        phi,
        labels,
        cluster_cfg,
        n_channels=len(store_manifest["channels"]),
        n_perm=cfg.n_permutations,
        n_boot=cfg.n_bootstrap,
    )
    report.to_json(os.path.join(out, "validation.json"), config_hash=cfg.digest())
    report.null_csv(os.path.join(out, "null_distributions.csv"))
    log.info(
        "validation on %d cells: ari=%.4f nmi=%.4f", report.n_cells, report.ari, report.nmi
    )
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args)
    run_dir = args.run or cfg.out_dir
    if not run_dir:
        raise ConfigError("report needs --run")
    lines = ["run summary", "==========="]
    train_summary = os.path.join(run_dir, "reports", "train_summary.json")
    if os.path.exists(train_summary):
        with open(train_summary) as fh:
            payload = json.load(fh)
        lines.append(f"config hash: {payload.get('config')}")
        for name, info in sorted(payload.get("channels", {}).items()):
            lines.append(
                f"channel {name}: {info['iterations']} iterations, "
                f"stop={info['stop_reason']}, mean_rel_error={info['mean_rel_error']}"
            )
    validation = os.path.join(run_dir, "validation.json")
    if os.path.exists(validation):
        with open(validation) as fh:
            v = json.load(fh)
        lines.append(
            f"validation: n={v['n_cells']} ari={v['ari']} nmi={v['nmi']} "
            f"silhouette={v['silhouette']} p_ari={v['p_ari']} p_nmi={v['p_nmi']}"
        )
        lines.append(
            f"bootstrap 95% CI: ari={v['bootstrap_ari_ci']} nmi={v['bootstrap_nmi_ci']}"
        )
    text = "\n".join(lines) + "\n"
    out_path = os.path.join(run_dir, "report.txt")
    with open(out_path, "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="celldict",
        description="Deterministic per-channel dictionary learning for cell images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--threads", type=int, help="worker count override")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--cells", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--shape", default="16x16")
    p.add_argument("--k-true", type=int, default=4, dest="k_true")
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="focus-select, crop, and normalize raw frames")
    common(p)
    p.add_argument("--raw", help="raw dataset directory (with manifest.json)")
    p.add_argument("--window", type=int, help="window side override")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train per-channel dictionaries")
    common(p)
    p.add_argument("--manifest", help="preprocessed dataset directory")
    p.add_argument(
        "--history", action="store_true", help="keep per-iteration checkpoints"
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="write reconstructions from a checkpoint")
    common(p)
    p.add_argument("--manifest", help="preprocessed dataset directory")
    p.add_argument("--checkpoints", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("describe", help="build descriptors from a checkpoint")
    common(p)
    p.add_argument("--manifest", help="preprocessed dataset directory")
    p.add_argument("--checkpoints", required=True)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("validate", help="cluster descriptors against labels")
    common(p)
    p.add_argument("--descriptors", required=True, help="descriptor store directory")
    p.add_argument("--labels", required=True, help="two-column cell_id,class CSV")
    p.add_argument(
        "--classes",
        help="comma-separated class subset to keep (re-indexed contiguously), "
        "e.g. --classes 0,1 for a two-class protocol",
    )
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="summarize a run directory")
    common(p)
    p.add_argument("--run", help="run output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

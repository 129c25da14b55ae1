"""Batch pipeline CLI: gen-corpus, train-toy, stage1, stage2, ablate, evaluate."""

import argparse
import csv
import logging
import math
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from . import guidance as guidance_mod
from .backends import (
    AnalyticBackend,
    Condition,
    ToyBackend,
    ToyCorpusSpec,
    TrainSpec,
    generate_toy_corpus,
    load_checkpoint,
    read_corpus,
    save_checkpoint,
    train_toy_denoiser,
    write_corpus,
)
from .backends.corpus import CORPUS_SCENARIOS
from .config import MODES, RunConfig, read_kv_file, write_kv_file
from .errors import ConfigurationError, ProtodiffError
from .images import from_latent, load_image, save_image, to_latent
from .layouts import apply_scenario, build_prompt, parse_kitti_labels, words_to_prompt
from .metrics import evaluate_pair
from .pca import fit_pca, load_prototype_store, save_prototype_store
from .prototypes import binarize, concept_mask, extract_prototypes, to_grid, update_mask
from .sampler import invert, sample
from .schedule import build_schedule

log = logging.getLogger("protodiff")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
ABLATION_VARIANTS = ("prompt-only", "gsa-concept", "gsa", "full")


def image_seed(base: int, stem: str) -> int:
    """Per-image seed, stable across runs and modes."""
    return (int(base) + zlib.crc32(stem.encode("utf-8"))) % (2**31)


def build_backend(cfg: RunConfig, n_t: int):
    """Instantiate the selected backend against an n_t-step DDIM grid."""
    if cfg.backend == "analytic":
        schedule = build_schedule(1000, n_t)
        return AnalyticBackend(schedule), schedule
    loaded = load_checkpoint(cfg.backend)
    schedule = build_schedule(
        loaded.schedule.train_steps, n_t, loaded.beta_range[0], loaded.beta_range[1]
    )
    backend = ToyBackend(
        model=loaded.model,
        schedule=schedule,
        vocab=loaded.vocab,
        latent_hw=loaded.capabilities.latent_shape[1:],
        beta_range=loaded.beta_range,
    )
    return backend, schedule


def paired_stems(images_dir, labels_dir):
    images = {os.path.splitext(f)[0] for f in os.listdir(images_dir) if f.endswith(".png")}
    labels = {os.path.splitext(f)[0] for f in os.listdir(labels_dir) if f.endswith(".txt")}
    paired = sorted(images & labels)
    unpaired = sorted((images | labels) - (images & labels))
    for stem in unpaired:
        log.warning("skipping unpaired input %s", stem)
    return paired, len(unpaired)


def _read_layout(labels_dir, stem, image_shape):
    h, w = image_shape[:2]
    with open(os.path.join(labels_dir, f"{stem}.txt")) as fh:
        return parse_kitti_labels(fh.read(), (w, h), source=stem)


# ---------------------------------------------------------------- stage 1


def stage1_one(stem: str, cfg: RunConfig, backend, schedule, gcfg):
    image = load_image(os.path.join(cfg.images_dir, f"{stem}.png"))
    caps = backend.capabilities
    if image.shape[:2] != caps.latent_shape[1:]:
        raise ConfigurationError(
            f"{stem}: image {image.shape[:2]} != backend latent {caps.latent_shape[1:]}"
        )
    layout = _read_layout(cfg.labels_dir, stem, image.shape)
    prompt = build_prompt(layout)
    cond = Condition(words=prompt.words)
    z0 = to_latent(image, caps.dtype)
    trajectory = invert(z0, cond, schedule, backend, n_capture=gcfg.n_p)

    components = {
        k: fit_pca(rec.self_keys, cfg.n_components, t=k)
        for k, rec in trajectory.features.items()
    }
    grid = to_grid(layout, caps.downsample)
    h_f, w_f = grid.grid_size
    if prompt.words:
        # average each word's relevance map over the captured steps
        sums, counts = {}, {}
        for rec in trajectory.features.values():
            for word, cmap in rec.cross_maps.items():
                arr = cmap.detach().cpu().numpy().astype(np.float64)
                sums[word] = sums.get(word, 0.0) + arr
                counts[word] = counts.get(word, 0) + 1
        averaged = {word: sums[word] / counts[word] for word in sums}
        mask_raw = concept_mask(averaged).values
    else:
        mask_raw = np.zeros((h_f, w_f))
    mask_updated = update_mask(mask_raw, grid, gcfg.sigma)
    mask_bin = binarize(mask_updated, gcfg.tau)

    provenance = {
        "backend": cfg.backend,
        "n_t": schedule.ddim_steps,
        "n_p": gcfg.n_p,
        "n_components": cfg.n_components,
        "sigma": gcfg.sigma,
        "tau": gcfg.tau,
        "seed": cfg.seed,
    }
    store = extract_prototypes(components, mask_bin, gcfg.n_p, config=provenance)

    latent_grid = to_grid(layout, max(1, image.shape[0] // caps.latent_shape[1]))
    extras = {
        "aux_mask_raw": mask_raw,
        "aux_mask_updated": mask_updated,
        "aux_latent_indicator": latent_grid.indicator.astype(np.uint8),
        "aux_trajectory": torch.stack(trajectory.latents).cpu().numpy(),
    }
    manifest_extra = {
        "stem": stem,
        "words": list(prompt.words),
        "boxes": [
            [box.cls, box.left, box.top, box.right, box.bottom] for box in layout.boxes
        ],
        "image_size": list(layout.image_size),
        "n_objects": len(layout.boxes),
    }
    store_path = os.path.join(cfg.store_dir, f"{stem}.store")
    save_prototype_store(store_path, store, manifest_extra, extras)
    return store_path


def cmd_stage1(cfg: RunConfig) -> int:
    cfg.validate(require=("images_dir", "labels_dir", "store_dir"))
    os.makedirs(cfg.store_dir, exist_ok=True)
    n_t = cfg.steps or 200
    backend, schedule = build_backend(cfg, n_t)
    gcfg = cfg.guidance(n_t)
    write_kv_file(os.path.join(cfg.store_dir, "config.txt"), cfg.to_kv())
    stems, failures = paired_stems(cfg.images_dir, cfg.labels_dir)

    def work(stem):
        start = time.perf_counter()
        stage1_one(stem, cfg, backend, schedule, gcfg)
        log.info("[stage1] %s done in %.2fs", stem, time.perf_counter() - start)

    failures += _run_batch(stems, work, cfg.workers, backend)
    log.info("[stage1] %d stores written, %d failures", len(stems) - failures, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


def _run_batch(stems, work, workers, backend) -> int:
    failures = 0
    if workers > 1 and not backend.capabilities.concurrent_inference:
        log.warning("backend is not safe for concurrent inference; forcing workers=1")
        workers = 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {stem: pool.submit(work, stem) for stem in stems}
        for stem, future in futures.items():
            exc = future.exception()
            if exc is not None:
                log.error("[batch] %s failed: %s", stem, exc)
                failures += 1
    else:
        for stem in stems:
            try:
                work(stem)
            except Exception as exc:  # crash isolation: one bad input never aborts the batch
                log.error("[batch] %s failed: %s", stem, exc)
                failures += 1
    return failures


# ---------------------------------------------------------------- stage 2


class StoreBundle:
    """One image's deserialized stage-1 payload."""

    def __init__(self, path, dtype):
        store, manifest, extras = load_prototype_store(path)
        self.store = store
        self.stem = manifest["stem"]
        self.words = tuple(manifest["words"])
        self.boxes = manifest["boxes"]
        self.image_size = tuple(manifest["image_size"])
        self.n_objects = manifest["n_objects"]
        self.n_t = manifest["config"]["n_t"]
        self.mask_raw = extras["aux_mask_raw"]
        self.mask_updated = extras["aux_mask_updated"]
        self.indicator = torch.from_numpy(extras["aux_latent_indicator"]).to(dtype)
        self.trajectory = [
            torch.from_numpy(frame).to(dtype) for frame in extras["aux_trajectory"]
        ]


def generate_one(stem, bundle, cfg, backend, schedule, gcfg, mode, tau=None):
    """One guided/baseline generation; returns (image, loss records, mask cells)."""
    tau = cfg.tau if tau is None else tau
    seed = image_seed(cfg.seed, stem)
    if mode == "prompt-only":
        layout = _read_layout(cfg.labels_dir, stem, _image_hw(cfg, stem)) if bundle is None else None
        words = bundle.words if bundle is not None else tuple(b.cls for b in layout.boxes)
        prompt = apply_scenario(words_to_prompt(words), cfg.scenario)
        cond = Condition(words=prompt.words, scenario=prompt.scenario)
        result = sample(None, cond, schedule, backend, gcfg, rng_seed=seed)
        return from_latent(result.final), result.loss_records, 0
    prompt = apply_scenario(words_to_prompt(bundle.words), cfg.scenario)
    cond = Condition(words=prompt.words, scenario=prompt.scenario)
    initial = bundle.trajectory[schedule.ddim_steps]
    if mode == "off":
        result = sample(initial, cond, schedule, backend, gcfg, rng_seed=seed)
        return from_latent(result.final), result.loss_records, 0
    mask_values = bundle.mask_raw if mode == "gsa-concept" else bundle.mask_updated
    mask_bin = binarize(mask_values, tau)
    state = guidance_mod.GuidanceState(
        store=bundle.store,
        inversion_latents={k: bundle.trajectory[k] for k in range(1, gcfg.n_p + 1)},
        latent_indicator=bundle.indicator,
        n_objects=bundle.n_objects,
        cond=cond,
        schedule=schedule,
        n_p=gcfg.n_p,
        mask_override=mask_bin,
        refit_pca=cfg.refit_pca,
        use_sa=mode in ("full", "gsa", "gsa-concept"),
        use_sl=mode in ("full", "gsl"),
    )
    hook = guidance_mod.build_hook(state, backend, gcfg)
    result = sample(initial, cond, schedule, backend, gcfg, guidance_hook=hook, rng_seed=seed)
    return from_latent(result.final), result.loss_records, int(mask_bin.sum())


def _image_hw(cfg, stem):
    return load_image(os.path.join(cfg.images_dir, f"{stem}.png")).shape


def _store_paths(store_dir):
    return sorted(
        os.path.join(store_dir, f) for f in os.listdir(store_dir) if f.endswith(".store")
    )


def _evaluate_generated(cfg, stem, generated):
    """RegionReport against the original when originals are available."""
    original_path = os.path.join(cfg.images_dir, f"{stem}.png")
    if not os.path.exists(original_path):
        return None
    original = load_image(original_path)
    layout = _read_layout(cfg.labels_dir, stem, original.shape) if cfg.labels_dir else None
    if layout is None:
        return None
    return evaluate_pair(original, generated, layout)


def _write_reports(out_dir, rows, fieldnames):
    with open(os.path.join(out_dir, "reports.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _aggregate(rows, key):
    values = [r[key] for r in rows if r.get(key) is not None and not math.isinf(r[key])]
    return float(np.mean(values)) if values else float("nan")


def run_generation_batch(cfg, backend, schedule, gcfg, mode, stems_bundles, out_dir, tau=None):
    """Generate every image under one mode; returns per-image report rows."""
    images_dir = os.path.join(out_dir, "images")
    logs_dir = os.path.join(out_dir, "logs")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(logs_dir, exist_ok=True)
    rows = []
    failures = 0

    def work(item):
        stem, bundle = item
        start = time.perf_counter()
        generated, records, cells = generate_one(
            stem, bundle, cfg, backend, schedule, gcfg, mode, tau=tau
        )
        save_image(os.path.join(images_dir, f"{stem}.png"), generated)
        with open(os.path.join(logs_dir, f"{stem}.losses.txt"), "w") as fh:
            for record in records:
                fh.write(record.to_line() + "\n")
        report = _evaluate_generated(cfg, stem, generated)
        row = {"stem": stem, "mode": mode, "mask_cells": cells}
        if report is not None:
            row.update(
                psnr_object=report.psnr_object,
                ssim_object=report.ssim_object,
                psnr_background=report.psnr_background,
                ssim_background=report.ssim_background,
            )
        rows.append(row)
        log.info("[stage2:%s] %s done in %.2fs", mode, stem, time.perf_counter() - start)

    failures = _run_batch(list(stems_bundles), work, cfg.workers, backend)
    rows.sort(key=lambda r: r["stem"])
    _merge_logs(logs_dir, out_dir)
    return rows, failures


def _merge_logs(logs_dir, out_dir):
    merged = os.path.join(out_dir, "losses.txt")
    with open(merged, "w") as out:
        for name in sorted(os.listdir(logs_dir)):
            with open(os.path.join(logs_dir, name)) as fh:
                for line in fh:
                    out.write(f"{os.path.splitext(name)[0]} {line}")


def _load_bundles(cfg, backend, expected_steps=None):
    paths = _store_paths(cfg.store_dir)
    if not paths:
        raise ConfigurationError(f"no .store files under {cfg.store_dir}")
    bundles = []
    for path in paths:
        bundle = StoreBundle(path, backend.capabilities.dtype if backend else torch.float32)
        if expected_steps is not None and bundle.n_t != expected_steps:
            raise ConfigurationError(
                f"{path}: store built for n_t={bundle.n_t}, run requests {expected_steps}"
            )
        bundles.append(bundle)
    return bundles


def _stage2_steps(cfg):
    if cfg.steps is not None:
        return cfg.steps
    paths = _store_paths(cfg.store_dir) if cfg.store_dir else []
    if paths:
        _, manifest, _ = load_prototype_store(paths[0])
        return manifest["config"]["n_t"]
    return 200


REPORT_FIELDS = [
    "stem",
    "mode",
    "mask_cells",
    "psnr_object",
    "ssim_object",
    "psnr_background",
    "ssim_background",
]


def cmd_stage2(cfg: RunConfig) -> int:
    require = ["images_dir", "out_dir"]
    if cfg.mode == "prompt-only":
        require.append("labels_dir")
    else:
        require.append("store_dir")
    cfg.validate(require=tuple(require))
    if cfg.scenario is None:
        raise ConfigurationError("--scenario is required for stage2")
    n_t = _stage2_steps(cfg)
    backend, schedule = build_backend(cfg, n_t)
    gcfg = cfg.guidance(n_t)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_kv_file(os.path.join(cfg.out_dir, "config.txt"), {**cfg.to_kv(), "steps": str(n_t)})

    if cfg.mode == "prompt-only":
        stems, pair_failures = paired_stems(cfg.images_dir, cfg.labels_dir)
        items = [(stem, None) for stem in stems]
    else:
        bundles = _load_bundles(cfg, backend, expected_steps=n_t)
        items = [(b.stem, b) for b in bundles]
        pair_failures = 0

    taus = cfg.tau_sweep or (None,)
    total_failures = pair_failures
    for tau in taus:
        sub = cfg.out_dir if tau is None else os.path.join(cfg.out_dir, f"tau_{tau:g}")
        os.makedirs(sub, exist_ok=True)
        rows, failures = run_generation_batch(
            cfg, backend, schedule, gcfg, cfg.mode, items, sub, tau=tau
        )
        total_failures += failures
        _write_reports(sub, rows, REPORT_FIELDS)
        summary = {
            "mode": cfg.mode,
            "scenario": cfg.scenario,
            "tau": cfg.tau if tau is None else tau,
            "images": len(rows),
            "mean_mask_cells": _aggregate(rows, "mask_cells"),
            "mean_psnr_object": _aggregate(rows, "psnr_object"),
            "mean_ssim_object": _aggregate(rows, "ssim_object"),
            "mean_psnr_background": _aggregate(rows, "psnr_background"),
            "mean_ssim_background": _aggregate(rows, "ssim_background"),
        }
        write_kv_file(os.path.join(sub, "summary.txt"), {k: str(v) for k, v in summary.items()})
        log.info("[stage2] summary %s", summary)
    return EXIT_PARTIAL if total_failures else EXIT_OK


def cmd_ablate(cfg: RunConfig, variants) -> int:
    cfg.validate(require=("images_dir", "store_dir", "out_dir"))
    if cfg.scenario is None:
        raise ConfigurationError("--scenario is required for ablate")
    bad = [v for v in variants if v not in ABLATION_VARIANTS]
    if bad:
        raise ConfigurationError(f"unknown ablation variants {bad}; pick from {ABLATION_VARIANTS}")
    n_t = _stage2_steps(cfg)
    backend, schedule = build_backend(cfg, n_t)
    gcfg = cfg.guidance(n_t)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_kv_file(os.path.join(cfg.out_dir, "config.txt"), {**cfg.to_kv(), "steps": str(n_t)})
    bundles = _load_bundles(cfg, backend, expected_steps=n_t)
    items = [(b.stem, b) for b in bundles]

    table = []
    failures = 0
    for variant in ABLATION_VARIANTS:  # fixed order keeps the table content stable
        if variant not in variants:
            continue
        sub = os.path.join(cfg.out_dir, variant)
        os.makedirs(sub, exist_ok=True)
        rows, fail = run_generation_batch(cfg, backend, schedule, gcfg, variant, items, sub)
        failures += fail
        _write_reports(sub, rows, REPORT_FIELDS)
        table.append(
            {
                "variant": variant,
                "images": len(rows),
                "mean_psnr_object": _aggregate(rows, "psnr_object"),
                "mean_ssim_object": _aggregate(rows, "ssim_object"),
                "mean_psnr_background": _aggregate(rows, "psnr_background"),
                "mean_ssim_background": _aggregate(rows, "ssim_background"),
            }
        )
    with open(os.path.join(cfg.out_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0].keys()))
        writer.writeheader()
        writer.writerows(table)
    for row in table:
        log.info("[ablate] %s", row)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    cfg.validate(require=("images_dir", "labels_dir", "out_dir"))
    generated_dir = os.path.join(cfg.out_dir, "images")
    if not os.path.isdir(generated_dir):
        generated_dir = cfg.out_dir
    rows = []
    failures = 0
    for name in sorted(os.listdir(generated_dir)):
        if not name.endswith(".png"):
            continue
        stem = os.path.splitext(name)[0]
        try:
            generated = load_image(os.path.join(generated_dir, name))
            original = load_image(os.path.join(cfg.images_dir, f"{stem}.png"))
            layout = _read_layout(cfg.labels_dir, stem, original.shape)
            report = evaluate_pair(original, generated, layout)
            rows.append(
                {
                    "stem": stem,
                    "mode": "evaluate",
                    "mask_cells": 0,
                    "psnr_object": report.psnr_object,
                    "ssim_object": report.ssim_object,
                    "psnr_background": report.psnr_background,
                    "ssim_background": report.ssim_background,
                }
            )
        except (OSError, ProtodiffError) as exc:
            log.error("[evaluate] %s failed: %s", stem, exc)
            failures += 1
    if not rows and not failures:
        raise ConfigurationError(f"no generated images found under {generated_dir}")
    _write_reports(cfg.out_dir, rows, REPORT_FIELDS)
    summary = {
        "images": str(len(rows)),
        "mean_psnr_object": str(_aggregate(rows, "psnr_object")),
        "mean_ssim_object": str(_aggregate(rows, "ssim_object")),
        "mean_psnr_background": str(_aggregate(rows, "psnr_background")),
        "mean_ssim_background": str(_aggregate(rows, "ssim_background")),
    }
    write_kv_file(os.path.join(cfg.out_dir, "summary.txt"), summary)
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------- corpus/training


def cmd_gen_corpus(args) -> int:
    spec = ToyCorpusSpec()
    if args.scenario:
        if args.scenario not in CORPUS_SCENARIOS:
            raise ConfigurationError(
                f"corpus scenario {args.scenario!r} not in {CORPUS_SCENARIOS}"
            )
        spec = ToyCorpusSpec(scenarios=(args.scenario,), scenario_weights=(1.0,))
    samples = generate_toy_corpus(spec, args.count, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_corpus(samples, args.out)
    log.info("[gen-corpus] wrote %d samples to %s", len(samples), args.out)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    if not os.path.isdir(args.corpus):
        raise ConfigurationError(f"corpus dir {args.corpus} does not exist")
    samples = read_corpus(args.corpus)
    spec = TrainSpec(
        steps=args.train_iters,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
    )
    backend, history = train_toy_denoiser(samples, spec)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_checkpoint(args.out, backend, train_log=history)
    final = history[-1] if history else {}
    log.info("[train-toy] checkpoint %s (%s)", args.out, final)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--backend")
    parser.add_argument("--images")
    parser.add_argument("--labels")
    parser.add_argument("--store")
    parser.add_argument("--scenario")
    parser.add_argument("--out")
    parser.add_argument("--steps", type=int, help="DDIM step count N_t")
    parser.add_argument("--np", dest="n_p", type=int, help="guided-step horizon N_p")
    parser.add_argument("--nb", dest="n_components", type=int, help="PCA component count")
    parser.add_argument("--s", type=float)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--wsa", dest="w_sa", type=float)
    parser.add_argument("--wsl", dest="w_sl", type=float)
    parser.add_argument("--tau-sweep", dest="tau_sweep", help="comma-separated tau values")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--refit-pca", dest="refit_pca", action="store_true", default=None)


_KV_KEYS = {
    "backend": str,
    "images": str,
    "labels": str,
    "store": str,
    "scenario": str,
    "out": str,
    "steps": int,
    "np": int,
    "nb": int,
    "s": float,
    "sigma": float,
    "tau": float,
    "wsa": float,
    "wsl": float,
    "tau_sweep": str,
    "seed": int,
    "workers": int,
    "mode": str,
    "refit_pca": lambda v: v.lower() in ("1", "true", "yes"),
}
_KV_TO_FIELD = {
    "images": "images_dir",
    "labels": "labels_dir",
    "store": "store_dir",
    "out": "out_dir",
    "np": "n_p",
    "nb": "n_components",
    "wsa": "w_sa",
    "wsl": "w_sl",
}
_ARG_TO_KV = {
    "images": "images",
    "labels": "labels",
    "store": "store",
    "out": "out",
    "n_p": "np",
    "n_components": "nb",
    "w_sa": "wsa",
    "w_sl": "wsl",
}


def resolve_config(args) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    values = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigurationError(f"config file {args.config} does not exist")
        for key, raw in read_kv_file(args.config).items():
            if key not in _KV_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _KV_KEYS[key](raw)
    for arg_name, kv_name in list(_ARG_TO_KV.items()) + [
        (k, k) for k in _KV_KEYS if k not in _ARG_TO_KV.values()
    ]:
        if hasattr(args, arg_name) and getattr(args, arg_name) is not None:
            values[kv_name] = getattr(args, arg_name)
    cfg = RunConfig()
    for kv_name, value in values.items():
        field_name = _KV_TO_FIELD.get(kv_name, kv_name)
        if field_name == "tau_sweep" and isinstance(value, str):
            value = tuple(float(v) for v in value.split(",") if v.strip())
        setattr(cfg, field_name, value)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="protodiff",
        description="Layout-preserving scenario augmentation with prototype-guided diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="restrict to a single corpus scenario")

    p = sub.add_parser("train-toy", help="train the toy denoiser on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-iters", type=int, default=3000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)

    for name in ("stage1", "stage2", "ablate", "evaluate"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "ablate":
            p.add_argument(
                "--variants",
                default=",".join(ABLATION_VARIANTS),
                help=f"comma-separated subset of {ABLATION_VARIANTS}",
            )

    args = parser.parse_args(argv)
    try:
        if args.command == "gen-corpus":
            return cmd_gen_corpus(args)
        if args.command == "train-toy":
            return cmd_train_toy(args)
        cfg = resolve_config(args)
        if args.command == "stage1":
            return cmd_stage1(cfg)
        if args.command == "stage2":
            return cmd_stage2(cfg)
        if args.command == "ablate":
            variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
            return cmd_ablate(cfg, variants)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        raise ConfigurationError(f"unknown command {args.command}")
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

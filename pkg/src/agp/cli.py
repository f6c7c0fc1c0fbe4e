"""Command line entry point: ``agp {index,proto,bench,generate}``.

Every subcommand reads an optional JSON config, applies flag overrides on
top, and maps library errors to exit codes (2 config, 3 data, 4 numerical).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import genpipe, vae
from .config import Config, load_config
from .dataset import (DatasetIndex, build_index, load_image, normalize_center, rasterize,
                      to_point_cloud)
from .episodes import run_benchmark
from .errors import AgpError, ConfigError, DataError
from .gmm import predict
from .prototype import build_agp

log = logging.getLogger("agp")

INDEX_CACHE = ".agp-index.json"
PANEL_SCALE = 3
CELL_SCALE = 4

# fixed 10-colour cycle for cluster panels
PALETTE = np.array([
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
], dtype=np.uint8)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _config(args) -> Config:
    overrides = {}
    if getattr(args, "data_root", None):
        overrides["data_root"] = str(args.data_root)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _index(cfg: Config, cache=None) -> DatasetIndex:
    if cache and Path(cache).is_file():
        return DatasetIndex.load(cache)
    if not cfg.data_root:
        raise ConfigError("no data root: pass --data-root or set data_root in the config")
    return build_index(cfg.data_root)


# index


def cmd_index(args) -> int:
    root = Path(args.data_root)
    if not root.is_dir():
        raise DataError(f"data root {root} is not a directory")
    index = build_index(root)
    cache = Path(args.cache) if args.cache else root / INDEX_CACHE
    try:
        index.save(cache)
    except OSError as exc:
        log.warning("could not write index cache %s: %s", cache, exc)
    else:
        log.info("index cached at %s", cache)
    counts = index.counts()
    print(_dump(counts), end="")
    return 0


# proto


def _panel(mask, colours=None):
    """RGB panel, white background; ``colours`` (h, w, 3) overrides black ink."""
    h, w = mask.shape
    out = np.full((h, w, 3), 255, dtype=np.uint8)
    out[mask] = 0 if colours is None else colours[mask]
    return np.kron(out, np.ones((PANEL_SCALE, PANEL_SCALE, 1), dtype=np.uint8))


def render_triptych(img, k, density, seed, frame=105) -> Image.Image:
    """Raw image, points coloured by cluster, and the sampled prototype."""
    pc = normalize_center(to_point_cloud(img), frame)
    proto = build_agp(pc, k, density, seed=seed)
    raw = np.asarray(Image.fromarray(np.where(img, 255, 0).astype(np.uint8))
                     .resize((frame, frame), Image.NEAREST)) > 127

    labels = predict(proto.model, pc)
    colours = np.zeros((frame, frame, 3), dtype=np.uint8)
    clustered = np.zeros((frame, frame), dtype=bool)
    cells = np.floor(pc + 0.5).astype(int)
    ok = ((cells >= 0) & (cells < frame)).all(axis=1)
    for (x, y), lab in zip(cells[ok], labels[ok]):
        clustered[y, x] = True
        colours[y, x] = PALETTE[lab % len(PALETTE)]

    gap = np.full((frame * PANEL_SCALE, 4, 3), 200, dtype=np.uint8)
    row = np.concatenate([_panel(raw), gap, _panel(clustered, colours), gap,
                          _panel(rasterize(proto.points, frame))], axis=1)
    return Image.fromarray(row, "RGB")


def cmd_proto(args) -> int:
    cfg = _config(args)
    img = load_image(args.image, cfg.thresholds.image)
    k = args.k if args.k is not None else cfg.classify_k
    density = args.density if args.density is not None else cfg.density
    render_triptych(img, k, density, cfg.seed, cfg.frame).save(args.out, "PNG")
    log.info("triptych written to %s", args.out)
    return 0


# bench


def cmd_bench(args) -> int:
    if args.trials < 1 or args.jobs < 1:
        raise ConfigError("--trials and --jobs must be >= 1")
    cfg = _config(args)
    index = _index(cfg, args.index)
    report = run_benchmark(index, args.n_way, args.mode == "within", args.trials, args.method,
                           cfg.seed, cfg, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.method}_{args.n_way}way_{args.mode}"
    (out / f"{stem}.json").write_text(_dump(report.to_json()))
    (out / f"{stem}.csv").write_text(report.log_csv())
    print(f"{stem}: accuracy {report.accuracy:.4f} ({report.correct}/{report.trials})")
    print(f"wall time {report.wall_time:.1f}s", file=sys.stderr)
    if report.aborted:
        raise DataError(f"benchmark aborted: {report.aborted}")
    return 0


# generate


def _class_of(path: Path, root: Path | None) -> str:
    path = path.resolve()
    if root is not None:
        try:
            return path.parent.relative_to(root.resolve()).as_posix()
        except ValueError:
            pass
    return "/".join(path.parent.parts[-2:])


def resolve_sources(spec: str, task: str, cfg: Config, seed: int, n_classes: int = 10,
                    index_cache=None):
    """Turn a ``--sources`` argument into ``[(class_id, path), ...]``.

    Accepted forms: comma-separated PNG paths; ``class:ID`` (first instance
    of that class); ``alphabet:NAME`` (``n_classes`` random classes of one
    alphabet); ``random`` (random classes across all alphabets, or one class
    for the exemplars task).
    """
    root = Path(cfg.data_root) if cfg.data_root else None
    if not (spec.startswith(("class:", "alphabet:")) or spec == "random"):
        paths = [Path(p) for p in spec.split(",") if p]
        missing = [str(p) for p in paths if not p.is_file()]
        if missing:
            raise DataError(f"source images not found: {missing}")
        return [(_class_of(p, root), str(p.resolve())) for p in paths]

    index = _index(cfg, index_cache)
    rng = np.random.default_rng(seed)
    if spec.startswith("class:"):
        cid = spec[len("class:"):]
        if cid not in index.instances:
            raise DataError(f"unknown class {cid!r}")
        chosen = [cid]
    elif spec.startswith("alphabet:"):
        name = spec[len("alphabet:"):]
        if name not in index.classes:
            raise DataError(f"unknown alphabet {name!r}")
        pool = list(index.classes[name])
        if len(pool) < n_classes:
            raise DataError(f"alphabet {name!r} has {len(pool)} classes, {n_classes} requested")
        chosen = [pool[i] for i in sorted(rng.choice(len(pool), n_classes, replace=False))]
    else:
        pool = index.all_classes()
        n = 1 if task == "exemplars" else n_classes
        if len(pool) < n:
            raise DataError(f"{len(pool)} classes available, {n} requested")
        chosen = [pool[i] for i in sorted(rng.choice(len(pool), n, replace=False))]
    return [(c, index.instances[c][0]) for c in chosen]


def contact_sheet(sources, variants) -> Image.Image:
    """Sources in the left column, variants in a grid to their right."""
    size = genpipe.VAE_FRAME
    tiles_src = [rasterize(to_point_cloud(img), size) for img in sources]
    cols = max(1, min(len(variants), 8))
    rows = max(len(tiles_src), -(-len(variants) // cols) if variants else 1)
    pad = 2
    cell = size + pad
    canvas = np.full((rows * cell + pad, (cols + 1) * cell + 3 * pad), 255, dtype=np.uint8)
    for i, t in enumerate(tiles_src):
        y = pad + i * cell
        canvas[y:y + size, pad:pad + size] = np.where(t, 0, 255)
    x0 = cell + 3 * pad
    canvas[:, cell + pad:cell + pad + 1] = 160
    for i, v in enumerate(variants):
        y = pad + (i // cols) * cell
        x = x0 + (i % cols) * cell
        canvas[y:y + size, x:x + size] = np.where(v, 0, 255)
    return Image.fromarray(np.kron(canvas, np.ones((CELL_SCALE, CELL_SCALE), dtype=np.uint8)), "L")


def _save_mask(mask, path):
    Image.fromarray(np.where(mask, 0, 255).astype(np.uint8), "L").save(path, "PNG")


def cmd_generate(args) -> int:
    if args.count < 0 or args.jobs < 1:
        raise ConfigError("--count must be >= 0 and --jobs >= 1")
    if args.provenance:
        prov = json.loads(Path(args.provenance).read_text())
        cfg = Config.from_json(prov["config"])
        task, seed, count = prov["task"], prov["seed"], prov["variants_requested"]
        sources = [(s["class_id"], s["path"]) for s in prov["sources"]]
    else:
        if not (args.task and args.sources):
            raise ConfigError("generate needs --task and --sources, or --provenance")
        cfg = _config(args)
        task, seed, count = args.task, cfg.seed, args.count
        sources = resolve_sources(args.sources, task, cfg, seed, args.n_classes, args.index)

    images = [(cid, load_image(p, cfg.thresholds.image)) for cid, p in sources]
    job = genpipe.GenerationJob(task, images, cfg.D, cfg.gen_k_range, count,
                                [p for _, p in sources]).validate()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = []
    try:
        result = genpipe.generate_variants(job, cfg, seed, jobs=args.jobs, progress=history.append)
    except AgpError:
        if history:
            (out / "loss.csv").write_text(_history_csv(history))
        raise

    for i, img in enumerate(result.images):
        _save_mask(img, out / f"variant_{i:03d}.png")
    contact_sheet([img for _, img in images], result.images).save(out / "contact_sheet.png", "PNG")
    vae.save_checkpoint(result.params, out / "vae_checkpoint.zip")
    (out / "loss.csv").write_text(vae.history_csv(result.params))
    prov = dict(result.provenance, checkpoint="vae_checkpoint.zip")
    (out / "provenance.json").write_text(_dump(prov))
    print(f"{len(result.images)} variants written to {out} ({result.failures} failures)")
    return 0


def _history_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["epoch", "total", "recon_bce", "kl"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="master seed (default: config seed)")
    common.add_argument("--data-root", help="dataset root (overrides config)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="agp", description="Gaussian prototype one-shot toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", parents=[common], help="index a dataset tree")
    s.add_argument("data_root")
    s.add_argument("--cache", help=f"index cache path (default DATA_ROOT/{INDEX_CACHE})")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("proto", parents=[common], help="render a prototype triptych")
    s.add_argument("image")
    s.add_argument("--k", type=int)
    s.add_argument("--density", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_proto)

    s = sub.add_parser("bench", parents=[common], help="run a one-shot benchmark")
    s.add_argument("--n-way", type=int, choices=(5, 20), required=True)
    s.add_argument("--mode", choices=("within", "unconstrained"), required=True)
    s.add_argument("--method", choices=("agp", "mse"), default="agp")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--index", help="cached index JSON")
    s.add_argument("--out", default="reports")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("generate", parents=[common], help="generate character variants")
    s.add_argument("--task", choices=genpipe.TASKS)
    s.add_argument("--sources", help="PNG paths (comma-separated), class:ID, alphabet:NAME or random")
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--n-classes", type=int, default=10)
    s.add_argument("--provenance", help="re-run from a provenance.json")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--index", help="cached index JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

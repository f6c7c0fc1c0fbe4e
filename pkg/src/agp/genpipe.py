"""Prototype-VAE generation: synthesize a prototype training set from the
source instances, train the VAE on it, then sample, decode, binarize and
thin new character variants."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import vae
from .config import Config
from .dataset import VAE_FRAME, normalize_center, rasterize, splat, to_point_cloud
from .errors import ConfigError, DataError
from .prototype import build_agp
from .similarity import best_aligned_score
from .skeleton import binarize, is_thin, skeletonize

log = logging.getLogger(__name__)

TASKS = ("exemplars", "alphabet", "unconstrained")
MAX_ATTEMPTS = 10


@dataclass
class GenerationJob:
    task: str
    sources: list  # (class_id, binary image) pairs
    per_class_agps: int = 500
    k_range: tuple = (6, 7, 8, 9, 10)
    variants_requested: int = 4
    source_paths: list = field(default_factory=list)

    def validate(self) -> GenerationJob:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.sources:
            raise DataError("generation job has no source instances")
        if self.task == "exemplars" and len(self.sources) != 1:
            raise DataError(f"exemplars task takes exactly one source, got {len(self.sources)}")
        ids = [c for c, _ in self.sources]
        if len(set(ids)) != len(ids):
            raise DataError("multi-class tasks take one instance per class")
        if self.task == "alphabet":
            alphabets = {c.rsplit("/", 1)[0] for c in ids}
            if len(alphabets) != 1:
                raise DataError(f"alphabet task sources span several alphabets: {sorted(alphabets)}")
        if self.per_class_agps % len(self.k_range):
            raise ConfigError(
                f"per_class_agps={self.per_class_agps} not divisible by {len(self.k_range)} k values"
            )
        if self.variants_requested < 0:
            raise ConfigError("variants_requested must be >= 0")
        return self


@dataclass
class VariantSet:
    images: list
    provenance: dict
    params: vae.VaeParams | None = None
    failures: int = 0


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint32)[0])


def _synth_cell(args):
    pc, k, n, base_seed, i, density, raster = args
    out = []
    for j in range(n):
        proto = build_agp(pc, k, density, seed=_seed(base_seed, i, k, j))
        out.append(splat(proto.points, VAE_FRAME) if raster == "splat"
                   else rasterize(proto.points, VAE_FRAME).astype(np.float64))
    return out


def synthesize_training_set(job: GenerationJob, seed: int = 0, density: int = 300,
                            frame: int = 105, raster: str = "binary", jobs: int = 1):
    """Rasters ``(N*D, 28, 28)`` with class labels and component counts.

    Each (class, k) cell contributes ``D / len(k_range)`` prototypes, each
    from its own mixture fit.
    """
    job.validate()
    per_k = job.per_class_agps // len(job.k_range)
    cells = []
    for i, (class_id, img) in enumerate(job.sources):
        pc = normalize_center(to_point_cloud(img), frame)
        if len(pc) < max(job.k_range):
            raise DataError(f"{class_id}: {len(pc)} foreground pixels < {max(job.k_range)} components")
        for k in job.k_range:
            cells.append((pc, k, per_k, seed, i, density, raster))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_synth_cell, cells))
    else:
        results = [_synth_cell(c) for c in cells]
    rasters, labels, ks = [], [], []
    for cell, out in zip(cells, results):
        rasters.extend(out)
        labels.extend([cell[4]] * len(out))
        ks.extend([cell[1]] * len(out))
    return np.array(rasters).reshape(-1, VAE_FRAME, VAE_FRAME), np.array(labels), np.array(ks)


def weights_digest(params: vae.VaeParams) -> str:
    h = hashlib.sha256()
    for name in sorted(params.weights):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params.weights[name]).tobytes())
    return h.hexdigest()


def decode_variant(params, z, threshold):
    """Decode, binarize and thin one latent; ``None`` for unusable output."""
    img = binarize(vae.decode(params, z), threshold)
    if not img.any():
        return None
    skel = skeletonize(img)
    if not skel.any() or not is_thin(skel):
        return None
    return skel


def generate_variants(job: GenerationJob, cfg: Config | None = None, seed: int = 0,
                      jobs: int = 1, progress=None) -> VariantSet:
    cfg = cfg or Config()
    job.validate()
    vcfg = cfg.vae
    train_seed, sample_seed = _seed(seed, 1), _seed(seed, 2)

    data, labels, _ = synthesize_training_set(job, seed, cfg.density, cfg.frame, vcfg.raster, jobs)
    log.info("training set: %d rasters from %d classes", len(data), len(job.sources))
    hyper = vae.TrainHyper(vcfg.lr, vcfg.batch, vcfg.epochs)
    params = vae.train(data, hyper, seed=train_seed, arch=vae.VaeArch(latent_dim=vcfg.latent_dim),
                       progress=progress)

    mu, _ = vae.encode(params, data)
    cross = job.task != "exemplars"
    images, failures = [], 0
    for v in range(job.variants_requested):
        for attempt in range(MAX_ATTEMPTS):
            z = vae.sample_latent(params, mu, vcfg.strategy, _seed(sample_seed, v, attempt),
                                  labels=labels, cross_class=cross)
            skel = decode_variant(params, z, cfg.thresholds.skeleton)
            if skel is not None:
                images.append(skel)
                break
        else:
            failures += 1
            log.warning("variant %d: no usable decode after %d attempts", v, MAX_ATTEMPTS)

    provenance = {
        "task": job.task,
        "seed": seed,
        "sources": [
            {"class_id": c, "path": p}
            for (c, _), p in zip(job.sources, job.source_paths or [None] * len(job.sources))
        ],
        "per_class_agps": job.per_class_agps,
        "k_range": list(job.k_range),
        "variants_requested": job.variants_requested,
        "variants_emitted": len(images),
        "failures": failures,
        "training_rasters": int(len(data)),
        "config": cfg.to_json(),
        "weights_sha256": weights_digest(params),
        "final_loss": params.history[-1] if params.history else None,
    }
    return VariantSet(images, provenance, params, failures)


def variant_fidelity(variant, source_proto, distractor_protos, params, frame: int = 105):
    """Aligned similarity of a variant's pixels to the source prototype and to
    each distractor prototype, in the classification frame."""
    pts = normalize_center(to_point_cloud(variant), frame)
    own = best_aligned_score(pts, source_proto.points, params).value
    others = [best_aligned_score(pts, d.points, params).value for d in distractor_protos]
    return own, others


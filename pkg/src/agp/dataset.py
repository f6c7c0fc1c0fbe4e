"""Image ingestion, point-cloud conversion and the on-disk dataset index.

Binary images are plain ``(height, width)`` boolean arrays and point clouds
are ``(n, 2)`` float arrays of ``(x, y)`` = ``(column, row)`` coordinates, so
pixel ``(c, r)`` maps to the point ``(c, r)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BlankImageError, DataError, IngestionError

CLASSIFY_FRAME = 105
VAE_FRAME = 28
BBOX_FILL = 0.9

INDEX_VERSION = 1


def as_binary_image(pixels) -> np.ndarray:
    img = np.asarray(pixels)
    if img.ndim != 2 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"binary image must be a non-empty 2D grid, got shape {img.shape}")
    if img.dtype != bool:
        if not np.isin(img, (0, 1)).all():
            raise ValueError("binary image pixels must be 0/1")
        img = img.astype(bool)
    return img


def load_image(path, threshold: float = 0.5) -> np.ndarray:
    """Read a raster image and binarize it; dark (stroke) pixels become on.

    A pixel is on iff ``1 - luminance / 255 >= threshold``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    try:
        with Image.open(path) as im:
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                # transparent background counts as white
                im = im.convert("RGBA")
                bg = Image.new("RGBA", im.size, (255, 255, 255, 255))
                im = Image.alpha_composite(bg, im)
            lum = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(path, exc) from exc
    img = (1.0 - lum / 255.0) >= threshold
    if not img.any():
        raise BlankImageError(f"{path}: no foreground pixels at threshold {threshold}")
    return img


def to_point_cloud(img) -> np.ndarray:
    img = as_binary_image(img)
    rows, cols = np.nonzero(img)
    if rows.size == 0:
        raise BlankImageError("image has no on-pixels")
    return np.column_stack([cols, rows]).astype(np.float64)


def normalize_center(pc, frame: float = CLASSIFY_FRAME) -> np.ndarray:
    """Scale the cloud so its longest bounding-box side spans ``0.9 * frame``
    (aspect ratio kept) and move its centroid to the frame center.

    Coincident points all land on the frame center.
    """
    pts = np.asarray(pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ValueError("point cloud must be a non-empty (n, 2) array")
    if frame < 2:
        raise ValueError(f"frame must be >= 2, got {frame}")
    center = frame / 2.0
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    if extent == 0.0:
        return np.full_like(pts, center)
    scale = BBOX_FILL * frame / extent
    return (pts - pts.mean(axis=0)) * scale + center


def rasterize(pc, size: int = VAE_FRAME) -> np.ndarray:
    """Normalize ``pc`` into a ``size`` frame and mark every cell hit by a point.

    Cell ``(c, r)`` covers ``[c - 0.5, c + 0.5) x [r - 0.5, r + 0.5)``; points
    outside the grid are dropped.
    """
    pts = normalize_center(pc, size)
    cells = np.floor(pts + 0.5).astype(np.int64)
    inside = ((cells >= 0) & (cells < size)).all(axis=1)
    cells = cells[inside]
    img = np.zeros((size, size), dtype=bool)
    img[cells[:, 1], cells[:, 0]] = True
    return img


def splat(pc, size: int = VAE_FRAME) -> np.ndarray:
    """Anti-aliased float raster in [0, 1]: bilinear point splats, clipped."""
    pts = normalize_center(pc, size)
    out = np.zeros((size, size), dtype=np.float64)
    base = np.floor(pts).astype(np.int64)
    frac = pts - base
    for dx in (0, 1):
        for dy in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            cx, cy = base[:, 0] + dx, base[:, 1] + dy
            ok = (cx >= 0) & (cx < size) & (cy >= 0) & (cy < size)
            np.add.at(out, (cy[ok], cx[ok]), (wx * wy)[ok])
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class DatasetIndex:
    """Alphabet -> class -> instance paths, built from an
    ``[split/]alphabet/character/instance.png`` tree."""

    root: str
    classes: dict = field(default_factory=dict)  # alphabet -> tuple of class ids
    instances: dict = field(default_factory=dict)  # class id -> tuple of absolute paths

    @property
    def alphabets(self) -> list[str]:
        return sorted(self.classes)

    def all_classes(self) -> list[str]:
        return [c for a in self.alphabets for c in self.classes[a]]

    def alphabet_of(self, class_id: str) -> str:
        return class_id.rsplit("/", 1)[0]

    def counts(self) -> dict:
        n_inst = sum(len(v) for v in self.instances.values())
        return {
            "alphabets": len(self.classes),
            "classes": len(self.instances),
            "instances": n_inst,
        }

    def restrict(self, top_dir: str) -> DatasetIndex:
        """Keep only alphabets that live under the given top-level directory
        (e.g. ``images_evaluation``)."""
        keep = {a: cs for a, cs in self.classes.items() if a.split("/", 1)[0] == top_dir}
        if not keep:
            raise DataError(f"no alphabets under {top_dir!r} in {self.root}")
        inst = {c: self.instances[c] for cs in keep.values() for c in cs}
        return DatasetIndex(self.root, keep, inst)

    def to_json(self) -> dict:
        root = Path(self.root)
        return {
            "version": INDEX_VERSION,
            "data_root": self.root,
            "alphabets": {
                a: {c: [Path(p).relative_to(root).as_posix() for p in self.instances[c]] for c in cs}
                for a, cs in sorted(self.classes.items())
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> DatasetIndex:
        if doc.get("version") != INDEX_VERSION:
            raise DataError(f"unsupported index version {doc.get('version')!r}")
        root = doc["data_root"]
        classes, instances = {}, {}
        for a, cmap in doc["alphabets"].items():
            classes[a] = tuple(sorted(cmap))
            for c, paths in cmap.items():
                instances[c] = tuple(os.path.join(root, p) for p in paths)
        return cls(root, classes, instances)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> DatasetIndex:
        return cls.from_json(json.loads(Path(path).read_text()))


def build_index(data_root) -> DatasetIndex:
    root = Path(data_root).resolve()
    if not root.is_dir():
        raise DataError(f"data_root {data_root} is not a directory")
    by_class: dict[str, list[str]] = {}
    for dirpath, _dirs, files in os.walk(root):
        pngs = sorted(f for f in files if f.lower().endswith(".png"))
        if not pngs:
            continue
        rel = Path(dirpath).relative_to(root).as_posix()
        if "/" not in rel:
            # a class directory needs an alphabet directory above it
            continue
        by_class[rel] = [os.path.join(dirpath, f) for f in pngs]
    if not by_class:
        raise DataError(f"no alphabet/character/*.png images found under {data_root}")
    classes: dict[str, list[str]] = {}
    for c in sorted(by_class):
        classes.setdefault(c.rsplit("/", 1)[0], []).append(c)
    return DatasetIndex(
        str(root),
        {a: tuple(cs) for a, cs in classes.items()},
        {c: tuple(p) for c, p in by_class.items()},
    )

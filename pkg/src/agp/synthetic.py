"""Procedural handwriting-like glyph corpus in the Omniglot directory layout.

Each alphabet owns a small pool of stroke primitives; a character places a
few primitives on the canvas, and each drawn instance perturbs the control
points and applies a slight affine jitter. Used for tests and demos when the
real corpus is not at hand.

    python -m agp.synthetic OUT_DIR [--alphabets 3 --characters 6 --instances 4]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

SIZE = 105


def _bezier(ctrl, n=40):
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2, p3 = ctrl
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + (t ** 3) * p3


def make_character(rng, primitives, n_strokes):
    strokes = []
    for _ in range(n_strokes):
        prim = primitives[rng.integers(len(primitives))]
        scale = rng.uniform(50, 80)
        offset = rng.uniform(35, 70, size=2)
        strokes.append(prim * scale + offset)
    return strokes


def draw_instance(strokes, rng, jitter=3.0, width=3, size=SIZE) -> np.ndarray:
    """Render one noisy instance; returns an on/off array (strokes on)."""
    angle = np.radians(rng.uniform(-6, 6))
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    scale = rng.uniform(0.9, 1.1)
    shift = rng.uniform(-5, 5, size=2)
    center = np.array([size / 2, size / 2])
    canvas = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(canvas)
    for ctrl in strokes:
        noisy = ctrl + rng.normal(0.0, jitter, size=ctrl.shape)
        noisy = (noisy - center) @ rot.T * scale + center + shift
        pts = np.clip(_bezier(noisy), 1, size - 2)
        draw.line([tuple(p) for p in pts], fill=0, width=width, joint="curve")
    return np.asarray(canvas) < 128


def write_corpus(out_dir, n_alphabets=3, n_characters=6, n_instances=4, seed=0,
                 strokes=(1, 3)) -> Path:
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    for a in range(n_alphabets):
        primitives = [rng.uniform(-0.5, 0.5, size=(4, 2)) for _ in range(5)]
        for c in range(n_characters):
            char = make_character(rng, primitives, int(rng.integers(strokes[0], strokes[1] + 1)))
            cdir = out / f"alphabet{a:02d}" / f"character{c + 1:02d}"
            cdir.mkdir(parents=True, exist_ok=True)
            for i in range(n_instances):
                img = draw_instance(char, rng)
                Image.fromarray(~img).convert("1").save(cdir / f"{c + 1:02d}_{i + 1:02d}.png")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m agp.synthetic", description=__doc__.split("\n\n")[0])
    ap.add_argument("out_dir")
    ap.add_argument("--alphabets", type=int, default=3)
    ap.add_argument("--characters", type=int, default=6)
    ap.add_argument("--instances", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    write_corpus(args.out_dir, args.alphabets, args.characters, args.instances, args.seed)


if __name__ == "__main__":
    main()

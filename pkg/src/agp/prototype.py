"""Abstracted Gaussian prototypes: a single instance re-expressed as points
sampled from a mixture fitted to its pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import EMOptions, MixtureModel, fit_gmm, sample_mixture


@dataclass(frozen=True)
class Prototype:
    points: np.ndarray
    class_id: str | None
    k_components: int
    seed: int
    model: MixtureModel | None = None

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "k_components": self.k_components,
            "seed": self.seed,
            "points": self.points.tolist(),
            "model": None if self.model is None else self.model.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> Prototype:
        model = doc.get("model")
        return cls(
            np.asarray(doc["points"], dtype=np.float64).reshape(-1, 2),
            doc.get("class_id"),
            int(doc["k_components"]),
            int(doc["seed"]),
            None if model is None else MixtureModel.from_json(model),
        )


def build_agp(pc, k: int, density: int, seed: int = 0, class_id=None,
              opts: EMOptions | None = None) -> Prototype:
    """Fit a k-component mixture to ``pc`` and draw ``density`` points from it.

    ``density`` is the total point count; components receive points in
    proportion to their weights.
    """
    if density < 1:
        raise ValueError(f"density must be >= 1, got {density}")
    fit_seed, sample_seed = np.random.SeedSequence(seed).spawn(2)
    model = fit_gmm(pc, k, seed=fit_seed, opts=opts)
    points = sample_mixture(model, density, seed=sample_seed)
    return Prototype(points, class_id, k, seed, model)

"""N-way one-shot episodes, the prototype classifier and the pixel-MSE
baseline, and benchmark aggregation."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .dataset import DatasetIndex, load_image, normalize_center, rasterize, to_point_cloud
from .errors import AgpError, InfeasibleError
from .prototype import build_agp
from .similarity import SimilarityParams, classify

log = logging.getLogger(__name__)

METHODS = ("agp", "mse")


@dataclass
class Episode:
    support_classes: list
    support_paths: list
    support_images: list
    query_class: str
    query_path: str
    query_image: np.ndarray
    within_alphabet: bool
    seed: int

    @property
    def n_way(self) -> int:
        return len(self.support_classes)

    @property
    def answer(self) -> int:
        return self.support_classes.index(self.query_class)


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    true_class: str
    predicted_class: str | None
    correct: bool
    error: str | None = None


@dataclass
class BenchmarkReport:
    n_way: int
    within_alphabet: bool
    method: str
    seed: int
    trials: int = 0
    correct: int = 0
    log: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    aborted: str | None = None

    @property
    def accuracy(self) -> float:
        return self.correct / self.trials if self.trials else 0.0

    def to_json(self) -> dict:
        # wall time is excluded so reports stay byte-identical across runs
        return {
            "n_way": self.n_way,
            "mode": "within" if self.within_alphabet else "unconstrained",
            "method": self.method,
            "seed": self.seed,
            "trials": self.trials,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "failed_fits": sum(1 for r in self.log if r.error),
            "aborted": self.aborted,
            "config": self.config,
        }

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "seed", "true_class", "predicted_class", "correct", "error"])
        for r in self.log:
            w.writerow([r.trial, r.seed, r.true_class, r.predicted_class or "", int(r.correct), r.error or ""])
        return buf.getvalue()


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1, np.uint32)[0])


def _pool(index: DatasetIndex, classes):
    return [c for c in classes if len(index.instances[c]) >= 2]


def sample_episode(index: DatasetIndex, n_way: int, within_alphabet: bool, seed: int,
                   threshold: float = 0.5) -> Episode:
    """Draw ``n_way`` distinct classes (from one alphabet if ``within_alphabet``),
    one support instance each, and a query from another instance of one of them."""
    if n_way < 2:
        raise ValueError(f"n_way must be >= 2, got {n_way}")
    rng = np.random.default_rng(seed)
    if within_alphabet:
        eligible = [a for a in index.alphabets if len(_pool(index, index.classes[a])) >= n_way]
        if not eligible:
            raise InfeasibleError(f"no alphabet has {n_way} classes with >= 2 instances")
        pool = _pool(index, index.classes[eligible[rng.integers(len(eligible))]])
    else:
        pool = _pool(index, index.all_classes())
        if len(pool) < n_way:
            raise InfeasibleError(f"only {len(pool)} classes with >= 2 instances, need {n_way}")
    chosen = [pool[i] for i in rng.choice(len(pool), size=n_way, replace=False)]
    answer = int(rng.integers(n_way))
    support_paths = []
    query_path = None
    for i, c in enumerate(chosen):
        paths = index.instances[c]
        if i == answer:
            s, q = rng.choice(len(paths), size=2, replace=False)
            support_paths.append(paths[s])
            query_path = paths[q]
        else:
            support_paths.append(paths[rng.integers(len(paths))])
    return Episode(
        support_classes=chosen,
        support_paths=support_paths,
        support_images=[load_image(p, threshold) for p in support_paths],
        query_class=chosen[answer],
        query_path=query_path,
        query_image=load_image(query_path, threshold),
        within_alphabet=within_alphabet,
        seed=seed,
    )


def image_prototype(img, k, density, seed, frame=105, class_id=None):
    pc = normalize_center(to_point_cloud(img), frame)
    return build_agp(pc, k, density, seed=seed, class_id=class_id)


def predict_agp(ep: Episode, cfg: Config) -> int:
    seeds = [int(s) for s in np.random.SeedSequence(ep.seed).generate_state(ep.n_way + 1, np.uint32)]
    query = image_prototype(ep.query_image, cfg.classify_k, cfg.density, seeds[0], cfg.frame)
    supports = [
        image_prototype(img, cfg.classify_k, cfg.density, s, cfg.frame, c)
        for img, s, c in zip(ep.support_images, seeds[1:], ep.support_classes)
    ]
    return classify(query, supports, cfg.similarity)


def run_agp_episode(ep: Episode, cfg: Config | None = None) -> bool:
    return predict_agp(ep, cfg or Config()) == ep.answer


def predict_mse(ep: Episode, frame: int = 105) -> int:
    def canon(img):
        return rasterize(to_point_cloud(img), frame).astype(np.float64)

    q = canon(ep.query_image)
    errs = [np.mean((canon(s) - q) ** 2) for s in ep.support_images]
    return int(np.argmin(errs))


def mse_baseline_classify(ep: Episode, frame: int = 105) -> bool:
    return predict_mse(ep, frame) == ep.answer


def run_trial(index: DatasetIndex, n_way: int, within_alphabet: bool, method: str,
              master_seed: int, trial: int, cfg: Config) -> TrialResult:
    seed = trial_seed(master_seed, trial)
    ep = sample_episode(index, n_way, within_alphabet, seed, cfg.thresholds.image)
    try:
        pred = predict_agp(ep, cfg) if method == "agp" else predict_mse(ep, cfg.frame)
    except AgpError as exc:
        # failed fits count against accuracy
        log.warning("trial %d: %s", trial, exc)
        return TrialResult(trial, seed, ep.query_class, None, False, f"{type(exc).__name__}: {exc}")
    return TrialResult(trial, seed, ep.query_class, ep.support_classes[pred], pred == ep.answer)


_worker_args = None


def _init_worker(args):
    global _worker_args
    _worker_args = args


def _run_worker(trial):
    index, n_way, within, method, seed, cfg = _worker_args
    try:
        return run_trial(index, n_way, within, method, seed, trial, cfg)
    except InfeasibleError as exc:
        return exc


def run_benchmark(index: DatasetIndex, n_way: int, within_alphabet: bool, trials: int,
                  method: str = "agp", seed: int = 0, cfg: Config | None = None,
                  jobs: int = 1, progress=None) -> BenchmarkReport:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    cfg = cfg or Config()
    if cfg.eval_only:
        index = index.restrict("images_evaluation")
    report = BenchmarkReport(n_way, within_alphabet, method, seed, config=cfg.to_json())
    args = (index, n_way, within_alphabet, method, seed, cfg)
    start = time.perf_counter()
    if jobs > 1:
        ex = ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(args,))
        results = ex.map(_run_worker, range(trials), chunksize=max(1, trials // (4 * jobs)))
    else:
        ex = None
        _init_worker(args)
        results = map(_run_worker, range(trials))
    try:
        for res in results:
            if isinstance(res, InfeasibleError):
                report.aborted = str(res)
                break
            report.log.append(res)
            report.trials += 1
            report.correct += int(res.correct)
            if progress:
                progress(report)
    finally:
        if ex is not None:
            ex.shutdown(cancel_futures=True)
    report.wall_time = time.perf_counter() - start
    return report

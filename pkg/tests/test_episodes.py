import csv
import io

import numpy as np
import pytest
from PIL import Image

from agp.config import Config
from agp.dataset import build_index
from agp.episodes import (Episode, mse_baseline_classify, predict_mse, run_agp_episode,
                          run_benchmark, sample_episode, trial_seed)
from agp.errors import DataError, InfeasibleError


def _shape(kind, jitter, size=105):
    img = np.zeros((size, size), bool)
    o = jitter
    if kind == "hbar":
        img[50 + o:55 + o, 10:95] = True
    elif kind == "vbar":
        img[10:95, 50 + o:55 + o] = True
    elif kind == "ring":
        yy, xx = np.mgrid[:size, :size]
        d = np.hypot(yy - 52 - o, xx - 52)
        img[(d > 30) & (d < 35)] = True
    elif kind == "diag":
        for i in range(10, 95):
            img[i, max(0, i - 3 + o):i + 3 + o] = True
    elif kind == "corner":
        img[10:95, 10 + o:15 + o] = True
        img[90:95, 10:95] = True
    return img


@pytest.fixture(scope="module")
def shapes_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    for kind in ("hbar", "vbar", "ring", "diag", "corner"):
        d = root / "shapes" / kind
        d.mkdir(parents=True)
        for j in range(3):
            Image.fromarray(np.where(_shape(kind, j), 0, 255).astype(np.uint8)).save(d / f"{j}.png")
    return root


def test_sample_episode_contract(index):
    for s in range(20):
        ep = sample_episode(index, 5, False, s)
        assert ep.n_way == 5 and len(set(ep.support_classes)) == 5
        assert ep.query_class in ep.support_classes
        assert ep.query_path != ep.support_paths[ep.answer]
        assert ep.support_classes[ep.answer] == ep.query_class


def test_within_alphabet(index):
    ep = sample_episode(index, 6, True, 3)
    assert len({c.rsplit("/", 1)[0] for c in ep.support_classes}) == 1
    with pytest.raises(InfeasibleError):
        sample_episode(index, 7, True, 0)  # every alphabet has 6 classes
    with pytest.raises(InfeasibleError):
        sample_episode(index, 19, False, 0)


def test_forced_two_way(tmp_path):
    for c in ("a", "b"):
        d = tmp_path / "alpha" / c
        d.mkdir(parents=True)
        for j in range(2):
            px = np.full((10, 10), 255, np.uint8)
            px[j + 2, 3 + (c == "b")] = 0
            Image.fromarray(px).save(d / f"{j}.png")
    ep = sample_episode(build_index(tmp_path), 2, False, 1)
    assert sorted(ep.support_classes) == ["alpha/a", "alpha/b"]
    assert ep.query_path != ep.support_paths[ep.answer]


def test_episode_determinism(index):
    a, b = sample_episode(index, 5, True, 11), sample_episode(index, 5, True, 11)
    assert a.support_paths == b.support_paths and a.query_path == b.query_path


def test_trial_seeds_distinct():
    seeds = {trial_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000 and trial_seed(3, 5) == trial_seed(3, 5)


def _identical_episode(index):
    ep = sample_episode(index, 5, False, 2)
    ep.query_image = ep.support_images[ep.answer].copy()
    return ep


def test_identical_query_wins(index):
    ep = _identical_episode(index)
    assert run_agp_episode(ep, Config())
    assert mse_baseline_classify(ep)


def test_mse_tie_lowest_index(glyph):
    ep = Episode(["a", "b"], ["", ""], [glyph, glyph], "b", "", glyph, False, 0)
    assert predict_mse(ep) == 0


def test_benchmark_report(index):
    rep = run_benchmark(index, 5, False, 6, "agp", seed=4)
    assert rep.trials == 6 and rep.accuracy == rep.correct / 6
    rows = list(csv.DictReader(io.StringIO(rep.log_csv())))
    assert len(rows) == 6 and sum(int(r["correct"]) for r in rows) == rep.correct
    assert rep.to_json()["config"]["radius"] == 1.6


def test_single_trial(index):
    for method in ("agp", "mse"):
        rep = run_benchmark(index, 5, True, 1, method, seed=0)
        assert rep.trials == 1 and rep.accuracy in (0.0, 1.0)


def test_benchmark_deterministic_and_parallel_equal(index):
    a = run_benchmark(index, 5, False, 4, "agp", seed=7)
    b = run_benchmark(index, 5, False, 4, "agp", seed=7)
    c = run_benchmark(index, 5, False, 4, "agp", seed=7, jobs=2)
    assert a.to_json() == b.to_json() == c.to_json()
    assert a.log_csv() == c.log_csv()


def test_infeasible_aborts_with_report(index):
    rep = run_benchmark(index, 7, True, 3, "mse", seed=0)
    assert rep.trials == 0 and rep.aborted


def test_failed_fit_counts_as_incorrect(tmp_path):
    # classes with fewer on-pixels than components cannot be fitted
    for c in ("a", "b"):
        d = tmp_path / "alpha" / c
        d.mkdir(parents=True)
        for j in range(2):
            px = np.full((10, 10), 255, np.uint8)
            px[2, 2 + j] = 0
            Image.fromarray(px).save(d / f"{j}.png")
    rep = run_benchmark(build_index(tmp_path), 2, False, 2, "agp", seed=0)
    assert rep.trials == 2 and rep.correct == 0
    assert all(r.error and "InfeasibleError" in r.error for r in rep.log)
    assert rep.to_json()["failed_fits"] == 2


def test_separated_footprints_are_perfect(shapes_root):
    idx = build_index(shapes_root)
    rep = run_benchmark(idx, 5, True, 20, "agp", seed=0)
    assert rep.accuracy == 1.0


def test_eval_only_restricts(shapes_root):
    cfg = Config(eval_only=True)
    with pytest.raises(DataError):
        run_benchmark(build_index(shapes_root), 2, False, 1, "mse", cfg=cfg)


def test_bad_arguments(index):
    with pytest.raises(ValueError):
        run_benchmark(index, 5, False, 0)
    with pytest.raises(ValueError):
        run_benchmark(index, 5, False, 1, method="knn")

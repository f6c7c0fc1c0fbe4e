import json

import numpy as np
import pytest
from PIL import Image

from agp.cli import build_parser, main, render_triptych, resolve_sources
from agp.config import Config


@pytest.fixture
def image(index):
    return index.instances[index.all_classes()[0]][0]


def test_index_counts(tmp_path, capsys):
    for c in ("c1", "c2"):
        d = tmp_path / "alpha" / c
        d.mkdir(parents=True)
        px = np.full((8, 8), 255, np.uint8)
        px[3, 3] = 0
        Image.fromarray(px).save(d / "0.png")
    assert main(["index", str(tmp_path)]) == 0
    counts = json.loads(capsys.readouterr().out)
    assert (counts["alphabets"], counts["classes"]) == (1, 2)
    assert (tmp_path / ".agp-index.json").is_file()


def test_index_empty_exit_code(tmp_path):
    assert main(["index", str(tmp_path)]) == 3
    assert main(["index", str(tmp_path / "missing")]) == 3


def test_proto_deterministic(tmp_path, image):
    for name in ("a.png", "b.png"):
        assert main(["proto", image, "--seed", "5", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    w, h = Image.open(tmp_path / "a.png").size
    assert w > 3 * h - 20  # three square panels side by side
    assert main(["proto", image, "--k", "1", "--out", str(tmp_path / "k1.png")]) == 0


def test_triptych_single_cluster_colour(glyph):
    img = np.asarray(render_triptych(glyph, 1, 100, 0))
    panel = img[:, img.shape[1] // 3:2 * img.shape[1] // 3]
    ink = panel[(panel != 255).any(-1) & (panel != 200).any(-1)]
    assert len({tuple(p) for p in ink}) == 1


def test_proto_errors(tmp_path, image):
    bad = tmp_path / "bad.png"
    bad.write_text("nope")
    assert main(["proto", str(bad), "--out", str(tmp_path / "x.png")]) == 3
    cfg = tmp_path / "c.json"
    cfg.write_text('{"radius": 1.6, "colour": 3}')
    assert main(["proto", image, "--config", str(cfg), "--out", str(tmp_path / "x.png")]) == 2
    cfg.write_text('{"beta": 0.5}')
    assert main(["proto", image, "--config", str(cfg), "--out", str(tmp_path / "x.png")]) == 2
    # more components than foreground pixels
    tiny = tmp_path / "tiny.png"
    px = np.full((10, 10), 255, np.uint8)
    px[4, 4:6] = 0
    Image.fromarray(px).save(tiny)
    assert main(["proto", str(tiny), "--k", "5", "--out", str(tmp_path / "x.png")]) == 3


def test_bench_single_trial(tmp_path, corpus, capsys):
    out = tmp_path / "rep"
    assert main(["bench", "--data-root", str(corpus), "--n-way", "5", "--mode", "unconstrained",
                 "--trials", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "agp_5way_unconstrained.json").read_text())
    assert rep["trials"] == 1 and rep["accuracy"] in (0.0, 1.0)
    assert rep["config"]["radius"] == 1.6 and rep["config"]["density"] == 300
    assert len((out / "agp_5way_unconstrained.csv").read_text().splitlines()) == 2
    assert "wall time" in capsys.readouterr().err


def test_bench_errors(tmp_path, corpus):
    assert main(["bench", "--n-way", "5", "--mode", "within", "--trials", "1"]) == 2
    assert main(["bench", "--data-root", str(corpus), "--n-way", "20", "--mode", "within",
                 "--trials", "1", "--out", str(tmp_path)]) == 3
    assert main(["bench", "--data-root", str(corpus), "--n-way", "5", "--mode", "within",
                 "--trials", "0"]) == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bench", "--n-way", "7", "--mode", "within"])


def test_bench_cached_index(tmp_path, corpus, index):
    cache = tmp_path / "idx.json"
    index.save(cache)
    assert main(["bench", "--index", str(cache), "--n-way", "5", "--mode", "within", "--method", "mse",
                 "--trials", "2", "--out", str(tmp_path / "r")]) == 0


def test_resolve_sources(corpus, index, image):
    cfg = Config(data_root=str(corpus))
    got = resolve_sources(image, "exemplars", cfg, 0)
    assert got == [(index.all_classes()[0], image)]
    c = index.all_classes()[4]
    assert resolve_sources(f"class:{c}", "exemplars", cfg, 0) == [(c, index.instances[c][0])]
    alpha = index.alphabets[1]
    picked = resolve_sources(f"alphabet:{alpha}", "alphabet", cfg, 0, n_classes=4)
    assert len(picked) == 4 and all(cid.startswith(alpha + "/") for cid, _ in picked)
    assert len(resolve_sources("random", "exemplars", cfg, 0)) == 1
    assert len(resolve_sources("random", "unconstrained", cfg, 0, n_classes=10)) == 10


def test_generate_zero_count(tmp_path, corpus):
    cfg = tmp_path / "fast.json"
    cfg.write_text('{"D": 20, "gen_k_range": [5], "vae": {"epochs": 1, "lr": 0.001}}')
    out = tmp_path / "g"
    assert main(["generate", "--config", str(cfg), "--data-root", str(corpus), "--task", "exemplars",
                 "--sources", "random", "--count", "0", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["contact_sheet.png", "loss.csv", "provenance.json", "vae_checkpoint.zip"]
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["variants_emitted"] == 0 and prov["checkpoint"] == "vae_checkpoint.zip"
    assert len((out / "loss.csv").read_text().splitlines()) == 2


def test_generate_errors(tmp_path, corpus, index):
    assert main(["generate", "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "--task", "exemplars", "--sources", str(tmp_path / "nope.png"),
                 "--out", str(tmp_path / "x")]) == 3
    two = ",".join(index.instances[c][0] for c in index.all_classes()[:2])
    assert main(["generate", "--task", "exemplars", "--sources", two, "--out", str(tmp_path / "x")]) == 3
    assert main(["generate", "--data-root", str(corpus), "--task", "alphabet",
                 "--sources", "alphabet:nowhere", "--out", str(tmp_path / "x")]) == 3

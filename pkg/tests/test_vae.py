import numpy as np
import pytest

from agp import nn, vae
from agp.errors import NumericalError

from conftest import toy_rasters

TINY = vae.VaeArch(image_size=8, latent_dim=2, enc_filters=(2, 3), dec_channels=2, dec_filters=(3, 2))


def _conv_oracle(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation on (C, N, H, W) input."""
    cin, n, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, n, oh, ow))
    for o in range(cout):
        for s in range(n):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[:, s, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[o, s, i, j] = (patch * w[o]).sum() + b[o]
    return out


def test_conv_matches_loops():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 7, 7))
    w, b = rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
    for stride, pad in ((1, 0), (2, 1), (1, 1)):
        got, _ = nn.conv2d_forward(x, w, b, stride, pad)
        assert np.allclose(got, _conv_oracle(x, w, b, stride, pad), atol=1e-12)


def test_transposed_conv_is_adjoint():
    # <conv(x), y> == <x, conv_T(y)> for matching stride/pad
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 2, 3, 3))
    y_shape = nn.conv2d_forward(x, w, np.zeros(4), 2, 1)[0].shape
    y = rng.normal(size=y_shape)
    cx, _ = nn.conv2d_forward(x, w, np.zeros(4), 2, 1)
    # transposed weights are laid out (Cin_of_transpose, Cout_of_transpose, k, k)
    ty, _ = nn.conv_transpose2d_forward(y, w, np.zeros(2), 2, 1, 1)
    assert ty.shape == x.shape
    assert np.isclose((cx * y).sum(), (x * ty).sum(), rtol=1e-12)


def test_shape_pipeline():
    p = vae.init_params(vae.VaeArch(), seed=0)
    for n in (1, 3, 32):
        x = np.random.default_rng(n).uniform(size=(n, 28, 28))
        mu, sigma = vae.encode(p, x)
        assert mu.shape == sigma.shape == (n, 16)
        _, _, cache = vae._encode(p, x.astype(np.float32))
        assert cache[0][0].shape[1] == n * 14 * 14 and cache[4][2:] == (7, 7)
        out = vae.decode(p, mu)
        assert out.shape == (n, 28, 28) and out.min() >= 0 and out.max() <= 1
    assert vae.decode(p, np.zeros(16)).shape == (28, 28)
    with pytest.raises(ValueError):
        vae.decode(p, np.zeros(5))
    with pytest.raises(ValueError):
        vae.encode(p, np.zeros((2, 27, 27)))


def test_zero_weights():
    p = vae.zero_params()
    mu, sigma = vae.encode(p, np.random.default_rng(0).uniform(size=(4, 28, 28)))
    assert np.all(mu == 0) and np.all(sigma == 1)
    assert np.all(vae.decode(p, np.random.default_rng(1).normal(size=16)) == 0.5)


def test_encode_deterministic():
    p = vae.init_params(seed=3)
    x = np.random.default_rng(0).uniform(size=(5, 28, 28))
    a, b = vae.encode(p, x), vae.encode(p, x)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_reparameterize():
    mu, sigma = np.array([1.0, -2.0]), np.array([0.5, 1.0])
    assert np.array_equal(vae.reparameterize(mu, sigma, np.zeros(2)), mu)
    e = np.array([0.3, -1.2])
    assert np.array_equal(vae.reparameterize(np.zeros(2), np.ones(2), e), e)
    eps = np.random.default_rng(0).standard_normal((100_000, 2))
    z = vae.reparameterize(mu, sigma, eps)
    assert np.all(np.abs(z.mean(0) - mu) < 0.01)
    assert np.all(np.abs(z.std(0) - sigma) < 0.01)


def test_kl_examples_and_oracle():
    j = 16
    assert vae.kl_divergence(np.zeros(j), np.zeros(j)) == 0
    mu = np.zeros(j)
    mu[0] = 1
    assert vae.kl_divergence(mu, np.zeros(j)) == pytest.approx(0.5, abs=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, s = rng.normal(size=j), rng.uniform(0.1, 3, j)
        direct = 0.0
        for i in range(j):
            direct += 0.5 * (m[i] ** 2 + s[i] ** 2 - np.log(s[i] ** 2) - 1)
        got = vae.kl_divergence(m, np.log(s ** 2))
        assert abs(got - direct) < 1e-10
        assert got >= 0


def test_gradient_check():
    p = vae.init_params(TINY, seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    for name in p.weights:
        if name.endswith("_b"):
            p.weights[name] = rng.normal(scale=0.1, size=p.weights[name].shape)
    x = rng.uniform(size=(3, 8, 8))
    eps = rng.standard_normal((3, 2))
    _, grads = vae.elbo_loss(p, x, eps, grad=True)
    h = 1e-6
    worst = 0.0
    for name, w in p.weights.items():
        flat = w.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = vae.elbo_loss(p, x, eps).total
            flat[i] = old - h
            down = vae.elbo_loss(p, x, eps).total
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(1e-6, abs(num) + abs(ana)))
    assert worst < 1e-3


def test_loss_guarded_logits():
    p = vae.init_params(TINY, seed=0, dtype=np.float64)
    p.weights["out_b"][:] = 500.0  # saturated sigmoid
    loss = vae.elbo_loss(p, np.zeros((2, 8, 8)), np.zeros((2, 2)))
    assert np.isfinite(loss.total) and loss.recon_bce == pytest.approx(64 * 500.0, rel=1e-9)


@pytest.fixture(scope="module")
def toy(index):
    return toy_rasters(index)


def test_toy_training(toy):
    data, _ = toy
    before = vae.evaluate(vae.init_params(vae.VaeArch(), seed=0), data, seed=1)
    p = vae.train(data, vae.TrainHyper(lr=1e-3, batch=32, epochs=10), seed=0)
    after = vae.evaluate(p, data, seed=1)
    h = [r["total"] for r in p.history]
    assert len(h) == 10 and h[-1] < h[0]
    assert after.total <= 0.7 * before.total
    assert after.recon_bce <= 0.5 * before.recon_bce
    assert all(r["kl"] >= 0 for r in p.history)


def test_training_reproducible(toy):
    data = toy[0][:64]
    a = vae.train(data, vae.TrainHyper(1e-3, 32, 2), seed=5)
    b = vae.train(data, vae.TrainHyper(1e-3, 32, 2), seed=5)
    assert a.history == b.history
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def test_divergence_reports_epoch():
    data = np.full((4, 8, 8), np.nan)
    with pytest.raises(NumericalError, match="iteration 1"):
        vae.train(data, vae.TrainHyper(1e-3, 2, 3), seed=0, arch=TINY)


def test_sample_latent():
    p = vae.init_params(TINY, seed=0)
    enc = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]])
    z = vae.sample_latent(p, enc, "interpolate", seed=4, t=0.0, jitter=0.0)
    assert any(np.array_equal(z, e) for e in enc)
    draws = np.array([vae.sample_latent(p, enc, "prior", seed=s) for s in range(10_000)])
    assert np.all(np.abs(draws.mean(0)) < 0.05)
    a = vae.sample_latent(p, enc, "interpolate", seed=9)
    assert np.array_equal(a, vae.sample_latent(p, enc, "interpolate", seed=9))
    with pytest.raises(ValueError):
        vae.sample_latent(p, enc, "walk")


def test_cross_class_pairs():
    p = vae.init_params(TINY, seed=0)
    enc = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 10.0]])
    labels = np.array([0, 0, 1])
    for s in range(20):
        z = vae.sample_latent(p, enc, seed=s, labels=labels, cross_class=True, jitter=0.0)
        assert 2.4 <= z[0] <= 7.6  # always blends across the two classes


def test_checkpoint_round_trip(tmp_path):
    p = vae.init_params(TINY, seed=2)
    p.history.append({"epoch": 1, "total": 1.0, "recon_bce": 0.5, "kl": 0.5})
    vae.save_checkpoint(p, tmp_path / "a.zip")
    vae.save_checkpoint(p, tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    q = vae.load_checkpoint(tmp_path / "a.zip")
    assert q.arch == TINY and q.history == p.history
    assert all(np.array_equal(q.weights[k], p.weights[k]) for k in p.weights)
    assert vae.history_csv(q).splitlines()[0] == "epoch,total,recon_bce,kl"

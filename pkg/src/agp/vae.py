"""Small convolutional VAE over rasterized prototypes.

Encoder: two stride-2 3x3 convolutions (32 then 64 filters, ReLU) and a
dense head giving the latent mean and log-variance. Decoder: dense to a
7x7x32 tensor, two stride-2 3x3 transposed convolutions (64 then 32 filters,
ReLU) and a final stride-1 single-filter transposed convolution producing
logits; a sigmoid maps them to Bernoulli means.

Losses are per-image sums (pixelwise BCE, latent KL) averaged over the batch.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import NumericalError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class VaeArch:
    image_size: int = 28
    latent_dim: int = 16
    enc_filters: tuple = (32, 64)
    dec_channels: int = 32
    dec_filters: tuple = (64, 32)

    def __post_init__(self):
        if self.image_size % 4:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        object.__setattr__(self, "enc_filters", tuple(self.enc_filters))
        object.__setattr__(self, "dec_filters", tuple(self.dec_filters))

    @property
    def base(self) -> int:
        return self.image_size // 4

    def shapes(self) -> dict:
        c1, c2 = self.enc_filters
        d1, d2 = self.dec_filters
        flat = c2 * self.base * self.base
        j = self.latent_dim
        return {
            "enc1_w": (c1, 1, 3, 3), "enc1_b": (c1,),
            "enc2_w": (c2, c1, 3, 3), "enc2_b": (c2,),
            "head_w": (flat, 2 * j), "head_b": (2 * j,),
            "dec_w": (j, self.dec_channels * self.base * self.base),
            "dec_b": (self.dec_channels * self.base * self.base,),
            "up1_w": (self.dec_channels, d1, 3, 3), "up1_b": (d1,),
            "up2_w": (d1, d2, 3, 3), "up2_b": (d2,),
            "out_w": (d2, 1, 3, 3), "out_b": (1,),
        }


@dataclass
class VaeParams:
    arch: VaeArch
    weights: dict
    history: list = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    @property
    def dtype(self):
        return self.weights["enc1_w"].dtype

    def validate(self) -> VaeParams:
        for name, shape in self.arch.shapes().items():
            w = self.weights.get(name)
            if w is None or w.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {None if w is None else w.shape}")
            if not np.all(np.isfinite(w)):
                raise NumericalError(f"non-finite weights in {name}")
        return self


def init_params(arch: VaeArch = VaeArch(), seed=0, dtype=np.float32) -> VaeParams:
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in arch.shapes().items():
        if name.endswith("_b"):
            weights[name] = np.zeros(shape, dtype=dtype)
        elif len(shape) == 2:
            weights[name] = nn.glorot_uniform(rng, shape, shape[0], shape[1], dtype)
        else:
            a, b, kh, kw = shape
            weights[name] = nn.glorot_uniform(rng, shape, b * kh * kw, a * kh * kw, dtype)
    return VaeParams(arch, weights)


def zero_params(arch: VaeArch = VaeArch(), dtype=np.float64) -> VaeParams:
    return VaeParams(arch, {n: np.zeros(s, dtype=dtype) for n, s in arch.shapes().items()})


def _as_batch(x, params):
    x = np.asarray(x, dtype=params.dtype)
    s = params.arch.image_size
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (s, s):
        raise ValueError(f"expected {s}x{s} rasters, got {x.shape[1:]}")
    return x


def _encode(params, x):
    w = params.weights
    h0 = x[None]  # (1, N, H, W)
    a1, c1 = nn.conv2d_forward(h0, w["enc1_w"], w["enc1_b"], 2, 1)
    h1 = nn.relu(a1)
    a2, c2 = nn.conv2d_forward(h1, w["enc2_w"], w["enc2_b"], 2, 1)
    h2 = nn.relu(a2)
    n = x.shape[0]
    flat = h2.transpose(1, 0, 2, 3).reshape(n, -1)
    head = flat @ w["head_w"] + w["head_b"]
    j = params.latent_dim
    cache = (c1, a1, c2, a2, h2.shape, flat)
    return head[:, :j], head[:, j:], cache


def _encode_backward(params, dmu, dlogvar, cache):
    w = params.weights
    c1, a1, c2, a2, h2_shape, flat = cache
    dhead = np.concatenate([dmu, dlogvar], axis=1)
    g = {"head_w": flat.T @ dhead, "head_b": dhead.sum(axis=0)}
    dflat = dhead @ w["head_w"].T
    c, n, hh, ww = h2_shape
    dh2 = dflat.reshape(n, c, hh, ww).transpose(1, 0, 2, 3)
    da2 = dh2 * (a2 > 0)
    dh1, g["enc2_w"], g["enc2_b"] = nn.conv2d_backward(da2, w["enc2_w"], c2, 2, 1)
    da1 = dh1 * (a1 > 0)
    _, g["enc1_w"], g["enc1_b"] = nn.conv2d_backward(da1, w["enc1_w"], c1, 2, 1)
    return g


def _decode(params, z):
    w = params.weights
    arch = params.arch
    n = z.shape[0]
    a0 = z @ w["dec_w"] + w["dec_b"]
    h0 = nn.relu(a0).reshape(n, arch.dec_channels, arch.base, arch.base).transpose(1, 0, 2, 3)
    a1, c1 = nn.conv_transpose2d_forward(h0, w["up1_w"], w["up1_b"], 2, 1, 1)
    h1 = nn.relu(a1)
    a2, c2 = nn.conv_transpose2d_forward(h1, w["up2_w"], w["up2_b"], 2, 1, 1)
    h2 = nn.relu(a2)
    logits, c3 = nn.conv_transpose2d_forward(h2, w["out_w"], w["out_b"], 1, 1, 0)
    return logits[0], (z, a0, c1, a1, c2, a2, c3)


def _decode_backward(params, dlogits, cache):
    w = params.weights
    z, a0, c1, a1, c2, a2, c3 = cache
    g = {}
    dh2, g["out_w"], g["out_b"] = nn.conv_transpose2d_backward(dlogits[None], w["out_w"], c3, 1, 1)
    da2 = dh2 * (a2 > 0)
    dh1, g["up2_w"], g["up2_b"] = nn.conv_transpose2d_backward(da2, w["up2_w"], c2, 2, 1)
    da1 = dh1 * (a1 > 0)
    dh0, g["up1_w"], g["up1_b"] = nn.conv_transpose2d_backward(da1, w["up1_w"], c1, 2, 1)
    n = z.shape[0]
    da0 = dh0.transpose(1, 0, 2, 3).reshape(n, -1) * (a0 > 0)
    g["dec_w"] = z.T @ da0
    g["dec_b"] = da0.sum(axis=0)
    return da0 @ w["dec_w"].T, g


def encode(params: VaeParams, x):
    """Latent mean and standard deviation for one raster or a batch."""
    xb = _as_batch(x, params)
    mu, logvar, _ = _encode(params, xb)
    sigma = np.exp(0.5 * logvar)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise NumericalError("non-finite encoder activations")
    if np.ndim(x) == 2:
        return mu[0], sigma[0]
    return mu, sigma


def reparameterize(mu, sigma, epsilon):
    return np.asarray(mu) + np.asarray(sigma) * np.asarray(epsilon)


def decode_logits(params: VaeParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=params.dtype)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.shape[1] != params.latent_dim:
        raise ValueError(f"latent vectors must have length {params.latent_dim}, got {zb.shape[1]}")
    logits, _ = _decode(params, zb)
    return logits[0] if single else logits


def decode(params: VaeParams, z) -> np.ndarray:
    return nn.sigmoid(decode_logits(params, z))


def kl_divergence(mu, logvar):
    """Per-sample KL of N(mu, exp(logvar)) from the standard normal prior."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=-1)


@dataclass(frozen=True)
class Loss:
    total: float
    recon_bce: float
    kl: float


def elbo_loss(params: VaeParams, x, epsilon, grad: bool = False):
    """Negative ELBO on a batch: mean over images of (summed BCE + KL).

    With ``grad=True`` returns ``(Loss, grads)``.
    """
    xb = _as_batch(x, params)
    eps = np.asarray(epsilon, dtype=params.dtype).reshape(len(xb), params.latent_dim)
    n = len(xb)
    mu, logvar, enc_cache = _encode(params, xb)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    logits, dec_cache = _decode(params, z)
    bce = (nn.softplus(logits) - xb * logits).sum(axis=(1, 2))
    kl = kl_divergence(mu, logvar)
    loss = Loss(float((bce + kl).mean()), float(bce.mean()), float(kl.mean()))
    if not grad:
        return loss
    dlogits = (nn.sigmoid(logits) - xb) / n
    dz, g = _decode_backward(params, dlogits, dec_cache)
    dmu = dz + mu / n
    dlogvar = dz * 0.5 * std * eps + 0.5 * (np.exp(logvar) - 1.0) / n
    g.update(_encode_backward(params, dmu, dlogvar, enc_cache))
    return loss, g


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 50


def train(data, hyper: TrainHyper = TrainHyper(), seed=0, arch: VaeArch | None = None,
          dtype=np.float32, params: VaeParams | None = None, progress=None) -> VaeParams:
    """Adam on the negative ELBO. Per-epoch means of total/BCE/KL are kept in
    ``params.history``; a non-finite loss aborts with the epoch index."""
    x = np.asarray(data, dtype=dtype)
    if len(x) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(seed)
    init_seed, loop_seed = rng.integers(2**32, size=2)
    if params is None:
        arch = arch or VaeArch(image_size=x.shape[-1])
        params = init_params(arch, init_seed, dtype)
    opt = nn.Adam(hyper.lr)
    loop_rng = np.random.default_rng(loop_seed)
    for epoch in range(1, hyper.epochs + 1):
        order = loop_rng.permutation(len(x))
        sums = np.zeros(3)
        for start in range(0, len(x), hyper.batch):
            idx = order[start:start + hyper.batch]
            eps = loop_rng.standard_normal((len(idx), params.latent_dim))
            loss, grads = elbo_loss(params, x[idx], eps, grad=True)
            if not np.isfinite(loss.total):
                raise NumericalError("training diverged (non-finite loss)", iteration=epoch)
            opt.step(params.weights, grads)
            sums += np.array([loss.total, loss.recon_bce, loss.kl]) * len(idx)
        total, bce, kl = sums / len(x)
        params.history.append({"epoch": epoch, "total": total, "recon_bce": bce, "kl": kl})
        log.info("epoch %d: total %.3f bce %.3f kl %.3f", epoch, total, bce, kl)
        if progress:
            progress(params.history[-1])
    return params


def evaluate(params: VaeParams, data, seed=0, batch=256) -> Loss:
    """Mean loss over ``data`` with fresh epsilon draws from ``seed``."""
    x = np.asarray(data, dtype=params.dtype)
    rng = np.random.default_rng(seed)
    sums = np.zeros(3)
    for start in range(0, len(x), batch):
        xb = x[start:start + batch]
        loss = elbo_loss(params, xb, rng.standard_normal((len(xb), params.latent_dim)))
        sums += np.array([loss.total, loss.recon_bce, loss.kl]) * len(xb)
    return Loss(*(sums / len(x)))


def history_csv(params: VaeParams) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["epoch", "total", "recon_bce", "kl"], lineterminator="\n")
    w.writeheader()
    w.writerows(params.history)
    return buf.getvalue()


STRATEGIES = ("prior", "interpolate")


def sample_latent(params: VaeParams, encodings, strategy: str = "interpolate", seed=0,
                  labels=None, cross_class: bool = False, t: float | None = None,
                  jitter: float = 0.1) -> np.ndarray:
    """Draw a latent vector for generation.

    ``prior``: z ~ N(0, I). ``interpolate``: blend the means of two training
    encodings a, b at t ~ U(0.25, 0.75) plus N(0, jitter^2) noise; with
    ``cross_class`` and ``labels`` the pair comes from different classes.
    """
    rng = np.random.default_rng(seed)
    j = params.latent_dim
    if strategy == "prior":
        return rng.standard_normal(j)
    if strategy != "interpolate":
        raise ValueError(f"unknown latent strategy {strategy!r}; expected one of {STRATEGIES}")
    enc = np.asarray(encodings, dtype=np.float64).reshape(-1, j)
    if len(enc) < 2:
        raise ValueError("interpolation needs at least two training encodings")
    a = int(rng.integers(len(enc)))
    if cross_class and labels is not None:
        labels = np.asarray(labels)
        others = np.flatnonzero(labels != labels[a])
        if len(others) == 0:
            others = np.delete(np.arange(len(enc)), a)
    else:
        others = np.delete(np.arange(len(enc)), a)
    b = int(others[rng.integers(len(others))])
    tt = rng.uniform(0.25, 0.75) if t is None else t
    noise = rng.standard_normal(j) * jitter
    return (1.0 - tt) * enc[a] + tt * enc[b] + noise


def save_checkpoint(params: VaeParams, path) -> None:
    """Zip of ``.npy`` arrays plus a JSON manifest; entries carry a fixed
    timestamp so identical weights give identical bytes."""
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "arch": asdict(params.arch),
        "dtype": str(params.dtype),
        "shapes": {k: list(v.shape) for k, v in sorted(params.weights.items())},
        "history": params.history,
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", (1980, 1, 1, 0, 0, 0)), json.dumps(manifest, indent=1))
        for name in sorted(params.weights):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(params.weights[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", (1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path) -> VaeParams:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
        arch = VaeArch(**manifest["arch"])
        weights = {
            name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            for name in manifest["shapes"]
        }
    return VaeParams(arch, weights, manifest.get("history", [])).validate()

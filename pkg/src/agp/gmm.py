"""Full-covariance 2D Gaussian mixtures fitted by expectation-maximization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NumericalError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EMOptions:
    tol: float = 1e-4
    max_iter: int = 200
    reg: float = 1e-6
    min_mass: float = 1e-8


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float


@dataclass(frozen=True)
class MixtureModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 2)
    covariances: np.ndarray  # (k, 2, 2)
    log_likelihood: float = float("nan")
    history: tuple = field(default=(), compare=False, repr=False)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means[i], self.covariances[i], float(self.weights[i]))
            for i in range(self.k)
        ]

    @classmethod
    def from_components(cls, components, log_likelihood=float("nan")) -> MixtureModel:
        return cls(
            np.array([c.weight for c in components], dtype=np.float64),
            np.array([c.mean for c in components], dtype=np.float64).reshape(-1, 2),
            np.array([c.covariance for c in components], dtype=np.float64).reshape(-1, 2, 2),
            log_likelihood,
        )

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_json(cls, doc: dict) -> MixtureModel:
        model = cls(
            np.asarray(doc["weights"], dtype=np.float64),
            np.asarray(doc["means"], dtype=np.float64).reshape(-1, 2),
            np.asarray(doc["covariances"], dtype=np.float64).reshape(-1, 2, 2),
            float(doc["log_likelihood"]),
        )
        if model.k != doc["k"]:
            raise ValueError(f"k={doc['k']} but {model.k} components stored")
        return model


def _log_gauss(x, means, covs):
    """(n, k) matrix of log N(x_n | mean_k, cov_k)."""
    a, b, d = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
    det = a * d - b * b
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise NumericalError("singular covariance")
    diff = x[:, None, :] - means[None, :, :]
    dx, dy = diff[..., 0], diff[..., 1]
    maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * maha


def gaussian_pdf(component: GaussianComponent, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, 2)
    mean = np.asarray(component.mean, dtype=np.float64).reshape(1, 2)
    cov = np.asarray(component.covariance, dtype=np.float64).reshape(1, 2, 2)
    return float(np.exp(_log_gauss(x, mean, cov))[0, 0])


def mixture_pdf(model: MixtureModel, x) -> np.ndarray | float:
    """Density at one point ``(2,)`` or at many points ``(n, 2)``."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    dens = np.exp(_log_gauss(pts, model.means, model.covariances)) @ model.weights
    return float(dens[0]) if single else dens


def _logsumexp(a):
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def e_step(x, weights, means, covs):
    """Responsibilities (n, k) and the total log-likelihood."""
    with np.errstate(divide="ignore"):
        log_joint = _log_gauss(x, means, covs) + np.log(weights)[None, :]
    log_norm = _logsumexp(log_joint)
    resp = np.exp(log_joint - log_norm[:, None])
    return resp, float(log_norm.sum())


def kmeanspp_seeds(x, k, rng) -> np.ndarray:
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # fewer distinct points than components
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[idx].copy()


def fit_gmm(pc, k: int, seed=0, opts: EMOptions | None = None) -> MixtureModel:
    opts = opts or EMOptions()
    x = np.asarray(pc, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise InfeasibleError(f"k must be >= 1, got {k}")
    if n < k:
        raise InfeasibleError(f"{n} points cannot support {k} components")
    rng = np.random.default_rng(seed)
    eye = np.eye(2)

    means = kmeanspp_seeds(x, k, rng)
    var = max(float(x.var(axis=0).mean()), 0.0)
    covs = np.repeat(((var + opts.reg) * eye)[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history = []
    prev = -np.inf
    for it in range(opts.max_iter):
        resp, ll = e_step(x, weights, means, covs)
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood", iteration=it)
        history.append(ll)
        if ll - prev < opts.tol and it > 0:
            break
        prev = ll

        mass = resp.sum(axis=0)
        starved = np.flatnonzero(mass < opts.min_mass)
        if starved.size:
            # re-seed dead components at the worst-explained points
            point_ll = _logsumexp(np.log(weights)[None, :] + _log_gauss(x, means, covs))
            worst = np.argsort(point_ll)[: starved.size]
            for j, p in zip(starved, worst):
                resp[:, j] = 0.0
                resp[p, :] = 0.0
                resp[p, j] = 1.0
            mass = resp.sum(axis=0)

        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        w = resp.T / mass[:, None]
        dx = x[None, :, 0] - means[:, 0, None]
        dy = x[None, :, 1] - means[:, 1, None]
        wdx = w * dx
        cxx = (wdx * dx).sum(axis=1)
        cxy = (wdx * dy).sum(axis=1)
        cyy = (w * dy * dy).sum(axis=1)
        covs = np.stack([np.stack([cxx, cxy], -1), np.stack([cxy, cyy], -1)], -2)
        covs = covs + opts.reg * eye
    else:
        resp, ll = e_step(x, weights, means, covs)
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood", iteration=opts.max_iter)
        history.append(ll)

    return MixtureModel(weights, means, covs, history[-1], tuple(history))


def predict(model: MixtureModel, pc) -> np.ndarray:
    resp, _ = e_step(np.asarray(pc, dtype=np.float64), model.weights, model.means, model.covariances)
    return resp.argmax(axis=1)


def sample_mixture(model: MixtureModel, n: int, seed=0) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    comp = rng.choice(model.k, size=n, p=model.weights / model.weights.sum())
    chol = np.linalg.cholesky(model.covariances)
    z = rng.standard_normal((n, 2))
    return model.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)

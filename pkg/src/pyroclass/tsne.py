"""Exact O(N^2) t-SNE for projecting network score vectors to 2-D.

Gaussian bandwidths are fitted per point by binary search so each
conditional distribution's entropy (in bits) matches log2(perplexity);
the embedding minimizes KL(P||Q) by gradient descent with momentum and
early exaggeration.  Deterministic given the config seed.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .arch import forward
from .data import Dataset, load_images
from .errors import ConfigError, EmbeddingDivergedError, InvalidInputError
from .util import json_dumps, atomic_write_text


@dataclass
class EmbedConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.perplexity < 2:
            raise ConfigError(f"perplexity must be >= 2, got {self.perplexity}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")

    def to_dict(self):
        return {
            "perplexity": self.perplexity,
            "iterations": self.iterations,
            "learning_rate": self.learning_rate,
            "initial_momentum": self.initial_momentum,
            "final_momentum": self.final_momentum,
            "momentum_switch": self.momentum_switch,
            "exaggeration": self.exaggeration,
            "exaggeration_iters": self.exaggeration_iters,
            "seed": self.seed,
        }


@dataclass
class Embedding:
    points: np.ndarray
    kl: float
    kl_initial: float
    config: EmbedConfig


def collect_outputs(model, data, batch_size=32):
    """Softmax score vector per sample: ``(scores [N,K], labels [N])``."""
    if isinstance(data, Dataset):
        X, y = load_images(data, model.config.input_size)
    else:
        X, y = data
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y)
    rows = [
        forward(model, X[i:i + batch_size], training=False)[0]
        for i in range(0, X.shape[0], batch_size)
    ]
    return np.concatenate(rows, axis=0), y


def _squared_distances(points):
    sq = (points ** 2).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_entropy_bits(p_row):
    """Shannon entropy in bits of one conditional distribution."""
    p = p_row[p_row > 0]
    return float(-(p * np.log2(p)).sum())


def joint_affinities(points, perplexity):
    """Symmetrized affinity matrix P: zero diagonal, sums to 1.

    Per-row bandwidths are binary-searched (<= 50 steps) until the
    conditional entropy is within 1e-5 bits of log2(perplexity).  A row
    of exact duplicates gets 1e-12 distance jitter, with a warning.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 3:
        raise InvalidInputError(f"need at least 3 points, got {n}")
    if not perplexity < n:
        raise ConfigError(f"perplexity {perplexity} must be < N={n}")
    d = _squared_distances(points)
    target = np.log2(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        if row.max() == 0.0:
            warnings.warn(f"point {i} duplicates every other point; adding 1e-12 jitter")
            row = row + 1e-12 * (1.0 + np.arange(n - 1))
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        p = None
        for _ in range(50):
            logits = -beta * row
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
            diff = conditional_entropy_bits(p) - target
            if abs(diff) <= 1e-5:
                break
            if diff > 0:  # entropy too high -> sharpen
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        cond[i, np.arange(n) != i] = p
    pj = (cond + cond.T) / (2.0 * n)
    np.fill_diagonal(pj, 0.0)
    return pj


def _low_dim_q(y):
    w = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(w, 0.0)
    return w / w.sum(), w


def kl_and_grad(p, y):
    """KL(P||Q) at coordinates ``y`` and its exact gradient d KL / d y."""
    q, w = _low_dim_q(y)
    mask = p > 0
    kl = float((p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-12))).sum())
    pqw = (p - q) * w
    grad = 4.0 * (np.diag(pqw.sum(axis=1)) - pqw) @ y
    return kl, grad


def tsne(points, config=None):
    """Embed N x D points into 2-D by gradient descent on KL(P||Q)."""
    config = config or EmbedConfig()
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    perplexity = min(config.perplexity, max(2.0, (n - 1) / 3.0))
    p = joint_affinities(points, perplexity)

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    kl_initial, _ = kl_and_grad(p, y)

    for it in range(1, config.iterations + 1):
        p_eff = p * config.exaggeration if it <= config.exaggeration_iters else p
        _, grad = kl_and_grad(p_eff, y)
        if not np.all(np.isfinite(grad)):
            raise EmbeddingDivergedError(f"non-finite gradient at iteration {it}")
        momentum = config.final_momentum if it >= config.momentum_switch else config.initial_momentum
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    kl_final, _ = kl_and_grad(p, y)
    return Embedding(points=y, kl=kl_final, kl_initial=kl_initial, config=config)


def export_embedding(embedding, labels, csv_path, meta_path=None):
    """Write coordinates as ``x,y,label`` CSV plus a JSON metadata sidecar."""
    if len(labels) != embedding.points.shape[0]:
        raise InvalidInputError(
            f"{len(labels)} labels for {embedding.points.shape[0]} points"
        )
    lines = ["x,y,label"]
    for (px, py), lab in zip(embedding.points, labels):
        lines.append(f"{px!r},{py!r},{lab}")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    meta = {
        "n": int(embedding.points.shape[0]),
        "kl": embedding.kl,
        "kl_initial": embedding.kl_initial,
        "config": embedding.config.to_dict(),
        "seed": embedding.config.seed,
    }
    if meta_path is None:
        meta_path = str(csv_path) + ".meta.json"
    atomic_write_text(meta_path, json_dumps(meta))
    return csv_path, meta_path

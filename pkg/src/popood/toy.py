"""Three-class toy experiment: vanilla head vs fixed head vs fixed head + one proxy.

Each configuration is trained on the same 2-D synthetic dataset. Confidence
grids are produced in two modes: ``direct`` (grid points are features) and
``extractor`` (grid points are inputs to the trained network).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from .datagen import Dataset, SynthSpec, generate, grid_axis, id_confidence, toy_grid
from .errors import InvalidArgumentError
from .hierarchy import LabelTree, builtin_tree
from .losses import LossConfig, default_beta
from .netcore import FeatureExtractor, forward, init_params, raw_forward, raw_backward
from .prototypes import PrototypeSet
from .trainer import TrainConfig, build_fixed_classifier, build_pop_classifier, learning_rate, sgd_step, train

CONFIGS = ("vanilla", "fixed", "proxy")


@dataclass(frozen=True)
class ToySettings:
    """Toy training recipe: 30 epochs, lr 0.1, momentum 0.9, wd 5e-4."""

    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden: int = 16
    n_train: int = 200
    stddev: float = 0.4
    proxy_distance: float = 4.0
    bounds: tuple[float, float] = (-4.0, 4.0)
    resolution: int = 101
    beta: float | None = None


def train_vanilla(net: FeatureExtractor, data: Dataset, cfg: TrainConfig) -> FeatureExtractor:
    """Plain softmax cross-entropy on the raw network outputs (learnable head with bias)."""
    net = net.copy()
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    total = cfg.epochs * math.ceil(n / cfg.batch_size)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, acts = raw_forward(net, data.inputs[idx])
            p = softmax(logits, axis=1)
            p[np.arange(len(idx)), data.labels[idx]] -= 1.0
            g = raw_backward(net, acts, p / len(idx))
            sgd_step(params, g.params(), velocity, learning_rate(cfg, step, total), cfg.momentum, cfg.weight_decay)
            step += 1
    return net


def vanilla_direct_grid(net: FeatureExtractor, bounds, resolution: int) -> np.ndarray:
    """Grid over the learned 2-D feature layer, pushed through the learned head."""
    axis = grid_axis(bounds, resolution)
    gx, gy = np.meshgrid(axis, axis)
    feats = np.column_stack([gx.ravel(), gy.ravel()])
    logits = feats @ net.weights[-1].T + net.biases[-1]
    return softmax(logits, axis=1).max(axis=1).reshape(resolution, resolution)


def intersection_direction(protos: PrototypeSet) -> np.ndarray:
    """Unit 2-D feature in the direct-mode plane where the ID logits tie.

    In that plane ``z_k(t) = a_k cos t + b_k sin t``, so each pair of logits
    ties at two opposite angles. Candidate angles come from every pair; the one
    with the smallest spread among those facing the prototypes (positive mean
    ID logit) is returned.
    """
    a, b = protos.weights[0, : protos.num_id], protos.weights[1, : protos.num_id]
    candidates = []
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            t = math.atan2(-(a[i] - a[j]), b[i] - b[j])
            candidates += [t, t + math.pi]
    best, best_spread = None, math.inf
    for t in candidates:
        z = math.cos(t) * a + math.sin(t) * b
        spread = z.max() - z.min()
        if z.mean() > 0 and spread < best_spread:
            best, best_spread = t, spread
    if best is None:
        raise InvalidArgumentError("no tie point faces the ID prototypes in the direct plane")
    return np.array([math.cos(best), math.sin(best)])


def direct_confidence(protos: PrototypeSet, point2d, beta: float) -> float:
    feat = np.zeros(protos.dim)
    feat[:2] = point2d
    feat /= np.linalg.norm(feat)
    return float(id_confidence(feat @ protos.weights, protos.num_id, beta)[0])


def input_junction(net: FeatureExtractor, protos: PrototypeSet, bounds, resolution: int = 201) -> np.ndarray:
    """Input point where the trained network's ID logits are closest to a three-way tie."""
    axis = grid_axis(bounds, resolution)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    z = forward(net, protos, pts).logits[:, : protos.num_id]
    start = pts[int(np.argmin(z.max(axis=1) - z.min(axis=1)))]

    def spread(p):
        zz = forward(net, protos, p).logits[: protos.num_id]
        return zz.max() - zz.min()

    return minimize(spread, start, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000}).x


def run_toy(settings: ToySettings = ToySettings(), tree: LabelTree | None = None) -> dict:
    """Train the three configurations and return grids plus intersection readings."""
    tree = tree or builtin_tree("toy3")
    n = tree.num_classes
    beta = settings.beta or default_beta(n)
    spec = SynthSpec(tree, input_dim=2, n_train=settings.n_train, n_test=2, n_ood=1, stddev=settings.stddev, seed=settings.seed)
    train_set, _, _, means = generate(spec)

    heads = {"fixed": build_fixed_classifier(tree), "proxy": build_pop_classifier(tree, 1, settings.proxy_distance)}
    out = {"grids": {}, "nets": {}, "heads": heads, "means": means, "beta": beta}

    def cfg_for(loss):
        return TrainConfig(loss, epochs=settings.epochs, batch_size=settings.batch_size, lr0=settings.lr0,
                           momentum=settings.momentum, weight_decay=settings.weight_decay, seed=settings.seed)

    vanilla = init_params([2, settings.hidden, 2, n], settings.seed)
    vanilla = train_vanilla(vanilla, train_set, cfg_for(LossConfig(1.0, heads["fixed"].source_similarity, "cosine-ce")))
    out["nets"]["vanilla"] = vanilla
    raw, _ = raw_forward(vanilla, _grid_points(settings))
    out["grids"]["vanilla", "extractor"] = softmax(raw, axis=1).max(axis=1).reshape(settings.resolution, settings.resolution)
    out["grids"]["vanilla", "direct"] = vanilla_direct_grid(vanilla, settings.bounds, settings.resolution)

    readings = {}
    for name, protos in heads.items():
        net = init_params([2, settings.hidden, protos.dim], settings.seed)
        net, _ = train(net, protos, train_set, cfg_for(LossConfig(beta, protos.source_similarity)))
        out["nets"][name] = net
        for mode in ("direct", "extractor"):
            out["grids"][name, mode] = toy_grid(net, protos, settings.bounds, settings.resolution, beta, mode)
        junction = input_junction(net, protos, settings.bounds)
        readings[name] = {
            "direct_intersection_confidence": direct_confidence(protos, intersection_direction(protos), beta),
            "extractor_junction": junction.tolist(),
            "extractor_junction_confidence": float(id_confidence(forward(net, protos, junction).logits, n, beta)[0]),
        }
    out["readings"] = readings
    return out


def _grid_points(settings: ToySettings) -> np.ndarray:
    axis = grid_axis(settings.bounds, settings.resolution)
    gx, gy = np.meshgrid(axis, axis)
    return np.column_stack([gx.ravel(), gy.ravel()])

"""Synthetic hierarchy-aligned Gaussian clusters and the toy confidence grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .errors import FormatError, InvalidArgumentError
from .hierarchy import LabelTree, build_distance_matrix
from .netcore import FeatureExtractor, forward, normalize
from .prototypes import PrototypeSet, random_orthogonal

ROLES = ("id-train", "id-test", "ood")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None
    role: str

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidArgumentError(f"inputs must be 2-D, got shape {x.shape}")
        if self.role not in ROLES:
            raise InvalidArgumentError(f"unknown dataset role {self.role!r}")
        labels = self.labels
        if self.role == "ood":
            labels = None
        else:
            if labels is None:
                raise InvalidArgumentError("ID datasets need labels")
            labels = np.array(labels, dtype=np.int64)
            if labels.shape != (x.shape[0],) or np.any(labels < 0):
                raise InvalidArgumentError("ID labels must be one non-negative class index per sample")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian cluster per leaf; means follow the tree unless given explicitly.

    ``n_train``/``n_test`` are per class, ``n_ood`` is the OOD total. Far OOD
    clusters sit at ``ood_radius_factor`` times the ID mean spread radius;
    near OOD clusters sit between each class mean and its nearest neighbour.
    """

    tree: LabelTree
    input_dim: int = 2
    n_train: int = 200
    n_test: int = 100
    n_ood: int = 500
    stddev: float = 0.3
    seed: int = 0
    ood_mode: str = "far"
    mean_scale: float = 2.0
    ood_radius_factor: float = 3.0
    n_ood_clusters: int | None = None
    near_coef: float = 0.5
    means: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        n = self.tree.num_classes
        if self.n_train < 2 or self.n_test < 2:
            raise InvalidArgumentError("per-class sample counts must be at least 2")
        if self.n_ood < 1:
            raise InvalidArgumentError("n_ood must be positive")
        if not self.stddev > 0:
            raise InvalidArgumentError("stddev must be positive")
        if self.ood_mode not in ("far", "near"):
            raise InvalidArgumentError(f"unknown ood_mode {self.ood_mode!r}")
        if self.ood_radius_factor < 3.0:
            raise InvalidArgumentError("far OOD clusters need ood_radius_factor >= 3")
        if not 0 < self.near_coef < 1:
            raise InvalidArgumentError("near_coef must lie strictly between 0 and 1")
        if self.means is not None:
            means = np.array(self.means, dtype=np.float64)
            if means.shape != (n, self.input_dim):
                raise InvalidArgumentError(f"means must have shape {(n, self.input_dim)}")
            gaps = np.linalg.norm(means[:, None] - means[None], axis=-1) + np.eye(n)
            if np.any(gaps == 0):
                raise InvalidArgumentError("class means must be pairwise distinct")
            object.__setattr__(self, "means", means)
        elif n > 1 and self.input_dim < n - 1:
            raise InvalidArgumentError(f"input_dim must be at least {n - 1} to embed the hierarchy exactly")


def hierarchy_means(tree: LabelTree, input_dim: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Class means whose pairwise distances equal ``scale * lca_distance``.

    LCA heights form an ultrametric, which classical MDS embeds exactly in
    ``N - 1`` dimensions; the embedding is then padded and randomly rotated.
    """
    d = build_distance_matrix(tree).entries * scale
    n = d.shape[0]
    centering = np.eye(n) - 1.0 / n
    gram = -0.5 * centering @ (d**2) @ centering
    vals, vecs = np.linalg.eigh(gram)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    coords = vecs * np.sqrt(vals)
    k = min(n, input_dim)
    means = np.zeros((n, input_dim))
    means[:, :k] = coords[:, :k]
    return means @ random_orthogonal(input_dim, int(rng.integers(2**31))).T


def _sample(rng, means, counts, stddev):
    xs = [rng.normal(mu, stddev, size=(c, mu.size)) for mu, c in zip(means, counts)]
    return np.concatenate(xs, axis=0)


def ood_means(spec: SynthSpec, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if spec.ood_mode == "near":
        gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        pairs = sorted({tuple(sorted((k, int(np.argmin(gaps[k]))))) for k in range(len(means))})
        return np.array([(1 - spec.near_coef) * means[a] + spec.near_coef * means[b] for a, b in pairs])
    centre = means.mean(axis=0)
    radius = np.linalg.norm(means - centre, axis=1).max()
    if radius == 0:
        radius = spec.mean_scale
    count = spec.n_ood_clusters or len(means)
    dirs = rng.standard_normal((count, means.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return centre + spec.ood_radius_factor * radius * dirs


def generate(spec: SynthSpec) -> tuple[Dataset, Dataset, Dataset, np.ndarray]:
    """Return ``(id_train, id_test, ood, class_means)``; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.tree.num_classes
    means = spec.means if spec.means is not None else hierarchy_means(spec.tree, spec.input_dim, spec.mean_scale, rng)
    labels_train = np.repeat(np.arange(n), spec.n_train)
    labels_test = np.repeat(np.arange(n), spec.n_test)
    x_train = _sample(rng, means, [spec.n_train] * n, spec.stddev)
    x_test = _sample(rng, means, [spec.n_test] * n, spec.stddev)
    centres = ood_means(spec, means, rng)
    per, extra = divmod(spec.n_ood, len(centres))
    counts = [per + (1 if k < extra else 0) for k in range(len(centres))]
    x_ood = _sample(rng, centres, counts, spec.stddev)
    return (
        Dataset(x_train, labels_train, "id-train"),
        Dataset(x_test, labels_test, "id-test"),
        Dataset(x_ood, None, "ood"),
        means,
    )


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path, data: Dataset) -> None:
    labels = data.labels if data.labels is not None else np.full(len(data), -1)
    lines = [f"# role {data.role} dim {data.input_dim}"]
    for row, lab in zip(data.inputs, labels):
        lines.append(",".join(format(float(v), ".17g") for v in row) + f",{int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, f"cannot read dataset: {exc.strerror}") from exc
    try:
        _, _, role, _, dim = lines[0].split()
        dim = int(dim)
    except (IndexError, ValueError):
        raise FormatError(path, "expected header '# role <role> dim <d>'", 1) from None
    if role not in ROLES:
        raise FormatError(path, f"unknown role {role!r}", 1)
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise FormatError(path, f"expected {dim + 1} columns, found {len(cells)}", lineno)
        try:
            rows.append([float(c) for c in cells[:-1]])
            labels.append(int(cells[-1]))
        except ValueError:
            raise FormatError(path, "non-numeric cell", lineno) from None
        if role == "ood" and labels[-1] != -1:
            raise FormatError(path, "OOD rows must carry label -1", lineno)
        if role != "ood" and labels[-1] < 0:
            raise FormatError(path, "ID rows need a non-negative label", lineno)
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return Dataset(inputs, None if role == "ood" else np.array(labels), role)


# ---------------------------------------------------------------------------
# toy confidence grid


def grid_axis(bounds, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise InvalidArgumentError(f"resolution must be at least 2, got {resolution}")
    lo, hi = bounds
    if not hi > lo:
        raise InvalidArgumentError("bounds must satisfy lo < hi")
    return np.linspace(lo, hi, resolution)


def id_confidence(logits: np.ndarray, num_id: int, beta: float) -> np.ndarray:
    """Max over ID classes of softmax(beta * z) taken over all classes."""
    return softmax(beta * np.atleast_2d(logits), axis=1)[:, :num_id].max(axis=1)


def toy_grid(net: FeatureExtractor | None, protos: PrototypeSet, bounds, resolution: int, beta: float, mode: str = "extractor") -> np.ndarray:
    """``resolution x resolution`` ID-confidence map over a square region.

    Row ``i`` is the ``i``-th y value, column ``j`` the ``j``-th x value.
    ``mode="extractor"`` feeds grid points as inputs through ``net``;
    ``mode="direct"`` treats them as features in the plane of the first two
    embedding axes (the two leading principal directions of the prototypes when
    they were factored with ``U = I``).
    """
    axis = grid_axis(bounds, resolution)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if mode == "extractor":
        if net is None or net.input_dim != 2:
            raise InvalidArgumentError("extractor mode needs a network with 2-D input")
        logits = forward(net, protos, pts).logits
    elif mode == "direct":
        feats = np.zeros((pts.shape[0], protos.dim))
        feats[:, :2] = pts
        unit, _, _ = normalize(feats)
        logits = unit @ protos.weights
    else:
        raise InvalidArgumentError(f"unknown toy grid mode {mode!r}")
    return id_confidence(logits, protos.num_id, beta).reshape(resolution, resolution)

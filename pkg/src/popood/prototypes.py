"""Fixed classifier prototypes factored from a class similarity matrix.

Given a PSD similarity matrix ``S`` with unit diagonal, we find unit vectors
``w_1..w_K`` (the columns of ``W``) whose pairwise cosines reproduce ``S``:
``S = Q P Q^T`` and ``W = U P^(1/2) Q^T`` so that ``W^T W = S`` for any
orthogonal ``U``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, NotPSDError, PreconditionError
from .hierarchy import SimilarityMatrix, _fmt, parse_matrix_block

PSD_TOL = 1e-8
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class PrototypeSet:
    """Frozen classifier head; column ``j`` of ``weights`` is prototype ``w_j``.

    Columns ``0..num_id-1`` are ID prototypes, the remaining ``num_proxies``
    columns are outlier proxies.
    """

    weights: np.ndarray
    num_id: int
    num_proxies: int
    source_similarity: SimilarityMatrix

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        k = self.num_id + self.num_proxies
        if w.ndim != 2 or w.shape[1] != k:
            raise InvalidArgumentError(f"weights must have {k} columns, got shape {w.shape}")
        if self.source_similarity.size != k:
            raise InvalidArgumentError("source similarity size does not match the prototype count")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def id_weights(self) -> np.ndarray:
        return self.weights[:, : self.num_id]

    @property
    def proxy_weights(self) -> np.ndarray:
        return self.weights[:, self.num_id:]

    def gram(self) -> np.ndarray:
        return self.weights.T @ self.weights

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.weights.tobytes()).hexdigest()


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component of each eigenvector (first one on ties) positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def factor_similarity(sim: SimilarityMatrix, rotation_seed: int | None = None) -> PrototypeSet:
    """Factor ``sim`` into unit prototypes with ``W^T W == sim``.

    ``rotation_seed=None`` uses ``U = I``; an integer seed draws a random
    orthogonal ``U``, which leaves the Gram matrix unchanged.
    """
    s = sim.entries
    eigvals, eigvecs = np.linalg.eigh(s)
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals, eigvecs = eigvals[order], _fix_signs(eigvecs[:, order])
    if eigvals[-1] < -PSD_TOL:
        raise NotPSDError(float(eigvals[-1]))
    eigvals = np.clip(eigvals, 0.0, None)
    w = np.sqrt(eigvals)[:, None] * eigvecs.T
    if rotation_seed is not None:
        w = random_orthogonal(s.shape[0], rotation_seed) @ w
    return PrototypeSet(w, sim.num_id, sim.num_proxies, sim)


def cosine_to(protos: PrototypeSet, feature: np.ndarray) -> np.ndarray:
    """Cosine logits ``z_j = w_j . x`` for a unit-norm feature (or a batch of them)."""
    x = np.asarray(feature, dtype=np.float64)
    if x.shape[-1] != protos.dim:
        raise PreconditionError(f"feature length {x.shape[-1]} != prototype dim {protos.dim}")
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise PreconditionError("feature must have unit norm")
    return x @ protos.weights


def save_prototypes(path: str | Path, protos: PrototypeSet) -> None:
    w = protos.weights
    sim = protos.source_similarity.entries
    out = [
        f"# {w.shape[0]} {w.shape[1]} {protos.num_id} {protos.num_proxies}",
        f"# dim {protos.dim} num_id {protos.num_id} num_proxies {protos.num_proxies}",
    ]
    out.extend(",".join(_fmt(v) for v in row) for row in w)
    out.append(f"# similarity {sim.shape[0]} {sim.shape[1]} {protos.num_id} {protos.num_proxies}")
    out.extend(",".join(_fmt(v) for v in row) for row in sim)
    Path(path).write_text("\n".join(out) + "\n")


def load_prototypes(path: str | Path) -> PrototypeSet:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, f"cannot read prototype file: {exc.strerror}") from exc
    lines = [(i, s.strip()) for i, s in enumerate(text.splitlines(), start=1) if s.strip()]
    split = next((k for k, (_, s) in enumerate(lines) if s.startswith("# similarity")), None)
    if split is None:
        raise FormatError(path, "missing '# similarity' block")
    w, num_id, num_proxies = parse_matrix_block(lines[:split], path)
    sim_header = (lines[split][0], "# " + lines[split][1][len("# similarity"):])
    s, _, _ = parse_matrix_block([sim_header] + lines[split + 1:], path)
    try:
        sim = SimilarityMatrix(s, num_id, num_proxies)
        protos = PrototypeSet(w, num_id, num_proxies, sim)
    except InvalidArgumentError as exc:
        raise FormatError(path, str(exc)) from exc
    if np.max(np.abs(protos.gram() - s)) > PSD_TOL:
        raise FormatError(path, "prototype Gram matrix does not reproduce the stored similarity")
    return protos

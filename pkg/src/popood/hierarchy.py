"""Label trees, LCA-height distances and their similarity transform.

A class hierarchy is a rooted tree whose leaves are the classes. The distance
between two classes is the height of their lowest common ancestor, which makes
the class distance matrix an ultrametric. Outlier proxies are appended as extra
rows/columns at a fixed distance larger than any ID distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConstraintViolationError,
    FormatError,
    InvalidArgumentError,
    InvalidClassError,
    InvalidTreeError,
)

ROOT_MARKER = "-"


@dataclass(frozen=True)
class LabelTree:
    """Weighted label hierarchy.

    ``nodes`` holds ``(node_id, parent_id, height)`` triples, the root having
    ``parent_id=None``. ``leaves`` fixes class order: ``leaves[k]`` is class ``k``.
    """

    nodes: tuple[tuple[str, str | None, int], ...]
    leaves: tuple[str, ...]
    _parent: dict = field(init=False, repr=False, compare=False)
    _height: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple((str(n), None if p is None else str(p), h) for n, p, h in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "leaves", tuple(str(leaf) for leaf in self.leaves))

        parent, height = {}, {}
        for node, par, h in nodes:
            if node in parent:
                raise InvalidTreeError(f"duplicate node {node!r}")
            if isinstance(h, bool) or not isinstance(h, (int, np.integer)) or h < 0:
                raise InvalidTreeError(f"height of {node!r} must be a non-negative integer, got {h!r}")
            parent[node] = par
            height[node] = int(h)

        roots = [n for n, p in parent.items() if p is None]
        if len(roots) != 1:
            raise InvalidTreeError(f"expected exactly one root, found {len(roots)}")
        children: dict[str, list[str]] = {n: [] for n in parent}
        for node, par in parent.items():
            if par is None:
                continue
            if par not in parent:
                raise InvalidTreeError(f"node {node!r} has unknown parent {par!r}")
            if height[par] <= height[node]:
                raise InvalidTreeError(
                    f"parent {par!r} (height {height[par]}) must be higher than child {node!r} (height {height[node]})"
                )
            children[par].append(node)

        # parent heights strictly increase, so every upward walk terminates; reachability is all that's left
        for node in parent:
            cur = node
            while parent[cur] is not None:
                cur = parent[cur]
            if cur != roots[0]:
                raise InvalidTreeError(f"node {node!r} is not reachable from the root")

        if not self.leaves:
            raise InvalidTreeError("leaf list is empty")
        if len(set(self.leaves)) != len(self.leaves):
            raise InvalidTreeError("leaf list contains duplicates")
        childless = {n for n, ch in children.items() if not ch}
        for leaf in self.leaves:
            if leaf not in parent:
                raise InvalidTreeError(f"leaf {leaf!r} is not a node")
            if leaf not in childless:
                raise InvalidTreeError(f"leaf {leaf!r} has children")
            if height[leaf] != 0:
                raise InvalidTreeError(f"leaf {leaf!r} has height {height[leaf]}, expected 0")
        missing = childless - set(self.leaves)
        if missing:
            raise InvalidTreeError(f"childless nodes missing from leaf list: {sorted(missing)}")

        object.__setattr__(self, "_parent", parent)
        object.__setattr__(self, "_height", height)

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    def height(self, node: str) -> int:
        return self._height[node]

    def ancestors(self, node: str) -> list[str]:
        """Path from ``node`` (inclusive) up to the root."""
        path = [node]
        while self._parent[path[-1]] is not None:
            path.append(self._parent[path[-1]])
        return path

    def lca(self, node_a: str, node_b: str) -> str:
        above_b = set(self.ancestors(node_b))
        for node in self.ancestors(node_a):
            if node in above_b:
                return node
        raise AssertionError("tree has a single root, an LCA always exists")


def lca_distance(tree: LabelTree, class_a: int, class_b: int) -> int:
    """Height of the lowest common ancestor of two classes (0 iff same class)."""
    n = tree.num_classes
    for k in (class_a, class_b):
        if not 0 <= k < n:
            raise InvalidClassError(f"class index {k} out of range [0, {n})")
    return tree.height(tree.lca(tree.leaves[class_a], tree.leaves[class_b]))


@dataclass(frozen=True)
class DistanceMatrix:
    entries: np.ndarray
    num_id: int
    num_proxies: int = 0
    proxy_distance: float | None = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise InvalidArgumentError(f"distance matrix must be square and non-empty, got shape {entries.shape}")
        if entries.shape[0] != self.num_id + self.num_proxies:
            raise InvalidArgumentError(
                f"size {entries.shape[0]} != num_id {self.num_id} + num_proxies {self.num_proxies}"
            )
        if not np.all(np.isfinite(entries)) or np.any(entries < 0):
            raise InvalidArgumentError("distances must be finite and non-negative")
        if not np.array_equal(entries, entries.T):
            raise InvalidArgumentError("distance matrix must be symmetric")
        if np.any(np.diag(entries) != 0):
            raise InvalidArgumentError("distance matrix must have a zero diagonal")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def d_max(self) -> float:
        """Largest ID-to-ID distance."""
        return float(self.entries[: self.num_id, : self.num_id].max())


@dataclass(frozen=True)
class SimilarityMatrix:
    entries: np.ndarray
    num_id: int
    num_proxies: int = 0

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise InvalidArgumentError(f"similarity matrix must be square and non-empty, got shape {entries.shape}")
        if entries.shape[0] != self.num_id + self.num_proxies:
            raise InvalidArgumentError(
                f"size {entries.shape[0]} != num_id {self.num_id} + num_proxies {self.num_proxies}"
            )
        if np.any(entries < 0) or np.any(entries > 1) or not np.all(np.isfinite(entries)):
            raise InvalidArgumentError("similarities must lie in [0, 1]")
        if not np.array_equal(entries, entries.T):
            raise InvalidArgumentError("similarity matrix must be symmetric")
        if np.any(np.diag(entries) != 1):
            raise InvalidArgumentError("similarity matrix must have a unit diagonal")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def build_distance_matrix(tree: LabelTree) -> DistanceMatrix:
    n = tree.num_classes
    entries = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            entries[a, b] = entries[b, a] = lca_distance(tree, a, b)
    return DistanceMatrix(entries, num_id=n)


def augment_with_proxies(dist: DistanceMatrix, num_proxies: int, proxy_distance: float) -> DistanceMatrix:
    """Append ``num_proxies`` outlier proxies at ``proxy_distance`` from every other class."""
    if dist.num_proxies != 0:
        raise InvalidArgumentError("distance matrix already carries outlier proxies")
    if isinstance(num_proxies, bool) or int(num_proxies) != num_proxies or num_proxies < 1:
        raise InvalidArgumentError(f"num_proxies must be a positive integer, got {num_proxies!r}")
    num_proxies = int(num_proxies)
    proxy_distance = float(proxy_distance)
    if not np.isfinite(proxy_distance) or proxy_distance <= dist.d_max:
        raise ConstraintViolationError(
            f"proxy distance {proxy_distance:g} must be greater than d_max = {dist.d_max:g}"
        )
    n = dist.num_id
    size = n + num_proxies
    entries = np.full((size, size), proxy_distance)
    entries[:n, :n] = dist.entries
    np.fill_diagonal(entries, 0.0)
    return DistanceMatrix(entries, num_id=n, num_proxies=num_proxies, proxy_distance=proxy_distance)


def similarity_map(d):
    """phi(d) = 1 / (d + 1); works on scalars and arrays."""
    return 1.0 / (np.asarray(d, dtype=np.float64) + 1.0)


def distance_to_similarity(dist: DistanceMatrix) -> SimilarityMatrix:
    return SimilarityMatrix(similarity_map(dist.entries), num_id=dist.num_id, num_proxies=dist.num_proxies)


# ---------------------------------------------------------------------------
# text formats


def parse_tree(text: str, source: str | Path = "<string>") -> LabelTree:
    """Parse the ``id parent height`` format with a trailing ``leaves:`` block.

    Blank lines and ``#`` comments are ignored. The root uses ``-`` as its parent.
    Leaf ids may continue over several lines after ``leaves:``.
    """
    nodes = []
    leaves: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if leaves is not None:
            leaves.extend(line.split())
            continue
        if line.startswith("leaves:"):
            leaves = line[len("leaves:"):].split()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(source, f"expected 'id parent height', got {raw.strip()!r}", lineno)
        node, par, h = parts
        try:
            height = int(h)
        except ValueError:
            raise FormatError(source, f"height {h!r} is not an integer", lineno) from None
        nodes.append((node, None if par == ROOT_MARKER else par, height))
    if leaves is None:
        raise FormatError(source, "missing 'leaves:' block")
    try:
        return LabelTree(tuple(nodes), tuple(leaves))
    except InvalidTreeError as exc:
        raise FormatError(source, str(exc)) from exc


def load_tree(path: str | Path) -> LabelTree:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, f"cannot read tree file: {exc.strerror}") from exc
    return parse_tree(text, path)


def format_tree(tree: LabelTree) -> str:
    lines = [f"{node} {ROOT_MARKER if par is None else par} {h}" for node, par, h in tree.nodes]
    lines.append("leaves: " + " ".join(tree.leaves))
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path: str | Path, entries: np.ndarray, num_id: int, num_proxies: int, extra_header: Iterable[str] = ()) -> None:
    entries = np.asarray(entries, dtype=np.float64)
    rows, cols = entries.shape
    out = [f"# {rows} {cols} {num_id} {num_proxies}"]
    out.extend(f"# {h}" for h in extra_header)
    out.extend(",".join(_fmt(v) for v in row) for row in entries)
    Path(path).write_text("\n".join(out) + "\n")


def parse_matrix_block(lines: Sequence[tuple[int, str]], source) -> tuple[np.ndarray, int, int]:
    """Parse a ``# rows cols num_id num_proxies`` header followed by ``rows`` CSV lines."""
    if not lines:
        raise FormatError(source, "empty matrix block")
    lineno, header = lines[0]
    parts = header.lstrip("#").split()
    try:
        rows, cols, num_id, num_proxies = (int(p) for p in parts)
    except ValueError:
        raise FormatError(source, f"bad matrix header {header!r}", lineno) from None
    body = [(n, s) for n, s in lines[1:] if not s.startswith("#")]
    if len(body) != rows:
        raise FormatError(source, f"expected {rows} data rows, found {len(body)}", lineno)
    entries = np.empty((rows, cols))
    for r, (n, s) in enumerate(body):
        cells = s.split(",")
        if len(cells) != cols:
            raise FormatError(source, f"expected {cols} columns, found {len(cells)}", n)
        try:
            entries[r] = [float(c) for c in cells]
        except ValueError:
            raise FormatError(source, "non-numeric entry", n) from None
    return entries, num_id, num_proxies


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, int, int]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, f"cannot read matrix file: {exc.strerror}") from exc
    lines = [(i, s.strip()) for i, s in enumerate(text.splitlines(), start=1) if s.strip()]
    return parse_matrix_block(lines, path)


def save_distance_matrix(path, dist: DistanceMatrix) -> None:
    write_matrix_csv(path, dist.entries, dist.num_id, dist.num_proxies)


def load_distance_matrix(path) -> DistanceMatrix:
    entries, num_id, num_proxies = read_matrix_csv(path)
    proxy_distance = float(entries[0, num_id]) if num_proxies else None
    try:
        return DistanceMatrix(entries, num_id, num_proxies, proxy_distance)
    except InvalidArgumentError as exc:
        raise FormatError(path, str(exc)) from exc


def save_similarity_matrix(path, sim: SimilarityMatrix) -> None:
    write_matrix_csv(path, sim.entries, sim.num_id, sim.num_proxies)


def load_similarity_matrix(path) -> SimilarityMatrix:
    entries, num_id, num_proxies = read_matrix_csv(path)
    try:
        return SimilarityMatrix(entries, num_id, num_proxies)
    except InvalidArgumentError as exc:
        raise FormatError(path, str(exc)) from exc


# ---------------------------------------------------------------------------
# built-in trees

TOY3_TREE = """\
# deer/horse at distance 1, both at distance 3 from ship
root - 3
ungulate root 1
deer ungulate 0
horse ungulate 0
ship root 0
leaves: deer horse ship
"""

CIFAR10_TREE = """\
root - 3
animal root 2
tools root 2
carnivore animal 1
amphibian animal 1
ungulate animal 1
vertebrate animal 1
sky tools 1
land tools 1
water tools 1
cat carnivore 0
dog carnivore 0
frog amphibian 0
deer ungulate 0
horse ungulate 0
bird vertebrate 0
airplane sky 0
automobile land 0
truck land 0
ship water 0
leaves: airplane automobile bird cat deer dog frog horse ship truck
"""

FIVE_TREE = """\
root - 2
a root 1
b root 1
a0 a 0
a1 a 0
b0 b 0
b1 b 0
b2 b 0
leaves: a0 a1 b0 b1 b2
"""

BUILTIN_TREES = {"toy3": TOY3_TREE, "cifar10": CIFAR10_TREE, "five": FIVE_TREE}


def builtin_tree(name: str) -> LabelTree:
    try:
        return parse_tree(BUILTIN_TREES[name], f"<builtin:{name}>")
    except KeyError:
        raise InvalidArgumentError(f"unknown built-in tree {name!r}; choose from {sorted(BUILTIN_TREES)}") from None


def resolve_tree(spec: str) -> LabelTree:
    """Accept either a built-in tree name or a path to a tree file."""
    if spec in BUILTIN_TREES:
        return builtin_tree(spec)
    return load_tree(spec)

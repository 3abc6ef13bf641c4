import numpy as np
import pytest
from hypothesis import strategies as st

from popood.hierarchy import LabelTree, builtin_tree


def random_tree(rng: np.random.Generator, num_leaves: int) -> LabelTree:
    """Random hierarchy built by repeatedly merging groups of nodes under a new parent."""
    nodes = []
    frontier = []
    for k in range(num_leaves):
        frontier.append((f"c{k}", 0))
    leaves = [name for name, _ in frontier]
    counter = 0
    while len(frontier) > 1:
        size = int(rng.integers(2, min(4, len(frontier)) + 1))
        picked = sorted(rng.choice(len(frontier), size=size, replace=False).tolist(), reverse=True)
        group = [frontier.pop(i) for i in picked]
        height = max(h for _, h in group) + int(rng.integers(1, 3))
        parent = f"n{counter}"
        counter += 1
        nodes += [(name, parent, h) for name, h in group]
        frontier.append((parent, height))
    root, h = frontier[0]
    nodes.append((root, None, h))
    return LabelTree(tuple(nodes), tuple(leaves))


def path_walk_distance(tree: LabelTree, a: int, b: int) -> int:
    """Independent LCA oracle: walk both leaves to the root and intersect the ancestor sets."""
    parent = {n: p for n, p, _ in tree.nodes}
    height = {n: h for n, _, h in tree.nodes}

    def path(node):
        out = [node]
        while parent[out[-1]] is not None:
            out.append(parent[out[-1]])
        return out

    pa, pb = path(tree.leaves[a]), set(path(tree.leaves[b]))
    common = [n for n in pa if n in pb]
    return min(height[n] for n in common)


def balanced_binary_tree(depth: int) -> LabelTree:
    nodes = [("r", None, depth)]
    level = ["r"]
    for d in range(depth - 1, -1, -1):
        nxt = []
        for p in level:
            for side in "01":
                name = p + side
                nodes.append((name, p, d))
                nxt.append(name)
        level = nxt
    return LabelTree(tuple(nodes), tuple(level))


tree_seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def toy3():
    return builtin_tree("toy3")


@pytest.fixture
def cifar10():
    return builtin_tree("cifar10")


def numeric_param_grad(net, loss_of_net, step=1e-5):
    """Central finite differences of a scalar ``loss_of_net(net)`` w.r.t. every parameter."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_of_net(net)
            flat[i] = keep - step
            down = loss_of_net(net)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion; printed in the terminal summary."""

    def report(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

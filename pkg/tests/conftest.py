"""Shared test helpers: tree builders and independent oracles.

The oracles here deliberately avoid the library's own code paths: tree
distances come from per-node BFS, minimum spanning trees from exhaustive
enumeration, and gradients from central finite differences.
"""

import heapq
import itertools
from collections import deque

import numpy as np

from kprobe.treebank import Sentence, Token


def make_sentence(heads, sid="s", upos=None, forms=None):
    """Build a Sentence from a list of 1-based heads (0 = root)."""
    n = len(heads)
    upos = upos or ["NOUN"] * n
    forms = forms or [f"w{t}" for t in range(1, n + 1)]
    toks = tuple(
        Token(index=t + 1, form=forms[t], upos=upos[t], head=heads[t])
        for t in range(n)
    )
    return Sentence(id=sid, tokens=toks)


def random_heads(rng, n):
    """Random attachment tree: each token hangs off a uniform earlier one."""
    return [0] + [rng.randint(1, t) for t in range(1, n)]


def bfs_distances(heads):
    """Tree distances by breadth-first search from every node."""
    n = len(heads)
    adj = [[] for _ in range(n)]
    for t, head in enumerate(heads, start=1):
        if head >= 1:
            adj[t - 1].append(head - 1)
            adj[head - 1].append(t - 1)
    out = np.zeros((n, n), dtype=np.int64)
    for src in range(n):
        seen = [-1] * n
        seen[src] = 0
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for other in adj[node]:
                if seen[other] < 0:
                    seen[other] = seen[node] + 1
                    queue.append(other)
        out[src] = seen
    return out


def spanning_trees(n):
    """Yield every spanning tree of K_n as a list of (i, j) edges, i < j."""
    if n < 2:
        yield []
        return
    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        heap = [i for i in range(n) if degree[i] == 1]
        heapq.heapify(heap)
        edges = []
        for v in seq:
            leaf = heapq.heappop(heap)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[v] -= 1
            if degree[v] == 1:
                heapq.heappush(heap, v)
        u, w = heapq.heappop(heap), heapq.heappop(heap)
        edges.append((min(u, w), max(u, w)))
        yield edges


def fd_gradient(f, B, eps=1e-5):
    """Central finite-difference gradient of scalar f with respect to B."""
    g = np.zeros_like(B, dtype=np.float64)
    for i in range(B.shape[0]):
        for j in range(B.shape[1]):
            up = B.copy()
            up[i, j] += eps
            dn = B.copy()
            dn[i, j] -= eps
            g[i, j] = (f(up) - f(dn)) / (2.0 * eps)
    return g

"""numba kernels for the hot loops: union-find, clique expansion, Brandes."""
import numpy as np
from numba import njit


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        # path halving
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def union_find_labels(n, us, vs):
    """Component labels for ``n`` vertices and edge arrays ``us``/``vs``.

    Union by size with path halving. Labels are renumbered so that component
    ids increase with the smallest vertex index they contain.
    """
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for i in range(us.shape[0]):
        a = _find(parent, us[i])
        b = _find(parent, vs[i])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    labels = np.empty(n, dtype=np.int64)
    remap = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for v in range(n):
        r = _find(parent, v)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        labels[v] = remap[r]
    return labels


@njit(cache=True)
def count_clique_pairs(indptr):
    total = 0
    for a in range(indptr.shape[0] - 1):
        k = indptr[a + 1] - indptr[a]
        total += k * (k - 1) // 2
    return total


@njit(cache=True)
def expand_cliques(indptr, members, art_ids, out_u, out_v, out_a):
    """Write every unordered member pair of each group, tagged with its group id.

    ``members`` must be sorted within each group so that u < v holds.
    """
    pos = 0
    for a in range(indptr.shape[0] - 1):
        lo = indptr[a]
        hi = indptr[a + 1]
        for i in range(lo, hi):
            for j in range(i + 1, hi):
                out_u[pos] = members[i]
                out_v[pos] = members[j]
                out_a[pos] = art_ids[a]
                pos += 1
    return pos


@njit(cache=True)
def brandes_accumulate(indptr, indices, sources, bc):
    """Add single-source dependencies from each source in ``sources`` into ``bc``.

    Unweighted, undirected; each unordered pair is counted twice over a full
    source sweep, so callers halve the total.
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    sigma = np.zeros(n, dtype=np.float64)
    delta = np.zeros(n, dtype=np.float64)
    order = np.empty(n, dtype=np.int64)
    for s in sources:
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        head = 0
        tail = 0
        order[tail] = s
        tail += 1
        while head < tail:
            v = order[head]
            head += 1
            dv = dist[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dv + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
        for idx in range(tail - 1, 0, -1):
            w = order[idx]
            dw = dist[w]
            coeff = (1.0 + delta[w]) / sigma[w]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dw - 1:
                    delta[v] += sigma[v] * coeff
            bc[w] += delta[w]
    return bc

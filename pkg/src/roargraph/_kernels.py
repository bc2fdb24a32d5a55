"""Compiled inner loops.

All routines are single-threaded and release the GIL so callers can fan
out over threads. Distances accumulate in float32, left to right, so a
given input always produces the same bits. Orderings everywhere compare
``(distance, id)`` lexicographically.
"""

import numpy as np
from numba import njit

L2 = 0
INNER_PRODUCT = 1
COSINE = 2


@njit(nogil=True, cache=True, inline="always")
def distance(a, b, metric):
    s = np.float32(0.0)
    if metric == L2:
        for i in range(a.shape[0]):
            t = a[i] - b[i]
            s += t * t
        return s
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    if metric == INNER_PRODUCT:
        return -s
    return np.float32(1.0) - s


@njit(nogil=True, cache=True)
def distances_to(data, q, metric):
    out = np.empty(data.shape[0], dtype=np.float32)
    for i in range(data.shape[0]):
        out[i] = distance(data[i], q, metric)
    return out


@njit(nogil=True, cache=True, inline="always")
def _before(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(nogil=True, cache=True)
def sort_by_distance(ids, ds):
    """Stable (distance, id) ordering of parallel arrays, returned as copies."""
    order = np.argsort(ds, kind="mergesort")
    ids2 = ids[order]
    ds2 = ds[order]
    # mergesort keeps input order on ties; re-sort equal runs by id
    n = ids2.shape[0]
    i = 0
    while i < n:
        j = i + 1
        while j < n and ds2[j] == ds2[i]:
            j += 1
        if j - i > 1:
            run = np.sort(ids2[i:j])
            ids2[i:j] = run
        i = j
    return ids2, ds2


# --------------------------------------------------------------------------
# beam search


@njit(nogil=True, cache=True)
def beam_search(adj, deg, data, q, metric, entry, L, stamp, epoch):
    """Best-first search from ``entry`` with a sorted pool of capacity L.

    ``adj`` is a padded adjacency matrix, row i valid up to ``deg[i]``.
    Returns the converged pool (ids, dists, sorted by (dist, id)), the
    number of expanded nodes and the number of distance evaluations.
    """
    width = adj.shape[1]
    return _beam(adj.reshape(-1), np.empty(0, dtype=np.int64), width, deg, data, q, metric, entry, L, stamp, epoch)


@njit(nogil=True, cache=True)
def beam_search_csr(offsets, nbrs, deg, data, q, metric, entry, L, stamp, epoch):
    """:func:`beam_search` over a CSR adjacency (``deg`` = row lengths)."""
    return _beam(nbrs, offsets, 0, deg, data, q, metric, entry, L, stamp, epoch)


@njit(nogil=True, cache=True)
def _beam(flat, starts, width, deg, data, q, metric, entry, L, stamp, epoch):
    # row i starts at starts[i] (CSR) or at i * width (padded, empty starts)
    csr = starts.shape[0] > 0
    ids = np.empty(L, dtype=np.int32)
    ds = np.empty(L, dtype=np.float32)
    expanded = np.zeros(L, dtype=np.bool_)
    stamp[entry] = epoch
    ids[0] = entry
    ds[0] = distance(data[entry], q, metric)
    size = 1
    visited = 1
    hops = 0
    cur = 0
    while cur < size:
        node = ids[cur]
        expanded[cur] = True
        hops += 1
        first_new = size
        row = starts[node] if csr else np.int64(node) * width
        for j in range(deg[node]):
            nb = flat[row + j]
            if stamp[nb] == epoch:
                continue
            stamp[nb] = epoch
            d = distance(data[nb], q, metric)
            visited += 1
            if size == L and not _before(d, nb, ds[size - 1], ids[size - 1]):
                continue
            lo = 0
            hi = size
            while lo < hi:
                mid = (lo + hi) >> 1
                if _before(ds[mid], ids[mid], d, nb):
                    lo = mid + 1
                else:
                    hi = mid
            end = size if size < L else L - 1
            for t in range(end, lo, -1):
                ids[t] = ids[t - 1]
                ds[t] = ds[t - 1]
                expanded[t] = expanded[t - 1]
            ids[lo] = nb
            ds[lo] = d
            expanded[lo] = False
            if size < L:
                size += 1
            if lo < first_new:
                first_new = lo
        if first_new <= cur:
            cur = first_new
        else:
            cur += 1
        while cur < size and expanded[cur]:
            cur += 1
    return ids[:size].copy(), ds[:size].copy(), hops, visited


# --------------------------------------------------------------------------
# neighbor selection


@njit(nogil=True, cache=True)
def acquire_neighbors(cand_ids, cand_ds, data, metric, M, fulfill):
    """Diversity-pruned neighbor selection over a sorted candidate list.

    ``cand_ds[i]`` is the distance from the pivot to ``cand_ids[i]``. A
    candidate is accepted only if it is strictly closer to the pivot than
    to every neighbor accepted so far. With ``fulfill`` the remaining
    slots up to M are topped up with rejected candidates in order.
    """
    n = cand_ids.shape[0]
    out = np.empty(min(n, M), dtype=np.int32)
    if n == 0:
        return out[:0]
    taken = np.zeros(n, dtype=np.bool_)
    out[0] = cand_ids[0]
    taken[0] = True
    cnt = 1
    for i in range(1, n):
        if cnt >= M:
            break
        c = cand_ids[i]
        dc = cand_ds[i]
        ok = True
        for j in range(cnt):
            if not (dc < distance(data[c], data[out[j]], metric)):
                ok = False
                break
        if ok:
            out[cnt] = c
            taken[i] = True
            cnt += 1
    if fulfill:
        for i in range(n):
            if cnt >= M:
                break
            if not taken[i]:
                out[cnt] = cand_ids[i]
                cnt += 1
    return out[:cnt]


@njit(nogil=True, cache=True)
def _reprune_with(adj, deg, p, x, data, metric, M, append_if_room, fulfill=False):
    """Offer x to p's list: re-select p's list over its neighbors plus x.

    With ``append_if_room`` x is appended without pruning while p has
    fewer than M neighbors; pruning only runs on overflow. ``fulfill``
    tops the re-selected list back up to M, so a full list loses one entry.
    """
    n = deg[p]
    for j in range(n):
        if adj[p, j] == x:
            return
    if append_if_room and n < M:
        adj[p, n] = x
        deg[p] = n + 1
        return
    ids = np.empty(n + 1, dtype=np.int32)
    ds = np.empty(n + 1, dtype=np.float32)
    for j in range(n):
        ids[j] = adj[p, j]
        ds[j] = distance(data[p], data[ids[j]], metric)
    ids[n] = x
    ds[n] = distance(data[p], data[x], metric)
    ids, ds = sort_by_distance(ids, ds)
    sel = acquire_neighbors(ids, ds, data, metric, M, fulfill)
    deg[p] = sel.shape[0]
    for j in range(sel.shape[0]):
        adj[p, j] = sel[j]


@njit(nogil=True, cache=True)
def _set_list(adj, deg, x, sel):
    deg[x] = sel.shape[0]
    for j in range(sel.shape[0]):
        adj[x, j] = sel[j]


# --------------------------------------------------------------------------
# construction passes


@njit(nogil=True, cache=True)
def project(data, metric, q_off, q_nbrs, b_off, b_nbrs, anchor_ds, M, L, append_if_room):
    """Neighborhood-aware projection of the bipartite graph onto base nodes.

    ``q_off/q_nbrs`` is the query->base CSR, ``b_off/b_nbrs`` the
    base->query CSR, ``anchor_ds[t]`` the distance from query t to its
    single base in-neighbor. Returns a fixed-width adjacency (N x M) and
    per-node degrees.
    """
    n = data.shape[0]
    adj = np.zeros((n, M), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    stamp = np.full(n, -1, dtype=np.int64)
    buf = np.empty(n, dtype=np.int32)
    for x in range(n):
        nb_lo = b_off[x]
        nb_hi = b_off[x + 1]
        if nb_hi == nb_lo:
            continue
        bridges = b_nbrs[nb_lo:nb_hi].copy()
        bds = anchor_ds[bridges]
        bridges, bds = sort_by_distance(bridges, bds)
        cnt = 0
        stamp[x] = x
        for bi in range(bridges.shape[0]):
            if cnt >= L:
                break
            t = bridges[bi]
            for j in range(q_off[t], q_off[t + 1]):
                c = q_nbrs[j]
                if stamp[c] != x:
                    stamp[c] = x
                    buf[cnt] = c
                    cnt += 1
        if cnt == 0:
            continue
        cids = buf[:cnt].copy()
        cds = np.empty(cnt, dtype=np.float32)
        for i in range(cnt):
            cds[i] = distance(data[x], data[cids[i]], metric)
        cids, cds = sort_by_distance(cids, cds)
        if cnt > L:
            cids = cids[:L]
            cds = cds[:L]
        sel = acquire_neighbors(cids, cds, data, metric, M, True)
        _set_list(adj, deg, x, sel)
        for i in range(sel.shape[0]):
            _reprune_with(adj, deg, sel[i], x, data, metric, M, append_if_room)
    return adj, deg


@njit(nogil=True, cache=True)
def prune_knn(data, metric, knn_ids, knn_ds, M, append_if_room):
    """Query-agnostic graph: prune each node's exact neighbor list, add reverse edges."""
    n = data.shape[0]
    adj = np.zeros((n, M), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    for x in range(n):
        sel = acquire_neighbors(knn_ids[x], knn_ds[x], data, metric, M, False)
        _set_list(adj, deg, x, sel)
        for i in range(sel.shape[0]):
            _reprune_with(adj, deg, sel[i], x, data, metric, M, append_if_room)
    return adj, deg


@njit(nogil=True, cache=True)
def enhance(data, metric, frozen_adj, frozen_deg, adj, deg, entry, M, L, append_if_room, keep_existing):
    """Connectivity enhancement over a frozen graph.

    Searches ``frozen_adj/frozen_deg`` for every base vector, selects extra
    neighbors from the converged pool and attempts reverse edges. ``adj``
    and ``deg`` are the working lists (M wide) and are updated in place.
    """
    n = data.shape[0]
    stamp = np.zeros(n, dtype=np.int64)
    for x in range(n):
        pids, pds, _, _ = beam_search(frozen_adj, frozen_deg, data, data[x], metric, entry, L, stamp, x + 1)
        keep = pids != x
        pids = pids[keep]
        pds = pds[keep]
        if keep_existing and deg[x] > 0:
            # reverse edges other nodes already placed in x's list stay candidates
            extra = np.empty(deg[x], dtype=np.int32)
            ne = 0
            for j in range(deg[x]):
                v = adj[x, j]
                seen = False
                for t in range(pids.shape[0]):
                    if pids[t] == v:
                        seen = True
                        break
                if not seen:
                    extra[ne] = v
                    ne += 1
            if ne > 0:
                ids = np.concatenate((pids, extra[:ne]))
                ds = np.empty(ids.shape[0], dtype=np.float32)
                for t in range(ids.shape[0]):
                    ds[t] = distance(data[x], data[ids[t]], metric)
                pids, pds = sort_by_distance(ids, ds)
        sel = acquire_neighbors(pids, pds, data, metric, M, False)
        _set_list(adj, deg, x, sel)
        for i in range(sel.shape[0]):
            _reprune_with(adj, deg, sel[i], x, data, metric, M, append_if_room)


@njit(nogil=True, cache=True)
def merge_lists(data, metric, adj_a, deg_a, adj_b, deg_b, cap):
    """Per-node union, ``a`` entries first; overflow drops the farthest ``b`` entries."""
    n = adj_a.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    out = np.zeros((n, cap), dtype=np.int32)
    for x in range(n):
        c = 0
        for j in range(deg_a[x]):
            if c < cap:
                out[x, c] = adj_a[x, j]
                c += 1
        na = c
        extra = np.empty(deg_b[x], dtype=np.int32)
        extra_d = np.empty(deg_b[x], dtype=np.float32)
        ne = 0
        for j in range(deg_b[x]):
            v = adj_b[x, j]
            dup = False
            for t in range(na):
                if out[x, t] == v:
                    dup = True
                    break
            if not dup:
                extra[ne] = v
                extra_d[ne] = distance(data[x], data[v], metric)
                ne += 1
        room = cap - na
        if ne > room:
            # keep the closest ``room`` extras, preserving their original order
            ids_sorted, _ = sort_by_distance(extra[:ne].copy(), extra_d[:ne].copy())
            allowed = ids_sorted[:room]
            for j in range(ne):
                v = extra[j]
                ok = False
                for t in range(room):
                    if allowed[t] == v:
                        ok = True
                        break
                if ok:
                    out[x, c] = v
                    c += 1
        else:
            for j in range(ne):
                out[x, c] = extra[j]
                c += 1
        counts[x] = c
    return out, counts


@njit(nogil=True, cache=True)
def _mark_reachable(adj, deg, start, seen, queue):
    """BFS from ``start`` over unseen nodes; marks them in ``seen``."""
    if seen[start]:
        return
    seen[start] = True
    head = 0
    tail = 1
    queue[0] = start
    while head < tail:
        u = queue[head]
        head += 1
        for j in range(deg[u]):
            v = adj[u, j]
            if not seen[v]:
                seen[v] = True
                queue[tail] = v
                tail += 1


@njit(nogil=True, cache=True)
def repair_reachability(data, metric, adj, deg, entry, L, cap):
    """Link every node unreachable from ``entry`` into the reachable part.

    Each orphan (in id order) is searched on the current graph; the
    nearest reachable pool node with spare degree gains an edge to it.
    Falls back to the nearest reachable node overall by linear scan when
    the pool offers no room. Returns the number of edges added.
    """
    n = data.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int32)
    stamp = np.zeros(n, dtype=np.int64)
    _mark_reachable(adj, deg, entry, seen, queue)
    added = 0
    epoch = 0
    for u in range(n):
        if seen[u]:
            continue
        epoch += 1
        pids, _, _, _ = beam_search(adj, deg, data, data[u], metric, entry, L, stamp, epoch)
        host = -1
        for i in range(pids.shape[0]):
            p = pids[i]
            if p != u and seen[p] and deg[p] < cap:
                host = p
                break
        if host < 0:
            best = np.inf
            for p in range(n):
                if p != u and seen[p] and deg[p] < cap:
                    d = distance(data[u], data[p], metric)
                    if d < best:
                        best = d
                        host = p
        if host < 0:
            continue
        adj[host, deg[host]] = u
        deg[host] += 1
        added += 1
        _mark_reachable(adj, deg, u, seen, queue)
    return added

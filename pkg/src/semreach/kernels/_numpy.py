"""Pure numpy / stdlib fallbacks for the compiled kernels.

Array math is vectorized; the two graph searches use ``heapq`` directly.
"""
import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)
_MOVES = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def cast_rays(truth, width, height, row, col, dr, dc, dist, in_range, ptr):
    n_rays = ptr.shape[0] - 1
    rr = row + dr
    cc = col + dc
    oob = (rr < 0) | (rr >= height) | (cc < 0) | (cc >= width)
    cells = np.where(oob, 0, rr * width + cc)
    occ = ~oob & (truth[cells] != 0)
    stop = oob | occ

    lengths = np.diff(ptr)
    ray_of = np.repeat(np.arange(n_rays), lengths)
    idx = np.arange(dr.shape[0])
    first_stop = ptr[1:].copy()
    np.minimum.at(first_stop, ray_of[stop], idx[stop])

    before = idx < first_stop[ray_of]
    traversed = before & in_range
    trav_cells = cells[traversed].astype(np.int64)
    trav_ptr = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(np.bincount(ray_of[traversed], minlength=n_rays), out=trav_ptr[1:])

    hit = np.full(n_rays, -1, dtype=np.int64)
    hit_dist = np.full(n_rays, np.nan)
    has = first_stop < ptr[1:]
    e = first_stop[has]
    ok = occ[e] & in_range[e]
    rays = np.flatnonzero(has)[ok]
    hit[rays] = cells[e[ok]]
    hit_dist[rays] = dist[e[ok]]
    return hit, hit_dist, trav_ptr, trav_cells


def bayes_update(pmf, log_lik, hit, labels, trav_cells, free_id, floor):
    n_cells, n_cls = pmf.shape
    acc = np.zeros((n_cells, n_cls))
    valid = hit >= 0
    np.add.at(acc, hit[valid], log_lik[:, labels[valid]].T)
    np.add.at(acc, trav_cells, log_lik[:, free_id])
    touched = np.zeros(n_cells, dtype=bool)
    touched[hit[valid]] = True
    touched[trav_cells] = True

    out = pmf.copy()
    rows = np.flatnonzero(touched)
    with np.errstate(divide="ignore"):
        logp = np.log(pmf[rows]) + acc[rows]
    m = logp.max(axis=1)
    live = np.isfinite(m)
    rows, logp, m = rows[live], logp[live], m[live]
    p = np.exp(logp - m[:, None])
    p /= p.sum(axis=1, keepdims=True)
    p = np.maximum(p, floor)
    p /= p.sum(axis=1, keepdims=True)
    out[rows] = p
    return out, touched


def admissible_mask(labels, clearance, width, height):
    n = labels.shape[0]
    adm = np.ones((height, width), dtype=bool)
    for k in np.unique(labels):
        c = float(clearance[k])
        if c <= 0.0:
            continue
        reach = int(math.ceil(c))
        lim = c - 1e-9
        di, dj = np.mgrid[-reach:reach + 1, -reach:reach + 1]
        inside = di * di + dj * dj < lim * lim
        di, dj = di[inside], dj[inside]
        src = np.flatnonzero(labels == k)
        rr = (src // width)[:, None] + di[None, :]
        cc = (src % width)[:, None] + dj[None, :]
        ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
        adm[rr[ok], cc[ok]] = False
    return adm.reshape(n)


def _reconstruct(parent, start, goal):
    out = [goal]
    while out[-1] != start:
        out.append(parent[out[-1]])
    return np.array(out[::-1], dtype=np.int64)


def astar(adm, width, height, start, goal_mask, goal_r, goal_c, goal_radius):
    start = int(start)
    if goal_mask[start]:
        return np.array([start], dtype=np.int64)
    adm = adm.tolist()
    goal = goal_mask.tolist()
    n = width * height
    g = [math.inf] * n
    parent = [-1] * n
    closed = [False] * n

    def heur(r, c):
        return max(0.0, math.hypot(r - goal_r, c - goal_c) - goal_radius)

    h0 = heur(start // width, start % width)
    g[start] = 0.0
    heap = [(h0, h0, start)]
    while heap:
        _, _, v = heapq.heappop(heap)
        if closed[v]:
            continue
        closed[v] = True
        if goal[v]:
            return _reconstruct(parent, start, v)
        vr, vc = divmod(v, width)
        for di, dj in _MOVES:
            nr, nc = vr + di, vc + dj
            if nr < 0 or nr >= height or nc < 0 or nc >= width:
                continue
            u = nr * width + nc
            if closed[u] or not adm[u]:
                continue
            ng = g[v] + (SQRT2 if di and dj else 1.0)
            if ng < g[u]:
                g[u] = ng
                parent[u] = v
                hu = heur(nr, nc)
                heapq.heappush(heap, (ng + hu, hu, u))
    return np.empty(0, dtype=np.int64)


def dijkstra(adm, width, height, start):
    start = int(start)
    adm = adm.tolist()
    n = width * height
    dist = [math.inf] * n
    parent = [-1] * n
    closed = [False] * n
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, v = heapq.heappop(heap)
        if closed[v]:
            continue
        closed[v] = True
        vr, vc = divmod(v, width)
        for di, dj in _MOVES:
            nr, nc = vr + di, vc + dj
            if nr < 0 or nr >= height or nc < 0 or nc >= width:
                continue
            u = nr * width + nc
            if closed[u] or not adm[u]:
                continue
            nd = d + (SQRT2 if di and dj else 1.0)
            if nd < dist[u]:
                dist[u] = nd
                parent[u] = v
                heapq.heappush(heap, (nd, u))
    return np.array(dist), np.array(parent, dtype=np.int64)

"""Numba-compiled hot loops. Semantics must match ``_numpy`` exactly."""
import heapq
import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
_DR = np.array([-1, -1, -1, 0, 0, 1, 1, 1], dtype=np.int64)
_DC = np.array([-1, 0, 1, -1, 1, -1, 0, 1], dtype=np.int64)


@njit(cache=True)
def cast_rays(truth, width, height, row, col, dr, dc, dist, in_range, ptr):
    n_rays = ptr.shape[0] - 1
    hit = np.full(n_rays, -1, dtype=np.int64)
    hit_dist = np.full(n_rays, np.nan)
    trav_ptr = np.zeros(n_rays + 1, dtype=np.int64)
    buf = np.empty(dr.shape[0], dtype=np.int64)
    k = 0
    for b in range(n_rays):
        for e in range(ptr[b], ptr[b + 1]):
            rr = row + dr[e]
            cc = col + dc[e]
            if rr < 0 or rr >= height or cc < 0 or cc >= width:
                break
            j = rr * width + cc
            if truth[j] != 0:
                if in_range[e]:
                    hit[b] = j
                    hit_dist[b] = dist[e]
                break
            if in_range[e]:
                buf[k] = j
                k += 1
        trav_ptr[b + 1] = k
    return hit, hit_dist, trav_ptr, buf[:k].copy()


@njit(cache=True)
def bayes_update(pmf, log_lik, hit, labels, trav_cells, free_id, floor):
    n_cells, n_cls = pmf.shape
    acc = np.zeros((n_cells, n_cls))
    touched = np.zeros(n_cells, dtype=np.bool_)
    for b in range(hit.shape[0]):
        j = hit[b]
        if j < 0:
            continue
        y = labels[b]
        touched[j] = True
        for k in range(n_cls):
            acc[j, k] += log_lik[k, y]
    for e in range(trav_cells.shape[0]):
        j = trav_cells[e]
        touched[j] = True
        for k in range(n_cls):
            acc[j, k] += log_lik[k, free_id]
    out = pmf.copy()
    logp = np.empty(n_cls)
    for j in range(n_cells):
        if not touched[j]:
            continue
        m = -np.inf
        for k in range(n_cls):
            logp[k] = math.log(pmf[j, k]) + acc[j, k] if pmf[j, k] > 0 else -np.inf
            if logp[k] > m:
                m = logp[k]
        if m == -np.inf:
            continue
        s = 0.0
        for k in range(n_cls):
            out[j, k] = math.exp(logp[k] - m)
            s += out[j, k]
        s2 = 0.0
        for k in range(n_cls):
            v = out[j, k] / s
            if v < floor:
                v = floor
            out[j, k] = v
            s2 += v
        for k in range(n_cls):
            out[j, k] /= s2
    return out, touched


@njit(cache=True)
def admissible_mask(labels, clearance, width, height):
    n = labels.shape[0]
    adm = np.ones(n, dtype=np.bool_)
    for j in range(n):
        c = clearance[labels[j]]
        if c <= 0.0:
            continue
        lim = c - 1e-9
        lim2 = lim * lim
        r0 = j // width
        c0 = j % width
        reach = int(math.ceil(c))
        for di in range(-reach, reach + 1):
            rr = r0 + di
            if rr < 0 or rr >= height:
                continue
            for dj in range(-reach, reach + 1):
                cc = c0 + dj
                if cc < 0 or cc >= width:
                    continue
                if di * di + dj * dj < lim2:
                    adm[rr * width + cc] = False
    return adm


@njit(cache=True)
def _reconstruct(parent, start, goal):
    n = 1
    v = goal
    while v != start:
        v = parent[v]
        n += 1
    out = np.empty(n, dtype=np.int64)
    v = goal
    for i in range(n - 1, -1, -1):
        out[i] = v
        if i > 0:
            v = parent[v]
    return out


@njit(cache=True)
def astar(adm, width, height, start, goal_mask, goal_r, goal_c, goal_radius):
    if goal_mask[start]:
        return np.array([start], dtype=np.int64)
    n = width * height
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    h0 = max(0.0, math.hypot(start // width - goal_r, start % width - goal_c) - goal_radius)
    g[start] = 0.0
    heap = [(h0, h0, np.int64(start))]
    while len(heap) > 0:
        f, h, v = heapq.heappop(heap)
        if closed[v]:
            continue
        closed[v] = True
        if goal_mask[v]:
            return _reconstruct(parent, start, v)
        vr = v // width
        vc = v % width
        for i in range(8):
            nr = vr + _DR[i]
            nc = vc + _DC[i]
            if nr < 0 or nr >= height or nc < 0 or nc >= width:
                continue
            u = nr * width + nc
            if closed[u] or not adm[u]:
                continue
            step = SQRT2 if _DR[i] != 0 and _DC[i] != 0 else 1.0
            ng = g[v] + step
            if ng < g[u]:
                g[u] = ng
                parent[u] = v
                hu = max(0.0, math.hypot(nr - goal_r, nc - goal_c) - goal_radius)
                heapq.heappush(heap, (ng + hu, hu, np.int64(u)))
    return np.empty(0, dtype=np.int64)


@njit(cache=True)
def dijkstra(adm, width, height, start):
    n = width * height
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    dist[start] = 0.0
    heap = [(0.0, np.int64(start))]
    while len(heap) > 0:
        d, v = heapq.heappop(heap)
        if closed[v]:
            continue
        closed[v] = True
        vr = v // width
        vc = v % width
        for i in range(8):
            nr = vr + _DR[i]
            nc = vc + _DC[i]
            if nr < 0 or nr >= height or nc < 0 or nc >= width:
                continue
            u = nr * width + nc
            if closed[u] or not adm[u]:
                continue
            step = SQRT2 if _DR[i] != 0 and _DC[i] != 0 else 1.0
            nd = d + step
            if nd < dist[u]:
                dist[u] = nd
                parent[u] = v
                heapq.heappush(heap, (nd, np.int64(u)))
    return dist, parent

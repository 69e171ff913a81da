"""Numba-compiled inner loops: label propagation passes, gain evaluation,
sequential bisection machinery, and the geometric-graph cell scan.

All passes process vertices one at a time so that moves are visible to later
vertices on the same PE within the same batch.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict

U64 = np.uint64


def new_weight_map():
    return Dict.empty(types.int64, types.int64)


@njit(cache=True, nogil=True)
def fill_weight_map(d, keys, vals):
    for i in range(keys.size):
        d[keys[i]] = vals[i]


@njit(cache=True, nogil=True)
def _mix64(x):
    x = U64(x)
    x = (x ^ (x >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> U64(27))) * U64(0x94D049BB133111EB)
    return x ^ (x >> U64(31))


@njit(cache=True, nogil=True)
def _accumulate(xadj, adjncy, adjwgt, labels, v, mylab, key_buf, w_buf):
    """Sum edge weights of v per distinct neighbor label != mylab.

    Returns (count, own_conn).  Small degrees use a linear map, large ones a
    sort-based aggregation into the same buffers.
    """
    start, end = xadj[v], xadj[v + 1]
    deg = end - start
    own = np.int64(0)
    cnt = 0
    if deg <= 48:
        for e in range(start, end):
            lab = labels[adjncy[e]]
            w = adjwgt[e]
            if lab == mylab:
                own += w
                continue
            found = False
            for j in range(cnt):
                if key_buf[j] == lab:
                    w_buf[j] += w
                    found = True
                    break
            if not found:
                key_buf[cnt] = lab
                w_buf[cnt] = w
                cnt += 1
    else:
        labs = np.empty(deg, dtype=np.int64)
        ws = np.empty(deg, dtype=np.int64)
        p = 0
        for e in range(start, end):
            lab = labels[adjncy[e]]
            if lab == mylab:
                own += adjwgt[e]
            else:
                labs[p] = lab
                ws[p] = adjwgt[e]
                p += 1
        order = np.argsort(labs[:p])
        prev = np.int64(-1)
        for oi in range(p):
            i = order[oi]
            if labs[i] != prev:
                key_buf[cnt] = labs[i]
                w_buf[cnt] = ws[i]
                prev = labs[i]
                cnt += 1
            else:
                w_buf[cnt - 1] += ws[i]
    return cnt, own


@njit(cache=True, nogil=True)
def lp_cluster_batch(xadj, adjncy, adjwgt, vwgt, labels, order,
                     view, pending, W,
                     log_v, log_prev, log_to, log_n, changed):
    """One clustering batch: greedily move each vertex to the adjacent cluster
    maximizing intra-cluster edge weight, subject to the projected cluster
    weight staying <= W.  Ties prefer the lighter cluster, then the smaller
    cluster ID.  Moves are logged for proportional rollback."""
    maxdeg = 0
    for i in range(order.size):
        d = xadj[order[i] + 1] - xadj[order[i]]
        if d > maxdeg:
            maxdeg = d
    key_buf = np.empty(maxdeg, dtype=np.int64)
    w_buf = np.empty(maxdeg, dtype=np.int64)
    n = log_n[0]
    for ii in range(order.size):
        v = order[ii]
        if xadj[v + 1] == xadj[v]:
            continue
        mylab = labels[v]
        cv = vwgt[v]
        cnt, own_conn = _accumulate(xadj, adjncy, adjwgt, labels, v, mylab, key_buf, w_buf)
        best_lab = np.int64(-1)
        best_w = np.int64(0)
        best_cw = np.int64(0)
        for j in range(cnt):
            w = w_buf[j]
            if w < best_w:
                continue
            lab = key_buf[j]
            cw = view.get(lab, np.int64(0))
            if cw + cv > W:
                continue
            if w > best_w or best_lab < 0 or cw < best_cw or (cw == best_cw and lab < best_lab):
                best_lab = lab
                best_w = w
                best_cw = cw
        if best_lab >= 0 and best_w > own_conn:
            labels[v] = best_lab
            view[mylab] = view.get(mylab, np.int64(0)) - cv
            view[best_lab] = best_cw + cv
            pending[mylab] = pending.get(mylab, np.int64(0)) - cv
            pending[best_lab] = pending.get(best_lab, np.int64(0)) + cv
            log_v[n] = v
            log_prev[n] = mylab
            log_to[n] = best_lab
            n += 1
            changed[v] = 1
    log_n[0] = n


@njit(cache=True, nogil=True)
def lp_refine_batch(xadj, adjncy, adjwgt, vwgt, blocks, gids, order,
                    bw_proj, pend, lmax, seed, changed):
    """One refinement batch: move each vertex to the adjacent block maximizing
    intra-block edge weight if the target's projected weight stays <= lmax.
    Equal-gain ties go to the lighter block; residual ties between candidate
    blocks are settled by a seeded coin flip.  Zero-gain moves are applied
    only toward a strictly lighter block."""
    maxdeg = 0
    for i in range(order.size):
        d = xadj[order[i] + 1] - xadj[order[i]]
        if d > maxdeg:
            maxdeg = d
    key_buf = np.empty(maxdeg, dtype=np.int64)
    w_buf = np.empty(maxdeg, dtype=np.int64)
    for ii in range(order.size):
        v = order[ii]
        if xadj[v + 1] == xadj[v]:
            continue
        own = np.int64(blocks[v])
        cv = vwgt[v]
        cnt, own_conn = _accumulate(xadj, adjncy, adjwgt, blocks, v, own, key_buf, w_buf)
        best = np.int64(-1)
        best_w = np.int64(-1)
        best_bw = np.int64(0)
        best_coin = U64(0)
        for j in range(cnt):
            w = w_buf[j]
            if w < best_w:
                continue
            b = key_buf[j]
            if bw_proj[b] + cv > lmax:
                continue
            coin = _mix64(U64(seed) ^ (U64(gids[v]) * U64(0x9E3779B97F4A7C15)) ^ U64(b))
            if (w > best_w
                    or bw_proj[b] < best_bw
                    or (bw_proj[b] == best_bw and coin > best_coin)):
                best = b
                best_w = w
                best_bw = bw_proj[b]
                best_coin = coin
        if best >= 0 and (best_w > own_conn
                          or (best_w == own_conn and best_bw < bw_proj[own])):
            blocks[v] = np.int32(best)
            bw_proj[own] -= cv
            bw_proj[best] += cv
            pend[own] -= cv
            pend[best] += cv
            changed[v] = 1


@njit(cache=True, nogil=True)
def balancer_candidates(xadj, adjncy, adjwgt, vwgt, blocks, verts,
                        bw, lmax, light1, light2):
    """Best admissible move per vertex: gain (cut reduction) and target block.

    Targets are adjacent blocks plus the globally lightest admissible block
    (covers interior vertices).  light1/light2 are the two lightest block
    indices.  valid=0 marks vertices with no admissible target."""
    m = verts.size
    gains = np.empty(m, dtype=np.int64)
    targets = np.empty(m, dtype=np.int32)
    valid = np.zeros(m, dtype=np.uint8)
    maxdeg = 1
    for i in range(m):
        d = xadj[verts[i] + 1] - xadj[verts[i]]
        if d > maxdeg:
            maxdeg = d
    key_buf = np.empty(maxdeg, dtype=np.int64)
    w_buf = np.empty(maxdeg, dtype=np.int64)
    for i in range(m):
        v = verts[i]
        own = np.int64(blocks[v])
        cv = vwgt[v]
        cnt, own_conn = _accumulate(xadj, adjncy, adjwgt, blocks, v, own, key_buf, w_buf)
        best = np.int64(-1)
        best_gain = np.int64(0)
        best_bw = np.int64(0)
        for j in range(cnt):
            b = key_buf[j]
            if bw[b] + cv > lmax:
                continue
            g = w_buf[j] - own_conn
            if best < 0 or g > best_gain or (g == best_gain and (bw[b] < best_bw or (bw[b] == best_bw and b < best))):
                best = b
                best_gain = g
                best_bw = bw[b]
        # fallback: lightest admissible block anywhere (gain -own_conn)
        lb = light1 if light1 != own else light2
        if lb >= 0 and bw[lb] + cv <= lmax:
            g = -own_conn
            if best < 0 or g > best_gain or (g == best_gain and (bw[lb] < best_bw or (bw[lb] == best_bw and lb < best))):
                best = np.int64(lb)
                best_gain = g
                best_bw = bw[lb]
        if best >= 0:
            gains[i] = best_gain
            targets[i] = np.int32(best)
            valid[i] = 1
        else:
            gains[i] = 0
            targets[i] = -1
    return gains, targets, valid


# ---------------------------------------------------------------------------
# sequential bisection machinery


@njit(cache=True, nogil=True)
def seq_lp_cluster_iter(xadj, adjncy, adjwgt, vwgt, labels, cw, order, W):
    """Sequential size-constrained LP pass; cluster weights are dense arrays
    indexed by the cluster's initial vertex.  Returns the number of moves."""
    maxdeg = 0
    for v in range(xadj.size - 1):
        d = xadj[v + 1] - xadj[v]
        if d > maxdeg:
            maxdeg = d
    key_buf = np.empty(maxdeg, dtype=np.int64)
    w_buf = np.empty(maxdeg, dtype=np.int64)
    moves = 0
    for ii in range(order.size):
        v = order[ii]
        if xadj[v + 1] == xadj[v]:
            continue
        mylab = labels[v]
        cv = vwgt[v]
        cnt, own_conn = _accumulate(xadj, adjncy, adjwgt, labels, v, mylab, key_buf, w_buf)
        best_lab = np.int64(-1)
        best_w = np.int64(0)
        best_cw = np.int64(0)
        for j in range(cnt):
            w = w_buf[j]
            if w < best_w:
                continue
            lab = key_buf[j]
            cwl = cw[lab]
            if cwl + cv > W:
                continue
            if w > best_w or best_lab < 0 or cwl < best_cw or (cwl == best_cw and lab < best_lab):
                best_lab = lab
                best_w = w
                best_cw = cwl
        if best_lab >= 0 and best_w > own_conn:
            cw[mylab] -= cv
            cw[best_lab] += cv
            labels[v] = best_lab
            moves += 1
    return moves


@njit(cache=True, nogil=True)
def _heap_swap(hk, hv, i, j):
    hk[i], hk[j] = hk[j], hk[i]
    hv[i], hv[j] = hv[j], hv[i]


@njit(cache=True, nogil=True)
def _heap_up(hk, hv, i):
    while i > 0:
        p = (i - 1) >> 1
        if hk[i] < hk[p]:
            _heap_swap(hk, hv, i, p)
            i = p
        else:
            break


@njit(cache=True, nogil=True)
def _heap_down(hk, hv, size):
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        sm = l
        r = l + 1
        if r < size and hk[r] < hk[l]:
            sm = r
        if hk[sm] < hk[i]:
            _heap_swap(hk, hv, i, sm)
            i = sm
        else:
            break


@njit(cache=True, nogil=True)
def greedy_grow(xadj, adjncy, adjwgt, vwgt, start, target_w, min_cnt, max_other_cnt, side):
    """Grow side-0 from `start` by repeatedly pulling the max-gain frontier
    vertex (lazy heap), until its weight reaches target_w; jumps to unreached
    vertices when the frontier runs dry (disconnected regions).

    side is modified in place (1 everywhere on entry, 0 for grown vertices).
    Stops early if the complement would drop below max_other_cnt vertices;
    keeps growing past target_w until side 0 has min_cnt vertices."""
    n = xadj.size - 1
    gain = np.empty(n, dtype=np.int64)
    inheap = np.zeros(n, dtype=np.uint8)
    cap = 4 * n + 16
    hk = np.empty(cap, dtype=np.int64)  # negated gain, tie by insertion
    hv = np.empty(cap, dtype=np.int64)
    hsize = 0
    grown_w = np.int64(0)
    grown_cnt = 0
    scan = 0  # next restart candidate

    v = start
    while True:
        # add v to side 0
        side[v] = 0
        grown_w += vwgt[v]
        grown_cnt += 1
        if grown_w >= target_w and grown_cnt >= min_cnt:
            break
        if n - grown_cnt <= max_other_cnt:
            break
        # relax neighbors
        for e in range(xadj[v], xadj[v + 1]):
            u = adjncy[e]
            if side[u] == 0:
                continue
            if inheap[u]:
                gain[u] += 2 * adjwgt[e]
            else:
                # gain = w(into grown side) - w(outside) = 2*w_in - deg_total
                tot = np.int64(0)
                for e2 in range(xadj[u], xadj[u + 1]):
                    tot += adjwgt[e2]
                gain[u] = 2 * adjwgt[e] - tot
                inheap[u] = 1
            if hsize >= cap:
                hk2 = np.empty(cap * 2, dtype=np.int64)
                hv2 = np.empty(cap * 2, dtype=np.int64)
                hk2[:cap] = hk
                hv2[:cap] = hv
                hk = hk2
                hv = hv2
                cap *= 2
            hk[hsize] = -gain[u]
            hv[hsize] = u
            hsize += 1
            _heap_up(hk, hv, hsize - 1)
        # pop next
        v = -1
        while hsize > 0:
            u = hv[0]
            key = hk[0]
            hsize -= 1
            hk[0] = hk[hsize]
            hv[0] = hv[hsize]
            _heap_down(hk, hv, hsize)
            if side[u] == 0 or not inheap[u]:
                continue
            if -key != gain[u]:  # stale entry
                continue
            v = u
            break
        if v < 0:
            # frontier empty: restart from the lowest-ID unreached vertex
            while scan < n and side[scan] == 0:
                scan += 1
            if scan >= n:
                break
            v = scan
    return grown_w


@njit(cache=True, nogil=True)
def refine_2way(xadj, adjncy, adjwgt, vwgt, side, order, w0_arr, bound0, bound1,
                cnt0_arr, min_cnt0, min_cnt1):
    """Sequential 2-way LP refinement pass; moves with positive gain, or zero
    gain toward the lighter side.  Respects per-side weight bounds and keeps
    each side's vertex count above its minimum.  Returns move count."""
    n = xadj.size - 1
    total_w = np.int64(0)
    for v in range(n):
        total_w += vwgt[v]
    moves = 0
    for ii in range(order.size):
        v = order[ii]
        conn = np.int64(0)
        other = np.int64(0)
        s = side[v]
        for e in range(xadj[v], xadj[v + 1]):
            if side[adjncy[e]] == s:
                conn += adjwgt[e]
            else:
                other += adjwgt[e]
        if other < conn:
            continue
        cv = vwgt[v]
        w0 = w0_arr[0]
        cnt0 = cnt0_arr[0]
        if s == 0:
            if cnt0 - 1 < min_cnt0:
                continue
            neww1 = (total_w - w0) + cv
            if neww1 > bound1:
                continue
            if other == conn and not (total_w - w0 < w0):
                continue
            side[v] = 1
            w0_arr[0] = w0 - cv
            cnt0_arr[0] = cnt0 - 1
            moves += 1
        else:
            if (n - cnt0) - 1 < min_cnt1:
                continue
            if w0 + cv > bound0:
                continue
            if other == conn and not (w0 < total_w - w0):
                continue
            side[v] = 0
            w0_arr[0] = w0 + cv
            cnt0_arr[0] = cnt0 + 1
            moves += 1
    return moves


# ---------------------------------------------------------------------------
# random geometric graph cell scan


@njit(cache=True)
def rgg_pairs(xs, ys, cell_id, starts, order, ncy, r2):
    """Enumerate point pairs within distance sqrt(r2) using the cell grid.

    Points are pre-sorted by cell; `starts` gives cell start offsets and
    `order` the original point indices.  Each pair is emitted once."""
    n = xs.size
    cap = max(16, 8 * n)
    out_u = np.empty(cap, dtype=np.int64)
    out_v = np.empty(cap, dtype=np.int64)
    cnt = 0
    ncells = starts.size - 1
    for c in range(ncells):
        a0, a1 = starts[c], starts[c + 1]
        if a0 == a1:
            continue
        cx = c // ncy
        cy = c % ncy
        # forward neighbor cells (half-space) + same cell
        for k in range(5):
            if k == 0:
                d = c
            elif k == 1:
                d = c + 1  # (cx, cy+1)
                if cy + 1 >= ncy:
                    continue
            elif k == 2:
                d = c + ncy - 1  # (cx+1, cy-1)
                if cy == 0:
                    continue
            elif k == 3:
                d = c + ncy  # (cx+1, cy)
            else:
                d = c + ncy + 1  # (cx+1, cy+1)
                if cy + 1 >= ncy:
                    continue
            if d >= ncells:
                continue
            b0, b1 = starts[d], starts[d + 1]
            for i in range(a0, a1):
                j0 = i + 1 if d == c else b0
                for j in range(j0, b1):
                    dx = xs[i] - xs[j]
                    dy = ys[i] - ys[j]
                    if dx * dx + dy * dy <= r2:
                        if cnt >= cap:
                            nu = np.empty(cap * 2, dtype=np.int64)
                            nv = np.empty(cap * 2, dtype=np.int64)
                            nu[:cap] = out_u
                            nv[:cap] = out_v
                            out_u = nu
                            out_v = nv
                            cap *= 2
                        out_u[cnt] = order[i]
                        out_v[cnt] = order[j]
                        cnt += 1
    return out_u[:cnt], out_v[:cnt]

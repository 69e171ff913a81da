"""Graph containers: sequential CSR graphs, per-PE distributed shards, METIS I/O.

Vertices carry positive integer weights, edges positive integer weights.
Global vertex IDs are 64-bit, local (per-PE) IDs are 32-bit indices into the
owned+ghost range of a shard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class MetisParseError(ValueError):
    """Raised on malformed METIS input; message names the offending line."""


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def l_max(total_weight: int, k: int, eps: Fraction, max_vertex_weight: int) -> int:
    """Maximum admissible block weight for a balanced k-way partition.

    max{(1+eps)*c(V)/k, c(V)/k + max_v c(v)}, evaluated in exact rational
    arithmetic and rounded up to an integer.  The second term keeps the
    constraint satisfiable in the presence of heavy vertices.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eps = Fraction(eps)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    a = (1 + eps) * Fraction(total_weight, k)
    b = Fraction(total_weight, k) + max_vertex_weight
    m = max(a, b)
    return ceil_div(m.numerator, m.denominator)


@dataclass
class SeqGraph:
    """Single-address-space CSR graph with vertex and edge weights.

    Adjacency lists are kept sorted by neighbor ID (canonical form); the
    directed-edge multiset is symmetric and free of self-loops.
    """

    xadj: np.ndarray   # int64[n+1]
    adjncy: np.ndarray  # int64[2m]
    adjwgt: np.ndarray  # int64[2m]
    vwgt: np.ndarray   # int64[n]

    @property
    def n(self) -> int:
        return len(self.xadj) - 1

    @property
    def m(self) -> int:
        return len(self.adjncy) // 2

    @property
    def total_weight(self) -> int:
        return int(self.vwgt.sum()) if self.n else 0

    @property
    def max_vertex_weight(self) -> int:
        return int(self.vwgt.max()) if self.n else 0

    def degree(self, v: int) -> int:
        return int(self.xadj[v + 1] - self.xadj[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.adjncy[self.xadj[v]:self.xadj[v + 1]]

    def edge_weights(self, v: int) -> np.ndarray:
        return self.adjwgt[self.xadj[v]:self.xadj[v + 1]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeqGraph):
            return NotImplemented
        return (
            np.array_equal(self.xadj, other.xadj)
            and np.array_equal(self.adjncy, other.adjncy)
            and np.array_equal(self.adjwgt, other.adjwgt)
            and np.array_equal(self.vwgt, other.vwgt)
        )


def seq_graph_from_edges(n: int, u: np.ndarray, v: np.ndarray, w=None, vwgt=None) -> SeqGraph:
    """Build a SeqGraph from undirected edges (each pair given once)."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    if w is None:
        w = np.ones(len(u), dtype=np.int64)
    else:
        w = np.asarray(w, dtype=np.int64)
    if vwgt is None:
        vwgt = np.ones(n, dtype=np.int64)
    else:
        vwgt = np.asarray(vwgt, dtype=np.int64)
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    ww = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, ww = src[order], dst[order], ww[order]
    xadj = np.zeros(n + 1, dtype=np.int64)
    np.add.at(xadj, src + 1, 1)
    np.cumsum(xadj, out=xadj)
    return SeqGraph(xadj=xadj, adjncy=dst, adjwgt=ww, vwgt=vwgt)


def _parse_fmt(fmt: str):
    if not fmt.isdigit() or len(fmt) > 3 or any(c not in "01" for c in fmt):
        raise MetisParseError(f"line 1: unsupported fmt code {fmt!r}")
    fmt = fmt.zfill(3)
    has_vsize = fmt[0] == "1"
    has_vwgt = fmt[1] == "1"
    has_ewgt = fmt[2] == "1"
    return has_vsize, has_vwgt, has_ewgt


def load_metis(path) -> SeqGraph:
    """Parse a METIS graph file.

    Header is "n m [fmt [ncon]]"; adjacency is 1-indexed; '%' lines are
    comments.  Missing weights default to 1.  Self-loops, duplicate edges,
    non-positive weights and asymmetric adjacency are rejected with the
    offending line number.
    """
    with open(path) as f:
        lines = f.readlines()

    header = None
    header_lineno = 0
    data = []  # (lineno, tokens)
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if stripped.startswith("%"):
            continue
        if header is None:
            if not stripped:
                continue
            header = stripped.split()
            header_lineno = lineno
        else:
            data.append((lineno, stripped.split()))

    if header is None:
        raise MetisParseError("empty file: missing header")
    if len(header) < 2 or len(header) > 4:
        raise MetisParseError(f"line {header_lineno}: malformed header {' '.join(header)!r}")
    try:
        n, m = int(header[0]), int(header[1])
    except ValueError:
        raise MetisParseError(f"line {header_lineno}: malformed header {' '.join(header)!r}")
    if n < 0 or m < 0:
        raise MetisParseError(f"line {header_lineno}: negative n or m")
    has_vsize, has_vwgt, has_ewgt = _parse_fmt(header[2]) if len(header) >= 3 else (False, False, False)
    ncon = int(header[3]) if len(header) == 4 else (1 if has_vwgt else 0)
    if has_vwgt and ncon != 1:
        raise MetisParseError(f"line {header_lineno}: multi-constraint vertex weights (ncon={ncon}) unsupported")

    if len(data) < n:
        raise MetisParseError(f"expected {n} vertex lines, found {len(data)}")
    data = data[:n]

    vwgt = np.ones(n, dtype=np.int64)
    adj = {}  # (u, v) -> (weight, lineno), u/v 0-indexed
    per_vertex = [None] * n
    for i, (lineno, toks) in enumerate(data):
        pos = 0
        if has_vsize:
            pos += 1  # vertex size ignored
        if has_vwgt:
            if len(toks) < pos + 1:
                raise MetisParseError(f"line {lineno}: missing vertex weight")
            w = int(toks[pos])
            if w <= 0:
                raise MetisParseError(f"line {lineno}: non-positive vertex weight {w}")
            vwgt[i] = w
            pos += 1
        rest = toks[pos:]
        if has_ewgt:
            if len(rest) % 2 != 0:
                raise MetisParseError(f"line {lineno}: odd number of adjacency tokens with edge weights")
            nbrs = [int(t) for t in rest[0::2]]
            wgts = [int(t) for t in rest[1::2]]
        else:
            nbrs = [int(t) for t in rest]
            wgts = [1] * len(nbrs)
        seen = set()
        pairs = []
        for u1, w in zip(nbrs, wgts):
            if u1 < 1 or u1 > n:
                raise MetisParseError(f"line {lineno}: neighbor {u1} out of range 1..{n}")
            u = u1 - 1
            if u == i:
                raise MetisParseError(f"line {lineno}: self-loop on vertex {i + 1}")
            if u in seen:
                raise MetisParseError(f"line {lineno}: duplicate edge {i + 1}-{u1}")
            if w <= 0:
                raise MetisParseError(f"line {lineno}: non-positive edge weight {w}")
            seen.add(u)
            pairs.append((u, w))
            adj[(i, u)] = (w, lineno)
        per_vertex[i] = pairs

    # symmetry: (u,v) present iff (v,u) present, with equal weight
    for (u, v), (w, lineno) in adj.items():
        back = adj.get((v, u))
        if back is None:
            raise MetisParseError(f"line {lineno}: edge {u + 1}-{v + 1} has no reverse entry")
        if back[0] != w:
            raise MetisParseError(f"line {lineno}: edge {u + 1}-{v + 1} weight mismatch ({w} vs {back[0]})")

    ndir = sum(len(p) for p in per_vertex)
    if ndir != 2 * m:
        raise MetisParseError(f"header claims m={m} but found {ndir} directed edges")

    xadj = np.zeros(n + 1, dtype=np.int64)
    adjncy = np.empty(ndir, dtype=np.int64)
    adjwgt = np.empty(ndir, dtype=np.int64)
    pos = 0
    for i in range(n):
        pairs = sorted(per_vertex[i])
        for u, w in pairs:
            adjncy[pos] = u
            adjwgt[pos] = w
            pos += 1
        xadj[i + 1] = pos
    return SeqGraph(xadj=xadj, adjncy=adjncy, adjwgt=adjwgt, vwgt=vwgt)


def save_metis(g: SeqGraph, path) -> None:
    has_vwgt = bool((g.vwgt != 1).any()) if g.n else False
    has_ewgt = bool((g.adjwgt != 1).any()) if g.m else False
    with open(path, "w") as f:
        if has_vwgt or has_ewgt:
            fmt = "11" if (has_vwgt and has_ewgt) else ("10" if has_vwgt else "001")
            f.write(f"{g.n} {g.m} {fmt}\n")
        else:
            f.write(f"{g.n} {g.m}\n")
        for v in range(g.n):
            toks = []
            if has_vwgt:
                toks.append(str(int(g.vwgt[v])))
            for u, w in zip(g.neighbors(v), g.edge_weights(v)):
                toks.append(str(int(u) + 1))
                if has_ewgt:
                    toks.append(str(int(w)))
            f.write(" ".join(toks) + "\n")


def save_partition(labels: np.ndarray, path) -> None:
    """One 0-indexed block ID per line, in global vertex order."""
    with open(path, "w") as f:
        f.write("\n".join(str(int(b)) for b in labels))
        if len(labels):
            f.write("\n")


def load_partition(path) -> np.ndarray:
    with open(path) as f:
        vals = [int(line) for line in f if line.strip()]
    return np.asarray(vals, dtype=np.int32)


# ---------------------------------------------------------------------------
# distributed shards


def owner_ranges(n: int, P: int) -> np.ndarray:
    """Prefix array: PE p owns global vertices [first[p], first[p+1]).

    Range sizes are ceil(n/P) for the first n mod P PEs, floor(n/P) after.
    """
    base, extra = divmod(n, P)
    sizes = np.full(P, base, dtype=np.int64)
    sizes[:extra] += 1
    first = np.zeros(P + 1, dtype=np.int64)
    np.cumsum(sizes, out=first[1:])
    return first


def owner_of(first: np.ndarray, gid) -> np.ndarray:
    """Owner PE of each global vertex ID, by range lookup."""
    return np.searchsorted(first, gid, side="right") - 1


@dataclass
class DistGraph:
    """One PE's shard of a 1D-partitioned distributed graph.

    Owned vertices occupy local IDs [0, n_owned); ghost replicas of remote
    neighbors follow at [n_owned, n_owned + n_ghost), sorted by global ID.
    Ghosts carry weights but no outgoing edges.  Immutable after
    construction.
    """

    rank: int
    first: np.ndarray        # int64[P+1] shared owner-range prefix
    xadj: np.ndarray         # int64[n_owned+1]
    adjncy: np.ndarray       # int32 local IDs (owned or ghost)
    adjwgt: np.ndarray       # int64
    vwgt: np.ndarray         # int64[n_owned + n_ghost]; ghost weights replicated
    ghost_gid: np.ndarray    # int64[n_ghost], sorted ascending
    n_global: int
    m_global: int
    total_weight: int
    max_vertex_weight: int
    # owned interface bookkeeping: for each owned vertex, the PEs holding it
    # as a ghost (CSR over owned vertices); filled by finalize_holders().
    holder_xadj: np.ndarray = field(default=None, repr=False)
    holder_pes: np.ndarray = field(default=None, repr=False)

    @property
    def P(self) -> int:
        return len(self.first) - 1

    @property
    def first_gid(self) -> int:
        return int(self.first[self.rank])

    @property
    def n_owned(self) -> int:
        return int(self.first[self.rank + 1] - self.first[self.rank])

    @property
    def n_ghost(self) -> int:
        return len(self.ghost_gid)

    @property
    def n_local(self) -> int:
        return self.n_owned + self.n_ghost

    def local_gids(self) -> np.ndarray:
        """Global IDs for all local slots (owned range then ghosts)."""
        return np.concatenate([
            np.arange(self.first_gid, self.first_gid + self.n_owned, dtype=np.int64),
            self.ghost_gid,
        ])

    def to_local(self, gids: np.ndarray) -> np.ndarray:
        """Map known global IDs to local IDs (owned or ghost)."""
        gids = np.asarray(gids, dtype=np.int64)
        out = np.empty(len(gids), dtype=np.int32)
        owned = (gids >= self.first_gid) & (gids < self.first_gid + self.n_owned)
        out[owned] = (gids[owned] - self.first_gid).astype(np.int32)
        rest = ~owned
        if rest.any():
            idx = np.searchsorted(self.ghost_gid, gids[rest])
            if (idx >= self.n_ghost).any() or (self.ghost_gid[idx.clip(max=max(self.n_ghost - 1, 0))] != gids[rest]).any():
                raise KeyError("global ID not known on this PE")
            out[rest] = (self.n_owned + idx).astype(np.int32)
        return out

    def to_global(self, locals_: np.ndarray) -> np.ndarray:
        locals_ = np.asarray(locals_)
        out = np.empty(len(locals_), dtype=np.int64)
        owned = locals_ < self.n_owned
        out[owned] = locals_[owned] + self.first_gid
        out[~owned] = self.ghost_gid[locals_[~owned] - self.n_owned]
        return out

    def ghost_owners(self) -> np.ndarray:
        return owner_of(self.first, self.ghost_gid).astype(np.int32)

    def degrees(self) -> np.ndarray:
        return self.xadj[1:] - self.xadj[:-1]


def build_shard(g: SeqGraph, first: np.ndarray, rank: int, m_global=None,
                total_weight=None, max_vertex_weight=None) -> DistGraph:
    """Slice one PE's shard out of a full SeqGraph (no communication)."""
    lo, hi = int(first[rank]), int(first[rank + 1])
    xadj = (g.xadj[lo:hi + 1] - g.xadj[lo]).copy()
    adj_g = g.adjncy[g.xadj[lo]:g.xadj[hi]]
    adjw = g.adjwgt[g.xadj[lo]:g.xadj[hi]].copy()
    outside = (adj_g < lo) | (adj_g >= hi)
    ghost_gid = np.unique(adj_g[outside])
    adjncy = np.empty(len(adj_g), dtype=np.int32)
    inside = ~outside
    adjncy[inside] = (adj_g[inside] - lo).astype(np.int32)
    if outside.any():
        adjncy[outside] = ((hi - lo) + np.searchsorted(ghost_gid, adj_g[outside])).astype(np.int32)
    vwgt = np.concatenate([g.vwgt[lo:hi], g.vwgt[ghost_gid]]).astype(np.int64)
    return DistGraph(
        rank=rank, first=first, xadj=xadj, adjncy=adjncy, adjwgt=adjw,
        vwgt=vwgt, ghost_gid=ghost_gid,
        n_global=g.n, m_global=g.m if m_global is None else m_global,
        total_weight=g.total_weight if total_weight is None else total_weight,
        max_vertex_weight=g.max_vertex_weight if max_vertex_weight is None else max_vertex_weight,
    )


def distribute(g: SeqGraph, P: int) -> list[DistGraph]:
    """Split a SeqGraph into P shards over consecutive balanced vertex ranges.

    Surplus PEs (P > n) own empty ranges.  Ghosts are materialized for all
    cross-PE neighbors; holder lists are filled so owners know which PEs
    replicate each of their vertices.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    first = owner_ranges(g.n, P)
    shards = [build_shard(g, first, p) for p in range(P)]
    # holder lists, computed directly from the full graph
    holders = [[[] for _ in range(s.n_owned)] for s in shards]
    for p, s in enumerate(shards):
        own = owner_of(first, s.ghost_gid)
        for gid, o in zip(s.ghost_gid, own):
            holders[o][int(gid - first[o])].append(p)
    for p, s in enumerate(shards):
        hx = np.zeros(s.n_owned + 1, dtype=np.int64)
        flat = []
        for v in range(s.n_owned):
            flat.extend(holders[p][v])
            hx[v + 1] = len(flat)
        s.holder_xadj = hx
        s.holder_pes = np.asarray(flat, dtype=np.int32)
    return shards


def gather_pieces(shard: DistGraph) -> tuple:
    """This PE's contribution to an all-gather of the full graph."""
    adj_g = shard.to_global(shard.adjncy) if len(shard.adjncy) else np.empty(0, dtype=np.int64)
    return (shard.xadj[1:] - shard.xadj[:-1], adj_g, shard.adjwgt, shard.vwgt[:shard.n_owned])


def assemble_graph(pieces: list[tuple]) -> SeqGraph:
    """Rebuild the full SeqGraph from per-PE pieces in rank order."""
    degs = np.concatenate([p[0] for p in pieces])
    adjncy = np.concatenate([p[1] for p in pieces])
    adjwgt = np.concatenate([p[2] for p in pieces])
    vwgt = np.concatenate([p[3] for p in pieces])
    n = len(degs)
    xadj = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(degs, out=xadj[1:])
    return SeqGraph(xadj=xadj, adjncy=adjncy.astype(np.int64), adjwgt=adjwgt.astype(np.int64),
                    vwgt=vwgt.astype(np.int64))


def edge_cut_seq(g: SeqGraph, labels: np.ndarray) -> int:
    """Total weight of edges whose endpoints lie in different blocks."""
    if g.n == 0:
        return 0
    labels = np.asarray(labels)
    src = np.repeat(np.arange(g.n, dtype=np.int64), g.xadj[1:] - g.xadj[:-1])
    cross = labels[src] != labels[g.adjncy]
    return int(g.adjwgt[cross].sum()) // 2


def edge_cut_local(shard: DistGraph, labels: np.ndarray) -> int:
    """This PE's cut contribution; each undirected edge counted once via the
    tie-break gid(u) < gid(v)."""
    if shard.n_owned == 0:
        return 0
    src = np.repeat(np.arange(shard.n_owned, dtype=np.int64),
                    shard.xadj[1:] - shard.xadj[:-1])
    dst = shard.adjncy
    gid_src = src + shard.first_gid
    gid_dst = shard.to_global(dst)
    mask = (labels[src] != labels[dst]) & (gid_src < gid_dst)
    return int(shard.adjwgt[mask].sum())


def block_weights_local(shard: DistGraph, labels: np.ndarray, k: int) -> np.ndarray:
    """Sum of owned vertex weights per block (local contribution)."""
    bw = np.zeros(k, dtype=np.int64)
    if shard.n_owned:
        np.add.at(bw, labels[:shard.n_owned], shard.vwgt[:shard.n_owned])
    return bw

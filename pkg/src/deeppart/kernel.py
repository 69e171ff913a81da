"""Deterministic message-passing kernel over logical PEs.

PEs are logical execution contexts (one thread each) inside the process,
communicating only through the collectives below.  Every collective is a
bulk-synchronous rendezvous: all group members deposit their contribution,
a barrier makes deposits visible, results are computed deterministically
from the rank-ordered slots.  A schedule checker verifies that every PE
reaches each collective call site with a matching call index, so mismatched
schedules fail fast instead of deadlocking.

Sparse all-to-all supports two routing modes with identical delivery
semantics: `direct` (one hop) and `grid` (two hops through a ceil(sqrt(P))
-column grid, O(sqrt(P)) neighbors per phase).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(RuntimeError):
    """A PE invoked a collective out of step with its group."""


class PEAborted(RuntimeError):
    """Another PE failed; this PE's barriers were torn down."""


@dataclass
class TraceCounters:
    """Per-PE message/byte counters, keyed by collective name."""

    msgs: int = 0
    bytes: int = 0
    by_op: dict = field(default_factory=dict)

    def add(self, op: str, msgs: int, nbytes: int) -> None:
        self.msgs += msgs
        self.bytes += nbytes
        m, b = self.by_op.get(op, (0, 0))
        self.by_op[op] = (m + msgs, b + nbytes)

    def merge(self, other: "TraceCounters") -> None:
        self.msgs += other.msgs
        self.bytes += other.bytes
        for op, (m, b) in other.by_op.items():
            sm, sb = self.by_op.get(op, (0, 0))
            self.by_op[op] = (sm + m, sb + b)


class _GroupState:
    """Shared rendezvous state for one PE group."""

    def __init__(self, size: int, runtime: "Runtime"):
        self.size = size
        self.barrier = threading.Barrier(size)
        self.slots = [None] * size
        self.ops = [None] * size
        self.result = None
        self.runtime = runtime
        runtime.register(self)


class Runtime:
    """Registry of live barriers so one PE's failure releases all others."""

    def __init__(self, timeout: float = 600.0):
        self.timeout = timeout
        self._states = []
        self._lock = threading.Lock()
        self.failure = None

    def register(self, st: _GroupState) -> None:
        with self._lock:
            self._states.append(st)

    def abort_all(self, exc: BaseException) -> None:
        with self._lock:
            if self.failure is None:
                self.failure = exc
            for st in self._states:
                st.barrier.abort()


class PEGroup:
    """This PE's handle to a contiguous group of logical PEs.

    Collectives must be invoked by every member in the same order; the
    per-group round counter tags each call for the schedule checker.
    """

    def __init__(self, state: _GroupState, rank: int, world_rank: int,
                 world_size: int, base_world_rank: int, counters: TraceCounters):
        self._state = state
        self.rank = rank
        self.world_rank = world_rank
        self.world_size = world_size
        self.base_world_rank = base_world_rank
        self.counters = counters
        self.call_index = 0

    @property
    def size(self) -> int:
        return self._state.size

    # -- rendezvous plumbing -------------------------------------------------

    def _wait(self):
        try:
            self._state.barrier.wait(timeout=self._state.runtime.timeout)
        except threading.BrokenBarrierError:
            raise PEAborted("peer PE failed or rendezvous timed out") from None

    def _deposit(self, op: str, payload):
        st = self._state
        st.slots[self.rank] = payload
        st.ops[self.rank] = (op, self.call_index)
        self.call_index += 1
        self._wait()
        mine = st.ops[self.rank]
        for r in range(st.size):
            if st.ops[r] != mine:
                st.runtime.abort_all(ScheduleError(
                    f"collective mismatch: rank {self.rank} called {mine}, "
                    f"rank {r} called {st.ops[r]}"))
                raise ScheduleError(
                    f"collective mismatch: rank {self.rank} called {mine}, "
                    f"rank {r} called {st.ops[r]}")
        return st

    def _allcompute(self, op: str, payload, reader):
        """All ranks compute identically from the rank-ordered slots."""
        st = self._deposit(op, payload)
        res = reader(st.slots)
        self._wait()
        return res

    def _rootcompute(self, op: str, payload, rootfn):
        """Rank 0 computes st.result from the slots; all ranks return it."""
        st = self._deposit(op, payload)
        if self.rank == 0:
            st.result = rootfn(st.slots)
        self._wait()
        return st.result

    # -- collectives ----------------------------------------------------------

    def barrier(self) -> None:
        self._allcompute("barrier", None, lambda slots: None)

    def broadcast(self, obj=None, root: int = 0):
        res = self._allcompute("broadcast", obj if self.rank == root else None,
                               lambda slots: slots[root])
        if self.rank == root and self.size > 1:
            self.counters.add("broadcast", self.size - 1, _nbytes(obj) * (self.size - 1))
        return res

    def all_gather(self, obj) -> list:
        res = self._allcompute("all_gather", obj, list)
        if self.size > 1:
            self.counters.add("all_gather", _log2ceil(self.size), _nbytes(obj) * (self.size - 1))
        return res

    def gather(self, obj, root: int = 0):
        res = self._allcompute("gather", obj, list)
        if self.rank != root:
            self.counters.add("gather", 1, _nbytes(obj))
        return res if self.rank == root else None

    def allreduce_sum(self, values: np.ndarray) -> np.ndarray:
        """Elementwise sum of equal-length vectors; identical on all PEs."""
        values = np.asarray(values)

        def reader(slots):
            length = len(slots[0])
            for s in slots:
                if len(s) != length:
                    raise ValueError("allreduce_sum length mismatch across PEs")
            out = np.zeros_like(slots[0])
            for s in slots:
                out = out + s
            return out

        res = self._allcompute("allreduce_sum", values, reader)
        if self.size > 1:
            self.counters.add("allreduce", 2 * _log2ceil(self.size),
                              2 * values.nbytes * _log2ceil(self.size) if hasattr(values, "nbytes") else 0)
        return res

    def allreduce_max(self, value: int) -> int:
        res = self._allcompute("allreduce_max", value, max)
        if self.size > 1:
            self.counters.add("allreduce", 2 * _log2ceil(self.size), 16)
        return res

    def tree_reduce(self, local, merge):
        """Fold per-PE values at rank 0 along the fixed pairing tree.

        Merge order is pairs (0,1),(2,3),... then recursively on the
        winners, independent of timing.  Only rank 0 receives the result.
        """

        def rootfn(slots):
            vals = list(slots)
            stride = 1
            while stride < len(vals):
                for i in range(0, len(vals), 2 * stride):
                    j = i + stride
                    if j < len(vals):
                        vals[i] = merge(vals[i], vals[j])
                stride *= 2
            return vals[0]

        res = self._rootcompute("tree_reduce", local, rootfn)
        if self.rank != 0:
            self.counters.add("tree_reduce", 1, _nbytes(local))
        return res if self.rank == 0 else None

    def split(self, parts: int) -> "PEGroup":
        """Split into `parts` contiguous equal sub-groups; returns this PE's."""
        if parts < 1 or self.size % parts != 0:
            raise ValueError(f"parts={parts} does not divide group size {self.size}")
        sub_size = self.size // parts

        def rootfn(_slots):
            return [_GroupState(sub_size, self._state.runtime) for _ in range(parts)]

        states = self._rootcompute("split", None, rootfn)
        which = self.rank // sub_size
        return PEGroup(
            states[which],
            rank=self.rank % sub_size,
            world_rank=self.world_rank,
            world_size=self.world_size,
            base_world_rank=self.base_world_rank + which * sub_size,
            counters=self.counters,
        )

    # -- sparse all-to-all ----------------------------------------------------

    def sparse_all_to_all(self, batch: dict, mode: str = "direct") -> dict:
        """Deliver per-destination record arrays; returns dict src -> records.

        `batch` maps destination rank -> 2D int64 array (one record per row).
        Delivery preserves per-(source, destination) order and annotates
        records with their source rank.  Grid mode routes each record at most
        twice (column hop to the destination's row, then a row hop) and
        yields exactly the same received arrays as direct mode.
        """
        for d in batch:
            if not (0 <= d < self.size):
                raise ValueError(f"destination {d} outside group of size {self.size}")
        if mode == "direct":
            return self._a2a_direct(batch)
        if mode == "grid":
            return self._a2a_grid(batch)
        raise ValueError(f"unknown all-to-all mode {mode!r}")

    def _count_sends(self, op: str, batch: dict) -> None:
        msgs = 0
        nbytes = 0
        for d, arr in batch.items():
            if d != self.rank and len(arr):
                msgs += 1
                nbytes += arr.nbytes
        if msgs:
            self.counters.add(op, msgs, nbytes)

    def _a2a_direct(self, batch: dict) -> dict:
        self._count_sends("a2a_direct", batch)

        def reader(slots):
            out = {}
            for src in range(self.size):
                arr = slots[src].get(self.rank) if slots[src] else None
                if arr is not None and len(arr):
                    out[src] = arr.copy()
            return out

        return self._allcompute("a2a", batch, reader)

    def _grid_shape(self) -> tuple[int, int]:
        cols = math.isqrt(self.size)
        if cols * cols < self.size:
            cols += 1
        rows = -(-self.size // cols)
        return rows, cols

    def grid_route(self, src: int, dst: int) -> int:
        """Intermediate PE for src -> dst in grid mode (may equal dst)."""
        rows, cols = self._grid_shape()
        mid = (dst // cols) * cols + (src % cols)
        return mid if mid < self.size else dst

    def _a2a_grid(self, batch: dict) -> dict:
        n_empty = np.empty((0, 0), dtype=np.int64)
        # envelope rows: [final_dst, orig_src, payload...]
        width = max((a.shape[1] for a in batch.values() if a.ndim == 2), default=0)
        hop1 = {}
        for d in sorted(batch):
            arr = batch[d]
            if not len(arr):
                continue
            env = np.empty((len(arr), arr.shape[1] + 2), dtype=np.int64)
            env[:, 0] = d
            env[:, 1] = self.rank
            env[:, 2:] = arr
            mid = self.grid_route(self.rank, d)
            if mid in hop1:
                hop1[mid] = np.vstack([hop1[mid], env])
            else:
                hop1[mid] = env

        self._count_sends("a2a_grid", hop1)

        def reader1(slots):
            parts = [slots[src][self.rank] for src in range(self.size)
                     if slots[src] and self.rank in slots[src]]
            return np.vstack(parts) if parts else n_empty

        transit = self._allcompute("a2a_grid1", hop1, reader1)

        hop2 = {}
        if len(transit):
            order = np.argsort(transit[:, 0], kind="stable")
            transit = transit[order]
            dsts, starts = np.unique(transit[:, 0], return_index=True)
            bounds = np.append(starts, len(transit))
            for i, d in enumerate(dsts):
                hop2[int(d)] = transit[bounds[i]:bounds[i + 1]]

        self._count_sends("a2a_grid", hop2)

        def reader2(slots):
            parts = [slots[src][self.rank] for src in range(self.size)
                     if slots[src] and self.rank in slots[src]]
            if not parts:
                return {}
            env = np.vstack(parts)
            order = np.argsort(env[:, 1], kind="stable")
            env = env[order]
            srcs, starts = np.unique(env[:, 1], return_index=True)
            bounds = np.append(starts, len(env))
            out = {}
            for i, s in enumerate(srcs):
                out[int(s)] = env[bounds[i]:bounds[i + 1], 2:].copy()
            return out

        return self._allcompute("a2a_grid2", hop2, reader2)


def _nbytes(obj) -> int:
    if obj is None:
        return 0
    if hasattr(obj, "nbytes"):
        return obj.nbytes
    if isinstance(obj, (list, tuple)):
        return sum(_nbytes(x) for x in obj)
    return 8


def _log2ceil(x: int) -> int:
    return max(1, (x - 1).bit_length())


def run_pes(n_pes: int, fn, timeout: float = 600.0):
    """Run fn(group) on n_pes logical PEs; returns (results, counters) in rank order.

    n_pes == 1 executes inline; otherwise one thread per PE.  If any PE
    raises, all barriers are torn down and the first failure is re-raised.
    """
    runtime = Runtime(timeout=timeout)
    world = _GroupState(n_pes, runtime)
    counters = [TraceCounters() for _ in range(n_pes)]
    groups = [PEGroup(world, rank=r, world_rank=r, world_size=n_pes,
                      base_world_rank=0, counters=counters[r])
              for r in range(n_pes)]

    if n_pes == 1:
        return [fn(groups[0])], counters

    results = [None] * n_pes

    def work(rank):
        try:
            results[rank] = fn(groups[rank])
        except PEAborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - must release peers
            runtime.abort_all(exc)

    threads = [threading.Thread(target=work, args=(r,), name=f"pe-{r}") for r in range(n_pes)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if runtime.failure is not None:
        raise runtime.failure
    return results, counters

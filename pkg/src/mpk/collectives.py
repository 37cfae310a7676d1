"""Collective operations composed from point-to-point messages.

Every collective is a linear, rank-ordered composition of sends and receives
carried in a separate matching context, so user wildcard receives never see
collective traffic. Linear fan-in/fan-out is O(p) per call, which is fine for
desk-scale worlds, and keeps results deterministic: reductions fold the
contributions in ascending rank order.

All collectives must be called by every rank of the communicator, in the
same order. Inputs that only matter at the root (``bcast``, ``scatter``) are
ignored elsewhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .runtime import Comm, InvalidRank, Payload, waitall

_BARRIER, _BCAST, _SCATTER, _GATHER, _ALLTOALL, _REDUCE = range(100, 106)


class LengthMismatch(ValueError):
    pass


class KindMismatch(TypeError):
    pass


class ReduceOp(enum.Enum):
    SUM = "sum"
    MAX = "max"
    MIN = "min"

    def combine(self, acc: np.ndarray, item: np.ndarray) -> np.ndarray:
        if self is ReduceOp.SUM:
            return acc + item
        if self is ReduceOp.MAX:
            return np.maximum(acc, item)
        return np.minimum(acc, item)


SUM, MAX, MIN = ReduceOp.SUM, ReduceOp.MAX, ReduceOp.MIN


@dataclass(frozen=True)
class CountsDispls:
    """Per-rank element counts and offsets into an assembled buffer."""

    counts: tuple[int, ...]
    displs: tuple[int, ...]

    def __init__(self, counts: Sequence[int], displs: Optional[Sequence[int]] = None):
        counts = tuple(int(c) for c in counts)
        if displs is None:
            displs = tuple(int(x) for x in np.concatenate([[0], np.cumsum(counts)[:-1]]))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "displs", tuple(int(d) for d in displs))

    @property
    def extent(self) -> int:
        return max((d + c for c, d in zip(self.counts, self.displs)), default=0)

    def validate(self, size: int, buffer_len: Optional[int] = None) -> None:
        if len(self.counts) != size or len(self.displs) != size:
            raise LengthMismatch(f"counts/displs must have {size} entries")
        if any(c < 0 for c in self.counts) or any(d < 0 for d in self.displs):
            raise LengthMismatch("counts and displacements must be non-negative")
        limit = self.extent if buffer_len is None else buffer_len
        spans = sorted((d, d + c) for c, d in zip(self.counts, self.displs) if c)
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1:
                raise LengthMismatch(f"segments [{a0},{a1}) and [{b0},..) overlap")
        if spans and spans[-1][1] > limit:
            raise LengthMismatch(f"segment ends at {spans[-1][1]} beyond buffer of {limit}")


def _check_root(comm: Comm, root: int) -> None:
    if not 0 <= root < comm.size:
        raise InvalidRank(f"root {root} outside [0, {comm.size})")


def _as_vector(data: Any) -> np.ndarray:
    payload = Payload.from_value(data)
    if payload.kind == "bytes":
        raise KindMismatch("vector collectives need float64 or int64 data")
    return payload.value()


def barrier(comm: Comm) -> None:
    """Return only after every rank has entered."""
    c = comm.collective_view()
    with comm._timed():
        if c.size == 1:
            return
        if c.rank == 0:
            for r in range(1, c.size):
                c.recv(r, _BARRIER)
            for r in range(1, c.size):
                c.send(b"", r, _BARRIER)
        else:
            c.send(b"", 0, _BARRIER)
            c.recv(0, _BARRIER)


def bcast(comm: Comm, data: Any = None, root: int = 0) -> Any:
    _check_root(comm, root)
    c = comm.collective_view()
    with comm._timed():
        if c.rank == root:
            # validates and copies once; every destination gets its own copy
            payload = Payload.from_value(data)
            reqs = [c.isend(payload.data, r, _BCAST) for r in range(c.size) if r != root]
            waitall(reqs)
            return payload.value()
        return c.recv(root, _BCAST)


def scatter(comm: Comm, data: Any = None, root: int = 0) -> np.ndarray:
    """Rank ``r`` receives elements ``[r*k, (r+1)*k)`` of the root's buffer."""
    _check_root(comm, root)
    c = comm.collective_view()
    with comm._timed():
        if c.rank == root:
            buf = _as_vector(data)
            if len(buf) % c.size:
                raise LengthMismatch(f"{len(buf)} elements do not split over {c.size} ranks")
            k = len(buf) // c.size
            reqs = [c.isend(buf[r * k:(r + 1) * k], r, _SCATTER)
                    for r in range(c.size) if r != root]
            waitall(reqs)
            return buf[root * k:(root + 1) * k].copy()
        return c.recv(root, _SCATTER)


def _gather_parts(c: Comm, local: np.ndarray, root: int,
                  tag: int = _GATHER) -> Optional[list[np.ndarray]]:
    if c.rank != root:
        c.send(local, root, tag)
        return None
    return [local if r == root else c.recv(r, tag) for r in range(c.size)]


def gather(comm: Comm, data: Any, root: int = 0) -> Optional[np.ndarray]:
    """Concatenate equal-length contributions in rank order at ``root``."""
    _check_root(comm, root)
    c = comm.collective_view()
    local = _as_vector(data)
    with comm._timed():
        parts = _gather_parts(c, local, root)
        if parts is None:
            return None
        if len({len(p) for p in parts}) > 1:
            raise LengthMismatch(f"gather contributions differ in length: {[len(p) for p in parts]}")
        if len({p.dtype for p in parts}) > 1:
            raise KindMismatch("gather contributions differ in kind")
        return np.concatenate(parts)


def _assemble(parts: list[np.ndarray], cd: CountsDispls, size: int) -> np.ndarray:
    cd.validate(size)
    # empty contributions carry no data, so their kind is not checked
    filled = [p for p in parts if len(p)] or parts
    dtypes = {p.dtype for p in filled}
    if len(dtypes) > 1:
        raise KindMismatch(f"contributions differ in kind: {sorted(map(str, dtypes))}")
    out = np.zeros(cd.extent, dtype=filled[0].dtype)
    for r, part in enumerate(parts):
        if len(part) != cd.counts[r]:
            raise LengthMismatch(f"rank {r} sent {len(part)} elements, expected {cd.counts[r]}")
        out[cd.displs[r]:cd.displs[r] + cd.counts[r]] = part
    return out


def gatherv(comm: Comm, data: Any, cd: CountsDispls, root: int = 0) -> Optional[np.ndarray]:
    """Place rank ``r``'s data at ``[displs[r], displs[r] + counts[r])`` of the root buffer.

    Slots not covered by any segment are zero.
    """
    _check_root(comm, root)
    c = comm.collective_view()
    local = _as_vector(data)
    if len(local) != cd.counts[c.rank]:
        raise LengthMismatch(
            f"rank {c.rank} contributes {len(local)} elements, counts say {cd.counts[c.rank]}")
    with comm._timed():
        parts = _gather_parts(c, local, root)
        if parts is None:
            return None
        return _assemble(parts, cd, c.size)


def allgather(comm: Comm, data: Any) -> np.ndarray:
    with comm._timed():
        return bcast(comm, gather(comm, data, root=0), root=0)


def allgatherv(comm: Comm, data: Any, cd: CountsDispls) -> np.ndarray:
    with comm._timed():
        return bcast(comm, gatherv(comm, data, cd, root=0), root=0)


def alltoall(comm: Comm, data: Any) -> np.ndarray:
    """Segment ``j`` of rank ``i`` becomes segment ``i`` of rank ``j``."""
    buf = _as_vector(data)
    size = comm.size
    if len(buf) % size:
        raise LengthMismatch(f"{len(buf)} elements do not split over {size} ranks")
    k = len(buf) // size
    cd = CountsDispls([k] * size)
    return alltoallv(comm, buf, cd, cd)


def alltoallv(comm: Comm, data: Any, send: CountsDispls, recv: CountsDispls) -> np.ndarray:
    """General personalised exchange.

    ``send`` describes which slice of the local buffer goes to each
    destination, ``recv`` where each source's slice lands in the result. The
    count rank ``i`` sends to ``j`` must equal the count ``j`` expects from
    ``i``; violations raise ``LengthMismatch`` at the receiver.
    """
    c = comm.collective_view()
    buf = _as_vector(data)
    send.validate(c.size, len(buf))
    recv.validate(c.size)
    with comm._timed():
        reqs = [c.isend(buf[send.displs[j]:send.displs[j] + send.counts[j]], j, _ALLTOALL)
                for j in range(c.size)]
        parts = [c.recv(i, _ALLTOALL) for i in range(c.size)]
        waitall(reqs)
    return _assemble(parts, recv, c.size)


def reduce(comm: Comm, data: Any, op: ReduceOp = SUM, root: int = 0) -> Optional[np.ndarray]:
    """Elementwise combination at ``root``, folded left in ascending rank order."""
    _check_root(comm, root)
    c = comm.collective_view()
    local = _as_vector(data)
    with comm._timed():
        parts = _gather_parts(c, local, root, _REDUCE)
    if parts is None:
        return None
    if len({p.dtype for p in parts}) > 1:
        raise KindMismatch(f"reduce contributions differ in kind: {[str(p.dtype) for p in parts]}")
    if len({len(p) for p in parts}) > 1:
        raise LengthMismatch(f"reduce contributions differ in length: {[len(p) for p in parts]}")
    acc = parts[0].copy()
    for part in parts[1:]:
        acc = op.combine(acc, part)
    return acc


def allreduce(comm: Comm, data: Any, op: ReduceOp = SUM) -> np.ndarray:
    with comm._timed():
        return bcast(comm, reduce(comm, data, op, root=0), root=0)

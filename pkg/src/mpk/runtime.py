"""In-process message-passing runtime.

A *world* is ``world_size`` virtual ranks, each running the same program in
its own thread of one host process. Ranks share nothing but their mailboxes;
every payload is copied at send time.

Point-to-point delivery follows the usual two-queue model. Each mailbox has a
list of *posted* receives and a FIFO of *unexpected* messages. An incoming
message first tries the posted receives in posting order; a receive first
scans the unexpected queue in arrival order. Wildcards ``ANY_SOURCE`` and
``ANY_TAG`` are accepted on the receive side.

Two protocols are used:

* eager (``nbytes <= eager_threshold``): the payload is buffered at the
  receiver and the send completes immediately;
* rendezvous: only the envelope is queued and the sender stays pending until
  a matching receive takes it.

If eager buffering would exceed the receiver's mailbox capacity the send is
degraded to rendezvous instead of failing.

All mailbox state is guarded by a single world lock. That makes quiescence
easy to observe: a deadlock is declared when every live rank is blocked and
each of them re-checked its wake-up condition after the last state change.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
import os
import threading
import time
import traceback
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from .metrics import TimingBreakdown

log = logging.getLogger(__name__)

ANY_SOURCE = -1
ANY_TAG = -1

DEFAULT_EAGER_THRESHOLD = 65536
DEFAULT_MAILBOX_CAPACITY = 16 * 1024 * 1024
EAGER_THRESHOLD_ENV = "MPK_EAGER_THRESHOLD"

# message contexts keep library traffic apart from user point-to-point traffic
USER_CONTEXT = 0
COLLECTIVE_CONTEXT = 1


class RuntimeFailure(RuntimeError):
    """Base class for failures of a world execution."""


class InvalidRank(ValueError):
    pass


class HandleAlreadyConsumed(RuntimeError):
    pass


class BufferLimitExceeded(RuntimeFailure):
    """Eager buffering would overflow the receiver's mailbox.

    Never propagated to programs: the runtime records the event and falls back
    to rendezvous. Instances are kept in ``WorldResult.overflows``.
    """


class DeadlockDetected(RuntimeFailure):
    def __init__(self, blocked: dict[int, str]):
        self.blocked = dict(sorted(blocked.items()))
        sites = "; ".join(f"rank {r}: {s}" for r, s in self.blocked.items())
        super().__init__(f"all ranks blocked with no message in flight ({sites})")


class RankPanicked(RuntimeFailure):
    def __init__(self, rank: int, exc: BaseException):
        self.rank = rank
        self.exc = exc
        super().__init__(f"rank {rank} failed: {type(exc).__name__}: {exc}")


class _WorldAborted(BaseException):
    """Unwinds surviving ranks after another rank panicked."""


class Protocol(enum.Enum):
    EAGER = "eager"
    RENDEZVOUS = "rendezvous"


class RequestState(enum.Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    CONSUMED = "consumed"


def eager_threshold_from_env(default: float = DEFAULT_EAGER_THRESHOLD) -> float:
    raw = os.environ.get(EAGER_THRESHOLD_ENV)
    if raw is None or raw.strip() == "":
        return default
    return parse_threshold(raw)


def parse_threshold(raw: str) -> float:
    """Parse a byte count; ``inf`` disables rendezvous entirely."""
    text = raw.strip().lower()
    if text in ("inf", "infinity", "unlimited"):
        return math.inf
    value = int(text)
    if value < 0:
        raise ValueError(f"eager threshold must be >= 0, got {value}")
    return value


def wtime() -> float:
    """Wall-clock seconds from the host monotonic clock."""
    return time.perf_counter()


@dataclass(frozen=True)
class Envelope:
    source: int
    dest: int
    tag: int
    length: int
    protocol: Protocol
    context: int = USER_CONTEXT


@dataclass(frozen=True)
class Payload:
    """Owned copy of message data: a float64/int64 vector or raw bytes."""

    kind: str
    data: Any

    KINDS = ("float64", "int64", "bytes")

    @classmethod
    def from_value(cls, value: Any) -> "Payload":
        if isinstance(value, (bytes, bytearray, memoryview)):
            return cls("bytes", bytes(value))
        arr = np.asarray(value)
        if arr.dtype.kind == "f":
            arr = np.array(arr, dtype=np.float64, copy=True)
        elif arr.dtype.kind in "iub":
            arr = np.array(arr, dtype=np.int64, copy=True)
        else:
            raise TypeError(f"unsupported payload type {arr.dtype!r}")
        arr = arr.reshape(-1)
        arr.setflags(write=False)
        return cls(str(arr.dtype), arr)

    @property
    def nbytes(self) -> int:
        return len(self.data) if self.kind == "bytes" else int(self.data.nbytes)

    def value(self) -> Any:
        """A fresh, writable copy for the receiving rank."""
        return self.data if self.kind == "bytes" else self.data.copy()


@dataclass
class Status:
    source: int = ANY_SOURCE
    tag: int = ANY_TAG
    nbytes: int = 0
    protocol: Optional[Protocol] = None


class Request:
    """Handle for a non-blocking send or receive.

    Owned by the rank that created it; not to be shared across ranks.
    """

    _ids = itertools.count()

    def __init__(self, comm: "Comm", kind: str, source: int = ANY_SOURCE,
                 tag: int = ANY_TAG, context: int = USER_CONTEXT):
        self.id = next(Request._ids)
        self.kind = kind
        self.state = RequestState.PENDING
        self._comm = comm
        self._source = source
        self._tag = tag
        self._context = context
        self._payload: Optional[Payload] = None
        self._envelope: Optional[Envelope] = None

    def __repr__(self) -> str:
        return f"<Request {self.id} {self.kind} {self.state.value}>"

    def _matches(self, env: Envelope) -> bool:
        return (
            env.context == self._context
            and (self._source == ANY_SOURCE or self._source == env.source)
            and (self._tag == ANY_TAG or self._tag == env.tag)
        )

    def _complete(self, payload: Optional[Payload] = None,
                  envelope: Optional[Envelope] = None) -> None:
        self._payload = payload
        self._envelope = envelope
        self.state = RequestState.COMPLETE

    def _consume(self, status: Optional[Status]) -> Any:
        self.state = RequestState.CONSUMED
        if status is not None and self._envelope is not None:
            env = self._envelope
            status.source, status.tag = env.source, env.tag
            status.nbytes, status.protocol = env.length, env.protocol
        if self.kind == "recv":
            return self._payload.value()
        return None

    def wait(self, status: Optional[Status] = None) -> Any:
        """Block until complete; return the received data (``None`` for sends)."""
        comm = self._comm
        with comm._timed():
            with comm._world.cond:
                if self.state is RequestState.CONSUMED:
                    raise HandleAlreadyConsumed(repr(self))
                comm._block_until(lambda: self.state is RequestState.COMPLETE,
                                  f"wait({self.kind} req {self.id})")
                return self._consume(status)

    def test(self, status: Optional[Status] = None) -> tuple[bool, Any]:
        """Never blocks. ``(True, data)`` once complete, else ``(False, None)``."""
        with self._comm._world.cond:
            if self.state is RequestState.CONSUMED:
                raise HandleAlreadyConsumed(repr(self))
            if self.state is RequestState.PENDING:
                return False, None
            return True, self._consume(status)


def waitall(requests: list[Request]) -> list[Any]:
    return [req.wait() for req in requests]


@dataclass
class _Message:
    envelope: Envelope
    payload: Payload
    send_request: Optional[Request] = None  # set for rendezvous


@dataclass
class _Mailbox:
    capacity: float
    unexpected: deque = field(default_factory=deque)
    posted: list = field(default_factory=list)
    buffered_bytes: int = 0

    def take_posted(self, env: Envelope) -> Optional[Request]:
        for i, req in enumerate(self.posted):
            if req._matches(env):
                return self.posted.pop(i)
        return None

    def take_unexpected(self, req: Request) -> Optional[_Message]:
        for i, msg in enumerate(self.unexpected):
            if req._matches(msg.envelope):
                del self.unexpected[i]
                if msg.envelope.protocol is Protocol.EAGER:
                    self.buffered_bytes -= msg.envelope.length
                return msg
        return None


@dataclass
class _RankClock:
    inside: float = 0.0
    idle: float = 0.0
    depth: int = 0


class _World:
    _ids = itertools.count()

    def __init__(self, size: int, eager_threshold: float, capacity: float, trace: bool):
        self.id = next(_World._ids)
        self.size = size
        self.eager_threshold = eager_threshold
        self.cond = threading.Condition(threading.Lock())
        self.boxes = [_Mailbox(capacity) for _ in range(size)]
        self.blocked: dict[int, str] = {}
        self.alive = size
        self.deadlock: Optional[DeadlockDetected] = None
        self.panic: Optional[RankPanicked] = None
        self.sent = 0
        self.received = 0
        self.overflows: list[BufferLimitExceeded] = []
        self.trace: Optional[list[str]] = [] if trace else None

    def progress(self) -> None:
        # any state change invalidates every blocked rank's last check
        self.blocked.clear()
        self.cond.notify_all()

    def record(self, event: str, env: Envelope) -> None:
        if self.trace is not None:
            self.trace.append(
                f"{time.monotonic_ns()} {event} {env.source} {env.dest} "
                f"{env.tag} {env.length} {env.protocol.value}"
            )

    def check_quiescent(self) -> None:
        if self.alive and len(self.blocked) == self.alive and self.deadlock is None:
            self.deadlock = DeadlockDetected(self.blocked)
            self.cond.notify_all()


class Comm:
    """A rank's view of its world communicator."""

    def __init__(self, world: _World, rank: int, clock: _RankClock,
                 context: int = USER_CONTEXT):
        self._world = world
        self._clock = clock
        self._context = context
        self.rank = rank
        self._collective_view: Optional[Comm] = None

    @property
    def size(self) -> int:
        return self._world.size

    @property
    def comm_id(self) -> int:
        return self._world.id

    @property
    def eager_threshold(self) -> float:
        return self._world.eager_threshold

    def __repr__(self) -> str:
        return f"<Comm world={self.comm_id} rank={self.rank}/{self.size}>"

    def collective_view(self) -> "Comm":
        """Same rank and timing, separate matching context for library traffic."""
        if self._collective_view is None:
            self._collective_view = Comm(self._world, self.rank, self._clock,
                                         COLLECTIVE_CONTEXT)
        return self._collective_view

    wtime = staticmethod(wtime)

    # -- timing ---------------------------------------------------------------

    class _Timed:
        __slots__ = ("clock", "t0")

        def __init__(self, clock: _RankClock):
            self.clock = clock

        def __enter__(self):
            self.clock.depth += 1
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            self.clock.depth -= 1
            if self.clock.depth == 0:
                self.clock.inside += time.perf_counter() - self.t0

    def _timed(self) -> "_Timed":
        return Comm._Timed(self._clock)

    def _block_until(self, ready: Callable[[], bool], site: str) -> None:
        # caller holds the world lock
        world = self._world
        if ready():
            return
        t0 = time.perf_counter()
        try:
            while not ready():
                if world.panic is not None:
                    raise _WorldAborted()
                if world.deadlock is not None:
                    raise world.deadlock
                world.blocked[self.rank] = site
                world.check_quiescent()
                if world.deadlock is not None:
                    raise world.deadlock
                world.cond.wait()
        finally:
            world.blocked.pop(self.rank, None)
            self._clock.idle += time.perf_counter() - t0

    # -- point to point -------------------------------------------------------

    def _check_rank(self, rank: int, allow_any: bool = False) -> None:
        if allow_any and rank == ANY_SOURCE:
            return
        if not isinstance(rank, (int, np.integer)) or not 0 <= rank < self.size:
            raise InvalidRank(f"rank {rank!r} outside [0, {self.size})")

    def isend(self, data: Any, dest: int, tag: int = 0) -> Request:
        self._check_rank(dest)
        payload = Payload.from_value(data)
        with self._timed():
            with self._world.cond:
                return self._post_send(payload, dest, tag)

    def _post_send(self, payload: Payload, dest: int, tag: int) -> Request:
        world = self._world
        nbytes = payload.nbytes
        protocol = Protocol.EAGER if nbytes <= world.eager_threshold else Protocol.RENDEZVOUS
        env = Envelope(self.rank, dest, tag, nbytes, protocol, self._context)
        req = Request(self, "send", context=self._context)
        box = world.boxes[dest]
        world.sent += 1
        world.record("send", env)
        posted = box.take_posted(env)
        if posted is not None:
            posted._complete(payload, env)
            req._complete(None, env)
            world.received += 1
            world.record("match", env)
        elif protocol is Protocol.EAGER and box.buffered_bytes + nbytes <= box.capacity:
            box.unexpected.append(_Message(env, payload))
            box.buffered_bytes += nbytes
            req._complete(None, env)
        else:
            if protocol is Protocol.EAGER:
                overflow = BufferLimitExceeded(
                    f"rank {dest} mailbox holds {box.buffered_bytes} bytes; "
                    f"{nbytes} more exceeds capacity {box.capacity}"
                )
                world.overflows.append(overflow)
                log.debug("%s; falling back to rendezvous", overflow)
                env = replace(env, protocol=Protocol.RENDEZVOUS)
                world.record("overflow", env)
            req._envelope = env
            box.unexpected.append(_Message(env, payload, req))
        world.progress()
        return req

    def irecv(self, source: int = ANY_SOURCE, tag: int = ANY_TAG) -> Request:
        self._check_rank(source, allow_any=True)
        with self._timed():
            with self._world.cond:
                return self._post_recv(source, tag)

    def _post_recv(self, source: int, tag: int) -> Request:
        world = self._world
        req = Request(self, "recv", source, tag, self._context)
        box = world.boxes[self.rank]
        msg = box.take_unexpected(req)
        if msg is None:
            box.posted.append(req)
            return req
        req._complete(msg.payload, msg.envelope)
        if msg.send_request is not None:
            msg.send_request._complete(None, msg.envelope)
        world.received += 1
        world.record("match", msg.envelope)
        world.progress()
        return req

    def send(self, data: Any, dest: int, tag: int = 0) -> None:
        """Blocking send: returns once the send buffer could be reused."""
        with self._timed():
            self.isend(data, dest, tag).wait()

    def recv(self, source: int = ANY_SOURCE, tag: int = ANY_TAG,
             status: Optional[Status] = None) -> Any:
        """Blocking receive of the oldest matching message."""
        with self._timed():
            return self.irecv(source, tag).wait(status)

    def sendrecv(self, data: Any, dest: int, source: int = ANY_SOURCE,
                 sendtag: int = 0, recvtag: int = ANY_TAG) -> Any:
        with self._timed():
            rreq = self.irecv(source, recvtag)
            sreq = self.isend(data, dest, sendtag)
            out = rreq.wait()
            sreq.wait()
            return out


@dataclass
class WorldResult:
    values: list[Any]
    timings: list[TimingBreakdown]
    wall_seconds: float
    sent: int
    received: int
    undelivered: list[Envelope]
    overflows: list[BufferLimitExceeded]
    trace: Optional[list[str]] = None

    @property
    def drained(self) -> int:
        return len(self.undelivered)


def spawn_world(world_size: int, program: Callable[[Comm], Any],
                eager_threshold: Optional[float] = None,
                mailbox_capacity: float = DEFAULT_MAILBOX_CAPACITY,
                trace: bool = False) -> WorldResult:
    """Run ``program(comm)`` on ``world_size`` virtual ranks and collect results.

    ``eager_threshold`` defaults to ``$MPK_EAGER_THRESHOLD`` or 65536 bytes;
    ``math.inf`` makes every send eager. Raises ``RankPanicked`` if any rank
    raised, ``DeadlockDetected`` if the ranks stalled.
    """
    if world_size < 1:
        raise ValueError(f"world_size must be >= 1, got {world_size}")
    if eager_threshold is None:
        eager_threshold = eager_threshold_from_env()
    world = _World(world_size, eager_threshold, mailbox_capacity, trace)
    values: list[Any] = [None] * world_size
    timings: list[Optional[TimingBreakdown]] = [None] * world_size

    def run_rank(rank: int) -> None:
        clock = _RankClock()
        comm = Comm(world, rank, clock)
        t0 = time.perf_counter()
        try:
            values[rank] = program(comm)
        except _WorldAborted:
            pass
        except DeadlockDetected:
            pass
        except BaseException as exc:  # noqa: BLE001 - reported via RankPanicked
            with world.cond:
                if world.panic is None:
                    log.debug("rank %d panicked:\n%s", rank, traceback.format_exc())
                    world.panic = RankPanicked(rank, exc)
                world.cond.notify_all()
        finally:
            wall = time.perf_counter() - t0
            idle = clock.idle
            timings[rank] = TimingBreakdown.from_wall(
                wall, max(0.0, clock.inside - idle), idle)
            with world.cond:
                world.alive -= 1
                world.blocked.pop(rank, None)
                world.check_quiescent()

    threads = [threading.Thread(target=run_rank, args=(r,), name=f"rank-{r}", daemon=True)
               for r in range(world_size)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0

    if world.panic is not None:
        raise world.panic from world.panic.exc
    if world.deadlock is not None:
        raise world.deadlock
    undelivered = [m.envelope for box in world.boxes for m in box.unexpected]
    if undelivered:
        log.warning("%d message(s) never received", len(undelivered))
    return WorldResult(values, timings, wall, world.sent, world.received,
                       undelivered, world.overflows, world.trace)

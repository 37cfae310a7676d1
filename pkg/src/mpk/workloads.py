"""Benchmark workloads: a 1-D vibrating string and a trial-division prime counter.

Each comes in a serial form and a message-passing form. The serial forms are
plain functions and double as oracles for the parallel ones:

* the wave solver applies the same floating-point operations to every point
  in both forms, so parallel output is bitwise identical to serial output;
* the prime counter partitions odd numbers cyclically over ranks and combines
  per-rank counts and maxima with reductions at rank 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, ClassVar, Optional

import numpy as np

from . import collectives
from .runtime import Comm

MASTER = 0

_TAG_TO_LEFT = 1
_TAG_TO_RIGHT = 2
_TAG_RESULT = 3


class InvalidConfig(ValueError):
    pass


class IndivisibleDecomposition(InvalidConfig):
    pass


class LimitTooSmall(InvalidConfig):
    pass


# ---------------------------------------------------------------------------
# wave equation


@dataclass(frozen=True)
class WaveConfig:
    total_points: int = 800
    time_steps: int = 2000
    c: float = 0.1

    def __post_init__(self) -> None:
        if self.total_points < 2:
            raise InvalidConfig(f"total_points must be >= 2, got {self.total_points}")
        if self.time_steps < 1:
            raise InvalidConfig(f"time_steps must be >= 1, got {self.time_steps}")

    def check_world(self, world_size: int) -> None:
        if self.total_points % world_size:
            raise IndivisibleDecomposition(
                f"{self.total_points} points do not divide over {world_size} ranks")


@dataclass
class WaveState:
    """Amplitudes at t-1, t and t+1 for a run of points (plus halos in parallel form)."""

    u_prev: np.ndarray
    u_curr: np.ndarray
    u_next: np.ndarray

    def advance(self) -> None:
        self.u_prev, self.u_curr, self.u_next = self.u_curr, self.u_next, self.u_prev


def wave_step_point(u_im1: float, u_i: float, u_ip1: float, u_i_prev: float, c: float) -> float:
    """Amplitude at t+1 from the neighbourhood at t and the point at t-1."""
    return (2.0 * u_i) - u_i_prev + (c * (u_im1 - (2.0 * u_i) + u_ip1))


def _stencil(u: np.ndarray, u_prev: np.ndarray, out: np.ndarray, lo: int, hi: int, c: float) -> None:
    # vector form of wave_step_point over u[lo:hi], same operation order
    if hi <= lo:
        return
    two_u = 2.0 * u[lo:hi]
    out[lo:hi] = (two_u - u_prev[lo:hi]) + (c * ((u[lo - 1:hi - 1] - two_u) + u[lo + 1:hi + 1]))


def initial_amplitude(i: int, total_points: int) -> float:
    """One full sine period over the string, zero at both ends."""
    if i == 0 or i == total_points - 1:
        return 0.0
    return math.sin(2.0 * math.pi * i / (total_points - 1))


def wave_initial(config: WaveConfig) -> np.ndarray:
    n = config.total_points
    return np.array([initial_amplitude(i, n) for i in range(n)], dtype=np.float64)


def wave_serial(config: WaveConfig) -> np.ndarray:
    u0 = wave_initial(config)
    state = WaveState(u_prev=u0.copy(), u_curr=u0, u_next=np.zeros_like(u0))
    n = config.total_points
    for _ in range(config.time_steps):
        _stencil(state.u_curr, state.u_prev, state.u_next, 1, n - 1, config.c)
        state.u_next[0] = state.u_next[n - 1] = 0.0
        state.advance()
    return state.u_curr


def wave_parallel(config: Optional[WaveConfig], comm: Comm) -> Optional[np.ndarray]:
    """Block-decomposed solver; returns the full string at the master, else ``None``.

    Only the master needs ``config``; parameters reach the other ranks by
    broadcast. Each step swaps one boundary amplitude with every existing
    neighbour. Pairs are ordered by rank parity (even sends first) so the
    exchange cannot deadlock even when every message goes by rendezvous.
    """
    rank, size = comm.rank, comm.size
    params = None
    if rank == MASTER:
        params = np.array([config.c, config.total_points, config.time_steps], dtype=np.float64)
    params = collectives.bcast(comm, params, root=MASTER)
    c, n, steps = float(params[0]), int(params[1]), int(params[2])
    cfg = WaveConfig(n, steps, c)
    cfg.check_world(size)

    nloc = n // size
    start = rank * nloc
    u = np.zeros(nloc + 2)
    u[1:nloc + 1] = [initial_amplitude(start + j, n) for j in range(nloc)]
    state = WaveState(u_prev=u.copy(), u_curr=u, u_next=np.zeros_like(u))

    left = rank - 1 if rank > 0 else None
    right = rank + 1 if rank < size - 1 else None
    # local cells 1..nloc, skipping pinned global endpoints
    lo = 2 if left is None else 1
    hi = nloc if right is None else nloc + 1
    even = rank % 2 == 0

    for _ in range(steps):
        cur = state.u_curr
        if left is not None:
            cur[0] = _exchange(comm, cur[1], left, _TAG_TO_LEFT, _TAG_TO_RIGHT, even)
        if right is not None:
            cur[nloc + 1] = _exchange(comm, cur[nloc], right, _TAG_TO_RIGHT, _TAG_TO_LEFT, even)
        _stencil(cur, state.u_prev, state.u_next, lo, hi, c)
        if left is None:
            state.u_next[1] = 0.0
        if right is None:
            state.u_next[nloc] = 0.0
        state.advance()

    block = state.u_curr[1:nloc + 1]
    if rank != MASTER:
        comm.send(block, MASTER, _TAG_RESULT)
        return None
    out = np.empty(n)
    out[:nloc] = block
    for r in range(1, size):
        out[r * nloc:(r + 1) * nloc] = comm.recv(r, _TAG_RESULT)
    return out


def _exchange(comm: Comm, value: float, peer: int, send_tag: int, recv_tag: int,
              send_first: bool) -> float:
    out = np.array([value])
    if send_first:
        comm.send(out, peer, send_tag)
        return float(comm.recv(peer, recv_tag)[0])
    got = comm.recv(peer, recv_tag)
    comm.send(out, peer, send_tag)
    return float(got[0])


# ---------------------------------------------------------------------------
# prime counter

PRECOUNTED_PRIMES = 4  # 2, 3, 5, 7


@dataclass(frozen=True)
class PrimesConfig:
    limit: int = 2_000_000

    def __post_init__(self) -> None:
        if self.limit < 11:
            raise LimitTooSmall(f"limit must be >= 11, got {self.limit}")

    def check_world(self, world_size: int) -> None:
        pass


@dataclass(frozen=True)
class PrimesResult:
    prime_count: int
    largest_prime: int


def naive_is_prime(n: int) -> bool:
    """Trial division by odd numbers up to the integer square root.

    Numbers up to 10 report ``False``: the four primes below 11 are counted
    separately by the callers.
    """
    if n > 10:
        for i in range(3, math.isqrt(n) + 1, 2):
            if n % i == 0:
                return False
        return True
    return False


def naive_prime_filter(candidates: np.ndarray) -> np.ndarray:
    """Vectorised ``naive_is_prime`` over an ascending int64 array; returns the survivors."""
    alive = np.asarray(candidates, dtype=np.int64)
    alive = alive[alive > 10]
    confirmed = []
    i = 3
    while alive.size:
        # n < i*i means isqrt(n) < i: no divisor left to try
        done = int(np.searchsorted(alive, i * i, side="left"))
        if done:
            confirmed.append(alive[:done])
            alive = alive[done:]
        if alive.size:
            alive = alive[alive % i != 0]
        i += 2
    if not confirmed:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(confirmed)


def cyclic_candidates(rank: int, size: int, limit: int) -> np.ndarray:
    """Odd numbers handled by ``rank``: ``2*rank + 1`` onward in strides of ``2*size``."""
    return np.arange(2 * rank + 1, limit + 1, 2 * size, dtype=np.int64)


def primes_serial(config: PrimesConfig) -> PrimesResult:
    found = naive_prime_filter(np.arange(11, config.limit + 1, 2, dtype=np.int64))
    largest = int(found[-1]) if found.size else 7
    return PrimesResult(PRECOUNTED_PRIMES + int(found.size), largest)


def primes_parallel(config: PrimesConfig, comm: Comm) -> Optional[PrimesResult]:
    found = naive_prime_filter(cyclic_candidates(comm.rank, comm.size, config.limit))
    count = np.array([found.size], dtype=np.int64)
    value = np.array([found.max() if found.size else 0], dtype=np.int64)
    pcsum = collectives.reduce(comm, count, collectives.SUM, root=MASTER)
    maxprime = collectives.reduce(comm, value, collectives.MAX, root=MASTER)
    if comm.rank != MASTER:
        return None
    return PrimesResult(int(pcsum[0]) + PRECOUNTED_PRIMES, int(maxprime[0]))


# ---------------------------------------------------------------------------
# registry


class Workload:
    """A named benchmark with a serial form and a per-rank program."""

    name: ClassVar[str]
    config: Any

    def params(self) -> dict[str, Any]:
        return asdict(self.config)

    def check_procs(self, procs: int) -> None:
        if procs < 1:
            raise InvalidConfig(f"procs must be >= 1, got {procs}")
        self.config.check_world(procs)

    def supports(self, procs: int) -> bool:
        try:
            self.check_procs(procs)
        except InvalidConfig:
            return False
        return True

    def run_serial(self) -> Any:
        raise NotImplementedError

    def program(self) -> Callable[[Comm], Any]:
        raise NotImplementedError

    def describe(self, result: Any) -> str:
        raise NotImplementedError


class WaveWorkload(Workload):
    name = "wave"

    def __init__(self, points: int = 800, steps: int = 2000, c: float = 0.1):
        self.config = WaveConfig(points, steps, c)

    def run_serial(self) -> np.ndarray:
        return wave_serial(self.config)

    def program(self) -> Callable[[Comm], Any]:
        config = self.config
        return lambda comm: wave_parallel(config if comm.rank == MASTER else None, comm)

    def describe(self, result: np.ndarray) -> str:
        return "amplitudes=" + ",".join(format(x, ".17g") for x in result)


class PrimesWorkload(Workload):
    name = "primes"

    def __init__(self, limit: int = 2_000_000):
        self.config = PrimesConfig(limit)

    def run_serial(self) -> PrimesResult:
        return primes_serial(self.config)

    def program(self) -> Callable[[Comm], Any]:
        config = self.config
        return lambda comm: primes_parallel(config, comm)

    def describe(self, result: PrimesResult) -> str:
        return f"count={result.prime_count} largest={result.largest_prime}"


WORKLOADS: dict[str, type[Workload]] = {
    WaveWorkload.name: WaveWorkload,
    PrimesWorkload.name: PrimesWorkload,
}


def make_workload(name: str, **params: Any) -> Workload:
    try:
        cls = WORKLOADS[name]
    except KeyError:
        raise InvalidConfig(f"unknown workload {name!r}; choose from {sorted(WORKLOADS)}") from None
    return cls(**params)

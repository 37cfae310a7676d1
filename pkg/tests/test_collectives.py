import math
import threading
import time

import numpy as np
import pytest

from mpk import collectives as coll
from mpk.collectives import CountsDispls, KindMismatch, LengthMismatch
from mpk.runtime import DeadlockDetected, RankPanicked, spawn_world, wtime

import oracles

SIZES = [1, 2, 3, 4, 8]


def run(size, program, **kw):
    return spawn_world(size, program, **kw).values


class TestBarrier:
    def test_single_rank(self):
        assert run(1, lambda comm: coll.barrier(comm) or "ok") == ["ok"]

    def test_counters(self):
        lock = threading.Lock()
        entered = [0]
        seen_at_exit = []

        def program(comm):
            with lock:
                entered[0] += 1
            coll.barrier(comm)
            with lock:
                seen_at_exit.append(entered[0])

        run(4, program)
        assert seen_at_exit == [4, 4, 4, 4]

    def test_staggered_entry(self):
        def program(comm):
            time.sleep(0.02 * comm.rank)
            entry = wtime()
            coll.barrier(comm)
            return entry, wtime()

        stamps = run(4, program)
        last_entry = max(e for e, _ in stamps)
        assert all(x >= last_entry for _, x in stamps)

    def test_missing_rank_deadlocks(self):
        def program(comm):
            if comm.rank != 2:
                coll.barrier(comm)

        with pytest.raises(DeadlockDetected):
            spawn_world(3, program)


class TestBcast:
    def test_identity(self):
        assert run(1, lambda comm: coll.bcast(comm, [2.5]).tolist()) == [[2.5]]

    def test_all_ranks(self):
        def program(comm):
            return coll.bcast(comm, [3.14] if comm.rank == 0 else [99.0], root=0).tolist()

        assert run(4, program) == [[3.14]] * 4

    def test_bytes_and_nonzero_root(self):
        def program(comm):
            return coll.bcast(comm, b"hi" if comm.rank == 2 else None, root=2)

        assert run(3, program) == [b"hi"] * 3

    def test_invalid_root(self):
        with pytest.raises(RankPanicked):
            spawn_world(2, lambda comm: coll.bcast(comm, [1.0], root=5))


class TestScatterGather:
    def test_scatter_slices(self):
        def program(comm):
            return coll.scatter(comm, np.array([10, 20, 30, 40]) if comm.rank == 0 else None).tolist()

        assert run(4, program) == [[10], [20], [30], [40]]

    def test_scatter_identity(self):
        assert run(1, lambda comm: coll.scatter(comm, [1.0, 2.0]).tolist()) == [[1.0, 2.0]]

    def test_scatter_length_mismatch(self):
        def program(comm):
            coll.scatter(comm, [1.0, 2.0, 3.0] if comm.rank == 0 else None)

        with pytest.raises(RankPanicked) as info:
            spawn_world(2, program)
        assert isinstance(info.value.exc, LengthMismatch)

    def test_gather_rank_order(self):
        def program(comm):
            out = coll.gather(comm, [comm.rank])
            return None if out is None else out.tolist()

        assert run(4, program)[0] == [0, 1, 2, 3]

    def test_gather_identity(self):
        assert run(1, lambda comm: coll.gather(comm, [7.0]).tolist()) == [[7.0]]

    @pytest.mark.parametrize("size", SIZES)
    def test_round_trips_bitwise(self, size, rng):
        original = rng.standard_normal(3 * size)

        def program(comm):
            part = coll.scatter(comm, original if comm.rank == 1 % size else None, root=1 % size)
            back = coll.gather(comm, part, root=1 % size)
            again = coll.scatter(comm, back, root=1 % size)
            return back, again, part

        out = run(size, program)
        root = 1 % size
        assert out[root][0].tobytes() == original.tobytes()
        for r in range(size):
            assert out[r][1].tobytes() == out[r][2].tobytes()

    def test_gatherv_hand_placed(self):
        cd = CountsDispls([1, 2], [3, 0])

        def program(comm):
            data = [9] if comm.rank == 0 else [7, 8]
            out = coll.gatherv(comm, data, cd)
            return None if out is None else out.tolist()

        buf = run(2, program)[0]
        assert len(buf) == 4
        assert buf[0:2] == [7, 8] and buf[3] == 9

    def test_gatherv_identity(self):
        cd = CountsDispls([3])
        assert run(1, lambda comm: coll.gatherv(comm, [1, 2, 3], cd).tolist()) == [[1, 2, 3]]

    def test_gatherv_count_mismatch(self):
        cd = CountsDispls([1, 1])

        def program(comm):
            coll.gatherv(comm, [1.0, 2.0], cd)

        with pytest.raises(RankPanicked) as info:
            spawn_world(2, program)
        assert isinstance(info.value.exc, LengthMismatch)

    def test_counts_displs_validation(self):
        with pytest.raises(LengthMismatch):
            CountsDispls([2, 2], [0, 1]).validate(2)
        with pytest.raises(LengthMismatch):
            CountsDispls([1], [0]).validate(2)
        with pytest.raises(LengthMismatch):
            CountsDispls([2, 2], [0, 2]).validate(2, buffer_len=3)
        CountsDispls([2, 0, 1]).validate(3)
        assert CountsDispls([2, 0, 1]).displs == (0, 2, 2)


class TestAllgather:
    def test_three_ranks(self):
        assert run(3, lambda comm: coll.allgather(comm, [comm.rank]).tolist()) == [[0, 1, 2]] * 3

    def test_allgatherv(self):
        cd = CountsDispls([2, 1])

        def program(comm):
            return coll.allgatherv(comm, [10.0, 11.0] if comm.rank == 0 else [20.0], cd).tolist()

        assert run(2, program) == [[10.0, 11.0, 20.0]] * 2

    @pytest.mark.parametrize("size", SIZES)
    def test_equals_gather_then_bcast(self, size):
        def program(comm):
            mine = np.array([comm.rank * 1.5, -comm.rank])
            a = coll.allgather(comm, mine)
            b = coll.bcast(comm, coll.gather(comm, mine, 0), 0)
            return a.tobytes() == b.tobytes()

        assert all(run(size, program))


class TestAlltoall:
    def test_identity(self):
        assert run(1, lambda comm: coll.alltoall(comm, [4.0, 5.0]).tolist()) == [[4.0, 5.0]]

    def test_transpose_2x2(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0

        def program(comm):
            return coll.alltoall(comm, [a, b] if comm.rank == 0 else [c, d]).tolist()

        assert run(2, program) == [[a, c], [b, d]]

    def test_alltoallv_random_counts(self, rng):
        size = 4
        matrix = rng.integers(0, 4, size=(size, size))  # matrix[i, j]: i sends j

        def program(comm):
            i = comm.rank
            send = CountsDispls(matrix[i])
            recv = CountsDispls(matrix[:, i])
            data = np.arange(send.extent, dtype=np.int64) + 100 * i
            got = coll.alltoallv(comm, data, send, recv)
            ref = oracles.ref_alltoallv(comm, data, send.counts, send.displs,
                                        recv.counts, recv.displs, recv.extent)
            return got.tolist(), ref.tolist()

        for got, ref in run(size, program):
            assert got == ref

    def test_alltoallv_inconsistent_counts(self):
        def program(comm):
            send = CountsDispls([1, 2])
            recv = CountsDispls([1, 1])
            coll.alltoallv(comm, np.zeros(3), send, recv)

        with pytest.raises(RankPanicked) as info:
            spawn_world(2, program)
        assert isinstance(info.value.exc, LengthMismatch)


class TestReduce:
    def test_sum(self):
        def program(comm):
            out = coll.reduce(comm, [comm.rank + 1], coll.SUM)
            return None if out is None else out.tolist()

        assert run(4, program)[0] == [10]

    @pytest.mark.parametrize("p", [1, 3, 8])
    def test_max_min(self, p):
        def program(comm):
            hi = coll.reduce(comm, [comm.rank], coll.MAX)
            lo = coll.reduce(comm, [comm.rank], coll.MIN)
            return None if hi is None else (hi.tolist(), lo.tolist())

        assert run(p, program)[0] == ([p - 1], [0])

    def test_float_sum_is_rank_order_fold(self):
        # chosen so that a different summation order changes the result
        values = [1e16, 1.0, -1e16, 1.0]

        def program(comm):
            return coll.reduce(comm, [values[comm.rank]], coll.SUM)

        got = run(4, program)[0][0]
        assert got == ((1e16 + 1.0) + -1e16) + 1.0

    def test_kind_mismatch(self):
        def program(comm):
            coll.reduce(comm, [1.0] if comm.rank == 0 else [1], coll.SUM)

        with pytest.raises(RankPanicked) as info:
            spawn_world(2, program)
        assert isinstance(info.value.exc, KindMismatch)

    def test_length_mismatch(self):
        def program(comm):
            coll.reduce(comm, [1.0] * (comm.rank + 1), coll.SUM)

        with pytest.raises(RankPanicked) as info:
            spawn_world(2, program)
        assert isinstance(info.value.exc, LengthMismatch)

    def test_allreduce(self):
        assert run(3, lambda comm: coll.allreduce(comm, [comm.rank], coll.MAX).tolist()) == [[2]] * 3


@pytest.mark.parametrize("threshold", [0, math.inf])
def test_collectives_protocol_independent(threshold):
    def program(comm):
        v = np.arange(comm.size * 2, dtype=np.float64) * (comm.rank + 1)
        out = [coll.bcast(comm, v, 0), coll.scatter(comm, v, 0), coll.allgather(comm, v[:2]),
               coll.alltoall(comm, v), coll.allreduce(comm, v, coll.SUM)]
        coll.barrier(comm)
        return [o.tolist() for o in out]

    assert run(4, program, eager_threshold=threshold) == run(4, program)

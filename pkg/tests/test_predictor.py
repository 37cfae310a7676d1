import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mpk import predictor as pr
from mpk.predictor import ClassifierConfig, SpeedupCurve, VerdictKind
from mpk.workloads import PrimesWorkload, WaveWorkload

WAVE_SINGLE = [1.3561, 3.6942, 6.3833, 9.4002, 12.5629, 15.301, 18.1778, 21.5001, 24.1733, 27.3349]
PRIMES_PROCS = [2, 4, 8, 10, 16, 20]
PRIMES_SINGLE = [55.5887, 55.464, 54.9653, 55.5158, 55.1428, 55.9213]


def exact_normalized_slope(procs, seconds):
    """Least squares in exact rational arithmetic."""
    xs = [Fraction(p) for p in procs]
    ys = [Fraction(str(s)) for s in seconds]
    xm, ym = sum(xs) / len(xs), sum(ys) / len(ys)
    b = sum((x - xm) * (y - ym) for x, y in zip(xs, ys)) / sum((x - xm) ** 2 for x in xs)
    return float(b / ys[0])


def wave_curve():
    return SpeedupCurve(list(zip(range(1, 11), WAVE_SINGLE)), 0.80216)


def primes_curve():
    return SpeedupCurve(list(zip(PRIMES_PROCS, PRIMES_SINGLE)), 55.625)


class TestSlope:
    def test_wave(self):
        slope = pr.normalized_slope(wave_curve())
        assert slope == pytest.approx(2.13, abs=0.05)
        assert slope == pytest.approx(exact_normalized_slope(range(1, 11), WAVE_SINGLE), rel=1e-12)

    def test_primes(self):
        slope = pr.normalized_slope(primes_curve())
        assert slope == pytest.approx(0.0002, abs=0.0005)
        assert slope == pytest.approx(exact_normalized_slope(PRIMES_PROCS, PRIMES_SINGLE), rel=1e-9)

    def test_constant(self):
        assert pr.normalized_slope(SpeedupCurve([(p, 1.0) for p in range(1, 11)])) == 0.0

    def test_too_few_points(self):
        with pytest.raises(pr.TooFewPoints):
            pr.normalized_slope(SpeedupCurve([(1, 2.0)]))
        with pytest.raises(pr.TooFewPoints):
            pr.classify(SpeedupCurve([(4, 2.0)]))


class TestClassify:
    def test_fixtures(self):
        assert pr.classify(wave_curve()).kind is VerdictKind.POOR
        assert pr.classify(primes_curve()).kind is VerdictKind.LINEAR

    def test_band(self):
        # slope 0.15 relative to the first value
        curve = SpeedupCurve([(1, 1.0), (2, 1.15)])
        v = pr.classify(curve)
        assert v.kind is VerdictKind.INDETERMINATE
        assert v.normalized_slope == pytest.approx(0.15)

    @pytest.mark.parametrize("lam", [0.5, 2, 100])
    @pytest.mark.parametrize("curve", [wave_curve(), primes_curve()])
    def test_scale_invariant(self, curve, lam):
        a, b = pr.classify(curve), pr.classify(curve.scaled(lam))
        assert a.kind is b.kind
        assert b.normalized_slope == pytest.approx(a.normalized_slope, rel=1e-12)

    @given(st.floats(-10, 10, allow_nan=False))
    def test_thresholds_partition(self, slope):
        curve = SpeedupCurve([(1, 1.0), (2, 1.0 + slope)]) if slope > -1 else None
        if curve is None:
            return
        v = pr.classify(curve)
        s = v.normalized_slope
        kinds = [s > 0.25, s < 0.05, 0.05 <= s <= 0.25]
        assert sum(kinds) == 1
        assert v.kind is [VerdictKind.POOR, VerdictKind.LINEAR, VerdictKind.INDETERMINATE][kinds.index(True)]

    def test_deterministic(self):
        assert pr.classify(wave_curve()) == pr.classify(wave_curve())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ClassifierConfig(poor_threshold=0.1, linear_threshold=0.2)
        with pytest.raises(ValueError):
            ClassifierConfig(repetitions=0)

    def test_custom_thresholds(self):
        cfg = ClassifierConfig(poor_threshold=3.0, linear_threshold=2.5)
        assert pr.classify(wave_curve(), cfg).kind is VerdictKind.LINEAR


class TestCurveIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "c.csv"
        wave_curve().write_csv(path)
        assert SpeedupCurve.read_csv(path) == wave_curve()

    def test_bundled_fixtures(self):
        assert pr.load_curve("table1_wave.csv") == wave_curve()
        assert pr.load_curve("table1_primes.csv") == primes_curve()
        multi = pr.load_curve("table1_primes_multi.csv")
        assert multi.points[0] == (1, 57.625) and multi.serial_seconds == 55.625
        assert pr.load_curve("table1_wave_multi.csv").points[2] == (4, 1.2112)

    def test_missing(self):
        with pytest.raises(FileNotFoundError):
            pr.load_curve("nope.csv")

    @pytest.mark.parametrize("text", [
        "",
        "p,s\n1,2\n",
        "procs,seconds\n1\n",
        "procs,seconds\n1,abc\n",
        "procs,seconds\n2,1.0\n1,1.0\n",
        "procs,seconds\n1,0\n",
        "# serial_seconds=x\nprocs,seconds\n1,1\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(pr.MalformedCurve):
            SpeedupCurve.from_csv(text)


class TestReport:
    def test_speedups_use_serial_time(self):
        curve = pr.load_curve("table1_wave_multi.csv")
        report = pr.build_report(curve, ClassifierConfig(), "wave")
        best = max(report.points, key=lambda r: r["speedup"])
        assert best["procs"] == 4
        assert best["speedup"] == pytest.approx(0.66228534, abs=1e-4)

    def test_json_fields(self):
        report = pr.build_report(wave_curve(), ClassifierConfig(), "wave", {"points": 800})
        doc = json.loads(report.to_json())
        for key in ("workload", "config", "serial_seconds", "points", "normalized_slope", "verdict"):
            assert key in doc
        assert doc["verdict"] == "PoorSpeedup"
        assert doc["config"]["classifier"]["poor_threshold"] == 0.25


class TestMeasurement:
    def test_single_point_curve_refuses_classification(self):
        curve = pr.record_curve(PrimesWorkload(1000), [1], reps=1)
        assert len(curve.points) == 1 and curve.serial_seconds > 0
        with pytest.raises(pr.TooFewPoints):
            pr.classify(curve)

    def test_wave_counts_one_to_four(self):
        curve = pr.record_curve(WaveWorkload(points=1200, steps=200), [1, 2, 3, 4], reps=1)
        assert curve.procs == [1, 2, 3, 4]
        assert all(s > 0 for s in curve.seconds)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            pr.record_curve(PrimesWorkload(100), [], reps=1)
        with pytest.raises(ValueError):
            pr.record_curve(PrimesWorkload(100), [0, 1], reps=1)

    @pytest.mark.live
    def test_primes_flat_on_one_cpu(self):
        with pr.single_cpu():
            curve = pr.record_curve(PrimesWorkload(400_000), [2, 4, 8], reps=3)
        secs = curve.seconds
        assert max(secs) <= 1.2 * min(secs) or pr.classify(curve).kind is VerdictKind.LINEAR

    def test_predict_skips_unsupported_counts(self):
        report = pr.predict(WaveWorkload(points=20, steps=20), 6,
                            ClassifierConfig(repetitions=1))
        assert [p["procs"] for p in report.points] == [1, 2, 4, 5]
        assert report.host["proc_counts"] == [1, 2, 4, 5]

    def test_predict_needs_two_procs(self):
        with pytest.raises(ValueError):
            pr.predict(PrimesWorkload(100), 1)

    def test_workload_failure(self):
        class Broken(PrimesWorkload):
            def program(self):
                def run(comm):
                    raise RuntimeError("bad rank")
                return run

        with pytest.raises(pr.WorkloadFailed):
            pr.time_parallel(Broken(100), 2)

    def test_single_cpu_restores_affinity(self):
        import os

        if not hasattr(os, "sched_getaffinity"):
            pytest.skip("no affinity API")
        before = os.sched_getaffinity(0)
        with pr.single_cpu() as cpu:
            assert os.sched_getaffinity(0) == {cpu}
        assert os.sched_getaffinity(0) == before

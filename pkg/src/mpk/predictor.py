"""Single-machine speedup prediction.

A workload is run with increasing numbers of virtual ranks on one execution
unit and its wall time recorded per rank count. If the time climbs steeply
with the rank count, communication dominates and the program will scale
poorly on real processors; a flat curve points to near-linear speedup.

Steepness is measured as the least-squares slope of seconds against rank
count, normalised by the time at the smallest rank count. The normalisation
makes the verdict independent of the machine's absolute speed.
"""

from __future__ import annotations

import contextlib
import csv
import enum
import io
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from . import metrics
from .runtime import RuntimeFailure, spawn_world
from .workloads import Workload

log = logging.getLogger(__name__)


class TooFewPoints(ValueError):
    pass


class MalformedCurve(ValueError):
    pass


class WorkloadFailed(RuntimeError):
    pass


class VerdictKind(enum.Enum):
    POOR = "PoorSpeedup"
    LINEAR = "LinearSpeedup"
    INDETERMINATE = "Indeterminate"

    @property
    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    normalized_slope: float


@dataclass(frozen=True)
class ClassifierConfig:
    poor_threshold: float = 0.25
    linear_threshold: float = 0.05
    repetitions: int = 3

    def __post_init__(self) -> None:
        if not 0 <= self.linear_threshold < self.poor_threshold:
            raise ValueError("need 0 <= linear_threshold < poor_threshold")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class SpeedupCurve:
    """Wall seconds per rank count, plus the serial time when known."""

    points: list[tuple[int, float]]
    serial_seconds: Optional[float] = None

    def __post_init__(self) -> None:
        self.points = [(int(p), float(s)) for p, s in self.points]
        procs = [p for p, _ in self.points]
        if any(b <= a for a, b in zip(procs, procs[1:])):
            raise MalformedCurve(f"process counts must be strictly increasing: {procs}")
        if any(p < 1 for p in procs):
            raise MalformedCurve("process counts must be >= 1")
        if any(not s > 0 for _, s in self.points):
            raise MalformedCurve("times must be positive")
        if self.serial_seconds is not None and not self.serial_seconds > 0:
            raise MalformedCurve("serial_seconds must be positive")

    @property
    def procs(self) -> list[int]:
        return [p for p, _ in self.points]

    @property
    def seconds(self) -> list[float]:
        return [s for _, s in self.points]

    def scaled(self, factor: float) -> "SpeedupCurve":
        serial = None if self.serial_seconds is None else self.serial_seconds * factor
        return SpeedupCurve([(p, s * factor) for p, s in self.points], serial)

    # -- CSV: header ``procs,seconds``, optional ``# serial_seconds=<float>`` --

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.serial_seconds is not None:
            buf.write(f"# serial_seconds={self.serial_seconds!r}\n")
        buf.write("procs,seconds\n")
        for p, s in self.points:
            buf.write(f"{p},{s!r}\n")
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SpeedupCurve":
        serial = None
        rows = []
        for line in text.splitlines():
            stripped = line.strip()
            if stripped.startswith("#"):
                key, sep, value = stripped.lstrip("#").partition("=")
                if sep and key.strip() == "serial_seconds":
                    try:
                        serial = float(value)
                    except ValueError:
                        raise MalformedCurve(f"bad serial_seconds comment: {line!r}") from None
            elif stripped:
                rows.append(stripped)
        if not rows or [h.strip() for h in rows[0].split(",")] != ["procs", "seconds"]:
            raise MalformedCurve("expected header 'procs,seconds'")
        points = []
        for row in csv.reader(rows[1:]):
            if len(row) != 2:
                raise MalformedCurve(f"expected 2 columns, got {row!r}")
            try:
                points.append((int(row[0]), float(row[1])))
            except ValueError:
                raise MalformedCurve(f"non-numeric row {row!r}") from None
        return cls(points, serial)

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "SpeedupCurve":
        return cls.from_csv(Path(path).read_text())


def fixture_path(name: str) -> Path:
    """Path of a bundled reference curve, e.g. ``table1_wave.csv``."""
    path = resources.files("mpk") / "fixtures" / name
    if not path.is_file():
        raise FileNotFoundError(name)
    return Path(str(path))


def load_curve(ref: str | os.PathLike) -> SpeedupCurve:
    """Read a curve from a path, falling back to the bundled fixtures by name."""
    path = Path(ref)
    if not path.exists():
        try:
            path = fixture_path(path.name)
        except FileNotFoundError:
            raise FileNotFoundError(f"no curve file {ref!s}") from None
    return SpeedupCurve.read_csv(path)


def normalized_slope(curve: SpeedupCurve) -> float:
    """Least-squares slope of seconds vs. procs over the time at the smallest proc count."""
    if len(curve.points) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(curve.points)}")
    x = np.array(curve.procs, dtype=np.float64)
    y = np.array(curve.seconds, dtype=np.float64)
    dx = x - x.mean()
    slope = float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))
    return slope / curve.seconds[0]


def classify(curve: SpeedupCurve, config: ClassifierConfig = ClassifierConfig()) -> Verdict:
    slope = normalized_slope(curve)
    if slope > config.poor_threshold:
        kind = VerdictKind.POOR
    elif slope < config.linear_threshold:
        kind = VerdictKind.LINEAR
    else:
        kind = VerdictKind.INDETERMINATE
    return Verdict(kind, slope)


# -- measurement ---------------------------------------------------------------


@contextlib.contextmanager
def single_cpu() -> Iterator[Optional[int]]:
    """Pin this process (and every rank thread) to one CPU for the duration.

    Yields the CPU id, or ``None`` where affinity is unsupported; the rank
    threads still time-share one interpreter lock in that case.
    """
    if not hasattr(os, "sched_getaffinity"):
        yield None
        return
    before = os.sched_getaffinity(0)
    cpu = min(before)
    os.sched_setaffinity(0, {cpu})
    try:
        yield cpu
    finally:
        os.sched_setaffinity(0, before)


def _median_time(fn, reps: int) -> float:
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def time_serial(workload: Workload, reps: int = 1) -> float:
    try:
        return _median_time(workload.run_serial, reps)
    except Exception as exc:
        raise WorkloadFailed(f"serial {workload.name} failed: {exc}") from exc


def time_parallel(workload: Workload, procs: int, reps: int = 1,
                  eager_threshold: Optional[float] = None) -> float:
    workload.check_procs(procs)
    program = workload.program()
    try:
        return _median_time(lambda: spawn_world(procs, program, eager_threshold), reps)
    except RuntimeFailure as exc:
        raise WorkloadFailed(f"{workload.name} on {procs} ranks failed: {exc}") from exc


def record_curve(workload: Workload, proc_counts: Sequence[int], reps: int = 3,
                 eager_threshold: Optional[float] = None) -> SpeedupCurve:
    """Median-of-``reps`` wall time of the serial form and of each rank count."""
    if not proc_counts:
        raise ValueError("proc_counts must not be empty")
    if any(p < 1 for p in proc_counts):
        raise ValueError(f"proc counts must be >= 1: {list(proc_counts)}")
    serial = time_serial(workload, reps)
    points = []
    for p in sorted(proc_counts):
        seconds = time_parallel(workload, p, reps, eager_threshold)
        log.info("%s procs=%d seconds=%.6f", workload.name, p, seconds)
        points.append((p, seconds))
    return SpeedupCurve(points, serial)


@dataclass
class PredictionReport:
    workload: str
    config: dict[str, Any]
    serial_seconds: Optional[float]
    points: list[dict[str, float]]
    normalized_slope: float
    verdict: str
    host: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_report(curve: SpeedupCurve, config: ClassifierConfig, workload: str,
                 params: Optional[dict[str, Any]] = None,
                 host: Optional[dict[str, Any]] = None) -> PredictionReport:
    verdict = classify(curve, config)
    points = []
    for p, s in curve.points:
        row: dict[str, float] = {"procs": p, "seconds": s}
        if curve.serial_seconds is not None:
            psi = metrics.speedup(curve.serial_seconds, s)
            row["speedup"] = psi
            row["efficiency"] = metrics.efficiency(psi, p)
        points.append(row)
    return PredictionReport(
        workload=workload,
        config={"classifier": asdict(config), "workload": dict(params or {})},
        serial_seconds=curve.serial_seconds,
        points=points,
        normalized_slope=verdict.normalized_slope,
        verdict=verdict.kind.value,
        host=dict(host or {}),
    )


def predict(workload: Workload, max_procs: int, config: ClassifierConfig = ClassifierConfig(),
            eager_threshold: Optional[float] = None, pin: bool = True) -> PredictionReport:
    """Record a curve over rank counts ``1..max_procs`` and classify it.

    Rank counts the workload cannot use (e.g. a grid that does not divide
    evenly) are skipped.
    """
    if max_procs < 2:
        raise ValueError(f"max_procs must be >= 2, got {max_procs}")
    counts = [p for p in range(1, max_procs + 1) if workload.supports(p)]
    if len(counts) < 2:
        raise TooFewPoints(f"{workload.name} supports fewer than 2 rank counts up to {max_procs}")
    with contextlib.ExitStack() as stack:
        cpu = stack.enter_context(single_cpu()) if pin else None
        curve = record_curve(workload, counts, config.repetitions, eager_threshold)
    host = {"pinned_cpu": cpu, "single_execution_unit": cpu is not None or os.cpu_count() == 1,
            "proc_counts": counts}
    return build_report(curve, config, workload.name, workload.params(), host)

"""Execution-time, speedup and efficiency formulas.

Everything here is a pure function of its arguments. Modelled bounds and
measured quantities are kept apart: the bound functions return the bound
itself and leave the comparison against measurements to the caller.

Conventions
-----------
``f`` (Amdahl) and ``s`` (Gustafson) are both the *serial* share of the
work, so ``amdahl_bound(0, p) == p`` and ``amdahl_bound(1, p) == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable


class DomainError(ValueError):
    """An argument lies outside the domain of a formula."""


class InvalidProcessorCount(DomainError):
    """Processor count below one."""


class NonPositiveTime(DomainError):
    """A time that must be strictly positive was zero or negative."""


@dataclass(frozen=True)
class TimingBreakdown:
    """Per-rank split of wall time into computation, communication and idle.

    ``t_comp`` is the residual ``wall - t_comm - t_idle``, so ``total()``
    reproduces the measured wall time of the instrumented region.
    """

    t_comp: float
    t_comm: float
    t_idle: float

    def __post_init__(self) -> None:
        for name in ("t_comp", "t_comm", "t_idle"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def from_wall(cls, wall: float, t_comm: float, t_idle: float) -> "TimingBreakdown":
        # clamp guards against sub-ulp negative residuals only
        return cls(t_comp=max(0.0, wall - t_comm - t_idle), t_comm=t_comm, t_idle=t_idle)

    def total(self) -> float:
        return self.t_comp + self.t_comm + self.t_idle

    def as_dict(self) -> dict[str, float]:
        return {"t_comp": self.t_comp, "t_comm": self.t_comm, "t_idle": self.t_idle}


@dataclass(frozen=True)
class ParallelTimeModel:
    """Serial part ``sigma(n)``, parallel part ``phi(n)``, communication ``kappa(n, p)``."""

    sigma: Callable[[float], float]
    phi: Callable[[float], float]
    kappa: Callable[[float, float], float]


@dataclass(frozen=True)
class ModelParams:
    f: float = 0.0
    s: float = 0.0

    def __post_init__(self) -> None:
        _check_fraction("f", self.f)
        _check_fraction("s", self.s)


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def _check_procs(p: float) -> None:
    if p < 1:
        raise InvalidProcessorCount(f"processor count must be >= 1, got {p}")


def parallel_time(model: ParallelTimeModel, n: float, p: float) -> float:
    """Return ``sigma(n) + phi(n)/p + kappa(n, p)``."""
    _check_procs(p)
    sigma = model.sigma(n)
    phi = model.phi(n)
    kappa = model.kappa(n, p)
    if sigma < 0 or phi < 0 or kappa < 0:
        raise DomainError("model terms must be non-negative")
    return sigma + phi / p + kappa


def speedup(t_serial: float, t_parallel: float) -> float:
    if t_serial <= 0 or t_parallel <= 0:
        raise NonPositiveTime(
            f"times must be positive, got t_serial={t_serial}, t_parallel={t_parallel}"
        )
    return t_serial / t_parallel


def amdahl_bound(f: float, p: float) -> float:
    """Upper bound on speedup when a fraction ``f`` of the work is serial."""
    _check_fraction("f", f)
    if p < 1:
        raise DomainError(f"processor count must be >= 1, got {p}")
    return 1.0 / (f + (1.0 - f) / p)


def gustafson_bound(s: float, p: float) -> float:
    """Scaled speedup ``p + (1 - p) s``."""
    _check_fraction("s", s)
    if p < 1:
        raise DomainError(f"processor count must be >= 1, got {p}")
    return p + (1 - p) * s


def efficiency(psi: float, p: float) -> float:
    # not clamped: measured super-linear speedups give values above 1
    if p < 1 or psi < 0:
        raise DomainError(f"need p >= 1 and psi >= 0, got p={p}, psi={psi}")
    return psi / p

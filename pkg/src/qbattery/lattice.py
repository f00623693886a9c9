"""Lattice parameterization, trajectories and unit conventions.

Frequencies and rates are expressed in units of the odd-site gap ``delta_a``
(conventionally 1), times in units of ``1/delta_a``. Sites are numbered
``1..N``; odd sites are of type A, even sites of type B.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, TextIO

import numpy as np


class ValidationError(ValueError):
    """Raised when a parameter set or state violates its invariants."""


@dataclass(frozen=True)
class LatticeSpec:
    """Dimeric open chain of ``n_sites`` two-level systems.

    Constructing field-by-field allows any ``(gamma_a, gamma_b)``; use
    :func:`make_spec` to tie the decay rates to the gaps.
    """

    n_sites: int
    delta_a: float = 1.0
    delta_b: float = 1.0
    gamma_a: float = 0.0
    gamma_b: float = 0.0
    coupling: float = 0.0
    gamma_collective: float = 0.0

    def __post_init__(self):
        n = self.n_sites
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise ValidationError(f"n_sites must be an integer, got {n!r}")
        if n < 2 or n % 2:
            raise ValidationError(f"n_sites must be even and >= 2, got {n}")
        if not self.delta_a > 0:
            raise ValidationError(f"delta_a must be positive, got {self.delta_a}")
        for name in ("gamma_a", "gamma_b", "gamma_collective"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        for f in dataclasses.fields(self):
            if f.name != "n_sites" and not np.isfinite(getattr(self, f.name)):
                raise ValidationError(f"{f.name} must be finite")
        object.__setattr__(self, "n_sites", int(n))

    @property
    def is_uniform(self) -> bool:
        return self.delta_a == self.delta_b and self.gamma_a == self.gamma_b

    def detunings(self) -> np.ndarray:
        """Gap of every site, index 0 holding site 1."""
        return np.where(np.arange(1, self.n_sites + 1) % 2 == 1, self.delta_a, self.delta_b)

    def decay_rates(self) -> np.ndarray:
        return np.where(np.arange(1, self.n_sites + 1) % 2 == 1, self.gamma_a, self.gamma_b)

    def energy_scale(self) -> float:
        """Normalization ``sum_j delta_j / 2`` used for energy and population."""
        return float(np.sum(self.detunings()) / 2)

    def replace(self, **changes) -> "LatticeSpec":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def make_spec(n_sites: int, delta_b_ratio: float, gamma_over_gap: float,
              coupling: float) -> LatticeSpec:
    """Dimeric chain with ``delta_a = 1`` and decay proportional to the gap.

    >>> s = make_spec(50, 0.25, 0.05, 0.05)
    >>> s.gamma_a, s.gamma_b
    (0.05, 0.0125)
    """
    if not delta_b_ratio > 0:
        raise ValidationError(f"delta_b_ratio must be positive, got {delta_b_ratio}")
    if delta_b_ratio > 1:
        raise ValidationError(f"delta_b_ratio must not exceed 1, got {delta_b_ratio}")
    if not gamma_over_gap >= 0:
        raise ValidationError(f"gamma_over_gap must be non-negative, got {gamma_over_gap}")
    return LatticeSpec(
        n_sites=n_sites,
        delta_a=1.0,
        delta_b=float(delta_b_ratio),
        gamma_a=float(gamma_over_gap),
        gamma_b=float(gamma_over_gap) * float(delta_b_ratio),
        coupling=float(coupling),
        gamma_collective=0.0,
    )


def site_params(spec: LatticeSpec, j: int) -> tuple[float, float]:
    """Return ``(detuning, decay)`` of 1-based site ``j``."""
    check_site(spec, j)
    if j % 2 == 1:
        return spec.delta_a, spec.gamma_a
    return spec.delta_b, spec.gamma_b


def check_site(spec: LatticeSpec, j: int) -> None:
    if not 1 <= j <= spec.n_sites:
        raise IndexError(f"site {j} outside 1..{spec.n_sites}")


def sample_times(dt: float, n_steps: int, sample_every: int) -> np.ndarray:
    """Times ``k * dt`` of every ``sample_every``-th step, starting at 0."""
    idx = np.arange(0, n_steps + 1, sample_every)
    return idx * dt


@dataclass(frozen=True)
class Trajectory:
    """Sampled observables on a common time grid.

    ``columns`` maps observable names (``sigma_z_3``, ``energy``, ...) to real
    arrays with one entry per time point.
    """

    times: np.ndarray
    columns: Mapping[str, np.ndarray]
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1:
            raise ValidationError("times must be one-dimensional")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValidationError("times must be strictly increasing")
        times.flags.writeable = False
        cols = {}
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.shape != times.shape:
                raise ValidationError(
                    f"column {name!r} has {arr.size} values for {times.size} times")
            arr.flags.writeable = False
            cols[name] = arr
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "meta", dict(self.meta))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return self.times.size

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def write_csv(self, fh: TextIO, comments: Iterable[str] = ()) -> None:
        """Write ``t`` plus every column with 17 significant digits to a text stream."""
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *self.columns])
        data = np.column_stack([self.times, *self.columns.values()])
        for row in data:
            writer.writerow([format(x, ".17g") for x in row])

    def to_csv(self, path, comments: Iterable[str] = ()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self.write_csv(fh, comments)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        comments = []
        with open(path, newline="", encoding="utf-8") as fh:
            lines = []
            for line in fh:
                if line.startswith("#"):
                    comments.append(line[1:].strip())
                elif line.strip():
                    lines.append(line)
        reader = csv.reader(lines)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValidationError(f"{path}: first column must be 't'")
        rows = np.array([[float(x) for x in row] for row in reader], dtype=float)
        rows = rows.reshape(-1, len(header))
        cols = {name: rows[:, i] for i, name in enumerate(header[1:], start=1)}
        return cls(rows[:, 0], cols, {"comments": comments, "source": str(path)})

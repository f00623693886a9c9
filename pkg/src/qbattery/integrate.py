"""Fixed-step classic Runge-Kutta stepping shared by the cumulant and oracle engines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qbattery.lattice import ValidationError, sample_times


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.01
    t_end: float = 100.0
    sample_every: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ValidationError(f"t_end must be >= dt, got {self.t_end}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValidationError(f"sample_every must be a positive integer, got {self.sample_every}")
        object.__setattr__(self, "sample_every", int(self.sample_every))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def times(self) -> np.ndarray:
        return sample_times(self.dt, self.n_steps, self.sample_every)


Derivative = Callable[[np.ndarray, np.ndarray], None]


def rk4_step(f: Derivative, y: np.ndarray, dt: float, work: tuple | None = None) -> None:
    """Advance ``y`` in place by one classic RK4 step.

    ``f(y, out)`` writes ``dy/dt`` into ``out``. ``work`` holds three scratch
    arrays shaped like ``y``; passing it avoids reallocating per step.
    """
    k, acc, tmp = work if work is not None else (np.empty_like(y), np.empty_like(y), np.empty_like(y))
    f(y, k)
    acc[...] = k
    np.multiply(k, 0.5 * dt, out=tmp)
    tmp += y
    f(tmp, k)
    k *= 2.0
    acc += k
    np.multiply(k, 0.25 * dt, out=tmp)
    tmp += y
    f(tmp, k)
    k *= 2.0
    acc += k
    np.multiply(k, 0.5 * dt, out=tmp)
    tmp += y
    f(tmp, k)
    acc += k
    acc *= dt / 6.0
    y += acc


def rk4(f: Derivative, y0: np.ndarray, cfg: IntegratorConfig,
        on_sample: Callable[[int, float, np.ndarray], None],
        on_step: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """Integrate the autonomous system ``dy/dt = f(y)`` and return the final state.

    ``on_sample(k, t, y)`` is called at ``t = 0`` and after every
    ``cfg.sample_every`` steps; ``on_step(step, y)`` after every step. Either
    callback may raise to abort the run. Callbacks must not keep references
    to ``y``, which is updated in place.
    """
    y = np.array(y0, copy=True)
    work = (np.empty_like(y), np.empty_like(y), np.empty_like(y))
    dt = cfg.dt
    on_sample(0, 0.0, y)
    k = 0
    for step in range(1, cfg.n_steps + 1):
        rk4_step(f, y, dt, work)
        if on_step is not None:
            on_step(step, y)
        if step % cfg.sample_every == 0:
            k += 1
            on_sample(k, step * dt, y)
    return y

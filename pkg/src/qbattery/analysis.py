"""Figures of merit built from trajectories: energies, excess, exponents, sweeps, synchrony."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from qbattery.cumulant import CumulantState, init_fully_charged, integrate
from qbattery.integrate import IntegratorConfig
from qbattery.lattice import LatticeSpec, Trajectory, ValidationError

ILL_CONDITIONED = 0.05


class AnalysisError(ValueError):
    """Input data cannot support the requested figure of merit."""


class GridMismatch(AnalysisError):
    """Two trajectories do not share a time grid."""


def energy_from_cumulant(spec: LatticeSpec, state: CumulantState) -> float:
    """Normalized energy ``<H_S> / (sum_j delta_j / 2)``.

    Each lattice is normalized by its own gap sum, which is what lets runs
    of different size and detuning be compared.
    """
    w = spec.detunings() / 2
    hop = sum(state.correlation(j, j + 1).real for j in range(1, spec.n_sites))
    return float((w @ state.sz + 2 * spec.coupling * hop) / spec.energy_scale())


def population_from_cumulant(spec: LatticeSpec, state: CumulantState) -> float:
    """Gap-weighted mean population ``sum_j (delta_j/2) sz_j / sum_j (delta_j/2)``."""
    w = spec.detunings() / 2
    return float((w @ state.sz) / spec.energy_scale())


@dataclass(frozen=True)
class ExcessReport:
    """Pointwise comparison of an engineered run ``d`` with a reference run ``u``.

    ``ill_conditioned`` marks times where ``|E_u| < 0.05``; the relative
    excess there is dominated by the zero crossing of the reference energy.
    """

    times: np.ndarray
    relative_excess: np.ndarray
    absolute_excess: np.ndarray
    ill_conditioned: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def well_conditioned(self) -> np.ndarray:
        return ~self.ill_conditioned


def _same_grid(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-9 * max(1.0, float(np.max(np.abs(a)))))


def excess_report(traj_d: Trajectory, traj_u: Trajectory, column: str = "energy") -> ExcessReport:
    if not _same_grid(traj_d.times, traj_u.times):
        raise GridMismatch(
            f"time grids differ ({traj_d.times.size} vs {traj_u.times.size} points)")
    for tr, label in ((traj_d, "first"), (traj_u, "second")):
        if column not in tr.columns:
            raise AnalysisError(f"{label} trajectory has no {column!r} column")
    e_d = traj_d.columns[column]
    e_u = traj_u.columns[column]
    ill = np.abs(e_u) < ILL_CONDITIONED
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = (e_d - e_u) / e_u
    meta = {"spec_d": traj_d.meta.get("spec"), "spec_u": traj_u.meta.get("spec"), "column": column}
    return ExcessReport(traj_d.times.copy(), rel, e_d - e_u, ill, meta)


def default_window(times: np.ndarray) -> tuple[float, float]:
    """Final third of the sampled range."""
    t0, t1 = float(times[0]), float(times[-1])
    return (t0 + 2 * (t1 - t0) / 3, t1)


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    prefactor: float
    window: tuple[float, float]
    n_points: int
    n_excluded: int


def power_law_fit(report: ExcessReport, window: tuple[float, float] | None = None) -> PowerLawFit:
    """Least-squares slope of ``log(E_d/E_u)`` against ``log t`` on ``window``.

    ``E_d/E_u`` is taken as ``1 + relative_excess``. Ill-conditioned times are
    excluded; any remaining nonpositive ratio or time is an error.
    """
    t = report.times
    if window is None:
        window = default_window(t)
    t0, t1 = window
    if not t0 < t1:
        raise AnalysisError(f"empty fit window {window}")
    inside = (t >= t0) & (t <= t1)
    keep = inside & report.well_conditioned
    if keep.sum() < 2:
        raise AnalysisError(f"fewer than two usable points in window {window}")
    tt = t[keep]
    ratio = 1.0 + report.relative_excess[keep]
    if np.any(tt <= 0) or np.any(~(ratio > 0)):
        raise AnalysisError(f"nonpositive time or energy ratio inside window {window}")
    slope, intercept = np.polyfit(np.log(tt), np.log(ratio), 1)
    return PowerLawFit(float(slope), float(np.exp(intercept)), (float(t0), float(t1)),
                       int(keep.sum()), int((inside & report.ill_conditioned).sum()))


def turnover_time(report: ExcessReport) -> float:
    """Time of the largest absolute excess; ties resolve to the earliest."""
    a = report.absolute_excess
    k = int(np.argmax(a))
    if k == 0 or k == a.size - 1 or np.all(a == a[0]):
        raise AnalysisError("no interior turnover in range")
    return float(report.times[k])


@dataclass(frozen=True)
class SweepPoint:
    ratio: float
    relative_excess: float | None
    error: str | None = None


def _sweep_energy(args):
    spec, cfg = args
    try:
        tr, _ = integrate(spec, init_fully_charged(spec), cfg, names=["energy"])
        return tr.times, tr.columns["energy"], None
    except Exception as exc:  # reported per ratio, the sweep carries on
        return None, None, f"{type(exc).__name__}: {exc}"


def ratio_sweep(base_spec: LatticeSpec, ratios, t_probe: float,
                cfg: IntegratorConfig | None = None, workers: int | None = None) -> list[SweepPoint]:
    """Relative energy excess at ``t_probe`` for dimeric lattices of each ratio.

    Every ratio reuses ``base_spec`` with ``delta_b = ratio * delta_a`` and
    ``gamma_b = ratio * gamma_a``; the reference is ``ratio = 1``. Output order
    follows the input order regardless of ``workers``.
    """
    ratios = [float(r) for r in ratios]
    if cfg is None:
        cfg = IntegratorConfig(dt=0.01, t_end=t_probe, sample_every=max(1, int(round(t_probe / 0.01))))
    if not 0 <= t_probe <= cfg.t_end + 1e-12:
        raise ValidationError(f"t_probe={t_probe} outside [0, {cfg.t_end}]")
    a = base_spec
    jobs = [(a.replace(delta_b=a.delta_a, gamma_b=a.gamma_a), cfg)]
    bad = {}
    for i, r in enumerate(ratios):
        if not 0 < r <= 1:
            bad[i] = f"ratio {r} outside (0, 1]"
            jobs.append(None)
        else:
            jobs.append((a.replace(delta_b=r * a.delta_a, gamma_b=r * a.gamma_a), cfg))
    todo = [j for j in jobs if j is not None]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_sweep_energy, todo))
    else:
        done = [_sweep_energy(j) for j in todo]
    it = iter(done)
    results = [next(it) if j is not None else None for j in jobs]
    times, e_u, err_u = results[0]
    if err_u is not None:
        raise AnalysisError(f"uniform reference run failed: {err_u}")
    k = int(np.argmin(np.abs(times - t_probe)))
    out = []
    for i, r in enumerate(ratios):
        if i in bad:
            out.append(SweepPoint(r, None, bad[i]))
            continue
        _, e_d, err = results[i + 1]
        if err is not None:
            out.append(SweepPoint(r, None, err))
        else:
            out.append(SweepPoint(r, float((e_d[k] - e_u[k]) / e_u[k])))
    return out


def synchronization_score(x1, x2, times=None, window: tuple[float, float] | None = None) -> float:
    """Pearson correlation of two signals, optionally restricted to a time window.

    ``-1`` means perfect anti-phase. Constant signals have no defined score.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise GridMismatch(f"signals have shapes {x1.shape} and {x2.shape}")
    if window is not None:
        if times is None:
            raise AnalysisError("a window needs the time grid")
        times = np.asarray(times, dtype=float)
        sel = (times >= window[0]) & (times <= window[1])
        x1, x2 = x1[sel], x2[sel]
    if x1.size < 2:
        raise AnalysisError("window holds fewer than two samples")
    a = x1 - x1.mean()
    b = x2 - x2.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    scale = max(np.max(np.abs(x1)), np.max(np.abs(x2)), 1e-300)
    if na <= 1e-14 * scale * np.sqrt(x1.size) or nb <= 1e-14 * scale * np.sqrt(x2.size):
        raise AnalysisError("zero-variance signal in window")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))

"""Second-order cumulant dynamics of the fully charged chain.

The state is ``sz_j = <sigma_j^z>`` and ``C_nm = <sigma_n^+ sigma_m^->`` for
``n < m``. Entries with ``n > m`` are conjugates and the diagonal is pinned to
``(1 + sz_n) / 2``. Three-operator averages are closed as
``<sz_n s_m^+ s_h^-> ~ <sz_n> <s_m^+ s_h^->``, which gives, with ``C`` the full
Hermitian matrix and out-of-chain sites dropped,

    d sz_j/dt = 4 coupling Im(C_{j,j+1} + C_{j,j-1}) - gamma_j (1 + sz_j)
    d C_nm/dt = [i(delta_n - delta_m) - (gamma_n + gamma_m)/2] C_nm
                - i coupling sz_n (C_{n-1,m} + C_{n+1,m})
                + i coupling sz_m (C_{n,m-1} + C_{n,m+1}).

For ``m = n + 1`` the substituted diagonal reproduces the
``-i coupling/2 (sz_n - sz_m)`` source exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qbattery.integrate import IntegratorConfig, rk4
from qbattery.lattice import LatticeSpec, Trajectory, ValidationError, check_site

SLACK = 1e-6
ABORT = 1e-3


class CumulantInstability(RuntimeError):
    """Populations or correlations left their physical range during integration."""


@dataclass(frozen=True)
class CumulantState:
    """Populations ``sz`` (length N) and strictly-upper correlations packed row-major."""

    sz: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        sz = np.array(self.sz, dtype=float)
        n = sz.size
        corr = np.array(self.corr, dtype=complex)
        if corr.shape != (n * (n - 1) // 2,):
            raise ValidationError(f"expected {n * (n - 1) // 2} packed correlations, got {corr.shape}")
        sz.flags.writeable = False
        corr.flags.writeable = False
        object.__setattr__(self, "sz", sz)
        object.__setattr__(self, "corr", corr)

    @property
    def n_sites(self) -> int:
        return self.sz.size

    def violation(self) -> float:
        """Amount by which the state exceeds ``|sz| <= 1`` and ``|C| <= 1``."""
        v = float(np.max(np.abs(self.sz))) - 1.0
        if self.corr.size:
            v = max(v, float(np.max(np.abs(self.corr))) - 1.0)
        return max(v, 0.0)

    def is_valid(self, slack: float = SLACK) -> bool:
        return self.violation() <= slack

    def matrix(self) -> np.ndarray:
        """Full Hermitian correlation matrix with the derived diagonal."""
        return unpack(self.sz, self.corr)

    def correlation(self, n: int, m: int) -> complex:
        """``<sigma_n^+ sigma_m^->`` for 1-based sites."""
        if n == m:
            return complex((1 + self.sz[n - 1]) / 2)
        lo, hi = min(n, m), max(n, m)
        c = self.corr[_packed_index(self.n_sites, lo - 1, hi - 1)]
        return c if n < m else np.conj(c)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.sz.astype(complex), self.corr])

    @classmethod
    def from_vector(cls, y: np.ndarray, n_sites: int) -> "CumulantState":
        return cls(y[:n_sites].real, y[n_sites:])


def _packed_index(n: int, i: int, j: int) -> int:
    # row-major position of (i, j), i < j, among the strictly-upper entries
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def unpack(sz: np.ndarray, corr: np.ndarray) -> np.ndarray:
    n = sz.size
    iu = np.triu_indices(n, 1)
    c = np.zeros((n, n), complex)
    c[iu] = corr
    c = c + c.conj().T
    c[np.diag_indices(n)] = (1 + np.asarray(sz)) / 2
    return c


def init_fully_charged(spec: LatticeSpec) -> CumulantState:
    n = spec.n_sites
    return CumulantState(np.ones(n), np.zeros(n * (n - 1) // 2, complex))


def init_ground(spec: LatticeSpec) -> CumulantState:
    n = spec.n_sites
    return CumulantState(-np.ones(n), np.zeros(n * (n - 1) // 2, complex))


def total_excitation(state: CumulantState) -> float:
    return float(np.sum((1 + state.sz) / 2))


class CumulantRHS:
    """Right-hand side on the flat vector ``[sz (as complex), packed C]``."""

    def __init__(self, spec: LatticeSpec):
        if spec.gamma_collective != 0:
            raise ValidationError(
                "the cumulant closure is only available without the collective channel; "
                "use the exact oracle (qbattery.oracle) for nonzero gamma_collective")
        n = self.n = spec.n_sites
        d = spec.detunings()
        g = spec.decay_rates()
        self.gamma = g
        self.lam = spec.coupling
        self.iu = np.triu_indices(n, 1)
        self.diag = np.diag_indices(n)
        self.linear = (1j * (d[:, None] - d[None, :]) - (g[:, None] + g[None, :]) / 2)[self.iu]
        self._c = np.zeros((n, n), complex)
        self._tc = np.zeros((n, n), complex)
        self._ct = np.zeros((n, n), complex)

    def full(self, y: np.ndarray) -> np.ndarray:
        n = self.n
        c = self._c
        c.fill(0)
        c[self.iu] = y[n:]
        c += c.conj().T
        c[self.diag] = (1 + y[:n].real) / 2
        return c

    def __call__(self, y: np.ndarray, out: np.ndarray) -> None:
        n, lam = self.n, self.lam
        sz = y[:n].real
        c = self.full(y)
        nn = np.diagonal(c, 1)
        # population equations: nearest-neighbour currents cancel pairwise in the sum over j
        dsz = -self.gamma * (1 + sz)
        dsz[:-1] += 4 * lam * nn.imag
        dsz[1:] -= 4 * lam * nn.imag
        out[:n] = dsz
        # (T C)_{nm} = C_{n-1,m} + C_{n+1,m};  (C T)_{nm} = C_{n,m-1} + C_{n,m+1}
        tc, ct = self._tc, self._ct
        tc[0] = 0
        tc[1:] = c[:-1]
        tc[:-1] += c[1:]
        ct[:, 0] = 0
        ct[:, 1:] = c[:, :-1]
        ct[:, :-1] += c[:, 1:]
        hop = (-1j * lam) * (sz[:, None] * tc - ct * sz[None, :])
        out[n:] = self.linear * y[n:] + hop[self.iu]


def derivative(spec: LatticeSpec, state: CumulantState) -> CumulantState:
    """Time derivative of ``state`` packaged as a (rate-valued) :class:`CumulantState`."""
    rhs = CumulantRHS(spec)
    y = state.to_vector()
    out = np.empty_like(y)
    rhs(y, out)
    n = spec.n_sites
    rate = object.__new__(CumulantState)
    object.__setattr__(rate, "sz", out[:n].real.copy())
    object.__setattr__(rate, "corr", out[n:].copy())
    return rate


CUMULANT_OBS_PREFIXES = ("sigma_z_", "corr_re_", "corr_im_")
CUMULANT_GLOBAL_OBS = ("energy", "population", "excitation")


def _observable_fn(spec: LatticeSpec, name: str):
    n = spec.n_sites
    parts = name.split("_")
    if name.startswith("sigma_z_") and len(parts) == 3:
        j = int(parts[2])
        check_site(spec, j)
        return lambda sz, y: sz[j - 1]
    if name.startswith(("corr_re_", "corr_im_")) and len(parts) == 4:
        a, b = int(parts[2]), int(parts[3])
        check_site(spec, a)
        check_site(spec, b)
        if a == b:
            if parts[1] == "re":
                return lambda sz, y: (1 + sz[a - 1]) / 2
            return lambda sz, y: 0.0
        k = n + _packed_index(n, min(a, b) - 1, max(a, b) - 1)
        if parts[1] == "re":
            return lambda sz, y: y[k].real
        sign = 1.0 if a < b else -1.0
        return lambda sz, y: sign * y[k].imag
    if name == "energy":
        w = spec.detunings() / 2
        scale = spec.energy_scale()
        idx = n + np.array([_packed_index(n, i, i + 1) for i in range(n - 1)], dtype=int)
        return lambda sz, y: (w @ sz + 2 * spec.coupling * np.sum(y[idx].real)) / scale
    if name == "population":
        w = spec.detunings() / 2
        scale = spec.energy_scale()
        return lambda sz, y: (w @ sz) / scale
    if name == "excitation":
        return lambda sz, y: np.sum((1 + sz) / 2)
    raise ValidationError(f"observable {name!r} is not available from the cumulant engine")


def integrate(spec: LatticeSpec, state0: CumulantState, cfg: IntegratorConfig,
              names=None) -> tuple[Trajectory, CumulantState]:
    """Fixed-step RK4 run; returns sampled observables and the final state.

    Default columns are every ``sigma_z_j`` plus energy, population and
    excitation. The run aborts with :class:`CumulantInstability` once the
    state leaves its physical range by more than ``1e-3``.
    """
    n = spec.n_sites
    if state0.n_sites != n:
        raise ValidationError(f"state has {state0.n_sites} sites, lattice has {n}")
    if names is None:
        names = [f"sigma_z_{j}" for j in range(1, n + 1)] + list(CUMULANT_GLOBAL_OBS)
    fns = {name: _observable_fn(spec, name) for name in names}
    rhs = CumulantRHS(spec)
    times = cfg.times()
    cols = {name: np.empty(times.size) for name in names}

    def on_step(step, y):
        worst = max(np.max(np.abs(y[:n].real)), np.max(np.abs(y[n:]), initial=0.0)) - 1.0
        if not worst <= ABORT:
            raise CumulantInstability(
                f"t={step * cfg.dt:g}: state left the physical range by {worst:.3g}; "
                f"try a smaller dt than {cfg.dt:g}")

    def on_sample(k, t, y):
        sz = y[:n].real
        for name, fn in fns.items():
            cols[name][k] = fn(sz, y)

    y_final = rk4(rhs, state0.to_vector(), cfg, on_sample, on_step)
    final = CumulantState.from_vector(y_final, n)
    meta = {"spec": spec, "engine": "cumulant", "dt": cfg.dt}
    return Trajectory(times, cols, meta), final

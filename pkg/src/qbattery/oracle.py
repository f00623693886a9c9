"""Brute-force Lindblad propagation on the full ``2^N``-dimensional spin space.

Basis convention: site 1 is the most significant qubit and the local basis
is ``(|up>, |down>)``, so index 0 is the fully charged state and index
``2^N - 1`` the ground state ``|g>``.

The generator is

    drho/dt = -i[H, rho] + sum_j gamma_j D[s_j^-] rho + Gamma D[J^-] rho,
    D[O] rho = O rho O^+ - {O^+ O, rho} / 2,

with ``H = sum_j delta_j/2 sz_j + coupling sum_j (s_j^+ s_{j+1}^- + h.c.)``.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse

from qbattery.integrate import IntegratorConfig, rk4
from qbattery.lattice import LatticeSpec, Trajectory, ValidationError, check_site

MAX_SITES = 12


class InvariantBreach(RuntimeError):
    """Density matrix left the physical set during propagation."""


def purcell_rate(eta: float, kappa: float) -> float:
    """Collective emission rate ``4 eta^2 / kappa`` of the bad-cavity limit."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if eta / kappa >= 0.1:
        warnings.warn(f"eta/kappa = {eta / kappa:.3g} is outside the bad-cavity regime",
                      RuntimeWarning, stacklevel=2)
    return 4 * eta**2 / kappa


# -- operators -----------------------------------------------------------------

def _bit(n_sites: int, j: int) -> int:
    return n_sites - j


def sigma_minus(n_sites: int, j: int) -> sparse.csr_matrix:
    """Lowering operator on site ``j`` (1-based) as a sparse ``2^N x 2^N`` matrix."""
    dim = 2**n_sites
    b = 1 << _bit(n_sites, j)
    idx = np.arange(dim)
    up = idx[(idx & b) == 0]  # local index 0 is |up>
    return sparse.csr_matrix((np.ones(up.size), (up | b, up)), shape=(dim, dim))


def sigma_z_diag(n_sites: int, j: int) -> np.ndarray:
    idx = np.arange(2**n_sites)
    return np.where(idx & (1 << _bit(n_sites, j)), -1.0, 1.0)


def hamiltonian(spec: LatticeSpec) -> sparse.csr_matrix:
    n = spec.n_sites
    dim = 2**n
    diag = np.zeros(dim)
    for j, d in enumerate(spec.detunings(), start=1):
        diag += d / 2 * sigma_z_diag(n, j)
    h = sparse.diags(diag).tocsr().astype(complex)
    for j in range(1, n):
        hop = sigma_minus(n, j).T @ sigma_minus(n, j + 1)
        h = h + spec.coupling * (hop + hop.T)
    return h.tocsr()


@njit(cache=True)
def _local_generator(rho, gap, partners, lam, bits, gammas, out):
    """Commutator with ``H``, local anticommutators and local jumps, fused.

    ``partners[a]`` lists the states reached from basis state ``a`` by one
    nearest-neighbour flip-flop (padded with -1); ``gap[a, b]`` holds
    ``E_a - conj(E_b)`` with ``E`` the diagonal of ``H - i/2 sum_j gamma_j n_j``.
    """
    dim = rho.shape[0]
    nb = partners.shape[1]
    for a in range(dim):
        for b in range(dim):
            out[a, b] = gap[a, b] * rho[a, b]
        for k in range(nb):
            p = partners[a, k]
            if p < 0:
                break
            for b in range(dim):
                out[a, b] += lam * rho[p, b]
        for b in range(dim):
            acc = 0j
            for k in range(nb):
                q = partners[b, k]
                if q < 0:
                    break
                acc += rho[a, q]
            out[a, b] = -1j * (out[a, b] - lam * acc)
    for s in range(bits.size):
        bt = bits[s]
        g = gammas[s]
        if g == 0.0:
            continue
        # s^- rho s^+ feeds |down><down| of site s from |up><up| (set bit = down)
        for a in range(dim):
            if a & bt:
                for b in range(dim):
                    if b & bt:
                        out[a, b] += g * rho[a ^ bt, b ^ bt]


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """Callable superoperator ``rho -> drho/dt`` on dense ``2^N x 2^N`` arrays.

    With ``frame != 0`` the state is evolved in the frame rotating at
    ``frame`` per unit of total ``sz / 2``. Every term of the master equation
    commutes with that rotation, so only operators changing the excitation
    number pick up a phase (handled by :func:`propagate`); the payoff is
    smaller residual frequencies and therefore a smaller RK4 error.
    """

    spec: LatticeSpec
    h: sparse.csr_matrix
    j_minus: sparse.csr_matrix
    gap: np.ndarray
    partners: np.ndarray
    bits: np.ndarray
    frame: float = 0.0

    @property
    def n_sites(self) -> int:
        return self.spec.n_sites

    @property
    def dim(self) -> int:
        return 2**self.spec.n_sites

    def __call__(self, rho: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        rho = np.ascontiguousarray(rho, dtype=complex)
        if out is None:
            out = np.empty_like(rho)
        _local_generator(rho, self.gap, self.partners, float(self.spec.coupling), self.bits,
                         self.spec.decay_rates().astype(float), out)
        gc = self.spec.gamma_collective
        if gc:
            jm = self.j_minus
            jpjm = (jm.T @ jm).tocsr()
            out += gc * (jm @ (jm @ rho.conj().T).conj().T)
            out -= 0.5 * gc * (jpjm @ rho + (jpjm @ rho.conj().T).conj().T)
        return out

    def apply_vec(self, y: np.ndarray, out: np.ndarray) -> None:
        self(y.reshape(self.dim, self.dim), out.reshape(self.dim, self.dim))


def _flip_partners(n_sites: int) -> np.ndarray:
    dim = 2**n_sites
    idx = np.arange(dim)
    partners = -np.ones((dim, max(n_sites - 1, 1)), dtype=np.int64)
    count = np.zeros(dim, dtype=np.int64)
    for j in range(1, n_sites):
        mask = (1 << _bit(n_sites, j)) | (1 << _bit(n_sites, j + 1))
        x = idx & mask
        hit = (x != 0) & (x != mask)
        partners[idx[hit], count[hit]] = idx[hit] ^ mask
        count[hit] += 1
    return partners


def build_generator(spec: LatticeSpec, max_sites: int = MAX_SITES,
                    frame: float = 0.0) -> LindbladGenerator:
    n = spec.n_sites
    if n > max_sites:
        raise ValidationError(f"oracle is capped at {max_sites} sites (got {n}): "
                              f"{4**n} density-matrix entries")
    dim = 2**n
    jm = sparse.csr_matrix((dim, dim), dtype=float)
    energy = np.zeros(dim)
    damp = np.zeros(dim)
    for j, (d, g) in enumerate(zip(spec.detunings(), spec.decay_rates()), start=1):
        sz = sigma_z_diag(n, j)
        energy += (d - frame) / 2 * sz
        damp += g * (1 + sz) / 2
        jm = jm + sigma_minus(n, j)
    e_eff = energy - 0.5j * damp
    gap = np.ascontiguousarray(e_eff[:, None] - np.conj(e_eff)[None, :])
    bits = np.array([1 << _bit(n, j) for j in range(1, n + 1)], dtype=np.int64)
    return LindbladGenerator(spec, hamiltonian(spec), jm.tocsr(), gap, _flip_partners(n), bits,
                             float(frame))


# -- states ----------------------------------------------------------------------

def basis_index(n_sites: int, excited: set[int] | frozenset[int]) -> int:
    """Index of the product state with the given sites up and the rest down."""
    idx = 2**n_sites - 1
    for j in excited:
        idx &= ~(1 << _bit(n_sites, j))
    return idx


def product_state_dm(n_sites: int, excited=()) -> np.ndarray:
    dim = 2**n_sites
    rho = np.zeros((dim, dim), complex)
    i = basis_index(n_sites, set(excited))
    rho[i, i] = 1.0
    return rho


def ground_state_dm(n_sites: int) -> np.ndarray:
    return product_state_dm(n_sites)


def fully_charged_dm(n_sites: int) -> np.ndarray:
    return product_state_dm(n_sites, range(1, n_sites + 1))


def pure_state_dm(n_sites: int, amp_g: complex, amp_e) -> np.ndarray:
    """Density matrix of ``amp_g |g> + sum_j amp_e[j-1] |e_j>``."""
    psi = np.zeros(2**n_sites, complex)
    psi[basis_index(n_sites, set())] = amp_g
    for j, a in enumerate(amp_e, start=1):
        psi[basis_index(n_sites, {j})] += a
    return np.outer(psi, psi.conj())


def density_matrix_errors(rho: np.ndarray, positivity: bool = True) -> dict[str, float]:
    """Deviation of ``rho`` from Hermiticity, unit trace and positivity."""
    out = {
        "hermiticity": float(np.max(np.abs(rho - rho.conj().T))),
        "trace": float(abs(np.trace(rho) - 1)),
    }
    if positivity:
        herm = (rho + rho.conj().T) / 2
        out["positivity"] = float(max(0.0, -np.linalg.eigvalsh(herm).min()))
    return out


def validate_density_matrix(rho: np.ndarray, tol: float = 1e-10, pos_tol: float = 1e-8) -> None:
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or dim & (dim - 1):
        raise ValidationError(f"density matrix must be 2^N x 2^N, got {rho.shape}")
    err = density_matrix_errors(rho)
    if err["hermiticity"] > tol or err["trace"] > tol or err["positivity"] > pos_tol:
        raise ValidationError(f"invalid density matrix: {err}")


# -- observables -------------------------------------------------------------------

_SITE_OBS = re.compile(r"^(sigma_z|sigma_x|sigma_y)_(\d+)$")
_PAIR_OBS = re.compile(r"^corr_(re|im)_(\d+)_(\d+)$")
GLOBAL_OBS = ("energy", "population", "excitation")


class _Measurer:
    """Evaluates named observables on dense density matrices."""

    def __init__(self, gen: LindbladGenerator, names):
        self.spec = gen.spec
        n = self.spec.n_sites
        self.names = list(names)
        self._sz = {}
        self._lower = {}
        self._pair = {}
        for name in self.names:
            if m := _SITE_OBS.match(name):
                j = int(m.group(2))
                check_site(self.spec, j)
                if m.group(1) == "sigma_z":
                    self._sz[j] = sigma_z_diag(n, j)
                else:
                    self._lower[j] = sigma_minus(n, j)
            elif m := _PAIR_OBS.match(name):
                a, b = int(m.group(2)), int(m.group(3))
                check_site(self.spec, a)
                check_site(self.spec, b)
                self._pair[(a, b)] = (sigma_minus(n, a).T @ sigma_minus(n, b)).tocsr()
            elif name not in GLOBAL_OBS:
                raise ValidationError(f"unknown observable {name!r}")
        self._zall = np.array([sigma_z_diag(n, j) for j in range(1, n + 1)])
        self._h = gen.h

    @staticmethod
    def _expect(op: sparse.spmatrix, rho: np.ndarray) -> complex:
        # Tr(op rho) = sum_ab op_ab rho_ba
        coo = op.tocoo()
        return complex(np.sum(coo.data * rho[coo.col, coo.row]))

    def __call__(self, rho: np.ndarray, phase: complex = 1.0) -> dict[str, float]:
        """``phase`` multiplies ``<s^->`` (rotating-frame states)."""
        p = np.real(np.diag(rho))
        out = {}
        for name in self.names:
            if m := _SITE_OBS.match(name):
                j = int(m.group(2))
                if m.group(1) == "sigma_z":
                    out[name] = float(self._sz[j] @ p)
                else:
                    lower = phase * self._expect(self._lower[j], rho)
                    # s^- = (sx - i sy) / 2
                    out[name] = 2 * lower.real if m.group(1) == "sigma_x" else -2 * lower.imag
            elif m := _PAIR_OBS.match(name):
                c = self._expect(self._pair[(int(m.group(2)), int(m.group(3)))], rho)
                out[name] = c.real if m.group(1) == "re" else c.imag
            elif name == "energy":
                out[name] = self._expect(self._h, rho).real / self.spec.energy_scale()
            elif name == "population":
                sz = self._zall @ p
                out[name] = float(np.sum(self.spec.detunings() / 2 * sz) / self.spec.energy_scale())
            elif name == "excitation":
                out[name] = float(np.sum((1 + self._zall @ p) / 2))
        return out


def observables(rho: np.ndarray, spec: LatticeSpec, names=None) -> dict[str, float]:
    """Per-site ``sigma_z``/``sigma_x``, pair correlations, normalized energy and population.

    Without ``names`` every observable is returned, pairs for all ``n < m``.
    """
    n = spec.n_sites
    if names is None:
        names = default_observables(n, pairs=True)
    return _Measurer(build_generator(spec), names)(rho)


def default_observables(n_sites: int, pairs: bool = False) -> list[str]:
    names = [f"sigma_z_{j}" for j in range(1, n_sites + 1)]
    names += [f"sigma_x_{j}" for j in range(1, n_sites + 1)]
    if pairs:
        for a in range(1, n_sites + 1):
            for b in range(a + 1, n_sites + 1):
                names += [f"corr_re_{a}_{b}", f"corr_im_{a}_{b}"]
    return names + list(GLOBAL_OBS)


def propagate(gen: LindbladGenerator, rho0: np.ndarray, cfg: IntegratorConfig,
              names=None, breach_tol: float = 1e-6) -> tuple[Trajectory, np.ndarray]:
    """RK4 propagation recording ``names`` at the sampled times.

    The returned final state is in the generator's frame (the lab frame
    unless ``gen.frame`` is set).

    Trace and Hermiticity are checked at every sample, positivity at every
    sample for ``N <= 8`` and at the end otherwise; a breach beyond
    ``breach_tol`` raises :class:`InvariantBreach`.
    """
    n = gen.n_sites
    validate_density_matrix(rho0)
    if names is None:
        names = [f"sigma_z_{j}" for j in range(1, n + 1)] + list(GLOBAL_OBS)
    measure = _Measurer(gen, names)
    times = cfg.times()
    cols = {name: np.empty(times.size) for name in names}
    check_pos = n <= 8

    def check(t, rho, positivity):
        err = density_matrix_errors(rho, positivity)
        worst = max(err.values())
        if worst > breach_tol:
            raise InvariantBreach(f"t={t:g}: density-matrix invariant breached {err}; "
                                  f"reduce dt (currently {cfg.dt:g})")

    def on_sample(k, t, y):
        rho = y.reshape(gen.dim, gen.dim)
        check(t, rho, check_pos)
        for name, v in measure(rho, np.exp(-1j * gen.frame * t)).items():
            cols[name][k] = v

    final = rk4(gen.apply_vec, rho0.reshape(-1).astype(complex), cfg, on_sample)
    rho_f = final.reshape(gen.dim, gen.dim)
    if not check_pos:
        check(cfg.n_steps * cfg.dt, rho_f, True)
    traj = Trajectory(times, cols, {"spec": gen.spec, "engine": "oracle", "dt": cfg.dt,
                                    "frame": gen.frame})
    return traj, rho_f

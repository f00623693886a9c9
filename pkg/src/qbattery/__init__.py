"""Simulation of dissipative spin-lattice quantum batteries in the storage phase.

Three engines share one lattice parameterization:

* :mod:`qbattery.single_excitation` -- closed-form dynamics in the one-excitation
  sector from the biorthogonal eigenbasis of the non-Hermitian Hamiltonian.
* :mod:`qbattery.cumulant` -- second-order cumulant equations for many excitations.
* :mod:`qbattery.oracle` -- brute-force Lindblad propagation for small chains.

:mod:`qbattery.analysis` turns trajectories into energetics figures of merit.
"""

from qbattery.lattice import LatticeSpec, Trajectory, make_spec, site_params
from qbattery.integrate import IntegratorConfig

__all__ = [
    "IntegratorConfig",
    "LatticeSpec",
    "Trajectory",
    "make_spec",
    "site_params",
]

__version__ = "0.1.0"

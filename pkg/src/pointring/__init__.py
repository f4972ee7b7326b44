"""Landau Hamiltonian with point interactions on a ring: spectra, states, currents."""

__version__ = "0.1.0"

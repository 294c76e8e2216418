"""Thermodynamic formalism toolkit: pressure, level-set spectra and Moran lower bounds."""

__version__ = "0.1.0"

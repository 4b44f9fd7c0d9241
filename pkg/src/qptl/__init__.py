"""Numerical lab for one-dimensional quasiperiodic Schrödinger operators.

Modules:

* ``arithmetic``: continued fractions, Diophantine checks, orbit hitting times
* ``sampling``: piecewise Hölder sampling functions, PL norms, Fejér approximants
* ``cocycle``: transfer-matrix products, Lyapunov estimates, growth certificates
* ``dynamics``: wavepacket propagation, Abel averages, transport exponents
* ``harness``: YAML experiments, sweeps and CSV output
"""
__version__ = "0.1.0"

"""Structure-preserving Bayesian identification of nonseparable Hamiltonians.

Evaluates marginalized likelihoods of Hamiltonian dynamics under additive and
multiplicative measurement noise, trains models by MAP optimization and MCMC,
and scales to high-dimensional systems through symplectic model reduction.
"""

__version__ = "0.1.0"

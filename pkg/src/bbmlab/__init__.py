"""Monte Carlo laboratory for branching Brownian motion with an absorbing
linear barrier: exact event-driven simulation, additive and derivative
martingale functionals, extremal-point-process estimators, and closed-form
oracles to test them against."""

__version__ = "0.1.0"

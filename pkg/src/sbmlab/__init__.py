"""Monte Carlo laboratory for one-dimensional super-Brownian motion.

Critical branching Brownian particle systems with mass 1/N and branching
rate N, their occupation densities (local time), exit masses through
spatial levels, and a 3/2-stable continuous-state branching cross-check.
Everything is seeded, replicable, and worker-count invariant.
"""

__version__ = "0.1.0"

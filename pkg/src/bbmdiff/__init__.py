"""Monte Carlo toolkit for branching Brownian motion, its genealogical
embedding, martingale measures, local-time additive functionals and the
time-changed processes they drive."""

__version__ = "0.1.0"

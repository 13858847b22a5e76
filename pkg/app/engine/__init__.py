"""Numerical engine: kernels, dictionaries, weight updaters, CMA-ES and the
series/parallel/cascade connection topology."""

"""Multi-aspect vulnerability analytics over areal units.

Subpackages follow the processing order: `ingest` parses and normalizes the
indicator dataset, `spatial` builds contiguity weights, `autocorr` computes
global/local association with permutation inference, `coda` analyzes
building-stock compositions, `fda` handles demographic growth curves,
`ranking` aggregates indicators into Copeland scores, and `distributional`
clusters province-level index distributions; `cli` ties the stages together.
"""

__version__ = "0.1.0"

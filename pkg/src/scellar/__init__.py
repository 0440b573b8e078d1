"""Interactive single-cell exploration engine.

Ingests AnnData h5ad datasets into a gene-major columnar store and
serves embeddings, annotations, normalized expression, geometric cell
selection, and Welch t-test differential expression to a 3-D viewer.
"""

from .version import __version__

__all__ = ["__version__"]

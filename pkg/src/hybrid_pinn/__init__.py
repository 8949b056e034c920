"""Hybrid data/physics neural field solver with adaptive loss weights and swarm design search.

Submodules are imported on demand so that ``hybrid-pinn --threads`` can
set BLAS thread counts before numpy is loaded.
"""

__version__ = "0.1.0"

"""Optimal-transport label refinement for unsupervised domain adaptation.

Pseudo labels from clustering target features are refined online by an
entropic transport problem against learned prototypes, at several clustering
granularities at once, while a small encoder is trained on the refined
labels together with a batch-hard triplet loss and a weighted contrastive
loss over a FIFO feature memory.
"""
from .errors import OTLError, NotConverged
from .kernels import BACKEND
from .label_transfer import (SinkhornConfig, SinkhornResult, TransportPolytope, harden, refine,
                             sinkhorn, uniform_polytope)

__version__ = "0.1.0"

__all__ = ["BACKEND", "NotConverged", "OTLError", "SinkhornConfig", "SinkhornResult",
           "TransportPolytope", "harden", "refine", "sinkhorn", "uniform_polytope", "__version__"]

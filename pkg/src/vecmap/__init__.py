"""Vectorized map construction toolkit.

Data model and BEV geometry (map_core), a small double-precision autograd
engine (tensor), multi-camera projection (camera), the query-activation and
dual-view embedding model (model), supervision targets and losses (targets,
losses), Chamfer-distance AP evaluation (metrics), and a deterministic
synthetic scene generator (synth), wired together by the ``vecmap`` CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ContractError,
    GenerationError,
    IOFormatError,
    NumericalError,
    VecmapError,
)

__all__ = [
    "ContractError",
    "GenerationError",
    "IOFormatError",
    "NumericalError",
    "VecmapError",
    "__version__",
]

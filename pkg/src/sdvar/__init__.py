"""Score-driven structural VAR with skew-t structural shocks."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    IdentificationError,
    LagStructure,
    ModelSpec,
    Restriction,
    StaticParams,
)
from .skewt import SkewTParams  # noqa: E402

__all__ = [
    "IdentificationError",
    "LagStructure",
    "ModelSpec",
    "Restriction",
    "StaticParams",
    "SkewTParams",
    "__version__",
]

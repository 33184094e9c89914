"""Memory-based semi-supervised video object segmentation with instance-query
enhancement, at desk scale on a numpy tensor engine."""

from .errors import ContractError, DimensionError, IsvosError, NonFiniteError, ParseError, SpecError, StateError

__version__ = "0.1.0"

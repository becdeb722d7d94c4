"""Counterfactual mappings and treatment effects for multi-valued treatments
identified through instrument monotonicity."""

__version__ = "0.1.0"

import logging as _logging

_logging.getLogger(__name__).addHandler(_logging.NullHandler())

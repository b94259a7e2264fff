"""Dynamic programming for deterministic impulse control problems."""

from .core import (INFINITY, Bounds, CemeterySpec, ImpulseModel, StationaryStrategy,
                   apply_impulse, stage_cost, validate_model)
from .flow import FlowSpec, QuadratureConfig, advance, running_cost, stopping_value

__version__ = "0.1.0"

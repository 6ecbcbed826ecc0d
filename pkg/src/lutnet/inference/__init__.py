"""Integer inference engine and its float reference."""

from .audit import audit_source
from .engine import IntTrace, forward_int
from .reference import ReferenceTrace, quantize_input, reference_forward

__all__ = ["IntTrace", "audit_source", "ReferenceTrace", "forward_int", "quantize_input", "reference_forward"]

"""Compiled backend: the recurrence and the phase gate as one namespace."""

from hetseq.kernel._phase import phase_backward, phase_forward
from hetseq.kernel._recurrence import backward, forward

__all__ = ["forward", "backward", "phase_forward", "phase_backward"]

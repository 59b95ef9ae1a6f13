"""Shared numeric constants and the package exception hierarchy."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    prob_sum_atol: float = 1e-9
    prob_entry_atol: float = 1e-12
    sim_range_atol: float = 1e-9
    confidence_atol: float = 1e-9
    ce_clamp_floor: float = 1e-12
    cmp_epsilon: float = 1e-8
    # per-sample sup-norm bound of d(CMP)/d(logits), both variants (see losses.grad_logits)
    cmp_grad_supnorm: float = 2.0


TOL = Tolerances()

DEFAULT_BINS = 15
CLIP_TEMPERATURE = 0.07
TEMPERATURE_CLAMP = (1e-2, 1e3)


class CmpError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CmpError, ValueError):
    pass


class NumericFailureError(CmpError, ArithmeticError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class TrainingFailureError(CmpError, RuntimeError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class ParseError(InvalidArgumentError):
    """Malformed input file. ``line`` or ``offset`` locates the failure."""

    def __init__(self, message, path=None, line=None, offset=None, record=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        if record is not None:
            where.append(f"record {record}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.path = path
        self.line = line
        self.offset = offset
        self.record = record

"""CDF-driven mapping from raw local losses to bounded response vectors.

Each client's loss is divided by the round's mean loss (centering the ratios
on 1) and pushed through a cumulative distribution function, then affinely
squeezed into [c1, c2].  Six CDF families are supported with fixed default
parameters; parameter estimation is deliberately out of scope.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DomainError, InvalidDimensionError


class CdfFamily(enum.Enum):
    WEIBULL = "Weibull"
    FRECHET = "Frechet"
    GUMBEL = "Gumbel"
    EXPONENTIAL = "Exponential"
    LOGISTIC = "Logistic"
    NORMAL = "Normal"


# Per-family default shape; Exponential is scale-only.
_DEFAULT_SHAPE = {
    CdfFamily.WEIBULL: 2.0,
    CdfFamily.FRECHET: 1.0,
    CdfFamily.GUMBEL: 1.0,
    CdfFamily.LOGISTIC: 1.0,
    CdfFamily.NORMAL: 1.0,
}


@dataclass(frozen=True)
class CdfKind:
    """A CDF family with its scale and (where applicable) shape parameter."""

    family: CdfFamily
    scale: float = 1.0
    shape: float | None = None

    def __post_init__(self):
        if self.scale <= 0.0:
            raise DomainError(f"scale must be positive, got {self.scale}")
        if self.family is CdfFamily.EXPONENTIAL:
            if self.shape is not None:
                raise DomainError("Exponential has no shape parameter")
        else:
            resolved = self.shape if self.shape is not None else _DEFAULT_SHAPE[self.family]
            if resolved <= 0.0:
                raise DomainError(f"shape must be positive, got {resolved}")
            object.__setattr__(self, "shape", float(resolved))


@dataclass(frozen=True)
class ResponseBounds:
    """Closed interval [c1, c2] that responses are squeezed into; 0 <= c1 < c2."""

    c1: float
    c2: float

    def __post_init__(self):
        if not (0.0 <= self.c1 < self.c2):
            raise DomainError(f"bounds require 0 <= c1 < c2, got [{self.c1}, {self.c2}]")

    @classmethod
    def cross_silo(cls, k: int) -> "ResponseBounds":
        # Few, always-available clients: cap each response at 1/k.
        return cls(0.0, 1.0 / k)

    @classmethod
    def cross_device(cls, sampling_fraction: float) -> "ResponseBounds":
        # Massive population, fraction C sampled per round: cap at C.
        return cls(0.0, sampling_fraction)


@dataclass
class ResponseVector:
    """Per-client responses with an observation mask (True = sampled)."""

    values: np.ndarray
    observed: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.observed is None:
            self.observed = np.ones(self.values.shape, dtype=bool)
        else:
            self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.shape != self.observed.shape or self.values.ndim != 1:
            raise InvalidDimensionError("values and observed must be equal-length 1-D")


def erf(x: float) -> float:
    """Gauss error function via a rational approximation (|error| <= 1.5e-7)."""
    sign = 1.0 if x >= 0.0 else -1.0
    x = abs(x)
    t = 1.0 / (1.0 + 0.3275911 * x)
    poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741
                + t * (-1.453152027 + t * 1.061405429))))
    return sign * (1.0 - poly * math.exp(-x * x))


def cdf_eval(kind: CdfKind, x: float) -> float:
    """Evaluate the chosen CDF at a nonnegative point; result in [0, 1]."""
    if x < 0.0:
        raise DomainError(f"CDF input must be nonnegative, got {x}")
    a, b = kind.scale, kind.shape
    if kind.family is CdfFamily.WEIBULL:
        return 1.0 - math.exp(-((x / a) ** b))
    if kind.family is CdfFamily.FRECHET:
        if x == 0.0:
            return 0.0
        inner = -b * math.log(x / a)  # log of (x/a)^(-b); guards pow overflow
        return 0.0 if inner > 700.0 else math.exp(-math.exp(inner))
    if kind.family is CdfFamily.GUMBEL:
        inner = -(x - a) / b
        return 0.0 if inner > 700.0 else math.exp(-math.exp(inner))
    if kind.family is CdfFamily.EXPONENTIAL:
        return 1.0 - math.exp(-a * x)
    if kind.family is CdfFamily.LOGISTIC:
        inner = -(x - a) / b
        return 0.0 if inner > 700.0 else 1.0 / (1.0 + math.exp(inner))
    if kind.family is CdfFamily.NORMAL:
        return 0.5 * (1.0 + erf((x - a) / (b * math.sqrt(2.0))))
    raise DomainError(f"unknown CDF family {kind.family!r}")


def transform_losses(
    losses: np.ndarray, kind: CdfKind, bounds: ResponseBounds
) -> np.ndarray:
    """Map the round's raw losses into responses in [c1, c2].

    Each loss is divided by the mean over this round's available clients, so
    the CDF sees ratios centered on 1; the CDF value is then rescaled onto
    the response interval.  Order-preserving in the inputs.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size < 1:
        raise InvalidDimensionError("losses must be a nonempty 1-D vector")
    if np.any(losses < 0.0):
        raise DomainError("losses must be nonnegative")
    mean = float(losses.mean())
    if mean <= 0.0:
        raise DegenerateInputError("all-zero losses leave the scaling mean undefined")
    ratios = losses / mean
    out = np.array([cdf_eval(kind, float(r)) for r in ratios])
    return bounds.c1 + (bounds.c2 - bounds.c1) * out


# Regime defaults: the smooth symmetric family for few-client rounds, the
# heavier-tailed one for large sampled populations.
DEFAULT_CDF_CROSS_SILO = CdfKind(CdfFamily.NORMAL)
DEFAULT_CDF_CROSS_DEVICE = CdfKind(CdfFamily.WEIBULL)

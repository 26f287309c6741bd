"""Core abstract-domain data structures and concrete-bound primitives.

Every neuron of an analysed layer carries a symbolic lower and upper linear
constraint over some earlier reference layer plus a concrete interval.
This module holds those value types and the two primitives everything else
is built from: evaluating a constraint matrix against the reference layer's
box (sign rule) and meeting candidate intervals from different
back-substitution depths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

# Sentinel reference index for "the network input" (not a real layer).
INPUT_LAYER = -1

# Relative tolerance under which a crossed meet (lo > hi) is treated as
# round-to-nearest noise and snapped, rather than an unsound transformer.
_CROSSING_RTOL = 1e-9


class AnalysisError(RuntimeError):
    """An internal inconsistency that invalidates the analysis."""


class CrossingBoundsError(AnalysisError):
    """A bound meet produced lo > hi beyond FP tolerance (unsound transformer)."""


@dataclass(frozen=True)
class Interval:
    """Concrete interval [lo, hi] for one neuron."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise CrossingBoundsError(f"interval [{self.lo}, {self.hi}] is empty")

    @property
    def width(self) -> float:
        return self.hi - self.lo


class BoundsVector:
    """Per-neuron concrete intervals for one layer, stored as two arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo/hi must be 1-d arrays of equal length")
        if np.any(self.lo > self.hi):
            i = int(np.argmax(self.lo - self.hi))
            raise CrossingBoundsError(
                f"neuron {i}: lo {self.lo[i]} > hi {self.hi[i]}"
            )

    @classmethod
    def uniform(cls, width: int, lo: float, hi: float) -> "BoundsVector":
        return cls(np.full(width, lo), np.full(width, hi))

    @classmethod
    def point(cls, values) -> "BoundsVector":
        v = np.asarray(values, dtype=np.float64)
        return cls(v.copy(), v.copy())

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))

    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points: np.ndarray, rtol: float = 0.0) -> bool:
        """True if every row of `points` lies inside the box (with slack)."""
        return bool(self.violation(points) <= rtol)

    def violation(self, points: np.ndarray) -> float:
        """Worst relative escape of `points` (rows) from the box; <= 0 inside."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        scale = 1.0 + np.maximum(np.abs(self.lo), np.abs(self.hi))
        below = (self.lo - p) / scale
        above = (p - self.hi) / scale
        return float(np.max(np.maximum(below, above), initial=-np.inf))

    def copy(self) -> "BoundsVector":
        return BoundsVector(self.lo.copy(), self.hi.copy())

    def __repr__(self) -> str:
        return f"BoundsVector({self.lo!r}, {self.hi!r})"


@dataclass(frozen=True)
class LinearForm:
    """A single constraint b + sum_j w_j * x_j over one reference layer."""

    coeffs: np.ndarray
    constant: float

    def __call__(self, x: np.ndarray) -> float:
        return float(self.coeffs @ np.asarray(x, dtype=np.float64) + self.constant)


class ConstraintMatrix:
    """Symbolic lower/upper linear forms for a set of subject neurons.

    All forms range over the outputs of one reference layer (``INPUT_LAYER``
    for the network input).  Coefficients are dense (n_subjects, ref_width)
    matrices; constants are threaded separately.  ``skips`` holds pending
    contributions over layers earlier than the reference, produced when a
    back-substitution passes through a residual addition; they are folded
    into the primary coefficients once the reference reaches that layer.
    """

    __slots__ = ("reference", "lower", "lower_const", "upper", "upper_const", "skips")

    def __init__(self, reference, lower, lower_const, upper, upper_const, skips=None):
        self.reference = int(reference)
        self.lower = np.asarray(lower, dtype=np.float64)
        self.lower_const = np.asarray(lower_const, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.upper_const = np.asarray(upper_const, dtype=np.float64)
        self.skips: Dict[int, Tuple[np.ndarray, np.ndarray]] = dict(skips or {})
        if self.lower.shape != self.upper.shape or self.lower.ndim != 2:
            raise ValueError("coefficient matrices must be 2-d and congruent")
        if self.lower_const.shape != (self.lower.shape[0],):
            raise ValueError("constant vectors must match subject count")

    @classmethod
    def exact(cls, reference: int, weights, bias, skips=None) -> "ConstraintMatrix":
        """Constraint pair where lower == upper == the given affine map."""
        w = np.asarray(weights, dtype=np.float64)
        b = np.asarray(bias, dtype=np.float64)
        return cls(reference, w.copy(), b.copy(), w.copy(), b.copy(), skips)

    @property
    def n_subjects(self) -> int:
        return self.lower.shape[0]

    @property
    def ref_width(self) -> int:
        return self.lower.shape[1]

    def lower_form(self, i: int) -> LinearForm:
        return LinearForm(self.lower[i].copy(), float(self.lower_const[i]))

    def upper_form(self, i: int) -> LinearForm:
        return LinearForm(self.upper[i].copy(), float(self.upper_const[i]))

    def is_exact(self, tol: float = 0.0) -> bool:
        return (
            np.max(np.abs(self.lower - self.upper), initial=0.0) <= tol
            and np.max(np.abs(self.lower_const - self.upper_const), initial=0.0) <= tol
        )

    def copy(self) -> "ConstraintMatrix":
        return ConstraintMatrix(
            self.reference,
            self.lower.copy(),
            self.lower_const.copy(),
            self.upper.copy(),
            self.upper_const.copy(),
            {k: (l.copy(), u.copy()) for k, (l, u) in self.skips.items()},
        )

    def __repr__(self) -> str:
        return (
            f"ConstraintMatrix(ref={self.reference}, subjects={self.n_subjects}, "
            f"ref_width={self.ref_width}, skips={sorted(self.skips)})"
        )


# ReLU relaxation modes.
MODE_ZERO = 0  # source upper bound <= 0: output pinned to 0
MODE_IDENTITY = 1  # source lower bound >= 0: output equals source
MODE_MIXED = 2  # straddling neuron: triangle relaxation


class ReluRelaxation:
    """Per-neuron diagonal relaxation of one ReLU layer.

    Lower constraint is c_i * x (c_i in {0, 1}); upper constraint is
    slope_i * x + intercept_i.  In mixed mode the upper line is the chord
    through (l, 0) and (u, u).
    """

    __slots__ = ("lower_slope", "upper_slope", "upper_intercept", "modes")

    def __init__(self, lower_slope, upper_slope, upper_intercept, modes):
        self.lower_slope = np.asarray(lower_slope, dtype=np.float64)
        self.upper_slope = np.asarray(upper_slope, dtype=np.float64)
        self.upper_intercept = np.asarray(upper_intercept, dtype=np.float64)
        self.modes = np.asarray(modes, dtype=np.int8)

    def __len__(self) -> int:
        return self.lower_slope.shape[0]

    def lower_at(self, x: np.ndarray) -> np.ndarray:
        return self.lower_slope * x

    def upper_at(self, x: np.ndarray) -> np.ndarray:
        return self.upper_slope * x + self.upper_intercept


def _signed_parts(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.maximum(m, 0.0), np.minimum(m, 0.0)


def evaluate_concrete_bounds(
    cm: ConstraintMatrix,
    ref_bounds: BoundsVector,
    skip_bounds: Optional[Dict[int, BoundsVector]] = None,
    outward_slack: float = 0.0,
) -> BoundsVector:
    """Evaluate a constraint pair against the reference layer's box.

    Lower bound: positive coefficients take the reference lower bound,
    negative ones the upper bound (and symmetrically for the upper bound),
    plus the constant term.  Pending skip contributions are evaluated
    against their own layers' boxes and added.  ``outward_slack`` widens
    each resulting bound by a relative margin (default 0: plain
    round-to-nearest doubles).  Rows are independent; the whole evaluation
    is vectorised over subject neurons.
    """
    if cm.ref_width != len(ref_bounds):
        raise AnalysisError(
            f"reference width {cm.ref_width} != bounds width {len(ref_bounds)}"
        )
    lpos, lneg = _signed_parts(cm.lower)
    upos, uneg = _signed_parts(cm.upper)
    lo = cm.lower_const + lpos @ ref_bounds.lo + lneg @ ref_bounds.hi
    hi = cm.upper_const + upos @ ref_bounds.hi + uneg @ ref_bounds.lo

    for layer, (l_add, u_add) in cm.skips.items():
        if not skip_bounds or layer not in skip_bounds:
            raise AnalysisError(f"no bounds supplied for pending skip layer {layer}")
        sb = skip_bounds[layer]
        lp, ln = _signed_parts(l_add)
        up, un = _signed_parts(u_add)
        lo = lo + lp @ sb.lo + ln @ sb.hi
        hi = hi + up @ sb.hi + un @ sb.lo

    if outward_slack:
        lo = lo - outward_slack * (1.0 + np.abs(lo))
        hi = hi + outward_slack * (1.0 + np.abs(hi))
    return BoundsVector(lo, hi)


def update_bounds(current: BoundsVector, candidate: BoundsVector) -> BoundsVector:
    """Meet two interval vectors: elementwise max of lo, min of hi.

    A crossed result (lo > hi) within 1e-9 relative is FP noise from
    evaluating the same quantity along different substitution depths
    (degenerate regions hit this) and is snapped to the midpoint; anything
    larger means an unsound transformer and aborts the analysis.
    """
    if len(current) != len(candidate):
        raise AnalysisError("bounds width mismatch in meet")
    lo = np.maximum(current.lo, candidate.lo)
    hi = np.minimum(current.hi, candidate.hi)
    gap = lo - hi
    if np.any(gap > 0):
        scale = 1.0 + np.maximum(np.abs(lo), np.abs(hi))
        rel = gap / scale
        worst = int(np.argmax(rel))
        if rel[worst] > _CROSSING_RTOL:
            raise CrossingBoundsError(
                f"meet crossed at neuron {worst}: lo {lo[worst]} > hi {hi[worst]} "
                f"(relative gap {rel[worst]:.3g})"
            )
        crossed = gap > 0
        mid = 0.5 * (lo + hi)
        lo = np.where(crossed, mid, lo)
        hi = np.where(crossed, mid, hi)
    return BoundsVector(lo, hi)


@dataclass
class AbstractState:
    """Mutable analysis state: per-layer bounds, relaxations, live matrices.

    ``live_constraints`` holds each affine layer's seed constraint matrix
    while it is still needed for layer-by-layer back-substitution;
    ``summaries`` holds stored block summaries.  Both are dense matrices and
    count toward the live-matrix instrumentation; ReLU relaxations are O(N)
    diagonal records and are tracked separately.  ``bounds`` is never
    released.
    """

    input_bounds: BoundsVector
    segmentation: object = None  # model.Segmentation when block-aware
    bounds: Dict[int, BoundsVector] = field(default_factory=dict)
    relaxations: Dict[int, ReluRelaxation] = field(default_factory=dict)
    live_constraints: Dict[int, ConstraintMatrix] = field(default_factory=dict)
    summaries: Dict[int, object] = field(default_factory=dict)  # end layer -> BlockSummary
    working_matrices: int = 0
    peak_live_matrices: int = 0

    def bounds_for(self, reference: int) -> BoundsVector:
        if reference == INPUT_LAYER:
            return self.input_bounds
        try:
            return self.bounds[reference]
        except KeyError:
            raise AnalysisError(f"no concrete bounds for layer {reference} yet")

    def skip_bounds_for(self, cm: ConstraintMatrix) -> Dict[int, BoundsVector]:
        return {k: self.bounds_for(k) for k in cm.skips}

    def live_matrix_count(self) -> int:
        """Dense constraint matrices currently alive (seeds + summaries + working)."""
        return len(self.live_constraints) + len(self.summaries) + self.working_matrices

    def note_live(self) -> int:
        n = self.live_matrix_count()
        if n > self.peak_live_matrices:
            self.peak_live_matrices = n
        return n

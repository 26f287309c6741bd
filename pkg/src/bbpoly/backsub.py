"""Back-substitution steps: rewriting constraints over earlier layers.

Each step takes a constraint pair over some reference layer and produces
an equivalent (or sound over-approximating) pair over an earlier one:

* through an affine layer, the rewrite is exact matrix composition;
* through a ReLU layer, each coefficient picks the relaxation side that
  keeps the inequality sound (lower form: positive coefficients take the
  lower constraint c*x, negative ones the upper line; the upper form swaps);
* through a block summary, the same sign rule is applied with the
  summary's dense per-neuron lower/upper forms;
* through a residual addition, the addition is split into an identity over
  the predecessor plus a pending identity over the skip source, folded back
  in when the walk reaches that layer.

Pending skip contributions ride along unchanged on every step; they only
ever reference layers later than where a step can land inside the same
block, so ``merge_pending`` is checked after each reference move.
"""

from __future__ import annotations

import numpy as np

from .domain import (
    AnalysisError,
    AbstractState,
    ConstraintMatrix,
    ReluRelaxation,
    _signed_parts,
)
from .model import DENSE, RELU, RESIDUAL_ADD


def backsub_affine(cm: ConstraintMatrix, k_forms: ConstraintMatrix) -> ConstraintMatrix:
    """Compose exactly through an affine layer's constraint pair.

    ``k_forms`` must be exact (lower == upper); the result references
    whatever ``k_forms`` references.  O(m * n * r) dense products.
    """
    w = k_forms.lower
    b = k_forms.lower_const
    if cm.ref_width != w.shape[0]:
        raise AnalysisError(
            f"cannot compose: form width {cm.ref_width} != layer size {w.shape[0]}"
        )
    return ConstraintMatrix(
        k_forms.reference,
        cm.lower @ w,
        cm.lower_const + cm.lower @ b,
        cm.upper @ w,
        cm.upper_const + cm.upper @ b,
        skips=cm.skips,
    )


def backsub_relu(
    cm: ConstraintMatrix, relax: ReluRelaxation, new_reference: int
) -> ConstraintMatrix:
    """Substitute a ReLU layer's diagonal relaxation into both forms.

    Diagonal structure keeps this O(m * n): coefficients are scaled by the
    chosen slope and intercepts accumulate into the constants.
    """
    if cm.ref_width != len(relax):
        raise AnalysisError(
            f"cannot substitute: form width {cm.ref_width} != relaxation size {len(relax)}"
        )
    c = relax.lower_slope
    s = relax.upper_slope
    t = relax.upper_intercept
    lpos, lneg = _signed_parts(cm.lower)
    upos, uneg = _signed_parts(cm.upper)
    return ConstraintMatrix(
        new_reference,
        lpos * c + lneg * s,
        cm.lower_const + lneg @ t,
        upos * s + uneg * c,
        cm.upper_const + upos @ t,
        skips=cm.skips,
    )


def backsub_summary(cm: ConstraintMatrix, summary) -> ConstraintMatrix:
    """Jump over a completed block using its stored summary.

    Same sign rule as the ReLU case but with dense lower/upper forms; the
    result references the block's start layer (or the input).  Counts as a
    single back-substitution step.
    """
    forms = summary.forms
    if cm.reference != summary.end_layer:
        raise AnalysisError(
            f"constraints reference layer {cm.reference}, summary ends at {summary.end_layer}"
        )
    if cm.ref_width != forms.n_subjects:
        raise AnalysisError("summary width mismatch")
    if cm.skips:
        raise AnalysisError("pending residual contribution crossing a block boundary")
    sl, sl0 = forms.lower, forms.lower_const
    su, su0 = forms.upper, forms.upper_const
    lpos, lneg = _signed_parts(cm.lower)
    upos, uneg = _signed_parts(cm.upper)
    return ConstraintMatrix(
        forms.reference,
        lpos @ sl + lneg @ su,
        cm.lower_const + lpos @ sl0 + lneg @ su0,
        upos @ su + uneg @ sl,
        cm.upper_const + upos @ su0 + uneg @ sl0,
    )


def backsub_residual_step(
    cm: ConstraintMatrix, skip_from: int, new_reference: int
) -> ConstraintMatrix:
    """Pass through a residual addition: x_add = x_pred + x_skip, exactly.

    Primary coefficients carry over to the predecessor unchanged; a copy is
    parked as a pending contribution over the skip source.
    """
    skips = {k: (l.copy(), u.copy()) for k, (l, u) in cm.skips.items()}
    if skip_from in skips:
        ladd, uadd = skips[skip_from]
        skips[skip_from] = (ladd + cm.lower, uadd + cm.upper)
    else:
        skips[skip_from] = (cm.lower.copy(), cm.upper.copy())
    return ConstraintMatrix(
        new_reference,
        cm.lower.copy(),
        cm.lower_const.copy(),
        cm.upper.copy(),
        cm.upper_const.copy(),
        skips=skips,
    )


def merge_pending(cm: ConstraintMatrix) -> ConstraintMatrix:
    """Fold any pending skip contribution over the current reference back in."""
    if cm.reference not in cm.skips:
        return cm
    skips = {k: v for k, v in cm.skips.items() if k != cm.reference}
    ladd, uadd = cm.skips[cm.reference]
    return ConstraintMatrix(
        cm.reference,
        cm.lower + ladd,
        cm.lower_const,
        cm.upper + uadd,
        cm.upper_const,
        skips=skips,
    )


def backsub_residual(cm: ConstraintMatrix, state: AbstractState, net) -> ConstraintMatrix:
    """Rewrite constraints over a residual add down to the unit's entry layer.

    Walks the main branch layer by layer (using the seeds and relaxations
    recorded in ``state``) and folds the skip branch back in at the common
    entry layer, which must still be live inside the current block.
    """
    add_idx = cm.reference
    layer = net.layers[add_idx]
    if layer.kind != RESIDUAL_ADD:
        raise AnalysisError(f"layer {add_idx} is not a residual addition")
    entry = layer.skip_from
    work = merge_pending(backsub_residual_step(cm, entry, add_idx - 1))
    while work.reference != entry:
        r = work.reference
        if r < entry:
            raise AnalysisError("walked past the residual entry layer")
        kind = net.layers[r].kind
        if kind == RELU:
            if r not in state.relaxations:
                raise AnalysisError(f"relaxation for layer {r} released or missing")
            work = backsub_relu(work, state.relaxations[r], r - 1)
        elif kind == DENSE:
            if r not in state.live_constraints:
                raise AnalysisError(f"constraints for layer {r} released or missing")
            work = backsub_affine(work, state.live_constraints[r])
        else:
            work = backsub_residual_step(work, net.layers[r].skip_from, r - 1)
        work = merge_pending(work)
    return work

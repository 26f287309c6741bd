"""Block summaries: creation, lookup, and the memory-release scheme.

A block summary is the constraint pair of a block's end layer rewritten
over the block's start layer (over the network input for the first block,
and for every block in input-summary mode).  Once stored it is immutable
and later back-substitutions jump across the whole block in one step.

Storing a summary releases analysis artifacts that can no longer be
needed: in block mode everything inside the block except the start layer
(whose relaxation later jumps pass through); in input mode the whole block
plus every older summary, leaving exactly one live summary.
"""

from __future__ import annotations

from dataclasses import dataclass

from .domain import INPUT_LAYER, AbstractState, ConstraintMatrix


class SummaryError(RuntimeError):
    """Summary stored twice or read out of order (an analyzer bug)."""


@dataclass(frozen=True)
class BlockSummary:
    """Stored constraint pair mapping a block's end layer to its start."""

    block_id: int
    end_layer: int
    start_layer: int  # INPUT_LAYER when defined over the network input
    forms: ConstraintMatrix

    def __post_init__(self):
        if self.forms.reference != self.start_layer:
            raise SummaryError(
                f"summary forms reference layer {self.forms.reference}, "
                f"expected start layer {self.start_layer}"
            )


def store_summary(
    state: AbstractState, block_id: int, forms: ConstraintMatrix
) -> BlockSummary:
    """Record a block's summary, then release artifacts it supersedes."""
    seg = state.segmentation
    if seg is None:
        raise SummaryError("analysis state carries no segmentation")
    start, end = seg.blocks[block_id]
    if end in state.summaries:
        raise SummaryError(f"summary for block {block_id} (end layer {end}) already stored")
    summary = BlockSummary(
        block_id=block_id,
        end_layer=end,
        start_layer=forms.reference,
        forms=forms,
    )
    state.summaries[end] = summary
    release_intermediates(state, block_id)
    return summary


def release_intermediates(state: AbstractState, block_id: int) -> None:
    """Drop constraint matrices and relaxations the summary supersedes.

    The layer the summary references (the block's start) keeps its
    artifacts: later jumps land on it and substitute through it layer-wise.
    A summary over the input keeps nothing, and drops all older summaries
    as well (only the newest is ever consulted afterwards).  Concrete
    bounds are always retained.  Safe to call repeatedly.
    """
    seg = state.segmentation
    start, end = seg.blocks[block_id]
    summary = state.summaries.get(end)
    keep = summary.start_layer if summary is not None else INPUT_LAYER
    for k in range(start, end + 1):
        if k == keep:
            continue
        state.live_constraints.pop(k, None)
        state.relaxations.pop(k, None)
    if summary is not None and summary.start_layer == INPUT_LAYER and block_id > 0:
        for older_end in [e for e in state.summaries if e < end]:
            del state.summaries[older_end]
    state.note_live()


def read_summary(state: AbstractState, end_layer: int) -> BlockSummary:
    """Fetch the summary stored for the block ending at ``end_layer``."""
    try:
        return state.summaries[end_layer]
    except KeyError:
        raise SummaryError(
            f"no summary stored for end layer {end_layer}; "
            "blocks must complete in ascending order"
        ) from None


def summary_to_dict(summary: BlockSummary) -> dict:
    """Debug dump using the same nested-list encoding as the network format."""
    forms = summary.forms
    return {
        "block_id": summary.block_id,
        "end_layer": summary.end_layer,
        "start_layer": "input" if summary.start_layer == INPUT_LAYER else summary.start_layer,
        "lower": {"coeffs": forms.lower.tolist(), "const": forms.lower_const.tolist()},
        "upper": {"coeffs": forms.upper.tolist(), "const": forms.upper_const.tolist()},
    }

"""Top-level analysis drivers.

Three modes share one engine:

* ``deeppoly``: plain layer-by-layer back-substitution to the input, no
  summaries, unbounded step count -- the precision baseline;
* ``blocksum``: the network is segmented into blocks of ``sigma`` affine
  layers; completed blocks are crossed in one step via their stored
  summary, and a per-layer step budget ``tau`` cuts the walk short (except
  for a block's end layer, which always keeps going until its own summary
  is stored);
* ``inputsum``: summaries are defined over the network input, so a single
  jump lands on the input and at most one summary is ever retained.
  ``tau`` does not apply.

A step is one substitution through a single layer or one summary jump.
Concrete bounds are re-evaluated after every step and met with the best
bounds so far, starting from the evaluation of the seed constraints over
the predecessor's box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import backsub
from .domain import (
    INPUT_LAYER,
    AbstractState,
    AnalysisError,
    BoundsVector,
    ConstraintMatrix,
    ReluRelaxation,
    evaluate_concrete_bounds,
    update_bounds,
)
from .model import DENSE, RELU, RESIDUAL_ADD, NetworkSpec, Segmentation, segment_network
from .summary import BlockSummary, read_summary, store_summary
from .transformers import affine_abstract, relu_abstract, residual_add_abstract


class AnalysisMode(Enum):
    DEEPPOLY = "deeppoly"
    BLOCK_SUMMARY = "blocksum"
    INPUT_SUMMARY = "inputsum"


class AnalysisCancelled(AnalysisError):
    """Raised by a cancellation callback to stop an analysis cooperatively."""


@dataclass
class AnalyzerConfig:
    """Knobs for one analysis run.

    ``tau`` is the per-layer back-substitution step budget (None =
    unbounded); it only binds in block-summary mode.  ``sigma`` is the
    number of affine layers per block.  ``outward_slack`` widens every
    evaluated bound by a relative margin for users wanting a safety margin
    on top of round-to-nearest arithmetic.
    """

    mode: AnalysisMode = AnalysisMode.DEEPPOLY
    sigma: int = 3
    tau: Optional[int] = None
    outward_slack: float = 0.0
    step_counters: bool = True

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = AnalysisMode(self.mode)
        if self.sigma < 1:
            raise ValueError("sigma must be >= 1")
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be >= 1 when bounded")


@dataclass
class AnalysisResult:
    """Per-layer bounds plus instrumentation from one analysis."""

    bounds: List[BoundsVector]
    input_bounds: BoundsVector
    relaxations: Dict[int, ReluRelaxation]
    summaries: Dict[int, BlockSummary]
    output_over_input: Optional[ConstraintMatrix]
    steps_per_layer: List[int]
    evaluations_per_layer: List[int]
    flops: int
    peak_live_matrices: int
    segmentation: Optional[Segmentation]

    @property
    def total_steps(self) -> int:
        return sum(self.steps_per_layer)

    @property
    def output_bounds(self) -> BoundsVector:
        return self.bounds[-1]


class Analyzer:
    """Runs one network analysis and keeps its state for follow-up queries.

    After :meth:`run`, :meth:`bound_forms` can tighten arbitrary linear
    forms over any analysed layer with the same machinery (used for
    verification margins).  One analyzer serves one input region; networks
    are read-only and may be shared across analyzers.
    """

    def __init__(self, net: NetworkSpec, cfg: AnalyzerConfig):
        self.net = net
        self.cfg = cfg
        if cfg.mode is AnalysisMode.DEEPPOLY:
            self.segmentation = None
            self._end_blocks: Dict[int, int] = {}
        else:
            self.segmentation = segment_network(net, cfg.sigma)
            self._end_blocks = self.segmentation.end_layers()
        self.state: Optional[AbstractState] = None
        self.flops = 0

    # -- engine ----------------------------------------------------------

    def _evaluate(self, cm: ConstraintMatrix) -> BoundsVector:
        st = self.state
        return evaluate_concrete_bounds(
            cm,
            st.bounds_for(cm.reference),
            skip_bounds=st.skip_bounds_for(cm),
            outward_slack=self.cfg.outward_slack,
        )

    def _step(self, work: ConstraintMatrix) -> ConstraintMatrix:
        """One back-substitution step: a summary jump or a layer substitution."""
        st = self.state
        ref = work.reference
        if ref in self._end_blocks:
            summ = read_summary(st, ref)
            self.flops += 4 * work.n_subjects * work.ref_width * summ.forms.ref_width
            work = backsub.backsub_summary(work, summ)
        else:
            layer = self.net.layers[ref]
            if layer.kind == RELU:
                if ref not in st.relaxations:
                    raise AnalysisError(f"relaxation for layer {ref} was released")
                self.flops += 4 * work.n_subjects * work.ref_width
                work = backsub.backsub_relu(work, st.relaxations[ref], ref - 1)
            elif layer.kind == DENSE:
                if ref not in st.live_constraints:
                    raise AnalysisError(f"constraints for layer {ref} were released")
                forms = st.live_constraints[ref]
                self.flops += 4 * work.n_subjects * work.ref_width * forms.ref_width
                work = backsub.backsub_affine(work, forms)
            else:
                self.flops += 2 * work.n_subjects * work.ref_width
                work = backsub.backsub_residual_step(work, layer.skip_from, ref - 1)
        return backsub.merge_pending(work)

    def _tighten(
        self,
        seed: ConstraintMatrix,
        end_block: Optional[int],
    ) -> Tuple[BoundsVector, int, int, ConstraintMatrix]:
        """Alg.-1 inner loop: walk the seed toward the input, meeting bounds.

        ``end_block`` is the block id when the subject layer ends a block
        (it must store that block's summary on the way down).  Returns the
        met bounds, step and evaluation counts, and the final constraint
        matrix.
        """
        st = self.state
        cfg = self.cfg
        tau = cfg.tau if cfg.mode is AnalysisMode.BLOCK_SUMMARY else None
        store_ref = None
        if end_block is not None:
            if cfg.mode is AnalysisMode.INPUT_SUMMARY:
                store_ref = INPUT_LAYER
            else:
                store_ref = self.segmentation.summary_reference(end_block)

        st.working_matrices = 1
        st.note_live()
        work = seed

        def maybe_store(cm: ConstraintMatrix) -> None:
            if store_ref is None or cm.reference != store_ref:
                return
            end = self.segmentation.blocks[end_block][1]
            if end in st.summaries:
                return
            if cm.skips:
                raise AnalysisError("residual contribution still pending at summary store")
            store_summary(st, end_block, cm.copy())

        maybe_store(work)
        bounds = self._evaluate(work)
        steps = 0
        evaluations = 1
        while work.reference != INPUT_LAYER:
            work = self._step(work)
            steps += 1
            maybe_store(work)
            bounds = update_bounds(bounds, self._evaluate(work))
            evaluations += 1
            st.note_live()
            if tau is not None and steps >= tau:
                lacking = (
                    end_block is not None
                    and self.segmentation.blocks[end_block][1] not in st.summaries
                )
                if not lacking:
                    break
        st.working_matrices = 0
        return bounds, steps, evaluations, work

    # -- drivers ----------------------------------------------------------

    def run(
        self,
        input_bounds: BoundsVector,
        check_cancel: Optional[Callable[[], None]] = None,
    ) -> AnalysisResult:
        net = self.net
        if len(input_bounds) != net.input_width:
            raise AnalysisError(
                f"input bounds width {len(input_bounds)} != network input {net.input_width}"
            )
        self.state = st = AbstractState(
            input_bounds=input_bounds, segmentation=self.segmentation
        )
        self.flops = 0
        st.note_live()
        steps_per_layer = [0] * net.n_layers
        evals_per_layer = [0] * net.n_layers
        output_cm = None

        for k, layer in enumerate(net.layers):
            if check_cancel is not None:
                check_cancel()
            if layer.kind == RELU:
                relax, out = relu_abstract(st.bounds_for(k - 1))
                st.relaxations[k] = relax
                st.bounds[k] = out
                continue
            ref = k - 1 if k > 0 else INPUT_LAYER
            if layer.kind == DENSE:
                seed = affine_abstract(layer, ref)
            else:
                seed = residual_add_abstract(layer, ref)
            st.live_constraints[k] = seed
            st.note_live()
            end_block = self._end_blocks.get(k)
            bounds, steps, evals, final = self._tighten(seed, end_block)
            st.bounds[k] = bounds
            steps_per_layer[k] = steps
            evals_per_layer[k] = evals
            if k == net.n_layers - 1 and final.reference == INPUT_LAYER:
                output_cm = final

        if not self.cfg.step_counters:
            steps_per_layer = [0] * net.n_layers
            evals_per_layer = [0] * net.n_layers
        return AnalysisResult(
            bounds=[st.bounds[k] for k in range(net.n_layers)],
            input_bounds=input_bounds,
            relaxations=dict(st.relaxations),
            summaries=dict(st.summaries),
            output_over_input=output_cm,
            steps_per_layer=steps_per_layer,
            evaluations_per_layer=evals_per_layer,
            flops=self.flops,
            peak_live_matrices=st.peak_live_matrices,
            segmentation=self.segmentation,
        )

    def bound_forms(
        self,
        seed: ConstraintMatrix,
        check_cancel: Optional[Callable[[], None]] = None,
    ) -> Tuple[BoundsVector, int]:
        """Tighten arbitrary linear forms over an analysed layer.

        The forms walk the same back-substitution machinery as a real
        layer (jumps, step budget) but never store summaries.  Requires a
        completed :meth:`run`.
        """
        if self.state is None:
            raise AnalysisError("bound_forms requires a completed analysis")
        if check_cancel is not None:
            check_cancel()
        bounds, steps, _, _ = self._tighten(seed, None)
        return bounds, steps


def analyze(
    net: NetworkSpec,
    input_bounds: BoundsVector,
    cfg: AnalyzerConfig,
    check_cancel: Optional[Callable[[], None]] = None,
) -> AnalysisResult:
    """Run one full analysis of ``net`` over the given input box."""
    return Analyzer(net, cfg).run(input_bounds, check_cancel)


def analyze_input_summary(
    net: NetworkSpec,
    input_bounds: BoundsVector,
    cfg: AnalyzerConfig,
    check_cancel: Optional[Callable[[], None]] = None,
) -> AnalysisResult:
    """Input-summary analysis: jumps land on the input, one summary retained."""
    if cfg.mode is not AnalysisMode.INPUT_SUMMARY:
        raise ValueError("analyze_input_summary requires mode=inputsum")
    return analyze(net, input_bounds, cfg, check_cancel)

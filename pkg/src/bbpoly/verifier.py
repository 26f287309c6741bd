"""Robustness properties, verdicts, and the benchmark harness.

A query asks whether every point of the L-inf ball of radius epsilon
around a correctly-classified input keeps the network's argmax at the
original label.  The analyzer's over-approximation makes the answer
one-sided: ``verified`` is a proof, ``inconclusive`` means the relaxation
was too coarse (or the time budget ran out, tagged ``timeout``).

Two adjudication predicates are available.  The default ``difference``
mode bounds each margin x_target - x_j through the back-substitution
machinery and verifies when every margin's lower bound is positive; it
dominates the cruder ``boundcompare`` mode, which just compares the output
layer's concrete intervals.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from .analyzer import (
    AnalysisCancelled,
    AnalysisMode,
    AnalysisResult,
    Analyzer,
    AnalyzerConfig,
)
from .domain import BoundsVector, ConstraintMatrix
from .model import DatasetRecord, NetworkSpec


class Verdict(Enum):
    VERIFIED = "verified"
    INCONCLUSIVE = "inconclusive"
    TIMEOUT = "timeout"


CHECK_DIFFERENCE = "difference"
CHECK_BOUND_COMPARE = "boundcompare"


@dataclass(frozen=True)
class RobustnessQuery:
    """An L-inf ball around one labelled input; clipped to the input domain."""

    record: DatasetRecord
    epsilon: float
    clip: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class ImageVerdict:
    image_index: int
    label: int
    candidate: bool
    epsilon: float
    verdict: Optional[Verdict]  # None for non-candidates (skipped)
    elapsed: float


@dataclass
class EpsilonSummary:
    epsilon: float
    candidates: int
    verified: int
    precision: Optional[float]
    mean_time: float


@dataclass
class VerdictReport:
    """All per-(image, epsilon) verdicts plus Eq.-(7)-style aggregates."""

    results: List[ImageVerdict]
    per_epsilon: List[EpsilonSummary]
    images: int
    candidates: int
    mode: str
    sigma: int
    tau: Optional[int]
    check: str

    @property
    def verified_total(self) -> int:
        return sum(1 for r in self.results if r.verdict is Verdict.VERIFIED)

    @property
    def precision(self) -> Optional[float]:
        attempts = sum(1 for r in self.results if r.candidate)
        if attempts == 0:
            return None
        return self.verified_total / attempts

    @property
    def mean_time(self) -> float:
        times = [r.elapsed for r in self.results if r.candidate]
        return float(np.mean(times)) if times else 0.0

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "image_index",
                    "label",
                    "candidate",
                    "epsilon",
                    "verdict",
                    "elapsed_s",
                    "mode",
                    "sigma",
                    "tau",
                ]
            )
            tau = "unbounded" if self.tau is None else self.tau
            for r in self.results:
                verdict = r.verdict.value if r.verdict is not None else "skipped"
                writer.writerow(
                    [
                        r.image_index,
                        r.label,
                        int(r.candidate),
                        repr(r.epsilon),
                        verdict,
                        f"{r.elapsed:.6f}",
                        self.mode,
                        self.sigma,
                        tau,
                    ]
                )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sigma": self.sigma,
            "tau": self.tau,
            "check": self.check,
            "images": self.images,
            "candidates": self.candidates,
            "verified": self.verified_total,
            "precision": self.precision,
            "mean_time_s": self.mean_time,
            "per_epsilon": [
                {
                    "epsilon": e.epsilon,
                    "candidates": e.candidates,
                    "verified": e.verified,
                    "precision": e.precision,
                    "mean_time_s": e.mean_time,
                }
                for e in self.per_epsilon
            ],
        }

    def write_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def build_region(q: RobustnessQuery, net: NetworkSpec) -> BoundsVector:
    """Per-pixel intervals [p - eps, p + eps], clamped to the input domain."""
    lo = q.record.pixels - q.epsilon
    hi = q.record.pixels + q.epsilon
    if q.clip:
        dlo, dhi = net.input_domain
        lo = np.clip(lo, dlo, dhi)
        hi = np.clip(hi, dlo, dhi)
    return BoundsVector(lo, hi)


def classify(net: NetworkSpec, pixels: np.ndarray) -> int:
    """Argmax of the exact forward pass; ties go to the lowest index."""
    return int(np.argmax(net.forward(np.asarray(pixels, dtype=np.float64))))


def _difference_seed(net: NetworkSpec, target: int) -> ConstraintMatrix:
    """Rows x_target - x_j (j != target) over the output layer's neurons."""
    width = net.output_width
    rows = np.zeros((width - 1, width))
    r = 0
    for j in range(width):
        if j == target:
            continue
        rows[r, target] = 1.0
        rows[r, j] = -1.0
        r += 1
    return ConstraintMatrix.exact(net.n_layers - 1, rows, np.zeros(width - 1))


def _deadline_checker(timeout: Optional[float]):
    if timeout is None:
        return None
    start = time.perf_counter()

    def check():
        if time.perf_counter() - start > timeout:
            raise AnalysisCancelled(f"image analysis exceeded {timeout}s")

    return check


def verify_robustness(
    net: NetworkSpec,
    q: RobustnessQuery,
    cfg: AnalyzerConfig,
    check: str = CHECK_DIFFERENCE,
    timeout: Optional[float] = None,
) -> Verdict:
    """Adjudicate one robustness query; the caller ensures candidacy.

    ``difference`` back-substitutes every margin x_target - x_j and
    verifies when all lower bounds are positive; ``boundcompare`` verifies
    when the target's concrete lower bound beats every other output's
    upper bound.  A cooperative timeout (checked between layers) yields
    ``timeout``.
    """
    if check not in (CHECK_DIFFERENCE, CHECK_BOUND_COMPARE):
        raise ValueError(f"unknown check {check!r}")
    target = q.record.label
    if not 0 <= target < net.output_width:
        raise ValueError(f"label {target} out of range for {net.output_width} outputs")
    region = build_region(q, net)
    cancel = _deadline_checker(timeout)
    engine = Analyzer(net, cfg)
    try:
        result = engine.run(region, check_cancel=cancel)
        if check == CHECK_BOUND_COMPARE:
            out = result.output_bounds
            others = [j for j in range(net.output_width) if j != target]
            ok = all(out.lo[target] > out.hi[j] for j in others)
        else:
            if net.output_width == 1:
                ok = False
            else:
                margins, _ = engine.bound_forms(
                    _difference_seed(net, target), check_cancel=cancel
                )
                ok = bool(np.all(margins.lo > 0.0))
    except AnalysisCancelled:
        return Verdict.TIMEOUT
    return Verdict.VERIFIED if ok else Verdict.INCONCLUSIVE


# Worker-process globals for run_benchmark (set once per worker).
_POOL_CTX: Dict[str, object] = {}


def _pool_init(net: NetworkSpec, cfg: AnalyzerConfig, check: str, timeout: Optional[float], clip: bool):
    _POOL_CTX["net"] = net
    _POOL_CTX["cfg"] = cfg
    _POOL_CTX["check"] = check
    _POOL_CTX["timeout"] = timeout
    _POOL_CTX["clip"] = clip


def _pool_task(args):
    index, label, pixels, eps = args
    net: NetworkSpec = _POOL_CTX["net"]
    q = RobustnessQuery(
        DatasetRecord(label=label, pixels=pixels), eps, clip=_POOL_CTX["clip"]
    )
    t0 = time.perf_counter()
    verdict = verify_robustness(
        net, q, _POOL_CTX["cfg"], check=_POOL_CTX["check"], timeout=_POOL_CTX["timeout"]
    )
    return index, eps, verdict, time.perf_counter() - t0


def run_benchmark(
    net: NetworkSpec,
    records: Sequence[DatasetRecord],
    epsilons: Sequence[float],
    cfg: AnalyzerConfig,
    timeout_per_image: Optional[float] = None,
    check: str = CHECK_DIFFERENCE,
    jobs: int = 1,
    clip: bool = True,
    out_csv: Optional[str] = None,
    out_json: Optional[str] = None,
) -> VerdictReport:
    """Verify every candidate record at every epsilon and tabulate results.

    Candidates are records the network classifies correctly unperturbed;
    the rest appear in the report with verdict ``skipped`` and never enter
    the precision ratio (verified / candidates).  Images are independent
    and verified across a process pool when ``jobs`` > 1; reported times
    cover the analysis only, not candidate filtering.
    """
    epsilons = list(epsilons)
    candidate_flags = [classify(net, r.pixels) == r.label for r in records]
    n_candidates = sum(candidate_flags)

    tasks = [
        (i, r.label, r.pixels, eps)
        for eps in epsilons
        for i, r in enumerate(records)
        if candidate_flags[i]
    ]
    outcomes: Dict[tuple, tuple] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_pool_init,
            initargs=(net, cfg, check, timeout_per_image, clip),
        ) as pool:
            for index, eps, verdict, elapsed in pool.map(_pool_task, tasks):
                outcomes[(index, eps)] = (verdict, elapsed)
    else:
        _pool_init(net, cfg, check, timeout_per_image, clip)
        for task in tasks:
            index, eps, verdict, elapsed = _pool_task(task)
            outcomes[(index, eps)] = (verdict, elapsed)

    results: List[ImageVerdict] = []
    per_eps: List[EpsilonSummary] = []
    for eps in epsilons:
        verified = 0
        times = []
        for i, rec in enumerate(records):
            if candidate_flags[i]:
                verdict, elapsed = outcomes[(i, eps)]
                if verdict is Verdict.VERIFIED:
                    verified += 1
                times.append(elapsed)
            else:
                verdict, elapsed = None, 0.0
            results.append(
                ImageVerdict(
                    image_index=i,
                    label=rec.label,
                    candidate=candidate_flags[i],
                    epsilon=eps,
                    verdict=verdict,
                    elapsed=elapsed,
                )
            )
        per_eps.append(
            EpsilonSummary(
                epsilon=eps,
                candidates=n_candidates,
                verified=verified,
                precision=(verified / n_candidates) if n_candidates else None,
                mean_time=float(np.mean(times)) if times else 0.0,
            )
        )

    report = VerdictReport(
        results=results,
        per_epsilon=per_eps,
        images=len(records),
        candidates=n_candidates,
        mode=cfg.mode.value,
        sigma=cfg.sigma,
        tau=cfg.tau,
        check=check,
    )
    if out_csv:
        report.write_csv(out_csv)
    if out_json:
        report.write_json(out_json)
    return report

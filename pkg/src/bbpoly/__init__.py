"""Linear bound propagation robustness certifier with block summaries."""

from .analyzer import (
    AnalysisMode,
    AnalysisResult,
    Analyzer,
    AnalyzerConfig,
    analyze,
    analyze_input_summary,
)
from .domain import (
    INPUT_LAYER,
    AnalysisError,
    BoundsVector,
    ConstraintMatrix,
    CrossingBoundsError,
    Interval,
    LinearForm,
    ReluRelaxation,
    evaluate_concrete_bounds,
    update_bounds,
)
from .model import (
    DatasetRecord,
    LayerSpec,
    NetworkSpec,
    Segmentation,
    load_dataset,
    load_network,
    lower_convolution,
    save_network,
    segment_network,
)
from .oracle import compare_widths, interval_propagate, sample_check
from .summary import BlockSummary, read_summary, release_intermediates, store_summary
from .verifier import (
    RobustnessQuery,
    Verdict,
    VerdictReport,
    build_region,
    classify,
    run_benchmark,
    verify_robustness,
)

__version__ = "0.1.0"

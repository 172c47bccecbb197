"""Compact convolutional classifier toolkit.

From-scratch numpy engine for a small spectral-spatial traffic-sign
network: layer math with exact gradients, a momentum-SGD training loop,
16-bit precision reduction with parity measurement, parameter/MAC
efficiency metrics, constrained microarchitecture search, and a synthetic
benchmark-layout data pipeline. ``micronnet.cli`` exposes the same
functionality as an operator command line.
"""

from .data import (
    MIRRORABLE_CLASSES,
    NUM_CLASSES,
    TARGET_SIZE,
    TECHNIQUES,
    AugmentPolicy,
    ImageSample,
    augment,
    balance_plan,
    crop_resize,
    degrade,
    generate_synthetic,
    load_gtsrb,
    stack_samples,
    write_benchmark_tree,
)
from .efficiency import (
    EfficiencyReport,
    efficiency_report,
    information_density,
    instrumented_mac_count,
    mac_count,
    netscore,
    param_count,
    report_rows,
    report_text,
)
from .errors import (
    DataError,
    DimensionError,
    ModelFormatError,
    PlanError,
    RowError,
    SampleError,
    SpecError,
)
from .formats import FLOAT16, FLOAT32, ScalarFormat, Tensor, fixed16, narrow
from .network import (
    ArchitectureSpec,
    LayerSpec,
    Network,
    build,
    classifier_layer,
    conv_layer,
    fc_layer,
    forward,
    infer_shapes,
    load,
    micronnet_default,
    pool_layer,
    predict,
    save,
    spec_from_dict,
    spec_to_dict,
    validate_network_spec,
)
from .quantization import (
    QuantizationReport,
    TensorQuantStats,
    parity_eval,
    quant_report_rows,
    quant_report_text,
    quantize,
    select_frac_bits,
    to_fixed16,
    to_float16,
)
from .search import (
    Evaluator,
    LayerChoices,
    ProbeRecord,
    SearchResult,
    SearchSpace,
    brute_force,
    conv_filters,
    glyph_space,
    layer_choices,
    log_text,
    mock_evaluator,
    optimize,
    spec_id,
    toy_space,
    training_evaluator,
)
from .training import TraceRow, TrainConfig, evaluate, lr_schedule, trace_text, train

__version__ = "0.1.0"

__all__ = [
    "MIRRORABLE_CLASSES",
    "NUM_CLASSES",
    "TARGET_SIZE",
    "TECHNIQUES",
    "AugmentPolicy",
    "ImageSample",
    "augment",
    "balance_plan",
    "crop_resize",
    "degrade",
    "generate_synthetic",
    "load_gtsrb",
    "stack_samples",
    "write_benchmark_tree",
    "EfficiencyReport",
    "efficiency_report",
    "information_density",
    "instrumented_mac_count",
    "mac_count",
    "netscore",
    "param_count",
    "report_rows",
    "report_text",
    "DataError",
    "DimensionError",
    "ModelFormatError",
    "PlanError",
    "RowError",
    "SampleError",
    "SpecError",
    "FLOAT16",
    "FLOAT32",
    "ScalarFormat",
    "Tensor",
    "fixed16",
    "narrow",
    "ArchitectureSpec",
    "LayerSpec",
    "Network",
    "build",
    "classifier_layer",
    "conv_layer",
    "fc_layer",
    "forward",
    "infer_shapes",
    "load",
    "micronnet_default",
    "pool_layer",
    "predict",
    "save",
    "spec_from_dict",
    "spec_to_dict",
    "validate_network_spec",
    "QuantizationReport",
    "TensorQuantStats",
    "parity_eval",
    "quant_report_rows",
    "quant_report_text",
    "quantize",
    "select_frac_bits",
    "to_fixed16",
    "to_float16",
    "Evaluator",
    "LayerChoices",
    "ProbeRecord",
    "SearchResult",
    "SearchSpace",
    "brute_force",
    "conv_filters",
    "glyph_space",
    "layer_choices",
    "log_text",
    "mock_evaluator",
    "optimize",
    "spec_id",
    "toy_space",
    "training_evaluator",
    "TraceRow",
    "TrainConfig",
    "evaluate",
    "lr_schedule",
    "trace_text",
    "train",
]

"""Inference-oriented toolkit for multi-branch, heterogeneous-kernel
detection networks: numpy tensor ops, conv/BN re-parameterization, kernel
size scheduling, and whole-model graph assembly/analysis.
"""

import os as _os


def _apply_thread_cap():
    """Honor the MHAF_THREADS env var before numpy/BLAS are loaded.

    A value of 0 (or unset) leaves the BLAS runtime to pick its own level of
    parallelism; any positive integer caps the BLAS/OpenMP thread pools.
    """
    raw = _os.environ.get("MHAF_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        return
    if n <= 0:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(var, str(n))


_apply_thread_cap()

from .errors import (  # noqa: E402
    ConfigError,
    GraphError,
    KernelError,
    MhafError,
    NumericError,
    ShapeError,
    StateError,
    WeightFileError,
)
from .tensor import (  # noqa: E402
    BNParams,
    ConvKernel,
    avgpool2d,
    batchnorm_infer,
    concat_channels,
    conv2d_fast,
    conv2d_naive,
    silu,
    split_channels,
    to_tensor4,
    upsample2x,
)
from .config import (  # noqa: E402
    PRESET_NAMES,
    ModelSpec,
    load_preset,
    parse_config,
    resolve_config,
    serialize_config,
    spec_hash,
)
from .reparam import (  # noqa: E402
    RepHConvSpec,
    RepHConvWeights,
    fuse_conv_bn,
    merge_heterogeneous,
    verify_equivalence,
)
from .ghfks import (  # noqa: E402
    KernelPlan,
    default_plan,
    receptive_field,
    rf_report,
    uniform_plan,
)
from .graph import (  # noqa: E402
    ModelGraph,
    assemble,
    count_params_flops,
    export_graph,
    shape_infer,
    validate_model,
)
from .weights import (  # noqa: E402
    WeightStore,
    init_weights,
    load_weights,
    save_weights,
    validate_store,
)
from .model import (  # noqa: E402
    benchmark_forward,
    forward,
    fuse_model,
)

__version__ = "0.1.0"

__all__ = [
    "MhafError",
    "ShapeError",
    "KernelError",
    "StateError",
    "NumericError",
    "ConfigError",
    "GraphError",
    "WeightFileError",
    "ConvKernel",
    "BNParams",
    "to_tensor4",
    "conv2d_naive",
    "conv2d_fast",
    "batchnorm_infer",
    "silu",
    "avgpool2d",
    "upsample2x",
    "concat_channels",
    "split_channels",
    "PRESET_NAMES",
    "ModelSpec",
    "load_preset",
    "parse_config",
    "resolve_config",
    "serialize_config",
    "spec_hash",
    "RepHConvSpec",
    "RepHConvWeights",
    "fuse_conv_bn",
    "merge_heterogeneous",
    "verify_equivalence",
    "KernelPlan",
    "default_plan",
    "uniform_plan",
    "receptive_field",
    "rf_report",
    "ModelGraph",
    "assemble",
    "shape_infer",
    "count_params_flops",
    "export_graph",
    "validate_model",
    "WeightStore",
    "init_weights",
    "save_weights",
    "load_weights",
    "validate_store",
    "forward",
    "fuse_model",
    "benchmark_forward",
    "__version__",
]

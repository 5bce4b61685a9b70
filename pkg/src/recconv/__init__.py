"""Recursive multi-scale depthwise convolution in NumPy."""
from .analysis import (
    ComplexityReport,
    ERFMap,
    complexity_report,
    count_macs,
    count_params,
    erf_map,
    mac_factor_closed_form,
    nominal_erf,
    structural_box,
    structural_rf,
)
from .blocks import (
    DESK_CONFIG,
    DownsampleBlock,
    MetaNeXtBlock,
    Model,
    ModelConfig,
    StageConfig,
    build_model,
    downsample_forward,
    metanext_forward,
    model_forward,
)
from .errors import ConfigError, ContractError, InvalidGeometryError, RecConvError, ShapeError
from .gradcheck import GradcheckReport, fd_gradcheck
from .nn import ConvKernel, conv2d, conv2d_vjp, gelu, resize, transposed_dwconv
from .recursive import (
    RecConv,
    RecConvConfig,
    RecConvWeights,
    recconv_forward,
    recconv_param_count,
    recconv_vjp,
)
from .tensor import Shape2

__version__ = "0.1.0"

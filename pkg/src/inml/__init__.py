"""In-network ML toolkit: compile models to match-action table entries
and run fixed-point inference over encapsulated packets in software.

The pieces, in pipeline order:

  * fixedpoint: saturating Q-format arithmetic on 32-bit ints
  * approx: polynomial sigmoid and loss approximations, float oracles
  * compiler: model files, quantization to table entries, linear fitting
  * wire: request/result packet codec and frame files
  * dataplane: the match-action pipeline and its epoch-based control plane
  * evalharness: error and overhead studies, synthetic traffic
  * cli: the `inml` command wiring it all together
"""

from .approx import Activation
from .compiler import (
    Dataset,
    LayerSpec,
    ModelSpec,
    fit_linear,
    float_forward,
    parse_dataset,
    parse_model,
    parse_table_entries,
    quantize_model,
    render_model,
)
from .dataplane import ControlPlane, PipelineStats, process_packet, process_stream
from .fixedpoint import FixedPointFormat, decode, encode
from .wire import InferenceRequest, InferenceResult, decode_packet, encode_request

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "ControlPlane",
    "Dataset",
    "FixedPointFormat",
    "InferenceRequest",
    "InferenceResult",
    "LayerSpec",
    "ModelSpec",
    "PipelineStats",
    "decode",
    "decode_packet",
    "encode",
    "encode_request",
    "fit_linear",
    "float_forward",
    "parse_dataset",
    "parse_model",
    "parse_table_entries",
    "process_packet",
    "process_stream",
    "quantize_model",
    "render_model",
    "__version__",
]

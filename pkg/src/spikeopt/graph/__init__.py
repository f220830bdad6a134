from .io import (
    ModelFormatError,
    TruncatedBlobError,
    load_labels,
    load_model,
    load_tensor,
    save_labels,
    save_model,
    save_tensor,
)
from .model import (
    DagViolationError,
    Graph,
    GraphError,
    Node,
    ShapeMismatchError,
    UnknownOperatorError,
    infer_shapes,
    node_forward,
    run_forward,
)
from .transforms import (
    ConversionError,
    SnnGraph,
    calibrate,
    convert,
    decompose_layernorm,
    decompose_maxpool,
    fold_batchnorm,
    normalize_relu,
)

__all__ = [
    "Graph", "Node", "GraphError", "DagViolationError", "ShapeMismatchError",
    "UnknownOperatorError", "ModelFormatError", "TruncatedBlobError",
    "infer_shapes", "node_forward", "run_forward",
    "save_model", "load_model", "save_tensor", "load_tensor",
    "save_labels", "load_labels",
    "ConversionError", "SnnGraph", "fold_batchnorm", "normalize_relu",
    "decompose_maxpool", "decompose_layernorm", "convert", "calibrate",
]

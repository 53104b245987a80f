"""Semidirect products of scale groups, per-scale reconstruction and the scale flow."""
from .groups import (
    MatrixGroupElement,
    SdpTuple,
    direct_multiply,
    random_batch,
    reorder_hom,
    reorder_hom_inverse,
    sdp_inverse,
    sdp_multiply,
    trivialize,
)
from .reconstruct import (
    COARSE_FIRST,
    COARSE_LAST,
    ScaleTuple,
    composed,
    diagram_residual,
    reconstruct,
    reconstruct_coarse_first,
    reconstruct_coarse_last,
)
from .scale import (
    ScaleBundle,
    ScaleFlowResult,
    compatibility_residual,
    continuum_bracket,
    sampling_map,
    scale_flow,
    scale_segment,
    semidirect_bracket,
)

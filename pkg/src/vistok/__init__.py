"""Vision tokenization front-end: resize planning, patch grids, M-RoPE, packing and ChatML."""
from .attention import AttentionCase, extrapolation_probe, score_matrix, score_matrix_1d
from .chatml import (
    AgentStep,
    ImageRef,
    Message,
    NormalizedBox,
    ObjectRef,
    Text,
    VideoRef,
    normalize_box,
    parse,
    parse_agent_transcript,
    parse_grounding,
    render_grounding,
    serialize,
)
from .estimators import DynamicResolutionTokenizer
from .mrope import (
    ImageSegment,
    PositionPlan,
    PositionTriple,
    RotaryConfig,
    TextSegment,
    VideoSegment,
    apply_rotary,
    assign_positions,
    assign_positions_2d,
    max_position,
    rotary_angles,
)
from .packing import PackItem, PackedBatch, bin_stats, pack
from .patchify import PatchGrid, PixelBuffer, patchify_image, patchify_video, resample
from .resize import (
    ResizePlan,
    ResizeSpec,
    TokenCount,
    fixed_token_resize,
    plan_video,
    smart_resize,
    token_count,
)

__version__ = "0.1.0"

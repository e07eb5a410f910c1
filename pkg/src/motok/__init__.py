"""motok: motion tokenization, diffusion sampling, and scene-aware evaluation."""

from .ddim import (
    Condition,
    GuidanceConfig,
    NoiseSchedule,
    apply_cfg,
    ddim_sample,
    forward_noise,
)
from .lfq import (
    LfqCodebook,
    QuantizedCode,
    codebook_utilization,
    commitment_loss,
    entropy_loss,
    index_to_bits,
    quantize,
)
from .metrics import (
    FeatureSet,
    GaussianStats,
    diversity,
    fit_gaussian,
    frechet_distance,
    handcrafted_motion_features,
    multimodal_distance,
    r_precision,
)
from .motion import (
    MotionSequence,
    SixDof,
    WaypointTrack,
    extract_waypoints,
    repeat_waypoints,
    root_pose_of,
    to_canonical,
    to_global,
)
from .populate import (
    PlacementConfig,
    PlacementOffset,
    PlacementResult,
    SceneLessError,
    find_seed_position,
    optimize_placement,
)
from .scene import (
    SceneVoxelGrid,
    SignedDistanceField,
    body_keypoints,
    build_sdf,
    collision_score,
    contact_loss,
    contact_score,
    sample_sdf,
)
from .tokens import TokenStream, cross_entropy_loss, mask_tokens
from .vae import ToyVaeConfig, ToyVaeParams, decode, encode, train

__version__ = "0.1.0"

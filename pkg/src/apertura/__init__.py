"""Depth-from-defocus simulation and decoding for event cameras with coded apertures.

Pipeline: a dot pattern projected onto a layered scene is rendered to a
latent image, blurred with depth-dependent PSFs synthesized from an aperture
mask, converted to events under simulated camera motion, and decoded back to
metric depth by correlating per-dot event signatures against a bank of
depth-indexed templates.
"""

from .optics import (
    ApertureMask,
    LensConfig,
    Psf,
    PsfBank,
    blur_circle_size,
    blur_sensitivity,
    build_psf_bank,
    lens_from_config,
    spectral_discriminability,
    synthesize_psf,
)
from .masks import BUILTIN_MASKS, builtin_mask, load_mask
from .scene import (
    DotPattern,
    LatentImage,
    Layer,
    Scene,
    pattern_from_config,
    render_latent,
    scene_from_config,
)
from .events import (
    BlurredImage,
    EventFrame,
    EventVolume,
    MotionProfile,
    accumulate_event_counts,
    blur_image,
    event_frame,
    events_from_sequence,
    generate_events,
    oscillation_event_counts,
)
from .decoder import (
    DepthEstimate,
    SignatureBank,
    build_signature_bank,
    decode_sparse,
    densify,
    detect_dots,
    estimate_depth,
    export_training_dataset,
)

__version__ = "0.1.0"

"""Synthetic overlay generator: ground truth for locate, parse and metrics."""

from .render import RenderSpec, render_overlay, render_template_state, template_bbox
from .templates import FAMILIES, ControllerTemplate, default_templates, get_template
from .video import (
    ActionScript,
    BenchmarkConfig,
    SpecRanges,
    SynthVideo,
    make_benchmark,
    synth_video,
    video_from_entry,
)

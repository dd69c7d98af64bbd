"""Open-vocabulary 3D segmentation of Gaussian-splat scenes.

The pipeline: contrastively train per-Gaussian affinity features from
multi-view masks, decompose the scene into objects by clustering mask
prototypes, aggregate each object's multi-view semantics into weighted
descriptors, and answer open-vocabulary queries directly in 3D.
"""

__version__ = "0.1.0"

from .scene import Camera, GaussianScene, look_at_camera
from .render import (
    ViewComposite,
    RenderedFeatureMap,
    project,
    composite,
    composite_normalized,
    render_feature_map,
    render_label_map,
    backprop_to_features,
)

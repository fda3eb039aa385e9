"""Bundle exporter: encoders to conxp bundles, plus linear-map sanity checks."""
from .checks import CheckRow, fit_maps, identity_maps, sanity_checks
from .encoders import EncoderPair, resolve_encoders, toy_encoders
from .export import (
    ExportConfig,
    export_bundle,
    export_concepts,
    export_embeddings,
    read_dataset_dir,
    text_centering_mean,
    zeroshot_head,
)
from .templates import CAPTION_TEMPLATES

__version__ = "0.1.0"

"""
Facade Module for Application Logic.

This module collects and exposes the public functions of the `logic`
subpackage. The command handlers import from here, which keeps them
decoupled from the internal structure of the logic package.
"""

# From logic.audio_features
from logic.audio_features import (
    AudioClip,
    FeatureConfig,
    FeatureMatrix,
    FeatureNormalizer,
    extract_mbe,
    extract_many,
)

# From logic.feature_io
from logic.feature_io import (
    read_feature_matrix,
    read_wav,
    write_feature_matrix,
    write_wav,
)

# From logic.crnn_model
from logic.crnn_model import (
    ModelConfig,
    build,
    build_baseline,
    collapse_time,
    count_parameters,
    forward,
)

# From logic.checkpoint
from logic.checkpoint import (
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)

# From logic.gradcheck
from logic.gradcheck import (
    grad_check,
    run_suite,
)

# From logic.trainer
from logic.trainer import (
    SWEEP_HEADER,
    TrainConfig,
    dropout_sweep,
    fit,
    sweep_weight_pairs,
    weight_sweep,
)

# From logic.event_decoding
from logic.event_decoding import (
    Event,
    binarize,
    decode_events,
    fill_gaps,
    median_filter,
    weak_from_strong,
)

# From logic.sed_metrics
from logic.sed_metrics import (
    CSV_HEADER,
    SplitReport,
    evaluate_split,
    format_report,
    report_to_csv_row,
    segment_er,
    segment_f,
    weak_prf,
)

# From logic.annotations
from logic.annotations import (
    LabeledEvent,
    evaluate_annotations,
    label_index,
    read_strong,
    read_weak,
    write_strong,
    write_weak,
)

# From logic.dataset
from logic.dataset import (
    Example,
    LabeledClip,
    generate_dataset,
    load_clip,
    load_manifest,
    load_split,
    select_classes,
    write_dataset,
)

# From logic.saliency
from logic.saliency import (
    HEADS,
    render_saliency_image,
    saliency,
)

# From logic.parallel
from logic.parallel import parallel_map

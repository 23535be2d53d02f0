"""Hybrid photo recommendation with aesthetic side information."""

__version__ = "0.1.0"

from .colorfeat import (
    ColorHistogram,
    ColorHistogramExtractor,
    batch_extract,
    extract_histogram,
    hsv_to_rgb,
    rgb_to_hsv,
)
from .dataset import (
    InsufficientDataError,
    Interaction,
    InteractionMatrix,
    MetadataRecord,
    ParseError,
    SplitTriple,
    build_matrix,
    load_interactions,
    load_metadata,
    metadata_to_features,
    temporal_split,
)
from .evalharness import (
    EmptyEvaluationError,
    MetricResult,
    TuneGrid,
    TuneResult,
    aggregate_ci,
    average_precision,
    evaluate,
    precision_at_k,
    r_precision,
    tune,
)
from .features import FeatureTable, MissingFeatureError
from .recommender import (
    ItemNNRecommender,
    PopularityRecommender,
    RandomRecommender,
    RankedList,
    write_ranked_lists,
)
from .simcore import (
    KERNEL_ORDER,
    BlendConfig,
    SimilarityModel,
    cosine,
    euclidean_sim,
    pairwise_feature_similarity,
    pairwise_interaction_similarity,
    pearson,
)
from .stylefeat import (
    AestheticSets,
    BadMagicError,
    DimensionError,
    FeatureFormatError,
    FeatureMap,
    GramStyleTransformer,
    StyleVector,
    TruncatedStreamError,
    UnsupportedVersionError,
    gram,
    pairwise_topk_precision,
    read_feature_maps,
    read_features,
    select_best_configuration,
    style_table,
    sweep_layers,
    write_feature_maps,
    write_features,
)

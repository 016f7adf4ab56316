"""degsim: quantify image-degradation similarity, search minimal task
groupings under a performance-drop constraint, and adaptively select the
best group for an unknown input."""

__version__ = "0.1.0"

from .errors import (
    CoverageError,
    DataError,
    DegsimError,
    FitError,
    FormatError,
    SearchBudgetExceeded,
    ShapeError,
    UnsupportedImageError,
    ValidationError,
)
from .ggd import GGDParams, SampleVector, fit_ggd, ggd_pdf, kl_ggd, make_ggd, sample_ggd, sym_log_kl
from .image import PSNR_CAP_DB, PatchSet, crop_patches, load_image, psnr, save_image
from .features import (
    FeatureTensor,
    center_and_flatten,
    extract_builtin,
    ingest_features,
    write_features,
)
from .degrade import (
    CorpusManifest,
    DegradationSpec,
    apply_degradation,
    degrade_corpus,
    load_manifest,
    load_suite,
    make_spec,
    parse_degradation_spec,
    save_manifest,
)
from .similarity import SimilarityMatrix, build_similarity_matrix, group_stats, load_matrix, save_matrix
from .oracle import (
    CachedOracle,
    OracleTable,
    ProxyConfig,
    ProxyOracle,
    TableOracle,
    cached,
    canonical_group_key,
    delta_p,
    load_oracle_table,
)
from .grouping import (
    CandidateLevel,
    PartitionScheme,
    SearchConfig,
    SearchResult,
    brute_force_min_partition,
    enumerate_candidates,
    find_lmax,
    grouping_search,
    prune_level,
    search_pipeline,
    verify_scheme,
)
from .selection import (
    GroupProfile,
    PatchConfig,
    SelectionResult,
    build_profiles,
    estimate_input_ggd,
    group_average_ggd,
    predict_generalization,
    select_model,
)

"""Concept-based abductive/contrastive explanations for decomposed classifiers.

Everything operates on precomputed embedding/concept-vector bundles; no ML
runtime is needed. Erasure procedures live in `erasure`, the enumeration
engine in `explain`, behavior aggregation and metrics in `analytics`, and the
on-disk formats plus CLI in `bundle` / `cli`.
"""
from .core import (
    BoolMask,
    ConceptBank,
    DimensionMismatchError,
    EmbeddingMatrix,
    LinearMap,
    ModelHead,
    StrengthVector,
    concept_strengths,
    fit_linear_map,
    fit_ridge_probe,
    predict,
    probe_score,
    sign_map,
)
from .erasure import (
    EraseError,
    Eraser,
    LeaceFit,
    SpliceConvergenceError,
    SpliceDecomposition,
    leace_erase,
    leace_fit,
    ortho_erase,
    splice_decompose,
    splice_erase,
    strength_sign_labels,
)
from .explain import (
    EnumBudget,
    EnumResult,
    Explanation,
    InstanceContext,
    SaturationResult,
    XpEnumResult,
    admissible,
    canon,
    find_mhs,
    naive_enum,
    shrink,
    weak_axp_check,
    weak_cxp_check,
    xp_enum,
    xp_sat_enum,
)
from .analytics import (
    AdmissionReport,
    Behavior,
    BehaviorHistograms,
    BehaviorInstances,
    MonotonicityResult,
    ParsimonyRow,
    RelevanceLabels,
    Selector,
    SignedExplanationKey,
    aggregate,
    build_behavior,
    cumulative_coverage_at_length,
    gen_at_k,
    individual_coverage,
    max_cov_at_k,
    mixed_coverage,
    monotonicity_test,
    parsimony_stats,
    plausibility,
    signed_key,
    signed_sets_per_image,
    top_k,
    vocab_alpha_test,
    vocab_order_by_strength,
    vocab_prune_similar,
)
from .bundle import (
    Bundle,
    BundleError,
    ChecksumError,
    DuplicateIdError,
    ExplanationRecord,
    ManifestError,
    NonFiniteError,
    NormalizationError,
    SizeMismatchError,
    load_bundle,
    read_records,
    read_report,
    save_bundle,
    write_records,
    write_report,
)

__version__ = "0.1.0"

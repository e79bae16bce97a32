"""Training-free lineage fingerprinting for transformer weight bundles.

Recovers embedding permutations and sign flips with a linear assignment,
then scores Q/K projections with unbiased centered kernel alignment.
"""

__version__ = "0.1.0"

from weightprint.errors import (
    ComparisonError,
    DegenerateKernelError,
    FingerprintError,
    FormatError,
    ValidationError,
    VocabError,
)
from weightprint.weights_io import LayerWeights, WeightBundle, load_bundle, load_vocab, save_bundle
from weightprint.linalg import (
    BlockRotation,
    apply_block_rotation,
    apply_perm_sign_columns,
    cosine_matrix,
    gram_linear,
)
from weightprint.assignment import Assignment, brute_force_assignment, solve_max_assignment
from weightprint.kernel_alignment import KernelPair, cka_biased, hsic_biased, hsic_unbiased, ucka
from weightprint.fingerprint import (
    ColumnAlignment,
    SimilarityReport,
    compare,
    extract_alignment,
    layer_similarity,
    pair_layers,
    shared_vocab_rows,
)
from weightprint.forge import (
    ForgeConfig,
    ForwardTrace,
    ManipulationSpec,
    apply_manipulation,
    forward_reference,
    generate_base,
)
from weightprint.evaluation import (
    EvalReport,
    ScoreSet,
    TestbedConfig,
    auc,
    pauc,
    roc_points,
    run_testbed,
    tpr_at_fpr,
    z_scores,
)

__all__ = [
    "__version__",
    "Assignment",
    "BlockRotation",
    "ColumnAlignment",
    "ComparisonError",
    "DegenerateKernelError",
    "EvalReport",
    "FingerprintError",
    "ForgeConfig",
    "FormatError",
    "ForwardTrace",
    "KernelPair",
    "LayerWeights",
    "ManipulationSpec",
    "ScoreSet",
    "SimilarityReport",
    "TestbedConfig",
    "ValidationError",
    "VocabError",
    "WeightBundle",
    "apply_block_rotation",
    "apply_manipulation",
    "apply_perm_sign_columns",
    "auc",
    "brute_force_assignment",
    "cka_biased",
    "compare",
    "cosine_matrix",
    "extract_alignment",
    "forward_reference",
    "generate_base",
    "gram_linear",
    "hsic_biased",
    "hsic_unbiased",
    "layer_similarity",
    "load_bundle",
    "load_vocab",
    "pair_layers",
    "pauc",
    "roc_points",
    "run_testbed",
    "save_bundle",
    "shared_vocab_rows",
    "solve_max_assignment",
    "tpr_at_fpr",
    "ucka",
    "z_scores",
]

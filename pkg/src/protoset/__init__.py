"""protoset: multi-prototype set matching with an energy-based pair score.

Sets of media are encoded per item, softly partitioned into prototype slots,
reconstructed as gated unit features, and compared through a softmax-weighted
distance energy. Training jointly descends the pair ranking loss and a
within-set partition cost.
"""

from .data import (
    Dataset,
    MediaFeature,
    MediaSet,
    SetPair,
    SynthConfig,
    balance_set,
    generate_synthetic,
    load_dataset,
    load_pairs,
    sample_pairs,
    save_dataset,
    save_pairs,
)
from .encoder import EncoderParams, encode, encode_matrix, encode_set, init_encoder
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    FormatError,
    NumericsError,
    ParseError,
    ProtoSetError,
    ShapeError,
)
from .matching import (
    MatchEnergy,
    PrototypeSummary,
    SetTemplate,
    energy,
    match_sets,
    prepare_set,
    prototype_pool,
    ranking_loss,
    score_templates,
)
from .metrics import (
    MetricReport,
    ScoreSample,
    export_curves,
    identification_metrics,
    identification_metrics_from_scores,
    score_matrix,
    score_pairs,
    verification_metrics,
)
from .model import Model, init_model, load_checkpoint, named_tensors, save_checkpoint
from .oracle import ari, brute_force_partition, kmeans
from .prototypes import (
    PrototypeAssignment,
    PrototypeParams,
    affinity,
    harden,
    minimize_partition_cost,
    pairwise_distances,
    partition_cost,
    predict_assignment,
)
from .training import (
    GradCheckReport,
    LossReport,
    TrainConfig,
    fit,
    forward_pair,
    grad_check,
    load_config,
    save_config,
    save_history,
    train,
)

__version__ = "0.1.0"

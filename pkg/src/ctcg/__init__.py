"""Sequence-labeling training toolkit.

Alignment-free (CTC-style) loss with exact gradients, spike-guided
training against a frozen guiding model, posterior fusion across models,
and frame-wise distillation, plus a from-scratch recurrent model and a
deterministic training loop sized for desk-scale experiments.
"""

from .alphabet import Alphabet
from .analysis import (
    compute_spike_sets,
    coverage_ratio,
    dump_posterior_csv,
    dump_posteriors,
    extract_spikes,
    read_posterior_csv,
)
from .ctc import (
    collapse,
    ctc_loss,
    ctc_loss_bruteforce,
    edit_distance,
    expand_alignments,
    greedy_decode,
    min_alignment_length,
    sequence_error_rate,
)
from .data import (
    Dataset,
    SyntheticTaskSpec,
    Utterance,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_heldout,
)
from .ensemble import (
    DistillationConfig,
    FusionSpec,
    distill_loss,
    fuse,
    fused_ser,
    kd_frame_loss,
    load_posterior_cache,
    precompute_teacher_grids,
    save_posterior_cache,
)
from .errors import CtcgError
from .guided import (
    GuidedLossConfig,
    build_mask,
    guide_loss,
    guided_ctc_loss,
    load_mask_cache,
    precompute_masks,
    save_mask_cache,
)
from .seqmodel import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    ModelConfig,
    SequenceModel,
    init_model,
    load_checkpoint,
    param_count,
    save_checkpoint,
    uniform_init_scale,
    warm_start,
)
from .trainer import (
    EpochMetrics,
    TrainingJob,
    TrainingSchedule,
    batch_order,
    build_schedule,
    evaluate_ser,
    learning_rate,
    run_training,
    sgd_nesterov_step,
    write_metrics_csv,
)

__all__ = [
    "Alphabet",
    "BIDIRECTIONAL",
    "CtcgError",
    "Dataset",
    "DistillationConfig",
    "EpochMetrics",
    "FusionSpec",
    "GuidedLossConfig",
    "ModelConfig",
    "SequenceModel",
    "SyntheticTaskSpec",
    "TrainingJob",
    "TrainingSchedule",
    "UNIDIRECTIONAL",
    "Utterance",
    "batch_order",
    "build_mask",
    "build_schedule",
    "collapse",
    "compute_spike_sets",
    "coverage_ratio",
    "ctc_loss",
    "ctc_loss_bruteforce",
    "distill_loss",
    "dump_posterior_csv",
    "dump_posteriors",
    "edit_distance",
    "evaluate_ser",
    "expand_alignments",
    "extract_spikes",
    "fuse",
    "fused_ser",
    "generate_synthetic",
    "greedy_decode",
    "guide_loss",
    "guided_ctc_loss",
    "init_model",
    "kd_frame_loss",
    "learning_rate",
    "load_checkpoint",
    "load_dataset",
    "load_mask_cache",
    "load_posterior_cache",
    "min_alignment_length",
    "param_count",
    "precompute_masks",
    "precompute_teacher_grids",
    "read_posterior_csv",
    "run_training",
    "save_checkpoint",
    "save_dataset",
    "save_mask_cache",
    "save_posterior_cache",
    "sequence_error_rate",
    "sgd_nesterov_step",
    "split_heldout",
    "uniform_init_scale",
    "warm_start",
    "write_metrics_csv",
]

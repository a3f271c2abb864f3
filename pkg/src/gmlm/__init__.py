"""Grouped masked token modeling engine.

Desk-scale implementation of group-masked language modeling over grouped
residual-quantized token streams: a toy grouped RVQ codec, a synthetic
token world with an exact posterior oracle, a hand-differentiated
cross-attention predictor with prompt key/value caching, grouped iterative
parallel decoding, and a runtime benchmark harness.
"""

from .tokens import (
    CodecParams,
    SemanticSeq,
    TokenGrid,
    coarse_fine_views,
    deserialize_tokens,
    load_gact,
    make_grid,
    save_gact,
    serialize_tokens,
)
from .grvq import (
    GrvqCodec,
    bitrate,
    decode_frame,
    encode_frame,
    fit_codebooks,
    load_codec,
    save_codec,
)
from .world import (
    OracleModel,
    Utterance,
    WorldSpec,
    generate_corpus,
    load_corpus,
    oracle_as_model,
    oracle_posterior,
    save_corpus,
)
from .predictor import (
    AdamHyper,
    AdamState,
    Predictor,
    PredictorConfig,
    PromptCache,
    adam_step,
    init_predictor,
    load_predictor,
    save_predictor,
)
from .training import (
    MaskPlan,
    TrainConfig,
    apply_gmlm_mask,
    masked_cross_entropy,
    sample_mask_plan,
    train_epoch,
)
from .sampler import (
    DecodeRequest,
    DecodeSchedule,
    SamplerTrace,
    accuracy_metrics,
    cosine_schedule,
    fine_greedy_fill,
    gipd_decode,
    gumbel_perturb,
    ipd_baseline_decode,
)
from .bench import BenchConfig, BenchRow, bench_runtime, emit_plot, emit_plot_from_csv

__version__ = "0.1.0"

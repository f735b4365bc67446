"""demask: a desk-scale engine for absorbing-state discrete diffusion over
token sequences, with mask-predict and ancestral decoding, length-beam
search, and a from-scratch trainable denoiser."""

__version__ = "0.1.0"

from .schedule import NoiseSchedule, UnmaskPlan, build_schedule, build_unmask_plan, loss_weight, unmask_count
from .vocab import Vocab
from .diffusion import (GenerationTrace, SequenceState, corrupt, corrupt_step, elbo_estimate,
                        generate, mask_predict_step, posterior, reverse_step_ancestral)
from .denoiser import (Denoiser, DenoiserOutput, OracleDenoiser, TokenDistribution,
                       TransformerConfig, TransformerDenoiser)
from .length import BeamCandidate, LengthDistribution, LengthHead, LengthHeadConfig, length_beam_generate, predict_length
from .training import Batch, TrainConfig, diffusive_adapt, mlm_pretrain, prune_vocab, rdm_loss
from .data import Example, SyntheticTaskSpec, detokenize, format_example, generate_synthetic, tokenize
from .metrics import EvalReport, bleu, exact_match, token_accuracy, tv_distance

__all__ = [
    "NoiseSchedule", "UnmaskPlan", "build_schedule", "build_unmask_plan", "loss_weight", "unmask_count",
    "Vocab", "SequenceState", "GenerationTrace", "corrupt", "corrupt_step", "posterior",
    "reverse_step_ancestral", "mask_predict_step", "generate", "elbo_estimate",
    "Denoiser", "DenoiserOutput", "OracleDenoiser", "TokenDistribution", "TransformerConfig",
    "TransformerDenoiser", "BeamCandidate", "LengthDistribution", "LengthHead", "LengthHeadConfig",
    "length_beam_generate", "predict_length", "Batch", "TrainConfig", "diffusive_adapt",
    "mlm_pretrain", "prune_vocab", "rdm_loss", "Example", "SyntheticTaskSpec", "detokenize",
    "format_example", "generate_synthetic", "tokenize", "EvalReport", "bleu", "exact_match",
    "token_accuracy", "tv_distance",
]

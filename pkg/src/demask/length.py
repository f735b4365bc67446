"""Response-length prediction and length-beam decoding.

A generation request must fix the response length up front, so the package
carries a small classifier over candidate lengths: the denoiser reads the
prompt with a single appended mask token, its final hidden features pass
through one extra transformer block, the block outputs are mean-pooled, and
an MLP scores every length from 1 up to a fixed ceiling.

Length-beam decoding runs one full decode per candidate length and keeps
the candidate whose committed tokens score highest under the denoiser,
breaking ties toward the shorter response.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .denoiser import TransformerDenoiser, add_block_params, attention_bias, block_forward
from .diffusion import GenerationTrace, generate
from .nn import ParameterStore
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class LengthHeadConfig:
    """Shape of the length classifier; ``dim`` must match the denoiser."""

    dim: int
    n_heads: int
    ff_dim: int
    mlp_dim: int
    n_classes: int

    def __post_init__(self):
        for name in ("dim", "n_heads", "ff_dim", "mlp_dim", "n_classes"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.dim % self.n_heads != 0:
            raise ValueError(f"dim={self.dim} must be divisible by n_heads={self.n_heads}")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n_heads": self.n_heads, "ff_dim": self.ff_dim,
                "mlp_dim": self.mlp_dim, "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "LengthHeadConfig":
        return cls(**{k: int(d[k]) for k in ("dim", "n_heads", "ff_dim", "mlp_dim", "n_classes")})


@dataclass
class LengthDistribution:
    """Normalized log-probabilities over response lengths ``1..n_classes``.

    ``trained`` is False when the underlying head has never been fitted;
    such predictions are usable but should be surfaced as untrusted.
    """

    log_probs: np.ndarray
    trained: bool

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 1:
            raise ValueError(f"log_probs must be 1-D, got shape {lp.shape}")
        if not np.isclose(np.exp(lp).sum(), 1.0, atol=1e-6):
            raise ValueError("length distribution must normalize to 1")
        self.log_probs = lp

    @property
    def n_classes(self) -> int:
        return int(self.log_probs.shape[0])

    def top_k(self, k: int) -> list[tuple[int, float]]:
        """Best ``k`` lengths as ``(length, log_prob)``, most probable first;
        equal probabilities order by shorter length."""
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        order = np.argsort(-self.log_probs, kind="stable")[:k]
        return [(int(i) + 1, float(self.log_probs[i])) for i in order]


class LengthHead:
    """One transformer block over denoiser features, mean-pool, MLP classifier."""

    PREFIX = "length."

    def __init__(self, config: LengthHeadConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32, store: ParameterStore | None = None, init_scale: float = 0.02):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.store = store if store is not None else ParameterStore()
        if rng is None:
            rng = np.random.default_rng(0)
        cfg = config
        add_block_params(self.store, self.PREFIX + "block.", cfg.dim, cfg.ff_dim, self.dtype, rng, init_scale)
        add = self.store.add
        add(self.PREFIX + "mlp1.w", (rng.standard_normal((cfg.dim, cfg.mlp_dim)) * init_scale).astype(self.dtype))
        add(self.PREFIX + "mlp1.b", np.zeros(cfg.mlp_dim, dtype=self.dtype))
        add(self.PREFIX + "mlp2.w", (rng.standard_normal((cfg.mlp_dim, cfg.n_classes)) * init_scale).astype(self.dtype))
        add(self.PREFIX + "mlp2.b", np.zeros(cfg.n_classes, dtype=self.dtype))

    def forward(self, features: T.Tensor, real: np.ndarray | None = None) -> T.Tensor:
        """Classify pooled features; returns ``(B, n_classes)`` logits.

        ``features`` is the denoiser's ``(B, L, dim)`` hidden state for the
        prompt-plus-mask input; ``real`` marks non-padding positions.
        """
        B, L, d = features.shape
        if d != self.config.dim:
            raise ValueError(f"feature width {d} does not match head dim {self.config.dim}")
        bias = None if real is None else attention_bias(np.asarray(real, dtype=bool), self.config.n_heads, self.dtype)
        h = block_forward(self.store, self.PREFIX + "block.", features, self.config.n_heads, bias)
        if real is None:
            pooled = T.mean(h, axis=1)
        else:
            real = np.asarray(real, dtype=bool)
            weights = (real / real.sum(axis=1, keepdims=True)).astype(self.dtype)
            full = np.broadcast_to(weights[:, :, None], (B, L, d)).copy()
            pooled = T.sum_(T.mul(h, T.Tensor.constant(full, self.dtype)), axis=1)
        h = T.gelu(T.add(T.matmul(pooled, self.store[self.PREFIX + "mlp1.w"]),
                         self.store[self.PREFIX + "mlp1.b"]))
        return T.add(T.matmul(h, self.store[self.PREFIX + "mlp2.w"]),
                     self.store[self.PREFIX + "mlp2.b"])


def predict_length(prompt: np.ndarray, denoiser: TransformerDenoiser, head: LengthHead,
                   trained: bool = True) -> LengthDistribution:
    """Distribution over response lengths for one prompt.

    The denoiser reads the prompt with a single appended mask token; the
    head classifies its features.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim != 1 or prompt.shape[0] == 0:
        raise ValueError("prompt must be a non-empty 1-D token array")
    if prompt.shape[0] + 1 > denoiser.max_positions:
        raise ValueError(f"prompt length {prompt.shape[0]} leaves no room within capacity {denoiser.max_positions}")
    tokens = np.concatenate([prompt, [denoiser.mask_id]])[None, :]
    _, features = denoiser.forward_batch(tokens)
    logits = head.forward(features)
    lp = T.log_softmax(logits).data[0].astype(np.float64)
    return LengthDistribution(log_probs=lp, trained=trained)


@dataclass
class BeamCandidate:
    """One decoded candidate in a length beam."""

    length: int
    response: np.ndarray
    score: float
    length_log_prob: float
    trace: GenerationTrace


def length_beam_generate(prompt: np.ndarray, denoiser: TransformerDenoiser, schedule: NoiseSchedule,
                         head: LengthHead | None = None, n_beams: int = 1, mode: str = "topk",
                         rng: np.random.Generator | None = None, oracle_length: int | None = None,
                         head_trained: bool = True) -> tuple[BeamCandidate, list[BeamCandidate]]:
    """Decode over candidate response lengths and keep the best scorer.

    Candidate lengths come from the length head's top ``n_beams`` classes
    unless ``oracle_length`` pins a single known length.  Candidates whose
    length would exceed the denoiser's position capacity are dropped with a
    warning.  Each candidate is scored by the mean log-probability of its
    committed tokens at the final decode step; the winner is the highest
    score, with exact ties going to the shorter response.

    Returns the winner and all candidates, best first.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    capacity = denoiser.max_positions - prompt.shape[0]
    if oracle_length is not None:
        if oracle_length < 1:
            raise ValueError(f"oracle length must be positive, got {oracle_length}")
        lengths = [(int(oracle_length), 0.0)]
    else:
        if head is None:
            raise ValueError("length-beam decoding needs a length head unless an oracle length is given")
        dist = predict_length(prompt, denoiser, head, trained=head_trained)
        lengths = dist.top_k(n_beams)
    usable = [(n, lp) for n, lp in lengths if n <= capacity]
    for n, _ in lengths:
        if n > capacity:
            warnings.warn(f"dropping candidate length {n}: exceeds position capacity {capacity}")
    if not usable:
        raise ValueError("every candidate length exceeds the denoiser's position capacity")

    child_rngs = rng.spawn(len(usable)) if rng is not None else [None] * len(usable)
    candidates = []
    for (n, length_lp), child in zip(usable, child_rngs):
        response, trace = generate(prompt, n, denoiser, schedule, mode=mode, rng=child)
        score = float(trace.final_token_scores.mean())
        candidates.append(BeamCandidate(length=n, response=response, score=score,
                                        length_log_prob=length_lp, trace=trace))
    candidates.sort(key=lambda c: (-c.score, c.length))
    return candidates[0], candidates

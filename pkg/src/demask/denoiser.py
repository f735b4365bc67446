"""Denoisers: models that read a partially masked sequence and predict the
clean token at every response position.

All denoisers are time-agnostic: they see only the corrupted tokens, never
the timestep.  Output distributions never place mass on the mask token.

Two implementations are provided:

* :class:`OracleDenoiser` computes the exact conditional ``p(clean | observed)``
  by enumerating a known data distribution; it is the reference model used
  to validate samplers and bounds.
* :class:`TransformerDenoiser` is a small bidirectional transformer built on
  the in-package autodiff engine, trainable by the diffusion objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .diffusion import SequenceState
from .nn import ParameterStore
from .vocab import Vocab


@dataclass
class DenoiserOutput:
    """Per-response-position log-probabilities over the vocabulary.

    ``log_probs`` has shape ``(response_len, vocab_size)``; each row sums to
    one in probability space and the mask column is exactly ``-inf``.
    """

    log_probs: np.ndarray

    def validate(self, mask_id: int, atol: float = 1e-6) -> None:
        lp = self.log_probs
        if lp.ndim != 2:
            raise ValueError(f"log_probs must be 2-D, got shape {lp.shape}")
        if not np.all(np.isneginf(lp[:, mask_id])):
            raise ValueError("mask column must be -inf in every row")
        with np.errstate(over="ignore"):
            row_mass = np.exp(lp).sum(axis=1)
        if not np.allclose(row_mass, 1.0, atol=atol, rtol=0.0):
            raise ValueError(f"rows must normalize to 1, worst mass {row_mass.min()}..{row_mass.max()}")


class Denoiser:
    """Interface: ``score`` a state, exposing ``mask_id``/``max_positions``."""

    mask_id: int
    vocab_size: int
    max_positions: int

    def score(self, state: SequenceState) -> DenoiserOutput:
        raise NotImplementedError


# ---- exact enumeration oracle -------------------------------------------------


@dataclass(frozen=True)
class TokenDistribution:
    """Explicit distribution over fixed response-token sequences."""

    sequences: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("distribution needs at least one sequence")
        if len(self.sequences) != len(self.probs):
            raise ValueError("sequences and probs must have equal length")
        if len(set(self.sequences)) != len(self.sequences):
            raise ValueError("duplicate sequences in support")
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or p.sum() <= 0:
            raise ValueError("probabilities must be nonnegative with positive total")
        object.__setattr__(self, "probs", tuple(float(x) for x in p / p.sum()))

    def lengths(self) -> set[int]:
        return {len(s) for s in self.sequences}

    def entropy(self) -> float:
        p = np.asarray(self.probs)
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum())


class OracleDenoiser(Denoiser):
    """Exact posterior over clean tokens, by enumeration of a known
    distribution over responses.

    For a state whose response matches some support sequences on its
    unmasked positions, row ``i`` of the output is the conditional marginal
    of position ``i`` given those observations.  Unmasked positions come out
    as point masses on their own value.  Outputs are memoized by response
    pattern; the cache is unbounded but the intended use is micro-scale.
    """

    def __init__(self, dist: TokenDistribution, vocab_size: int, mask_id: int,
                 max_positions: int | None = None):
        lengths = dist.lengths()
        for seq in dist.sequences:
            for tok in seq:
                if not 0 <= tok < vocab_size:
                    raise ValueError(f"support token {tok} out of range for vocab size {vocab_size}")
                if tok == mask_id:
                    raise ValueError("support sequences must not contain the mask token")
        self.dist = dist
        self.vocab_size = vocab_size
        self.mask_id = mask_id
        self.max_positions = max(lengths) if max_positions is None else max_positions
        self._by_length = {
            n: (np.array([s for s in dist.sequences if len(s) == n], dtype=np.int64),
                np.array([p for s, p in zip(dist.sequences, dist.probs) if len(s) == n]))
            for n in lengths
        }
        self._cache: dict[bytes, np.ndarray] = {}

    def score(self, state: SequenceState) -> DenoiserOutput:
        resp = state.response
        key = resp.tobytes()
        cached = self._cache.get(key)
        if cached is not None:
            return DenoiserOutput(log_probs=cached)
        n = resp.shape[0]
        if n not in self._by_length:
            raise ValueError(f"no support sequences of length {n}")
        seqs, prior = self._by_length[n]
        observed = resp != self.mask_id
        match = np.all(seqs[:, observed] == resp[observed], axis=1)
        weights = prior * match
        total = weights.sum()
        if total <= 0:
            raise ValueError("observed pattern has zero probability under the distribution")
        weights = weights / total
        marginals = np.zeros((n, self.vocab_size), dtype=np.float64)
        for i in range(n):
            np.add.at(marginals[i], seqs[:, i], weights)
        with np.errstate(divide="ignore"):
            log_probs = np.log(marginals)
        log_probs.flags.writeable = False
        self._cache[key] = log_probs
        return DenoiserOutput(log_probs=log_probs)


# ---- trainable transformer ----------------------------------------------------


@dataclass(frozen=True)
class TransformerConfig:
    """Shape of a bidirectional transformer denoiser."""

    vocab_size: int
    dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 128
    max_positions: int = 64

    def __post_init__(self):
        for name in ("vocab_size", "dim", "n_heads", "n_layers", "ff_dim", "max_positions"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.dim % self.n_heads != 0:
            raise ValueError(f"dim={self.dim} must be divisible by n_heads={self.n_heads}")

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "n_heads": self.n_heads,
                "n_layers": self.n_layers, "ff_dim": self.ff_dim, "max_positions": self.max_positions}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        keys = ("vocab_size", "dim", "n_heads", "n_layers", "ff_dim", "max_positions")
        return cls(**{k: int(d[k]) for k in keys})


_NEG_BAN = -1e30  # additive logit ban; exp underflows to exactly zero


def add_block_params(store: ParameterStore, prefix: str, dim: int, ff_dim: int,
                     dtype, rng: np.random.Generator, init_scale: float) -> None:
    """Register one pre-norm transformer block's parameters under ``prefix``."""

    def w(shape):
        return (rng.standard_normal(shape) * init_scale).astype(dtype)

    add = store.add
    add(prefix + "ln1.g", np.ones(dim, dtype=dtype))
    add(prefix + "ln1.b", np.zeros(dim, dtype=dtype))
    for nm in ("wq", "wk", "wv", "wo"):
        add(prefix + f"attn.{nm}", w((dim, dim)))
        add(prefix + f"attn.{nm[1]}b", np.zeros(dim, dtype=dtype))
    add(prefix + "ln2.g", np.ones(dim, dtype=dtype))
    add(prefix + "ln2.b", np.zeros(dim, dtype=dtype))
    add(prefix + "ff1.w", w((dim, ff_dim)))
    add(prefix + "ff1.b", np.zeros(ff_dim, dtype=dtype))
    add(prefix + "ff2.w", w((ff_dim, dim)))
    add(prefix + "ff2.b", np.zeros(dim, dtype=dtype))


def attention_bias(real: np.ndarray, n_heads: int, dtype) -> T.Tensor:
    """Additive attention scores banning padded keys; ``real`` is (B, L) bool."""
    B, L = real.shape
    bias = np.where(real, 0.0, _NEG_BAN).astype(dtype)
    return T.Tensor.constant(np.broadcast_to(bias[:, None, None, :], (B, n_heads, L, L)).copy(), dtype)


def block_forward(store: ParameterStore, prefix: str, x: T.Tensor, n_heads: int,
                  attn_bias: T.Tensor | None) -> T.Tensor:
    """Apply one pre-norm block: attention then feed-forward, both residual."""
    B, L, d = x.shape
    dk = d // n_heads

    def p(name):
        return store[prefix + name]

    h = T.layer_norm(x, p("ln1.g"), p("ln1.b"))
    q = T.add(T.matmul(h, p("attn.wq")), p("attn.qb"))
    k = T.add(T.matmul(h, p("attn.wk")), p("attn.kb"))
    v = T.add(T.matmul(h, p("attn.wv")), p("attn.vb"))
    q = T.transpose(T.reshape(q, (B, L, n_heads, dk)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(k, (B, L, n_heads, dk)), (0, 2, 1, 3))
    v = T.transpose(T.reshape(v, (B, L, n_heads, dk)), (0, 2, 1, 3))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    if attn_bias is not None:
        scores = T.add(scores, attn_bias)
    ctx = T.matmul(T.softmax(scores), v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    ctx = T.add(T.matmul(ctx, p("attn.wo")), p("attn.ob"))
    x = T.add(x, ctx)
    h = T.layer_norm(x, p("ln2.g"), p("ln2.b"))
    h = T.gelu(T.add(T.matmul(h, p("ff1.w")), p("ff1.b")))
    h = T.add(T.matmul(h, p("ff2.w")), p("ff2.b"))
    return T.add(x, h)


class TransformerDenoiser(Denoiser):
    """Bidirectional transformer over full sequences (prompt and response).

    Pre-norm blocks, learned position embeddings, untied output projection.
    Padding positions are excluded from attention, so the logits at real
    positions are invariant to pad content.  The mask token's output column
    is banned by construction.
    """

    PREFIX = "denoiser."

    def __init__(self, vocab: Vocab, config: TransformerConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32, store: ParameterStore | None = None, init_scale: float = 0.02):
        if config.vocab_size != len(vocab):
            raise ValueError(f"config.vocab_size={config.vocab_size} does not match the "
                             f"{len(vocab)}-token vocabulary")
        self.vocab = vocab
        self.config = config
        self.dtype = np.dtype(dtype)
        self.mask_id = vocab.mask_id
        self.pad_id = vocab.pad_id
        self.vocab_size = len(vocab)
        self.max_positions = config.max_positions
        self.store = store if store is not None else ParameterStore()
        if rng is None:
            rng = np.random.default_rng(0)
        self._init_params(rng, init_scale)
        ban = np.zeros(self.vocab_size, dtype=self.dtype)
        ban[self.mask_id] = _NEG_BAN
        self._mask_ban = ban

    # parameter names are stable: they define the checkpoint layout
    def _init_params(self, rng: np.random.Generator, s: float) -> None:
        cfg = self.config
        d, V = cfg.dim, self.vocab_size
        add = self.store.add
        p = self.PREFIX

        def w(shape):
            return (rng.standard_normal(shape) * s).astype(self.dtype)

        add(p + "tok_embed", w((V, d)))
        add(p + "pos_embed", w((cfg.max_positions, d)))
        for i in range(cfg.n_layers):
            add_block_params(self.store, f"{p}block{i}.", d, cfg.ff_dim, self.dtype, rng, s)
        add(p + "final_ln.g", np.ones(d, dtype=self.dtype))
        add(p + "final_ln.b", np.zeros(d, dtype=self.dtype))
        add(p + "head.w", w((d, V)))
        add(p + "head.b", np.zeros(V, dtype=self.dtype))

    def _p(self, name: str) -> T.Tensor:
        return self.store[self.PREFIX + name]

    def forward_batch(self, tokens: np.ndarray, real: np.ndarray | None = None) -> tuple[T.Tensor, T.Tensor]:
        """Run the full network on a ``(B, L)`` id batch.

        ``real`` marks non-padding positions (True = real); ``None`` means no
        padding.  Returns ``(log_probs, features)`` where ``log_probs`` is a
        ``(B, L, V)`` tensor with the mask column banned and ``features`` is
        the ``(B, L, dim)`` final hidden state.
        """
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError(f"token batch must be 2-D, got shape {tokens.shape}")
        B, L = tokens.shape
        if L > self.config.max_positions:
            raise ValueError(f"sequence length {L} exceeds maximum positions {self.config.max_positions}")
        if np.any(tokens < 0) or np.any(tokens >= self.vocab_size):
            raise ValueError("token id out of range")
        cfg = self.config

        x = T.add(T.embedding(self._p("tok_embed"), tokens),
                  T.embedding(self._p("pos_embed"), np.arange(L)))

        if real is None:
            attn_bias = None
        else:
            real = np.asarray(real, dtype=bool)
            if real.shape != (B, L):
                raise ValueError(f"real-position mask shape {real.shape} must equal {(B, L)}")
            attn_bias = attention_bias(real, cfg.n_heads, self.dtype)

        for i in range(cfg.n_layers):
            x = block_forward(self.store, f"{self.PREFIX}block{i}.", x, cfg.n_heads, attn_bias)

        features = T.layer_norm(x, self._p("final_ln.g"), self._p("final_ln.b"))
        logits = T.add(T.matmul(features, self._p("head.w")), self._p("head.b"))
        logits = T.add(logits, T.Tensor.constant(self._mask_ban, self.dtype))
        return T.log_softmax(logits), features

    def score(self, state: SequenceState) -> DenoiserOutput:
        """Score one state; returns response-position rows only."""
        if state.tokens.shape[0] > self.config.max_positions:
            raise ValueError(f"sequence length {state.tokens.shape[0]} exceeds maximum positions {self.config.max_positions}")
        log_probs, _ = self.forward_batch(state.tokens[None, :])
        lp = log_probs.data[0, state.condition_len:, :].astype(np.float64, copy=True)
        lp[:, self.mask_id] = -np.inf
        return DenoiserOutput(log_probs=lp)

    def config_dict(self) -> dict:
        return self.config.to_dict()

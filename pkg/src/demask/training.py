"""Training loops and objectives.

Three entry points:

* :func:`mlm_pretrain` fits a denoiser as a plain masked language model at a
  fixed masking ratio, no timestep weighting.
* :func:`diffusive_adapt` fits (or finetunes) a denoiser with the diffusion
  objective: per example, draw a timestep uniformly, corrupt the response
  region, and minimize the timestep-weighted cross-entropy on the masked
  positions.  Optionally trains a length classifier jointly.
* :func:`prune_vocab` shrinks a checkpoint's token inventory to the tokens a
  corpus actually uses.

The one-example objective is :func:`rdm_loss`: with ``lam = 1 - (t - 1)/T``,

    loss = lam * sum over masked response positions of smoothed NLL,

where the label-smoothed NLL spreads ``eps`` of the target mass uniformly
over all non-mask tokens.  Prompt positions, padding, and unmasked response
positions contribute nothing, and batch loss is the mean of example losses.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Example
from .denoiser import DenoiserOutput, TransformerConfig, TransformerDenoiser
from .length import LengthHead, LengthHeadConfig
from .nn import Adam, ParameterStore
from .schedule import FAMILIES, NoiseSchedule, build_schedule, loss_weight
from .vocab import Vocab


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and corruption settings for one training run.

    ``label_smoothing=None`` resolves by context: 0.1 from scratch, 0.0 when
    initializing from a pretrained checkpoint.
    """

    steps: int
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    label_smoothing: float | None = None
    T: int = 50
    family: str = "linear"
    seed: int = 0
    holdout_fraction: float = 0.1
    log_interval: int = 50
    length_weight: float = 0.1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.label_smoothing is not None and not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if not isinstance(self.T, int) or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}")
        if self.log_interval < 1:
            raise ValueError(f"log_interval must be positive, got {self.log_interval}")
        if self.length_weight < 0:
            raise ValueError(f"length_weight must be nonnegative, got {self.length_weight}")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "label_smoothing": self.label_smoothing,
                "T": self.T, "family": self.family, "seed": self.seed,
                "holdout_fraction": self.holdout_fraction, "log_interval": self.log_interval,
                "length_weight": self.length_weight}


@dataclass
class Batch:
    """One corrupted training batch; everything response-aligned is padded."""

    tokens: np.ndarray       # (B, L) corrupted input ids
    clean: np.ndarray        # (B, L) clean ids, pad elsewhere
    loss_mask: np.ndarray    # (B, L) True at masked real response positions
    real: np.ndarray         # (B, L) True at non-padding positions
    t: np.ndarray            # (B,) timesteps, 0 where unused
    weights: np.ndarray      # (B,) per-example loss weights


@dataclass
class MetricsRow:
    step: int
    train_loss: float
    holdout_loss: float
    tokens_per_sec: float
    extra: dict = field(default_factory=dict)


def write_metrics(path, history: list[MetricsRow]) -> None:
    """Metrics log: step, mean train loss, held-out loss, tab-separated.

    Throughput stays out of the file on purpose: rerunning a command with
    the same config and seed must reproduce every written artifact byte for
    byte, and wall-clock rates never repeat.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in history:
            fh.write(f"{row.step}\t{row.train_loss:.6f}\t{row.holdout_loss:.6f}\n")


# ---- objectives ----------------------------------------------------------------


def _smoothed_nll_terms(log_probs: np.ndarray, targets: np.ndarray, mask_id: int, eps: float) -> np.ndarray:
    picked = np.take_along_axis(log_probs, targets[:, None], axis=1)[:, 0]
    if eps == 0.0:
        return -picked
    keep = np.arange(log_probs.shape[1]) != mask_id
    smooth = log_probs[:, keep].mean(axis=1)
    return -((1.0 - eps) * picked + eps * smooth)


def rdm_loss(output, x0: np.ndarray, x_t: np.ndarray, t: int, schedule: NoiseSchedule,
             mask_id: int, label_smoothing: float = 0.0) -> float:
    """Timestep-weighted reconstruction loss for one corrupted response.

    ``x0`` and ``x_t`` are the clean and corrupted response tokens aligned
    with the rows of ``output``; only positions where ``x_t`` is the mask
    contribute.  The weight is ``1 - (t - 1)/T``.
    """
    lp = output.log_probs if isinstance(output, DenoiserOutput) else np.asarray(output, dtype=np.float64)
    x0 = np.asarray(x0)
    x_t = np.asarray(x_t)
    if lp.ndim != 2 or x0.shape != (lp.shape[0],) or x_t.shape != (lp.shape[0],):
        raise ValueError(f"shape mismatch: log_probs {lp.shape}, x0 {x0.shape}, x_t {x_t.shape}")
    if np.any(x0 == mask_id):
        raise ValueError("clean response must not contain the mask token")
    agree = (x_t == x0) | (x_t == mask_id)
    if not np.all(agree):
        raise ValueError("corrupted response has positions that are neither clean nor mask")
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError(f"label_smoothing must lie in [0, 1), got {label_smoothing}")
    lam = loss_weight(t, schedule.T)
    masked = x_t == mask_id
    if not np.any(masked):
        return 0.0
    terms = _smoothed_nll_terms(lp[masked], x0[masked], mask_id, label_smoothing)
    return float(lam * terms.sum())


def mlm_loss(output, x0: np.ndarray, x_t: np.ndarray, mask_id: int,
             label_smoothing: float = 0.0) -> float:
    """Unweighted masked-LM loss: summed smoothed NLL over masked positions."""
    lp = output.log_probs if isinstance(output, DenoiserOutput) else np.asarray(output, dtype=np.float64)
    x0 = np.asarray(x0)
    x_t = np.asarray(x_t)
    if np.any(x0 == mask_id):
        raise ValueError("clean sequence must not contain the mask token")
    if not np.all((x_t == x0) | (x_t == mask_id)):
        raise ValueError("corrupted sequence has positions that are neither clean nor mask")
    masked = x_t == mask_id
    if not np.any(masked):
        return 0.0
    return float(_smoothed_nll_terms(lp[masked], x0[masked], mask_id, label_smoothing).sum())


def batch_loss_graph(log_probs: T.Tensor, batch: Batch, mask_id: int, eps: float) -> T.Tensor:
    """Differentiable batch objective: mean over examples of the per-example
    weighted masked NLL.  Exactly matches averaging :func:`rdm_loss` (or
    :func:`mlm_loss` when weights are 1) over the batch."""
    B, L, V = log_probs.shape
    picked = T.take_along_last(log_probs, batch.clean)
    if eps > 0.0:
        keep = (np.arange(V) != mask_id).astype(log_probs.dtype)
        smooth = T.mul(T.sum_(T.mul(log_probs, T.Tensor.constant(keep, log_probs.dtype)), axis=2),
                       1.0 / (V - 1))
        per_pos = T.add(T.mul(picked, 1.0 - eps), T.mul(smooth, eps))
    else:
        per_pos = picked
    w = (batch.loss_mask * batch.weights[:, None]).astype(np.float64)
    w_t = T.Tensor.constant((-w / B).astype(log_probs.dtype), log_probs.dtype)
    return T.sum_(T.mul(per_pos, w_t))


# ---- batch construction ---------------------------------------------------------


def _pad_batch(seqs: list[np.ndarray], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    L = max(s.shape[0] for s in seqs)
    out = np.full((len(seqs), L), pad_id, dtype=np.int64)
    real = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :s.shape[0]] = s
        real[i, :s.shape[0]] = True
    return out, real


def make_diffusion_batch(examples: list[Example], idx: np.ndarray, schedule: NoiseSchedule,
                         vocab: Vocab, rng: np.random.Generator,
                         fixed_t: np.ndarray | None = None) -> Batch:
    """Corrupt a batch of examples at per-example uniform timesteps.

    Only response positions are ever masked.  ``fixed_t`` pins the timesteps
    (used for stable held-out evaluation).
    """
    chosen = [examples[i] for i in idx]
    clean, real = _pad_batch([np.concatenate([e.prompt, e.response]) for e in chosen], vocab.pad_id)
    B, L = clean.shape
    if fixed_t is None:
        t = rng.integers(1, schedule.T + 1, size=B).astype(np.int64)
    else:
        t = np.asarray(fixed_t, dtype=np.int64)
    tokens = clean.copy()
    loss_mask = np.zeros((B, L), dtype=bool)
    for i, e in enumerate(chosen):
        p_len, r_len = e.prompt.shape[0], e.response.shape[0]
        keep = rng.random(r_len) < schedule.keep_prob(int(t[i]))
        resp_slice = slice(p_len, p_len + r_len)
        row = tokens[i, resp_slice]
        row[~keep] = vocab.mask_id
        tokens[i, resp_slice] = row
        loss_mask[i, resp_slice] = ~keep
    weights = np.array([loss_weight(int(ti), schedule.T) for ti in t])
    return Batch(tokens=tokens, clean=clean, loss_mask=loss_mask, real=real, t=t, weights=weights)


def make_mlm_batch(sequences: list[np.ndarray], idx: np.ndarray, mask_ratio: float,
                   vocab: Vocab, rng: np.random.Generator) -> Batch:
    """Select each position for prediction at a fixed ratio, at least one per
    sequence so every example contributes signal.

    Selected positions follow the standard masked-LM corruption split: 80%
    become the mask token, 10% a random non-special token, 10% keep their
    original token.  The keep and random slices teach the model to echo or
    repair already-visible tokens, which iterative decoding relies on when it
    rescores committed positions.
    """
    chosen = [sequences[i] for i in idx]
    clean, real = _pad_batch(chosen, vocab.pad_id)
    B, L = clean.shape
    u = rng.random((B, L))
    loss_mask = (u < mask_ratio) & real
    for i in range(B):
        if not loss_mask[i].any():
            row_u = np.where(real[i], u[i], np.inf)
            loss_mask[i, int(np.argmin(row_u))] = True
    v = rng.random((B, L))
    pool = np.array([i for i in range(len(vocab)) if i not in vocab.special_ids])
    noise = pool[rng.integers(0, pool.shape[0], size=(B, L))]
    tokens = clean.copy()
    tokens[loss_mask & (v < 0.8)] = vocab.mask_id
    swap = loss_mask & (v >= 0.8) & (v < 0.9)
    tokens[swap] = noise[swap]
    return Batch(tokens=tokens, clean=clean, loss_mask=loss_mask, real=real,
                 t=np.zeros(B, dtype=np.int64), weights=np.ones(B))


# ---- shared loop machinery -------------------------------------------------------


def _split_holdout(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_hold = int(round(n * fraction))
    n_hold = min(n_hold, n - 1)  # never hold out everything
    return perm[n_hold:], perm[:n_hold]


def _eval_batches(n: int, chunk: int = 64):
    for start in range(0, n, chunk):
        yield np.arange(start, min(start + chunk, n))


class _Throughput:
    def __init__(self):
        self.t0 = time.perf_counter()
        self.tokens = 0

    def add(self, n: int) -> None:
        self.tokens += int(n)

    def rate(self) -> float:
        now = time.perf_counter()
        dt = max(now - self.t0, 1e-9)
        r = self.tokens / dt
        self.t0 = now
        self.tokens = 0
        return r


def resolve_label_smoothing(config: TrainConfig, from_pretrained: bool) -> float:
    if config.label_smoothing is not None:
        return config.label_smoothing
    return 0.0 if from_pretrained else 0.1


def _load_params(store: ParameterStore, init_params: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into matching store entries.

    Length-head entries with no destination are dropped with a warning; any
    other name or shape mismatch is a hard error.
    """
    usable = {k: v for k, v in init_params.items() if k in store}
    dropped = sorted(set(init_params) - set(usable))
    if dropped:
        only_length = all(k.startswith(LengthHead.PREFIX) for k in dropped)
        if not only_length:
            raise ValueError(f"checkpoint parameters do not fit this model: {dropped[:5]}")
        warnings.warn(f"dropping {len(dropped)} length-head parameters from the initializer")
    for name, arr in usable.items():
        p = store[name]
        if p.data.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.data.shape}")
        p.data = np.asarray(arr, dtype=p.data.dtype).copy()


# ---- masked-LM pretraining -------------------------------------------------------


def mlm_pretrain(sequences: list[np.ndarray], vocab: Vocab, model_config: TransformerConfig,
                 config: TrainConfig, mask_ratio: float = 0.15,
                 init_params: dict[str, np.ndarray] | None = None,
                 dtype=np.float32) -> tuple[TransformerDenoiser, list[MetricsRow]]:
    """Train a denoiser as a masked language model.

    ``sequences`` are plain token arrays (typically prompt plus response
    concatenations).  Held-out loss and masked-token accuracy are computed on
    a fixed corruption of a held-out split each logging interval.
    ``init_params`` resumes from checkpoint arrays instead of a fresh
    initialization, under the same matching rule as :func:`diffusive_adapt`.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    if not sequences:
        raise ValueError("empty pretraining corpus")
    for i, s in enumerate(sequences):
        s = np.asarray(s)
        if s.ndim != 1 or s.shape[0] == 0:
            raise ValueError(f"sequence {i} must be a non-empty 1-D token array")
        if s.shape[0] > model_config.max_positions:
            raise ValueError(f"sequence {i} has length {s.shape[0]}, exceeding capacity {model_config.max_positions}")
        if np.any(s == vocab.mask_id) or np.any(s == vocab.pad_id):
            raise ValueError(f"sequence {i} contains control tokens")
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]

    ss = np.random.SeedSequence(config.seed)
    init_ss, split_ss, step_ss, eval_ss = ss.spawn(4)
    model = TransformerDenoiser(vocab, model_config, rng=np.random.default_rng(init_ss), dtype=dtype)
    if init_params is not None:
        _load_params(model.store, init_params)
    eps = config.label_smoothing if config.label_smoothing is not None else 0.0

    train_idx, hold_idx = _split_holdout(len(sequences), config.holdout_fraction, np.random.default_rng(split_ss))
    hold_seqs = [sequences[i] for i in hold_idx]
    eval_rng = np.random.default_rng(eval_ss)
    hold_batch = (make_mlm_batch(hold_seqs, np.arange(len(hold_seqs)), mask_ratio, vocab, eval_rng)
                  if hold_seqs else None)

    def holdout_metrics() -> tuple[float, float]:
        if hold_batch is None:
            return float("nan"), float("nan")
        total, correct, n_masked = 0.0, 0, 0
        for rows in _eval_batches(hold_batch.tokens.shape[0]):
            sub_tokens = hold_batch.tokens[rows]
            lp, _ = model.forward_batch(sub_tokens, hold_batch.real[rows])
            lp_np = lp.data
            for r, i in enumerate(rows):
                m = hold_batch.loss_mask[i]
                total += mlm_loss(lp_np[r][m], hold_batch.clean[i][m],
                                  np.full(m.sum(), vocab.mask_id), vocab.mask_id)
                pred = lp_np[r][m].argmax(axis=1)
                correct += int((pred == hold_batch.clean[i][m]).sum())
                n_masked += int(m.sum())
        return total / hold_batch.tokens.shape[0], correct / max(n_masked, 1)

    optimizer = Adam(model.store, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    rng = np.random.default_rng(step_ss)
    history: list[MetricsRow] = []
    meter = _Throughput()
    running = 0.0
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train_idx), size=config.batch_size)
        batch = make_mlm_batch(sequences, train_idx[idx], mask_ratio, vocab, rng)
        lp, _ = model.forward_batch(batch.tokens, batch.real)
        loss = batch_loss_graph(lp, batch, vocab.mask_id, eps)
        model.store.zero_grad()
        loss.backward()
        optimizer.step()
        running += float(loss.data)
        meter.add(batch.real.sum())
        if step % config.log_interval == 0 or step == config.steps:
            n = config.log_interval if step % config.log_interval == 0 else step % config.log_interval
            hold_loss, hold_acc = holdout_metrics()
            history.append(MetricsRow(step=step, train_loss=running / n, holdout_loss=hold_loss,
                                      tokens_per_sec=meter.rate(), extra={"holdout_acc": hold_acc}))
            running = 0.0
    return model, history


# ---- diffusive adaptation --------------------------------------------------------


def _length_batch(examples: list[Example], idx: np.ndarray, vocab: Vocab) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prompts = [np.concatenate([examples[i].prompt, [vocab.mask_id]]) for i in idx]
    tokens, real = _pad_batch(prompts, vocab.pad_id)
    gold = np.array([examples[i].response.shape[0] - 1 for i in idx], dtype=np.int64)
    return tokens, real, gold


def diffusive_adapt(examples: list[Example], vocab: Vocab, model_config: TransformerConfig,
                    config: TrainConfig, init_params: dict[str, np.ndarray] | None = None,
                    length_config: LengthHeadConfig | None = None,
                    dtype=np.float32) -> tuple[TransformerDenoiser, LengthHead | None, list[MetricsRow]]:
    """Fit a denoiser with the diffusion objective on prompt/response pairs.

    ``init_params`` warm-starts from checkpoint arrays (names must match the
    model; length-head entries are dropped with a warning if no head is
    configured here).  When ``length_config`` is given, a length classifier
    trains jointly: its cross-entropy joins the objective scaled by
    ``config.length_weight``.
    """
    if not examples:
        raise ValueError("empty adaptation corpus")
    for i, ex in enumerate(examples):
        ex.validate(vocab)
        if ex.total_len > model_config.max_positions:
            raise ValueError(f"example {i} has total length {ex.total_len}, "
                             f"exceeding capacity {model_config.max_positions}")
        if length_config is not None and ex.response.shape[0] > length_config.n_classes:
            raise ValueError(f"example {i} response length {ex.response.shape[0]} "
                             f"exceeds length-head classes {length_config.n_classes}")

    ss = np.random.SeedSequence(config.seed)
    init_ss, split_ss, step_ss, eval_ss = ss.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    store = ParameterStore()
    model = TransformerDenoiser(vocab, model_config, rng=init_rng, dtype=dtype, store=store)
    head = None
    if length_config is not None:
        if length_config.dim != model_config.dim:
            raise ValueError(f"length head dim {length_config.dim} must match model dim {model_config.dim}")
        head = LengthHead(length_config, rng=init_rng, dtype=dtype, store=store)
    if init_params is not None:
        _load_params(store, init_params)

    schedule = build_schedule(config.T, config.family)
    eps = resolve_label_smoothing(config, from_pretrained=init_params is not None)

    train_idx, hold_idx = _split_holdout(len(examples), config.holdout_fraction, np.random.default_rng(split_ss))
    eval_rng = np.random.default_rng(eval_ss)
    hold_batch = None
    hold_len = None
    if hold_idx.size:
        fixed_t = eval_rng.integers(1, schedule.T + 1, size=hold_idx.size)
        hold_batch = make_diffusion_batch(examples, hold_idx, schedule, vocab, eval_rng, fixed_t=fixed_t)
        if head is not None:
            hold_len = _length_batch(examples, hold_idx, vocab)

    def holdout_metrics() -> tuple[float, float]:
        if hold_batch is None:
            return float("nan"), float("nan")
        total = 0.0
        B = hold_batch.tokens.shape[0]
        for rows in _eval_batches(B):
            lp, _ = model.forward_batch(hold_batch.tokens[rows], hold_batch.real[rows])
            lp_np = lp.data
            for r, i in enumerate(rows):
                # per-example weighted loss on its masked positions, no smoothing:
                # comparable across runs regardless of the training epsilon
                mm = hold_batch.loss_mask[i]
                terms = _smoothed_nll_terms(lp_np[r][mm], hold_batch.clean[i][mm], vocab.mask_id, 0.0)
                total += hold_batch.weights[i] * terms.sum()
        acc = float("nan")
        if hold_len is not None:
            tokens, real, gold = hold_len
            correct = 0
            for rows in _eval_batches(tokens.shape[0]):
                _, feats = model.forward_batch(tokens[rows], real[rows])
                logits = head.forward(feats, real[rows])
                correct += int((logits.data.argmax(axis=1) == gold[rows]).sum())
            acc = correct / tokens.shape[0]
        return total / B, acc

    optimizer = Adam(store, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    rng = np.random.default_rng(step_ss)
    history: list[MetricsRow] = []
    meter = _Throughput()
    running = 0.0
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train_idx), size=config.batch_size)
        batch = make_diffusion_batch(examples, train_idx[idx], schedule, vocab, rng)
        lp, _ = model.forward_batch(batch.tokens, batch.real)
        loss = batch_loss_graph(lp, batch, vocab.mask_id, eps)
        if head is not None:
            ltokens, lreal, gold = _length_batch(examples, train_idx[idx], vocab)
            _, feats = model.forward_batch(ltokens, lreal)
            llp = T.log_softmax(head.forward(feats, lreal))
            lce = T.mul(T.sum_(T.take_along_last(llp, gold)), -1.0 / gold.shape[0])
            loss = T.add(loss, T.mul(lce, config.length_weight))
        store.zero_grad()
        loss.backward()
        optimizer.step()
        running += float(loss.data)
        meter.add(batch.real.sum())
        if step % config.log_interval == 0 or step == config.steps:
            n = config.log_interval if step % config.log_interval == 0 else step % config.log_interval
            hold_loss, len_acc = holdout_metrics()
            history.append(MetricsRow(step=step, train_loss=running / n, holdout_loss=hold_loss,
                                      tokens_per_sec=meter.rate(), extra={"length_acc": len_acc}))
            running = 0.0
    return model, head, history


# ---- vocabulary pruning ----------------------------------------------------------


def prune_vocab(config: dict, arrays: dict[str, np.ndarray],
                examples: list[Example]) -> tuple[dict, dict[str, np.ndarray]]:
    """Drop embedding and output rows for tokens a corpus never uses.

    Control tokens are always retained.  The returned config carries the
    new vocabulary and a remap table (new id -> old id); logits over the
    retained tokens renormalize to exactly the restriction of the original
    model's distribution.
    """
    if not examples:
        raise ValueError("empty corpus")
    vocab = vocab_from_config(config)
    observed = set()
    for ex in examples:
        ex.validate(vocab)
        observed.update(int(i) for i in ex.prompt)
        observed.update(int(i) for i in ex.response)
    retained = sorted(observed | set(vocab.special_ids))
    new_tokens = tuple(vocab.tokens[i] for i in retained)
    old_to_new = {old: new for new, old in enumerate(retained)}
    new_vocab = Vocab(tokens=new_tokens, mask_id=old_to_new[vocab.mask_id],
                      pad_id=old_to_new[vocab.pad_id], sep_id=old_to_new[vocab.sep_id])

    new_arrays = dict(arrays)
    pre = TransformerDenoiser.PREFIX
    for name in (pre + "tok_embed",):
        new_arrays[name] = arrays[name][retained].copy()
    new_arrays[pre + "head.w"] = arrays[pre + "head.w"][:, retained].copy()
    new_arrays[pre + "head.b"] = arrays[pre + "head.b"][retained].copy()

    new_config = dict(config)
    new_config["model"] = dict(config["model"], vocab_size=len(new_tokens))
    new_config["vocab"] = vocab_to_config(new_vocab)
    new_config["vocab_remap"] = {"retained_old_ids": retained, "pruned_from": len(vocab)}
    return new_config, new_arrays


# ---- checkpoint glue --------------------------------------------------------------


def vocab_to_config(vocab: Vocab) -> dict:
    return {"tokens": list(vocab.tokens), "mask_id": vocab.mask_id,
            "pad_id": vocab.pad_id, "sep_id": vocab.sep_id}


def vocab_from_config(config: dict) -> Vocab:
    v = config["vocab"]
    return Vocab(tokens=tuple(v["tokens"]), mask_id=int(v["mask_id"]),
                 pad_id=int(v["pad_id"]), sep_id=int(v["sep_id"]))


def checkpoint_config(model_config: TransformerConfig, vocab: Vocab, tokenizer_mode: str,
                      T: int, family: str, length_config: LengthHeadConfig | None = None,
                      length_trained: bool = False, train_meta: dict | None = None,
                      seed: int | None = None) -> dict:
    return {
        "kind": "denoiser",
        "model": model_config.to_dict(),
        "vocab": vocab_to_config(vocab),
        "tokenizer": tokenizer_mode,
        "schedule": {"T": T, "family": family},
        "length_head": None if length_config is None else length_config.to_dict(),
        "length_head_trained": bool(length_trained),
        "train": train_meta,
        "seed": seed,
        "vocab_remap": None,
    }


def model_from_checkpoint(config: dict, arrays: dict[str, np.ndarray],
                          dtype=np.float32) -> tuple[TransformerDenoiser, LengthHead | None, Vocab, NoiseSchedule, str]:
    """Rebuild a denoiser (and optional length head) from checkpoint parts."""
    if config.get("kind") != "denoiser":
        raise ValueError(f"checkpoint kind {config.get('kind')!r} is not a denoiser")
    vocab = vocab_from_config(config)
    model_config = TransformerConfig.from_dict(config["model"])
    store = ParameterStore()
    model = TransformerDenoiser(vocab, model_config, rng=np.random.default_rng(0), dtype=dtype, store=store)
    head = None
    if config.get("length_head") is not None:
        head = LengthHead(LengthHeadConfig.from_dict(config["length_head"]),
                          rng=np.random.default_rng(0), dtype=dtype, store=store)
    store.load_state_dict(arrays)
    sched = config["schedule"]
    schedule = build_schedule(int(sched["T"]), str(sched["family"]))
    return model, head, vocab, schedule, str(config["tokenizer"])

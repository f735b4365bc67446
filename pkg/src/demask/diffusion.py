"""Absorbing-state diffusion over token sequences.

Forward corruption independently replaces response tokens with the mask
token; a clean token survives to step ``t`` with probability ``alpha_t``.
Because masking is absorbing, a corrupted sequence at step ``t`` is always
a partially masked copy of the clean one: every position either equals the
original token or equals the mask.

The reverse direction comes in two flavors:

* ``ancestral``: sample a clean-token guess per masked position from the
  denoiser, then reveal it with the exact posterior probability
  ``(alpha_{t-1} - alpha_t) / (1 - alpha_t)``.
* ``topk``: deterministically commit the highest-confidence positions so
  that exactly ``unmask_count(N, t-1, T)`` response positions are unmasked
  after the step.  Already-committed positions are rescored each step and
  may be remasked if their confidence drops out of the top k.

The condition region (prompt) is never corrupted and never rewritten.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule, unmask_count

MODES = ("topk", "ancestral")


@dataclass
class SequenceState:
    """One sequence at one diffusion timestep.

    ``tokens`` holds the full sequence, condition region first.  Positions
    at index ``< condition_len`` are the prompt and are never masked.
    """

    tokens: np.ndarray
    condition_len: int
    t: int

    def __post_init__(self):
        tok = np.asarray(self.tokens)
        if tok.ndim != 1 or not np.issubdtype(tok.dtype, np.integer):
            raise ValueError(f"tokens must be a 1-D integer array, got ndim={tok.ndim} dtype={tok.dtype}")
        if not 0 <= self.condition_len < tok.shape[0]:
            raise ValueError(f"condition_len={self.condition_len} leaves no response in a length-{tok.shape[0]} sequence")
        if self.t < 0:
            raise ValueError(f"timestep must be nonnegative, got {self.t}")
        self.tokens = tok.astype(np.int64, copy=True)
        self.tokens.flags.writeable = False

    @property
    def response(self) -> np.ndarray:
        return self.tokens[self.condition_len:]

    @property
    def response_len(self) -> int:
        return int(self.tokens.shape[0] - self.condition_len)

    def masked_positions(self, mask_id: int) -> np.ndarray:
        """Absolute indices of masked positions (always in the response)."""
        return np.flatnonzero(self.tokens == mask_id)

    def committed_positions(self, mask_id: int) -> np.ndarray:
        """Absolute indices of unmasked response positions."""
        resp = self.response
        return self.condition_len + np.flatnonzero(resp != mask_id)


@dataclass(frozen=True)
class TraceStep:
    """Snapshot after reaching timestep ``t`` during generation."""

    step_index: int
    t: int
    tokens: np.ndarray
    newly_committed: tuple[int, ...]


@dataclass
class GenerationTrace:
    """Ordered decode snapshots plus the fully committed final state.

    ``final_token_scores`` holds, per response position, the log-probability
    of the finally chosen token under the denoiser output of the last step;
    length-beam search ranks candidates by its mean.
    """

    steps: list[TraceStep] = field(default_factory=list)
    final: SequenceState | None = None
    final_token_scores: np.ndarray | None = None


def _check_no_mask(tokens: np.ndarray, mask_id: int, what: str) -> None:
    if np.any(tokens == mask_id):
        raise ValueError(f"{what} must not contain the mask token")


def corrupt(x0: np.ndarray, t: int, schedule: NoiseSchedule, mask_id: int,
            rng: np.random.Generator, condition_len: int = 0) -> SequenceState:
    """Sample the forward corruption of a clean sequence directly at step ``t``.

    Each response token independently survives with probability ``alpha_t``;
    the rest become the mask token.  The condition region is untouched.
    """
    x0 = np.asarray(x0)
    if not 0 <= condition_len < x0.shape[0]:
        raise ValueError(f"condition_len={condition_len} leaves no response in a length-{x0.shape[0]} sequence")
    _check_no_mask(x0, mask_id, "clean sequence")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    alpha_t = schedule.keep_prob(t)
    out = x0.astype(np.int64, copy=True)
    resp = out[condition_len:]
    keep = rng.random(resp.shape[0]) < alpha_t
    resp[~keep] = mask_id
    return SequenceState(tokens=out, condition_len=condition_len, t=t)


def corrupt_step(state: SequenceState, t: int, schedule: NoiseSchedule, mask_id: int,
                 rng: np.random.Generator) -> SequenceState:
    """Advance corruption by a single step, from ``t - 1`` to ``t``.

    Masked positions stay masked (the mask state is absorbing); clean
    response tokens survive with probability ``alpha_t / alpha_{t-1}``.
    """
    if state.t != t - 1:
        raise ValueError(f"corrupt_step to t={t} requires a state at t={t - 1}, got t={state.t}")
    beta_t = schedule.step_keep_prob(t)
    out = state.tokens.copy()
    resp = out[state.condition_len:]
    clean = resp != mask_id
    survive = rng.random(resp.shape[0]) < beta_t
    resp[clean & ~survive] = mask_id
    return SequenceState(tokens=out, condition_len=state.condition_len, t=t)


def posterior(x_t_token: int, x0_token: int, t: int, schedule: NoiseSchedule,
              vocab_size: int, mask_id: int) -> np.ndarray:
    """Exact backward distribution over the step-``t-1`` value of one position,
    given its corrupted value at step ``t`` and its clean value.

    Returns a length-``vocab_size`` probability vector.  An unmasked position
    is a point mass on itself; a masked one reveals the clean token with
    probability ``(alpha_{t-1} - alpha_t) / (1 - alpha_t)`` and otherwise
    stays masked.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"posterior defined for t in [1, {schedule.T}], got {t}")
    if not 0 <= x0_token < vocab_size or not 0 <= x_t_token < vocab_size:
        raise ValueError("token id out of range")
    if x0_token == mask_id:
        raise ValueError("clean token must not be the mask token")
    if x_t_token != x0_token and x_t_token != mask_id:
        raise ValueError(f"corrupted token {x_t_token} is neither the clean token {x0_token} nor the mask")
    probs = np.zeros(vocab_size, dtype=np.float64)
    if x_t_token != mask_id:
        probs[x_t_token] = 1.0
    else:
        r = schedule.reveal_prob(t)
        probs[x0_token] = r
        probs[mask_id] = 1.0 - r
    return probs


def _sample_rows(log_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one category per row of a log-probability matrix."""
    p = np.exp(log_probs)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    return (cdf < u[:, None]).sum(axis=1)


def _ancestral_from_output(state: SequenceState, log_probs: np.ndarray, schedule: NoiseSchedule,
                           mask_id: int, rng: np.random.Generator) -> SequenceState:
    t = state.t
    out = state.tokens.copy()
    resp = out[state.condition_len:]
    masked = np.flatnonzero(resp == mask_id)
    if masked.size:
        guesses = _sample_rows(log_probs[masked], rng)
        reveal = rng.random(masked.size) < schedule.reveal_prob(t)
        resp[masked[reveal]] = guesses[reveal]
    return SequenceState(tokens=out, condition_len=state.condition_len, t=t - 1)


def _topk_from_output(state: SequenceState, log_probs: np.ndarray,
                      schedule: NoiseSchedule, mask_id: int) -> SequenceState:
    t = state.t
    n = state.response_len
    best = np.argmax(log_probs, axis=1)
    scores = np.take_along_axis(log_probs, best[:, None], axis=1)[:, 0]
    k = unmask_count(n, t - 1, schedule.T)
    # Stable sort on negated scores: ties break toward the lower position index.
    order = np.argsort(-scores, kind="stable")
    keep = order[:k]
    resp = np.full(n, mask_id, dtype=np.int64)
    resp[keep] = best[keep]
    out = state.tokens.copy()
    out[state.condition_len:] = resp
    return SequenceState(tokens=out, condition_len=state.condition_len, t=t - 1)


def _check_step_inputs(state: SequenceState, denoiser, schedule: NoiseSchedule) -> None:
    if not 1 <= state.t <= schedule.T:
        raise ValueError(f"reverse step requires t in [1, {schedule.T}], got t={state.t}")
    if state.tokens.shape[0] > denoiser.max_positions:
        raise ValueError(f"sequence length {state.tokens.shape[0]} exceeds denoiser capacity {denoiser.max_positions}")


def reverse_step_ancestral(state: SequenceState, denoiser, schedule: NoiseSchedule,
                           rng: np.random.Generator) -> SequenceState:
    """Sample one backward transition ``t -> t - 1``.

    Every masked response position draws a clean-token guess from the
    denoiser's per-position distribution and is revealed with the exact
    posterior probability; unmasked positions are kept as-is.
    """
    _check_step_inputs(state, denoiser, schedule)
    out = denoiser.score(state)
    return _ancestral_from_output(state, out.log_probs, schedule, denoiser.mask_id, rng)


def mask_predict_step(state: SequenceState, denoiser, schedule: NoiseSchedule) -> SequenceState:
    """Deterministic top-k step ``t -> t - 1``.

    All response positions are rescored; the ``unmask_count(N, t-1, T)``
    positions with the highest best-token log-probability are committed to
    their best tokens and every other response position is set to mask.
    Previously committed tokens therefore may be revised or remasked.
    """
    _check_step_inputs(state, denoiser, schedule)
    out = denoiser.score(state)
    return _topk_from_output(state, out.log_probs, schedule, denoiser.mask_id)


def generate(prompt: np.ndarray, target_len: int, denoiser, schedule: NoiseSchedule,
             mode: str = "topk", rng: np.random.Generator | None = None) -> tuple[np.ndarray, GenerationTrace]:
    """Decode a response of exactly ``target_len`` tokens for a prompt.

    Starts from the all-mask response at ``t = T`` and applies ``T`` reverse
    steps.  Returns the response tokens and a full trace of snapshots; the
    trace records, per step, which positions were newly committed.

    Parameters
    ----------
    mode : str
        ``"topk"`` for deterministic confidence decoding, ``"ancestral"``
        for posterior sampling (requires ``rng``).
    """
    if mode not in MODES:
        raise ValueError(f"unknown decode mode {mode!r}, expected one of {MODES}")
    if mode == "ancestral" and rng is None:
        raise ValueError("ancestral decoding requires an rng")
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim != 1:
        raise ValueError(f"prompt must be a 1-D token array, got ndim={prompt.ndim}")
    _check_no_mask(prompt, denoiser.mask_id, "prompt")
    if target_len < 1:
        raise ValueError(f"target length must be positive, got {target_len}")
    total = prompt.shape[0] + target_len
    if total > denoiser.max_positions:
        raise ValueError(f"prompt plus target length is {total}, exceeding denoiser capacity {denoiser.max_positions}")

    mask_id = denoiser.mask_id
    tokens = np.concatenate([prompt, np.full(target_len, mask_id, dtype=np.int64)])
    state = SequenceState(tokens=tokens, condition_len=prompt.shape[0], t=schedule.T)

    trace = GenerationTrace()
    trace.steps.append(TraceStep(step_index=0, t=schedule.T, tokens=state.tokens, newly_committed=()))
    committed = frozenset()
    last_log_probs = None
    for t in range(schedule.T, 0, -1):
        out = denoiser.score(state)
        last_log_probs = out.log_probs
        if mode == "topk":
            state = _topk_from_output(state, out.log_probs, schedule, mask_id)
        else:
            state = _ancestral_from_output(state, out.log_probs, schedule, mask_id, rng)
        now = frozenset(int(i) for i in state.committed_positions(mask_id))
        newly = tuple(sorted(now - committed))
        committed = now
        trace.steps.append(TraceStep(step_index=len(trace.steps), t=state.t,
                                     tokens=state.tokens, newly_committed=newly))

    response = state.response.copy()
    if np.any(response == mask_id):
        raise AssertionError("decode finished with masked response positions")
    trace.final = state
    trace.final_token_scores = np.take_along_axis(last_log_probs, response[:, None], axis=1)[:, 0]
    return response, trace


def elbo_estimate(x0: np.ndarray, denoiser, schedule: NoiseSchedule, n_samples: int,
                  rng: np.random.Generator, condition_len: int = 0) -> float:
    """Monte-Carlo estimate of the negative variational log-likelihood bound,
    in nats, for one clean sequence.

    Draws ``t`` uniformly from ``1..T``, corrupts, and accumulates the
    denoiser's reconstruction loss on masked positions scaled by the exact
    per-step posterior weight; the average is an unbiased estimate of the
    full bound.  Smaller is better; a perfect denoiser on deterministic
    data yields zero.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    x0 = np.asarray(x0, dtype=np.int64)
    _check_no_mask(x0, denoiser.mask_id, "clean sequence")
    T = schedule.T
    mask_id = denoiser.mask_id
    total = 0.0
    for _ in range(n_samples):
        t = int(rng.integers(1, T + 1))
        state = corrupt(x0, t, schedule, mask_id, rng, condition_len=condition_len)
        resp = state.response
        masked = np.flatnonzero(resp == mask_id)
        if masked.size == 0:
            continue
        log_probs = denoiser.score(state).log_probs
        truth = x0[condition_len:][masked]
        nll = -np.take_along_axis(log_probs[masked], truth[:, None], axis=1)[:, 0].sum()
        total += T * schedule.reveal_prob(t) * nll
    return float(total / n_samples)

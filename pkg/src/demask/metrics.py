"""Evaluation metrics and report emission.

BLEU here is plain corpus BLEU: modified n-gram precisions up to 4-grams
with no smoothing, geometric mean, and the standard brevity penalty.  Any
order with zero matches zeroes the score.  This is intentionally simpler
than tokenization-aware scorers; reports carry a header note saying so.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

BLEU_NOTE = "plain corpus BLEU, no smoothing; not comparable to tokenization-aware scorers"


def _as_seq_list(xs) -> list[tuple]:
    return [tuple(int(t) for t in np.asarray(x).tolist()) for x in xs]


def exact_match(hypotheses, references) -> float:
    """Fraction of pairs whose token sequences are identical."""
    hyps, refs = _as_seq_list(hypotheses), _as_seq_list(references)
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise ValueError("cannot score an empty corpus")
    return sum(h == r for h, r in zip(hyps, refs)) / len(refs)


def token_accuracy(hypotheses, references) -> float:
    """Positionwise match rate; length mismatches count the excess as wrong."""
    hyps, refs = _as_seq_list(hypotheses), _as_seq_list(references)
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise ValueError("cannot score an empty corpus")
    correct = 0
    total = 0
    for h, r in zip(hyps, refs):
        correct += sum(a == b for a, b in zip(h, r))
        total += max(len(h), len(r))
    return correct / max(total, 1)


def _ngrams(seq: tuple, n: int) -> Counter:
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] against a single reference per hypothesis.

    Clipped n-gram precisions are pooled over the corpus; the geometric mean
    over orders 1..max_n is scaled by the brevity penalty
    ``exp(1 - ref_len / hyp_len)`` when hypotheses run short.
    """
    hyps, refs = _as_seq_list(hypotheses), _as_seq_list(references)
    if len(hyps) != len(refs):
        raise ValueError(f"got {len(hyps)} hypotheses for {len(refs)} references")
    if not refs:
        raise ValueError("cannot score an empty corpus")
    if max_n < 1:
        raise ValueError(f"max_n must be positive, got {max_n}")
    matched = np.zeros(max_n, dtype=np.int64)
    possible = np.zeros(max_n, dtype=np.int64)
    hyp_len = 0
    ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            possible[n - 1] += sum(hc.values())
            matched[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    if np.any(possible == 0) or np.any(matched == 0):
        return 0.0
    log_precision = np.log(matched / possible).mean()
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return float(100.0 * bp * math.exp(log_precision))


def tv_distance(weights_a: dict, weights_b: dict) -> float:
    """Total variation between two distributions given as outcome weights.

    Both arguments are normalized by their own totals, so raw sample counts
    and exact probabilities mix freely.  Outcomes present on only one side
    contribute their full normalized mass.  Symmetric; range [0, 1].
    """
    out = 0.0
    totals = []
    for side in (weights_a, weights_b):
        total = 0.0
        for key, w in side.items():
            if w < 0:
                raise ValueError(f"negative weight {w} for outcome {key!r}")
            total += w
        if total <= 0:
            raise ValueError("weights must have a positive total")
        totals.append(total)
    for k in set(weights_a) | set(weights_b):
        out += abs(weights_a.get(k, 0) / totals[0] - weights_b.get(k, 0.0) / totals[1])
    return 0.5 * out


@dataclass
class EvalReport:
    """Named metrics for one evaluation run, with the resolved config echoed."""

    metrics: dict[str, float]
    n_examples: int
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_lines(self) -> str:
        """Single-line key=value records, header notes first."""
        lines = [f"# {note}" for note in self.notes]
        for key in sorted(self.config):
            lines.append(f"# config {key}={self.config[key]}")
        lines.append(f"n_examples={self.n_examples}")
        for name in sorted(self.metrics):
            lines.append(f"{name}={self.metrics[name]:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        """Machine-readable block for the whole run."""
        payload = {"n_examples": self.n_examples, "metrics": self.metrics,
                   "config": self.config, "notes": self.notes}
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"

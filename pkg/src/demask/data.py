"""Text handling: tokenizers, prompt/response examples, corpus files, and
synthetic tasks with known solutions.

Corpus file format: UTF-8 text, one example per line as
``prompt<TAB>response``; literal backslashes, tabs, and newlines inside a
field are escaped as ``\\\\``, ``\\t``, ``\\n``.  Lines beginning with ``#``
are comments and blank lines are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import Vocab

TOKENIZER_MODES = ("char", "whitespace")

# Fixed payload alphabet for synthetic tasks; a task uses its first n symbols.
PAYLOAD_SYMBOLS = "0123456789abcdefghijklmnopqrstuvwxyz"

TASKS = ("copy", "reverse", "cipher-translate", "sorted-digits")


def tokenize(text: str, vocab: Vocab, mode: str) -> np.ndarray:
    """Map text to token ids. Unknown symbols are a hard error.

    ``char`` treats every Unicode scalar as one token; ``whitespace`` splits
    on runs of whitespace.
    """
    if mode not in TOKENIZER_MODES:
        raise ValueError(f"unknown tokenizer mode {mode!r}, expected one of {TOKENIZER_MODES}")
    pieces = list(text) if mode == "char" else text.split()
    ids = np.empty(len(pieces), dtype=np.int64)
    for i, piece in enumerate(pieces):
        if piece not in vocab:
            raise ValueError(f"symbol {piece!r} (U+{ord(piece[0]):04X}) not in vocabulary"
                             if mode == "char" else f"word {piece!r} not in vocabulary")
        ids[i] = vocab.id_of(piece)
    return ids


def detokenize(ids, vocab: Vocab, mode: str) -> str:
    """Map token ids back to text; inverse of :func:`tokenize` for plain text.

    Control tokens render as their bracketed surface forms.
    """
    if mode not in TOKENIZER_MODES:
        raise ValueError(f"unknown tokenizer mode {mode!r}, expected one of {TOKENIZER_MODES}")
    parts = [vocab.token_of(int(i)) for i in np.asarray(ids)]
    return ("" if mode == "char" else " ").join(parts)


@dataclass
class Example:
    """One supervised pair: prompt (ending in the separator) and response."""

    prompt: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        self.prompt = np.asarray(self.prompt, dtype=np.int64)
        self.response = np.asarray(self.response, dtype=np.int64)
        if self.prompt.ndim != 1 or self.response.ndim != 1:
            raise ValueError("prompt and response must be 1-D token arrays")
        if self.response.shape[0] == 0:
            raise ValueError("response must be non-empty")

    def validate(self, vocab: Vocab) -> None:
        if self.prompt.shape[0] == 0 or self.prompt[-1] != vocab.sep_id:
            raise ValueError("prompt must end with the separator token")
        for name, arr in (("prompt", self.prompt), ("response", self.response)):
            if np.any(arr == vocab.mask_id):
                raise ValueError(f"{name} must not contain the mask token")
            if np.any(arr == vocab.pad_id):
                raise ValueError(f"{name} must not contain the padding token")
            if np.any(arr < 0) or np.any(arr >= len(vocab)):
                raise ValueError(f"{name} contains token ids out of range")
        if np.any(self.response == vocab.sep_id):
            raise ValueError("response must not contain the separator token")

    @property
    def total_len(self) -> int:
        return int(self.prompt.shape[0] + self.response.shape[0])


def format_example(instruction: str, input_text: str, output_text: str,
                   vocab: Vocab, mode: str, max_positions: int | None = None) -> Example:
    """Render an instruction-plus-input pair into token arrays.

    The prompt is the instruction and input joined by a single space (either
    may be empty), followed by the separator token; the response is the
    tokenized output.  When ``max_positions`` is given, the concatenated
    length must fit it.
    """
    if instruction and input_text:
        prompt_text = instruction + " " + input_text
    else:
        prompt_text = instruction or input_text
    prompt = np.concatenate([tokenize(prompt_text, vocab, mode), [vocab.sep_id]]).astype(np.int64)
    response = tokenize(output_text, vocab, mode)
    ex = Example(prompt=prompt, response=response)
    ex.validate(vocab)
    if max_positions is not None and ex.total_len > max_positions:
        raise ValueError(f"example needs {ex.total_len} positions "
                         f"({prompt.shape[0]} prompt + {response.shape[0]} response) "
                         f"but the limit is {max_positions}")
    return ex


# ---- corpus files -------------------------------------------------------------


def _escape(field: str) -> str:
    return field.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(field: str, where: str) -> str:
    out = []
    i = 0
    while i < len(field):
        ch = field[i]
        if ch == "\\":
            if i + 1 >= len(field):
                raise ValueError(f"{where}: dangling escape at end of field")
            nxt = field[i + 1]
            if nxt == "\\":
                out.append("\\")
            elif nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            else:
                raise ValueError(f"{where}: unknown escape '\\{nxt}'")
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def write_corpus(path, pairs) -> None:
    """Write prompt/response text pairs in the corpus file format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# prompt<TAB>response, one example per line\n")
        for prompt_text, response_text in pairs:
            fh.write(f"{_escape(prompt_text)}\t{_escape(response_text)}\n")


def read_corpus(path) -> list[tuple[str, str]]:
    """Read prompt/response text pairs; malformed lines report their number."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected exactly one tab separator, found {len(cols) - 1}")
            where = f"{path}:{lineno}"
            pairs.append((_unescape(cols[0], where), _unescape(cols[1], where)))
    return pairs


def build_vocab_from_pairs(pairs, mode: str) -> Vocab:
    """Closed vocabulary over every symbol appearing in a pair list."""
    symbols = set()
    for prompt_text, response_text in pairs:
        for text in (prompt_text, response_text):
            symbols.update(list(text) if mode == "char" else text.split())
    if not symbols:
        raise ValueError("corpus contains no symbols")
    return Vocab.from_symbols(symbols)


def pairs_to_examples(pairs, vocab: Vocab, mode: str) -> list[Example]:
    return [format_example("", p, r, vocab, mode) for p, r in pairs]


# ---- synthetic tasks ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Recipe for a deterministic synthetic corpus.

    Payloads are drawn uniformly (lengths uniform over the range, symbols
    uniform over the first ``n_symbols`` of the payload alphabet) and are
    unique across both splits, so train and test never share a prompt.
    """

    task: str
    n_symbols: int
    min_len: int
    max_len: int
    n_train: int
    n_test: int
    seed: int

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if not 2 <= self.n_symbols <= len(PAYLOAD_SYMBOLS):
            raise ValueError(f"n_symbols must be in [2, {len(PAYLOAD_SYMBOLS)}], got {self.n_symbols}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"need 1 <= min_len <= max_len, got [{self.min_len}, {self.max_len}]")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be positive and n_test nonnegative")

    def n_payloads_available(self) -> int:
        return sum(self.n_symbols**n for n in range(self.min_len, self.max_len + 1))


def generate_synthetic(spec: SyntheticTaskSpec) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Build (train, test) text-pair splits for a synthetic task.

    Fully determined by ``spec`` including its seed.  Raises if the requested
    split sizes exceed the number of distinct payloads in the length range.
    """
    wanted = spec.n_train + spec.n_test
    if wanted > spec.n_payloads_available():
        raise ValueError(f"requested {wanted} examples but only {spec.n_payloads_available()} "
                         f"distinct payloads exist in the length range")
    rng = np.random.default_rng(spec.seed)
    alphabet = PAYLOAD_SYMBOLS[:spec.n_symbols]
    cipher = {alphabet[i]: alphabet[j] for i, j in enumerate(rng.permutation(spec.n_symbols))}

    payloads: list[str] = []
    seen = set()
    while len(payloads) < wanted:
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        payload = "".join(alphabet[i] for i in rng.integers(0, spec.n_symbols, size=n))
        if payload in seen:
            continue
        seen.add(payload)
        payloads.append(payload)

    def solve(payload: str) -> str:
        if spec.task == "copy":
            return payload
        if spec.task == "reverse":
            return payload[::-1]
        if spec.task == "cipher-translate":
            return "".join(cipher[ch] for ch in payload)
        return "".join(sorted(payload))

    pairs = [(p, solve(p)) for p in payloads]
    return pairs[:spec.n_train], pairs[spec.n_train:]


# ---- trace rendering ----------------------------------------------------------


def render_trace(trace, vocab: Vocab, mode: str) -> str:
    """Serialize a generation trace: one line per step, tab-separated fields
    ``step_index``, ``t``, the rendered sequence with masks shown as ``_``,
    and the comma-separated newly committed positions."""
    sep = "" if mode == "char" else " "
    lines = []
    for step in trace.steps:
        rendered = sep.join("_" if int(i) == vocab.mask_id else vocab.token_of(int(i))
                            for i in step.tokens)
        committed = ",".join(str(p) for p in step.newly_committed)
        lines.append(f"{step.step_index}\t{step.t}\t{rendered}\t{committed}")
    return "\n".join(lines) + "\n"

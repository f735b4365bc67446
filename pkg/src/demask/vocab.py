"""Token inventory with the three reserved control tokens.

Every model in this package works over a closed vocabulary that always
contains a mask token (the absorbing state of the corruption process), a
padding token (batch filler, excluded from loss and attention), and a
separator token (marks the prompt/response boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

MASK_TOKEN = "[MASK]"
PAD_TOKEN = "[PAD]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (MASK_TOKEN, PAD_TOKEN, SEP_TOKEN)


@dataclass(frozen=True)
class Vocab:
    """Immutable token inventory.

    ``tokens[i]`` is the surface form of id ``i``.  The three control-token
    ids must be distinct, in range, and refer to the reserved surface forms.
    """

    tokens: tuple[str, ...]
    mask_id: int
    pad_id: int
    sep_id: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("vocabulary must not be empty")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate token strings")
        ids = (self.mask_id, self.pad_id, self.sep_id)
        if len(set(ids)) != 3:
            raise ValueError(f"control-token ids must be distinct, got {ids}")
        for name, i in zip(("mask_id", "pad_id", "sep_id"), ids):
            if not isinstance(i, int) or not 0 <= i < len(self.tokens):
                raise ValueError(f"{name}={i!r} out of range for vocab of size {len(self.tokens)}")
        expected = {self.mask_id: MASK_TOKEN, self.pad_id: PAD_TOKEN, self.sep_id: SEP_TOKEN}
        for i, surface in expected.items():
            if self.tokens[i] != surface:
                raise ValueError(f"token id {i} must be {surface!r}, got {self.tokens[i]!r}")
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def special_ids(self) -> tuple[int, int, int]:
        return (self.mask_id, self.pad_id, self.sep_id)

    def id_of(self, token: str) -> int:
        """Look up a token id; unknown surface forms are a hard error."""
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"token {token!r} not in vocabulary") from None

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise ValueError(f"token id {idx} out of range for vocab of size {len(self.tokens)}")
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @classmethod
    def from_symbols(cls, symbols) -> "Vocab":
        """Build a vocabulary from an iterable of content symbols.

        Control tokens occupy ids 0..2; content symbols follow in sorted
        order, deduplicated.  Symbols must not collide with the reserved
        surface forms.
        """
        content = sorted(set(symbols))
        for s in content:
            if s in SPECIAL_TOKENS:
                raise ValueError(f"symbol {s!r} collides with a reserved control token")
            if not isinstance(s, str) or not s:
                raise ValueError(f"symbols must be non-empty strings, got {s!r}")
        tokens = SPECIAL_TOKENS + tuple(content)
        return cls(tokens=tokens, mask_id=0, pad_id=1, sep_id=2)

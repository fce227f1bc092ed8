"""Tokenizer contract and the vocabulary shared by the index, scorer and decoder.

The default tokenizer lowercases and splits text into alphanumeric word
tokens.  The vocabulary assigns dense integer ids with a fixed reserved
block at the bottom: the end-of-document sentinel (id 0, required to be
the smallest id for suffix ordering), the six region delimiters, and 256
byte tokens used as a fallback for words never seen at build time.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

EOD = 0
TS = 1
TE = 2
BS = 3
BE = 4
QS = 5
QE = 6

RESERVED_TOKENS = ("<EOD>", "<TS>", "<TE>", "<BS>", "<BE>", "<QS>", "<QE>")
NUM_BYTE_TOKENS = 256
FIRST_BYTE_ID = len(RESERVED_TOKENS)
FIRST_WORD_ID = FIRST_BYTE_ID + NUM_BYTE_TOKENS

DELIMITER_IDS = frozenset({TS, TE, BS, BE, QS, QE})

_WORD_RE = re.compile(r"[0-9a-z]+")


class Tokenizer(Protocol):
    """Anything that maps text to a sequence of normalized string tokens."""

    def tokenize(self, text: str) -> list[str]: ...


class WordTokenizer:
    """Lowercased word tokens split at whitespace and punctuation."""

    def tokenize(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def normalize(self, text: str) -> str:
        """Canonical form of ``text``: detokenized token stream."""
        return self.detokenize(self.tokenize(text))


def _byte_token(b: int) -> str:
    return f"<0x{b:02X}>"


@dataclass
class Vocabulary:
    """Bijective token <-> id map with reserved delimiter and byte ids.

    Content-word ids start at ``FIRST_WORD_ID`` and are assigned in sorted
    token order, so two vocabularies built from the same corpus are
    identical.
    """

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        id_to_token = list(RESERVED_TOKENS)
        id_to_token.extend(_byte_token(b) for b in range(NUM_BYTE_TOKENS))
        id_to_token.extend(sorted(set(words)))
        token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        if len(token_to_id) != len(id_to_token):
            raise ValueError("vocabulary tokens collide with reserved names")
        return cls(id_to_token=id_to_token, token_to_id=token_to_id)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def sentinel_id(self) -> int:
        return EOD

    def encode_word(self, word: str) -> list[int]:
        """Id of a known word, or its UTF-8 byte-token decomposition."""
        wid = self.token_to_id.get(word)
        if wid is not None:
            return [wid]
        return [FIRST_BYTE_ID + b for b in word.encode("utf-8")]

    def encode_words(self, words: Sequence[str]) -> list[int]:
        out: list[int] = []
        for w in words:
            out.extend(self.encode_word(w))
        return out

    def decode(self, ids: Sequence[int]) -> list[str]:
        """Inverse of ``encode_words``; byte-token runs fold back into words."""
        words: list[str] = []
        pending: list[int] = []
        for i in ids:
            if FIRST_BYTE_ID <= i < FIRST_WORD_ID:
                pending.append(i - FIRST_BYTE_ID)
                continue
            if pending:
                words.append(bytes(pending).decode("utf-8", errors="replace"))
                pending = []
            words.append(self.id_to_token[i])
        if pending:
            words.append(bytes(pending).decode("utf-8", errors="replace"))
        return words

    def decode_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.decode(ids))

    def content_hash(self) -> str:
        """Stable digest used to guard scorer/index pairings."""
        h = hashlib.sha256()
        for tok in self.id_to_token:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def is_delimiter(token_id: int) -> bool:
    return token_id in DELIMITER_IDS


def is_special(token_id: int) -> bool:
    """True for the sentinel and the six region delimiters."""
    return token_id == EOD or token_id in DELIMITER_IDS

"""Token counting and caption shearing.

Generated captions are cut to at most ``max_tokens`` tokens and then reduced
to their first complete clause: the shortest prefix that ends with a clause
terminator and is longer than ``min_clause_chars`` characters once stripped.
When no such clause exists the fallback decides between a hard token
truncation and rejecting the caption.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import EmptyCorpus, NoValidClause

# A word may carry inner apostrophes ("man's"); every other non-space,
# non-word character is a token of its own.
_TOKEN_RE = re.compile(r"\w+(?:['’]\w+)*|[^\w\s]")
_WS_RE = re.compile(r"\s+")


class Fallback(str, enum.Enum):
    HARD_TRUNCATE = "hard_truncate"
    REJECT = "reject"


@dataclass(frozen=True)
class TokenizerSpec:
    kind: str = "whitespace_punct"
    lowercase: bool = False

    def __post_init__(self):
        if self.kind != "whitespace_punct":
            raise ValueError(f"unknown tokenizer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lowercase": self.lowercase}


DEFAULT_TOKENIZER = TokenizerSpec()


@dataclass(frozen=True)
class ShearPolicy:
    max_tokens: int = 30
    min_clause_chars: int = 5
    clause_terminators: frozenset[str] = field(default_factory=lambda: frozenset({"."}))
    fallback: Fallback = Fallback.HARD_TRUNCATE

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.min_clause_chars < 0:
            raise ValueError("min_clause_chars must be >= 0")
        terms = frozenset(self.clause_terminators)
        if not terms:
            raise ValueError("at least one clause terminator is required")
        for t in terms:
            # terminators must be single punctuation tokens so that cutting
            # after one never splits a token
            if len(t) != 1 or not _TOKEN_RE.fullmatch(t) or t.isalnum() or t == "_":
                raise ValueError(f"invalid clause terminator {t!r}")
        object.__setattr__(self, "clause_terminators", terms)
        object.__setattr__(self, "fallback", Fallback(self.fallback))

    def to_dict(self) -> dict:
        return {
            "max_tokens": self.max_tokens,
            "min_clause_chars": self.min_clause_chars,
            "clause_terminators": sorted(self.clause_terminators),
            "fallback": self.fallback.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShearPolicy":
        return cls(
            max_tokens=int(d.get("max_tokens", 30)),
            min_clause_chars=int(d.get("min_clause_chars", 5)),
            clause_terminators=frozenset(d.get("clause_terminators", ["."])),
            fallback=Fallback(d.get("fallback", Fallback.HARD_TRUNCATE.value)),
        )

    def digest(self, spec: TokenizerSpec = DEFAULT_TOKENIZER) -> str:
        """Stable hash of the policy together with the tokenizer it is used with."""
        payload = json.dumps({"policy": self.to_dict(), "tokenizer": spec.to_dict()}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ShearResult(NamedTuple):
    text: str
    sheared: bool
    raw_token_count: int
    used_fallback: bool


def tokenize(text: str, spec: TokenizerSpec = DEFAULT_TOKENIZER) -> list[str]:
    if spec.lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def count_tokens(text: str, spec: TokenizerSpec = DEFAULT_TOKENIZER) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def compute_shear_limit(captions: Iterable[str], spec: TokenizerSpec = DEFAULT_TOKENIZER) -> int:
    """Mean token length of ``captions``, rounded half-up, never below 1."""
    total = 0
    n = 0
    for caption in captions:
        total += count_tokens(caption, spec)
        n += 1
    if n == 0:
        raise EmptyCorpus("cannot compute a shear limit from zero captions")
    # integer round-half-up of total / n
    return max(1, (2 * total + n) // (2 * n))


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Longest prefix of ``text`` holding at most ``max_tokens`` tokens.

    The cut falls right after the last kept token, so the prefix tokenizes to
    exactly the first ``max_tokens`` tokens of ``text``.
    """
    end = 0
    for i, m in enumerate(_TOKEN_RE.finditer(text)):
        if i == max_tokens:
            return text[:end]
        end = m.end()
    return text


def extract_first_clause(text: str, policy: ShearPolicy = ShearPolicy()) -> str | None:
    stripped = text.lstrip()
    for i, ch in enumerate(stripped):
        if ch in policy.clause_terminators:
            candidate = stripped[: i + 1].rstrip()
            if len(candidate) > policy.min_clause_chars:
                return candidate
    return None


def shear_caption(
    text: str,
    policy: ShearPolicy = ShearPolicy(),
    spec: TokenizerSpec = DEFAULT_TOKENIZER,
) -> ShearResult:
    raw_count = count_tokens(text, spec)
    head = truncate_to_tokens(text, policy.max_tokens)
    clause = extract_first_clause(head, policy)
    if clause is not None:
        return ShearResult(clause, clause != text, raw_count, False)
    if policy.fallback is Fallback.REJECT:
        raise NoValidClause(f"no clause longer than {policy.min_clause_chars} chars within {policy.max_tokens} tokens")
    out = _WS_RE.sub(" ", head).strip()
    return ShearResult(out, True, raw_count, True)

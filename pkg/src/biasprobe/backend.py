"""Model-inference boundary: tokenization and masked-position distributions.

Two implementations share one interface: a deterministic table-driven
fixture (the test oracle) and an HTTP client speaking the wire protocol

    GET  /v1/info           -> {"model_name", "language", "vocab_size",
                                "max_sequence_length"}
    GET  /v1/vocab          -> {"tokens": [...]}
    POST /v1/tokenize       {"text": ...} -> {"tokens": [{"id", "text",
                                "start", "end", "special"}, ...]}
    POST /v1/mask_logprobs  {"token_ids": [...], "mask_positions": [...]}
                            -> {"log_probs": [[...], ...]}

Log-probabilities are natural log everywhere. Returned distributions are
validated at this boundary (sum of exp within 1e-3 of one) and never
silently renormalized: a broken server must fail loudly.
"""

from __future__ import annotations

import io
import re
import threading
from dataclasses import dataclass
from typing import Any, BinaryIO, Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    BackendUnavailable,
    DuplicateMaskPosition,
    MaskedSpecialToken,
    NonNormalizedDistribution,
    PositionOutOfRange,
    ProtocolViolation,
    SchemaViolation,
    SequenceTooLong,
    UnknownToken,
)
from .lexicon import _parse_json, _require

__all__ = [
    "MASK_TOKEN",
    "TokenSequence",
    "Distribution",
    "BackendInfo",
    "MlmBackend",
    "FixtureBackend",
    "HttpBackend",
]

MASK_TOKEN = "[MASK]"

_NORMALIZATION_TOL = 1e-3


@dataclass(frozen=True)
class TokenSequence:
    """Tokenization result; `special_mask` flags framing tokens."""

    ids: tuple[int, ...]
    texts: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    special_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        n = len(self.ids)
        if not (len(self.texts) == len(self.offsets) == len(self.special_mask) == n):
            raise ProtocolViolation("token sequence field lengths differ")
        prev_end = None
        for (start, end), special in zip(self.offsets, self.special_mask):
            if special:
                continue
            if start > end:
                raise ProtocolViolation(f"inverted offset ({start}, {end})")
            if prev_end is not None and start < prev_end:
                raise ProtocolViolation("overlapping or descending token offsets")
            prev_end = end

    def __len__(self) -> int:
        return len(self.ids)

    def content_positions(self) -> list[int]:
        """Positions of tokens that are part of the sentence proper."""
        return [i for i, special in enumerate(self.special_mask) if not special]


class Distribution:
    """Natural-log probabilities over the full vocabulary.

    Entries must be finite or -inf and sum (in probability space) to one
    within 1e-3; construction enforces this.
    """

    __slots__ = ("log_probs",)

    def __init__(self, log_probs: np.ndarray) -> None:
        arr = np.asarray(log_probs, dtype=np.float64)
        if arr.ndim != 1:
            raise NonNormalizedDistribution("distribution must be a vector")
        if np.any(np.isnan(arr)) or np.any(arr == np.inf):
            raise NonNormalizedDistribution("entries must be finite or -inf")
        total = float(np.sum(np.exp(arr)))
        if not (1.0 - _NORMALIZATION_TOL <= total <= 1.0 + _NORMALIZATION_TOL):
            raise NonNormalizedDistribution(
                f"probabilities sum to {total!r}, outside 1 ± {_NORMALIZATION_TOL}"
            )
        self.log_probs = arr
        arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.log_probs)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class BackendInfo:
    model_name: str
    language: str
    vocab_size: int
    max_sequence_length: int

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ProtocolViolation("vocab_size must be ≥ 2")
        if self.max_sequence_length < 3:
            raise ProtocolViolation("max_sequence_length must be ≥ 3")


class MlmBackend(Protocol):
    """What scoring and metrics need from a masked language model."""

    max_concurrency: int

    def info(self) -> BackendInfo: ...

    def vocab(self) -> list[str]: ...

    def tokenize(self, text: str) -> TokenSequence: ...

    def mask_distributions(
        self, tokens: TokenSequence, positions: Sequence[int]
    ) -> list[Distribution]: ...


def _check_mask_positions(tokens: TokenSequence, positions: Sequence[int]) -> None:
    seen: set[int] = set()
    for p in positions:
        if not 0 <= p < len(tokens):
            raise PositionOutOfRange(f"position {p} outside [0, {len(tokens)})")
        if p in seen:
            raise DuplicateMaskPosition(f"position {p} requested twice")
        seen.add(p)
        if tokens.special_mask[p]:
            raise MaskedSpecialToken(f"position {p} is a special framing token")


# --------------------------------------------------------------------------
# Fixture backend
# --------------------------------------------------------------------------

_WORD_RE = re.compile(r"\S+")


class FixtureBackend:
    """Deterministic table-driven stand-in for an MLM.

    Tokenization splits on whitespace; token ids index into the fixture
    vocabulary. A distribution request builds the token-text sequence with
    ``[MASK]`` substituted at every requested position and looks up each
    position's row independently; contexts without a row fall back to the
    uniform distribution. A row's unlisted vocabulary entries share the
    residual probability mass uniformly.

    File schema::

        {"vocab": ["men", ...],
         "rows": [{"context": ["men", "are", "[MASK]", "."],
                   "position": 2,
                   "probs": {"rude": 0.5, "kind": 0.25}}]}
    """

    max_concurrency = 4

    def __init__(
        self,
        vocab: Sequence[str],
        rows: Sequence[Mapping[str, Any]] = (),
        *,
        model_name: str = "fixture",
        language: str = "und",
        max_sequence_length: int = 512,
    ) -> None:
        if len(vocab) < 2:
            raise SchemaViolation("vocab needs ≥ 2 tokens", path="vocab")
        if len(set(vocab)) != len(vocab):
            raise SchemaViolation("vocab tokens must be unique", path="vocab")
        self._vocab: tuple[str, ...] = tuple(vocab)
        self._ids: dict[str, int] = {w: i for i, w in enumerate(self._vocab)}
        self._info = BackendInfo(
            model_name=model_name,
            language=language,
            vocab_size=len(self._vocab),
            max_sequence_length=max_sequence_length,
        )
        self._rows: dict[tuple[tuple[str, ...], int], dict[str, float]] = {}
        for i, row in enumerate(rows):
            self._add_row(row, path=f"rows[{i}]")

    def _add_row(self, row: Mapping[str, Any], path: str) -> None:
        context = row.get("context")
        if not isinstance(context, list) or not all(
            isinstance(t, str) for t in context
        ):
            raise SchemaViolation("context must be a list of strings", path=path)
        position = row.get("position")
        if not isinstance(position, int) or not 0 <= position < len(context):
            raise SchemaViolation("position out of context range", path=path)
        probs = row.get("probs")
        if not isinstance(probs, dict) or not probs:
            raise SchemaViolation("probs must be a non-empty object", path=path)
        total = 0.0
        for token, p in probs.items():
            if token not in self._ids:
                raise SchemaViolation(
                    f"prob for token '{token}' not in vocab", path=path
                )
            if not isinstance(p, (int, float)) or not 0.0 <= float(p) <= 1.0:
                raise SchemaViolation(f"prob for '{token}' outside [0, 1]", path=path)
            total += float(p)
        if total > 1.0 + 1e-9:
            raise SchemaViolation(f"probs sum to {total} > 1", path=path)
        if len(probs) == len(self._vocab) and abs(total - 1.0) > _NORMALIZATION_TOL:
            raise SchemaViolation(
                f"full-vocab probs sum to {total}, not 1", path=path
            )
        key = (tuple(context), position)
        if key in self._rows:
            raise SchemaViolation("duplicate (context, position) row", path=path)
        self._rows[key] = {t: float(p) for t, p in probs.items()}

    @classmethod
    def from_json(cls, source: bytes | str | BinaryIO, **kwargs: Any) -> "FixtureBackend":
        doc = _parse_json(source)
        if not isinstance(doc, dict):
            raise SchemaViolation("top-level value must be an object", path="")
        vocab = _require(doc, "vocab", list, "")
        rows = doc.get("rows", [])
        if not isinstance(rows, list):
            raise SchemaViolation("rows must be a list", path="rows")
        for key in ("model_name", "language", "max_sequence_length"):
            if key in doc:
                kwargs.setdefault(key, doc[key])
        return cls(vocab, rows, **kwargs)

    @classmethod
    def from_file(cls, path: str, **kwargs: Any) -> "FixtureBackend":
        with io.open(path, "rb") as handle:
            return cls.from_json(handle, **kwargs)

    def info(self) -> BackendInfo:
        return self._info

    def vocab(self) -> list[str]:
        return list(self._vocab)

    def tokenize(self, text: str) -> TokenSequence:
        if not text:
            raise ValueError("text must be non-empty")
        ids: list[int] = []
        texts: list[str] = []
        offsets: list[tuple[int, int]] = []
        for match in _WORD_RE.finditer(text):
            word = match.group(0)
            if word == MASK_TOKEN:
                token_id = self._ids.get(MASK_TOKEN, len(self._vocab))
            elif word in self._ids:
                token_id = self._ids[word]
            else:
                raise UnknownToken(f"'{word}' not in fixture vocab")
            ids.append(token_id)
            texts.append(word)
            offsets.append((match.start(), match.end()))
        if len(ids) > self._info.max_sequence_length:
            raise SequenceTooLong(
                f"{len(ids)} tokens > max {self._info.max_sequence_length}"
            )
        return TokenSequence(
            ids=tuple(ids),
            texts=tuple(texts),
            offsets=tuple(offsets),
            special_mask=tuple(False for _ in ids),
        )

    def _distribution_for(
        self, masked_context: tuple[str, ...], position: int
    ) -> Distribution:
        probs = self._rows.get((masked_context, position))
        vocab_size = len(self._vocab)
        if probs is None:
            arr = np.full(vocab_size, 1.0 / vocab_size)
        else:
            listed = sum(probs.values())
            unlisted = vocab_size - len(probs)
            residual = max(0.0, 1.0 - listed)
            fill = residual / unlisted if unlisted else 0.0
            arr = np.full(vocab_size, fill)
            for token, p in probs.items():
                arr[self._ids[token]] = p
        with np.errstate(divide="ignore"):
            return Distribution(np.log(arr))

    def mask_distributions(
        self, tokens: TokenSequence, positions: Sequence[int]
    ) -> list[Distribution]:
        _check_mask_positions(tokens, positions)
        masked = list(tokens.texts)
        for p in positions:
            masked[p] = MASK_TOKEN
        context = tuple(masked)
        return [self._distribution_for(context, p) for p in positions]


# --------------------------------------------------------------------------
# HTTP backend
# --------------------------------------------------------------------------


class HttpBackend:
    """Wire-protocol client; bounds in-flight requests with a semaphore."""

    def __init__(
        self,
        base_url: str,
        *,
        max_concurrency: int = 4,
        timeout: float = 60.0,
        session: Any | None = None,
    ) -> None:
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be ≥ 1")
        import requests

        self._base_url = base_url.rstrip("/")
        self.max_concurrency = max_concurrency
        self._timeout = timeout
        self._session = session if session is not None else requests.Session()
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self._lock = threading.Lock()
        self._info: BackendInfo | None = None
        self._vocab: list[str] | None = None

    def _request(self, method: str, path: str, payload: Any | None = None) -> Any:
        import requests

        url = f"{self._base_url}{path}"
        try:
            with self._semaphore:
                response = self._session.request(
                    method, url, json=payload, timeout=self._timeout
                )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"{method} {url}: {exc}") from exc
        if response.status_code == 413:
            raise SequenceTooLong(f"{method} {url}: server rejected over-length input")
        if response.status_code != 200:
            raise BackendUnavailable(
                f"{method} {url}: HTTP {response.status_code}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise ProtocolViolation(f"{method} {url}: body is not JSON") from exc

    def info(self) -> BackendInfo:
        with self._lock:
            if self._info is None:
                doc = self._request("GET", "/v1/info")
                try:
                    self._info = BackendInfo(
                        model_name=str(doc["model_name"]),
                        language=str(doc["language"]),
                        vocab_size=int(doc["vocab_size"]),
                        max_sequence_length=int(doc["max_sequence_length"]),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ProtocolViolation(f"bad /v1/info response: {exc}") from exc
            return self._info

    def vocab(self) -> list[str]:
        info = self.info()
        with self._lock:
            if self._vocab is None:
                doc = self._request("GET", "/v1/vocab")
                tokens = doc.get("tokens") if isinstance(doc, dict) else None
                if not isinstance(tokens, list) or not all(
                    isinstance(t, str) for t in tokens
                ):
                    raise ProtocolViolation("/v1/vocab must return {'tokens': [str]}")
                if len(tokens) != info.vocab_size:
                    raise ProtocolViolation(
                        f"vocab length {len(tokens)} != vocab_size {info.vocab_size}"
                    )
                self._vocab = tokens
            return list(self._vocab)

    def tokenize(self, text: str) -> TokenSequence:
        if not text:
            raise ValueError("text must be non-empty")
        doc = self._request("POST", "/v1/tokenize", {"text": text})
        raw = doc.get("tokens") if isinstance(doc, dict) else None
        if not isinstance(raw, list):
            raise ProtocolViolation("/v1/tokenize must return {'tokens': [...]}")
        try:
            tokens = TokenSequence(
                ids=tuple(int(t["id"]) for t in raw),
                texts=tuple(str(t["text"]) for t in raw),
                offsets=tuple((int(t["start"]), int(t["end"])) for t in raw),
                special_mask=tuple(bool(t["special"]) for t in raw),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolViolation(f"bad /v1/tokenize token entry: {exc}") from exc
        if len(tokens) > self.info().max_sequence_length:
            raise SequenceTooLong(
                f"{len(tokens)} tokens > max {self.info().max_sequence_length}"
            )
        return tokens

    def mask_distributions(
        self, tokens: TokenSequence, positions: Sequence[int]
    ) -> list[Distribution]:
        _check_mask_positions(tokens, positions)
        doc = self._request(
            "POST",
            "/v1/mask_logprobs",
            {"token_ids": list(tokens.ids), "mask_positions": list(positions)},
        )
        rows = doc.get("log_probs") if isinstance(doc, dict) else None
        if not isinstance(rows, list) or len(rows) != len(positions):
            raise ProtocolViolation(
                "/v1/mask_logprobs must return one log_probs row per position"
            )
        vocab_size = self.info().vocab_size
        out: list[Distribution] = []
        for i, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != vocab_size:
                raise ProtocolViolation(
                    f"log_probs row {i} length != vocab_size {vocab_size}"
                )
            arr = np.array(row, dtype=np.float64)
            try:
                out.append(Distribution(arr))
            except NonNormalizedDistribution as exc:
                raise NonNormalizedDistribution(
                    f"row {i} (position {positions[i]}): {exc}"
                ) from exc
        return out

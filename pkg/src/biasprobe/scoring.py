"""Sentence pseudo-likelihoods and batch scoring into a score tensor.

A sentence's pseudo-log-likelihood is the sum, over its content tokens, of
the log-probability the model assigns to the true token when only that
position is masked. Scoring a whole template set arranges these values in
a dense (template, concept, attribute) tensor whose index order matches
the expansion order, so downstream metrics address cells reproducibly.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .backend import MlmBackend
from .errors import SchemaViolation, ScoringError, ZeroProbability
from .lexicon import Lexicon, _parse_json, _require
from .template_dsl import TemplateSet, expand

__all__ = [
    "NO_CONCEPT_LABEL",
    "SentenceScore",
    "ScoreTensor",
    "pseudo_log_likelihood",
    "score_template_set",
    "normalized_shares",
]

NO_CONCEPT_LABEL = "∅"


@dataclass(frozen=True)
class SentenceScore:
    """Log pseudo-likelihood with its per-token breakdown (all in nats)."""

    log_pl: float
    per_token_logp: tuple[tuple[int, str, float], ...]

    @property
    def token_count(self) -> int:
        return len(self.per_token_logp)


@dataclass(frozen=True)
class ScoreTensor:
    """Dense log-PL grid indexed (template, concept, attribute)."""

    template_set_id: str
    values: np.ndarray  # shape (T, A, N), float64, finite
    template_labels: tuple[str, ...]
    concept_labels: tuple[str, ...]
    attribute_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        t, a, n = self.values.shape
        if (t, a, n) != (
            len(self.template_labels),
            len(self.concept_labels),
            len(self.attribute_labels),
        ):
            raise ValueError("tensor dims do not match label lengths")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor values must be finite")

    @property
    def template_count(self) -> int:
        return self.values.shape[0]

    @property
    def concept_count(self) -> int:
        return self.values.shape[1]

    @property
    def attribute_count(self) -> int:
        return self.values.shape[2]

    def to_json_bytes(self) -> bytes:
        doc = {
            "template_set": self.template_set_id,
            "dims": list(self.values.shape),
            "templates": list(self.template_labels),
            "concepts": list(self.concept_labels),
            "attributes": list(self.attribute_labels),
            "log_pl": self.values.tolist(),
        }
        return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True).encode(
            "utf-8"
        )

    @classmethod
    def from_json(cls, source: bytes | str | BinaryIO) -> "ScoreTensor":
        doc = _parse_json(source)
        if not isinstance(doc, dict):
            raise SchemaViolation("top-level value must be an object", path="")
        set_id = _require(doc, "template_set", str, "")
        dims = _require(doc, "dims", list, "")
        values = np.array(_require(doc, "log_pl", list, ""), dtype=np.float64)
        if list(values.shape) != dims:
            raise SchemaViolation("log_pl shape does not match dims", path="log_pl")
        if not np.all(np.isfinite(values)):
            raise SchemaViolation("log_pl values must be finite", path="log_pl")
        tensor = cls(
            template_set_id=set_id,
            values=values,
            template_labels=tuple(_require(doc, "templates", list, "")),
            concept_labels=tuple(_require(doc, "concepts", list, "")),
            attribute_labels=tuple(_require(doc, "attributes", list, "")),
        )
        return tensor

    @classmethod
    def from_file(cls, path: str) -> "ScoreTensor":
        with io.open(path, "rb") as handle:
            return cls.from_json(handle)


def pseudo_log_likelihood(backend: MlmBackend, sentence_text: str) -> SentenceScore:
    """Score one sentence by masking each content position in turn.

    Framing tokens are excluded from the product. A backend assigning
    probability zero to an observed token raises ZeroProbability rather
    than flooring the value.
    """
    tokens = backend.tokenize(sentence_text)
    per_token: list[tuple[int, str, float]] = []
    for position in tokens.content_positions():
        dist = backend.mask_distributions(tokens, [position])[0]
        logp = float(dist.log_probs[tokens.ids[position]])
        if logp == -math.inf:
            raise ZeroProbability(
                f"probability 0 for token '{tokens.texts[position]}' at "
                f"position {position}",
                position=position,
                token_text=tokens.texts[position],
            )
        per_token.append((position, tokens.texts[position], logp))
    return SentenceScore(
        log_pl=math.fsum(lp for _, _, lp in per_token),
        per_token_logp=tuple(per_token),
    )


def score_template_set(
    backend: MlmBackend,
    template_set: TemplateSet,
    lexicon: Lexicon,
    *,
    max_concurrency: int | None = None,
) -> ScoreTensor:
    """Expand a template set and score every sentence into a tensor.

    Sentences are scored concurrently up to the backend's limit; cells are
    written by index so the result does not depend on completion order.
    Any failure aborts the whole tensor, tagged with its (t, a, n) cell.
    """
    sentences = expand(template_set, lexicon)
    attr_labels = lexicon.attribute_sets[template_set.attribute_set_name].term_ids()
    concept_set_name = template_set.concept_set_name
    if concept_set_name is None:
        concept_labels: tuple[str, ...] = (NO_CONCEPT_LABEL,)
    else:
        concept_labels = lexicon.concept_sets[concept_set_name].word_ids()
    shape = (len(template_set.templates), len(concept_labels), len(attr_labels))

    limit = max_concurrency or getattr(backend, "max_concurrency", 1)
    scores: list[SentenceScore | None] = [None] * len(sentences)
    if limit <= 1 or len(sentences) <= 1:
        errors: list[tuple[int, BaseException]] = []
        for i, sentence in enumerate(sentences):
            try:
                scores[i] = pseudo_log_likelihood(backend, sentence.text)
            except Exception as exc:  # noqa: BLE001 - rethrown with coordinates
                errors.append((i, exc))
                break
    else:
        with ThreadPoolExecutor(max_workers=limit) as pool:
            futures = [
                pool.submit(pseudo_log_likelihood, backend, s.text) for s in sentences
            ]
            wait(futures)
        errors = []
        for i, future in enumerate(futures):
            exc = future.exception()
            if exc is not None:
                errors.append((i, exc))
            else:
                scores[i] = future.result()

    if errors:
        index, cause = errors[0]
        a_count, n_count = shape[1], shape[2]
        t, rest = divmod(index, a_count * n_count)
        a, n = divmod(rest, n_count)
        raise ScoringError(
            str(cause),
            set_id=template_set.id,
            template_index=t,
            concept_index=a,
            attribute_index=n,
        ) from cause

    values = np.array([s.log_pl for s in scores], dtype=np.float64).reshape(shape)
    return ScoreTensor(
        template_set_id=template_set.id,
        values=values,
        template_labels=tuple(t.raw for t in template_set.templates),
        concept_labels=concept_labels,
        attribute_labels=attr_labels,
    )


def normalized_shares(tensor: ScoreTensor, concept_index: int) -> np.ndarray:
    """Per-attribute shares for one concept, averaged over template variants.

    Each template's log-PL row is turned into a distribution over attribute
    terms (max-shifted exponentials normalized to one); the returned vector
    is the plain average of those per-template distributions, so variants
    of different lengths weigh equally.
    """
    rows = tensor.values[:, concept_index, :]  # IndexError if out of range
    shifted = rows - rows.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    per_template = expd / expd.sum(axis=1, keepdims=True)
    return per_template.mean(axis=0)

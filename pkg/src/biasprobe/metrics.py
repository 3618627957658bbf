"""Bias metrics over score tensors and masked-position distributions.

Three families: the categorical bias score (mean over templates and
concepts of the per-cell variance of log sentence probability across
attribute terms), distribution differences (largest pairwise KL divergence
between the full-vocabulary distributions induced by different attribute
fills), and normalized word probabilities (attribute-term probability in a
probing context divided by its probability with the concept also masked).
All values are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backend import MASK_TOKEN, Distribution, MlmBackend, TokenSequence
from .errors import (
    DegenerateAttributeSet,
    DegenerateNormalization,
    DimensionMismatch,
    EmptyInput,
    MetricError,
    MultiTokenConceptMask,
)
from .lexicon import NO_FEATURES, Lexicon, select_form
from .scoring import ScoreTensor
from .template_dsl import Literal, Slot, Template, TemplateSet

__all__ = [
    "CbResult",
    "KlMatrix",
    "NormProbResult",
    "cb_score",
    "aggregate_cb",
    "kl_divergence",
    "distribution_difference",
    "normalized_word_probability",
    "top_k",
]

_KL_EPSILON = 1e-12
TINY_DENOMINATOR = 1e-8


# --------------------------------------------------------------------------
# Categorical bias
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CbResult:
    """Aggregate bias value plus the per-(template, concept) variance grid."""

    cb: float
    per_template_per_concept_variance: np.ndarray  # shape (T, A)

    @property
    def cell_count(self) -> int:
        return int(self.per_template_per_concept_variance.size)


def _population_variance(row: np.ndarray) -> float:
    # exact zero for constant rows; np.var would leave fp dust
    if np.all(row == row[0]):
        return 0.0
    return float(np.var(row))


def cb_score(tensor: ScoreTensor) -> CbResult:
    """Mean over (template, concept) cells of the population variance of
    log PL across attribute terms. Zero means no measured bias."""
    if tensor.attribute_count < 2:
        raise DegenerateAttributeSet(
            f"need ≥ 2 attribute terms, got {tensor.attribute_count}"
        )
    t_count, a_count = tensor.template_count, tensor.concept_count
    variances = np.empty((t_count, a_count), dtype=np.float64)
    for t in range(t_count):
        for a in range(a_count):
            variances[t, a] = _population_variance(tensor.values[t, a, :])
    return CbResult(cb=float(variances.mean()), per_template_per_concept_variance=variances)


def aggregate_cb(results: Sequence[CbResult]) -> float:
    """Cell-count-weighted mean of per-set scores; equals pooling every
    (template, concept) variance and averaging."""
    if not results:
        raise EmptyInput("no results to aggregate")
    total_cells = sum(r.cell_count for r in results)
    return float(sum(r.cb * r.cell_count for r in results) / total_cells)


# --------------------------------------------------------------------------
# KL divergence / distribution differences
# --------------------------------------------------------------------------


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """KL(p ‖ q) in nats after epsilon-smoothing and renormalizing both."""
    if len(p) != len(q):
        raise DimensionMismatch(f"vocab sizes differ: {len(p)} vs {len(q)}")
    pa = p.probs() + _KL_EPSILON
    qa = q.probs() + _KL_EPSILON
    pa /= pa.sum()
    qa /= qa.sum()
    return float(np.sum(pa * (np.log(pa) - np.log(qa))))


@dataclass(frozen=True)
class KlMatrix:
    """Pairwise KL divergences between attribute-fill distributions."""

    attribute_ids: tuple[str, ...]
    kl: np.ndarray  # shape (N, N), nats, zero diagonal
    max_value: float
    max_pair: tuple[str, str]


def _slot_roles(template_set: TemplateSet) -> tuple[str, str | None]:
    return template_set.attribute_slot, template_set.concept_slot


def _render_with(
    template: Template,
    surfaces: Mapping[str, str],
) -> tuple[str, dict[str, list[tuple[int, int]]]]:
    parts: list[str] = []
    spans: dict[str, list[tuple[int, int]]] = {}
    pos = 0
    for seg in template.segments:
        if isinstance(seg, Literal):
            surface = seg.text
        else:
            surface = surfaces[seg.name]
            spans.setdefault(seg.name, []).append((pos, pos + len(surface)))
        parts.append(surface)
        pos += len(surface)
    return "".join(parts), spans


def _positions_in_span(
    tokens: TokenSequence, span: tuple[int, int]
) -> list[int]:
    start, end = span
    return [
        i
        for i in tokens.content_positions()
        if tokens.offsets[i][0] < end and tokens.offsets[i][1] > start
    ]


def distribution_difference(
    backend: MlmBackend,
    template_set: TemplateSet,
    lexicon: Lexicon,
    template_index: int = 0,
) -> KlMatrix:
    """Fill the attribute slot with each term, mask the concept slot, and
    compare the resulting full-vocabulary distributions pairwise.

    The template variant must use the concept slot exactly once; the mask
    must map to a single token position. The matrix holds KL over ordered
    pairs (not symmetrized); `max_pair` is the ordered pair attaining the
    largest entry, ties resolved in row-major order.
    """
    attr_slot, concept_slot = _slot_roles(template_set)
    if concept_slot is None:
        raise MetricError("template set has no concept slot to mask")
    template = template_set.templates[template_index]
    if template.slot_names().count(concept_slot) != 1:
        raise MetricError("template must use the concept slot exactly once")
    attr_set = lexicon.attribute_sets[template_set.attribute_set_name]

    distributions: list[Distribution] = []
    for term in attr_set.terms:
        text, spans = _render_with(
            template,
            {
                attr_slot: select_form(term.forms, term.features),
                concept_slot: MASK_TOKEN,
            },
        )
        tokens = backend.tokenize(text)
        positions = _positions_in_span(tokens, spans[concept_slot][0])
        if len(positions) != 1:
            raise MultiTokenConceptMask(
                f"concept mask for '{term.id}' spans {len(positions)} token "
                f"positions, expected 1"
            )
        distributions.append(backend.mask_distributions(tokens, positions)[0])

    n = len(distributions)
    kl = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            if i != j:
                kl[i, j] = kl_divergence(distributions[i], distributions[j])
    # the reported pair is over distinct terms; the diagonal is 0 by definition
    off_diagonal = ~np.eye(n, dtype=bool)
    masked = np.where(off_diagonal, kl, -np.inf)
    flat_argmax = int(np.argmax(masked))
    max_i, max_j = divmod(flat_argmax, n)
    ids = attr_set.term_ids()
    return KlMatrix(
        attribute_ids=ids,
        kl=kl,
        max_value=float(kl[max_i, max_j]),
        max_pair=(ids[max_i], ids[max_j]),
    )


# --------------------------------------------------------------------------
# Normalized word probability
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormProbResult:
    """Per-attribute normalized probabilities and their renormalized shares.

    `flags` marks terms whose value needs care: `multi_subword` (geometric
    mean over subtokens was used) and `tiny_denominator` (the prior
    probability fell below 1e-8, so the ratio may blow up).
    """

    concept_id: str
    attribute_ids: tuple[str, ...]
    p_norm: tuple[float, ...]
    shares: tuple[float, ...]
    flags: Mapping[str, frozenset[str]]


def _geometric_mean_logp(
    dists: Sequence[Distribution], tokens: TokenSequence, positions: Sequence[int]
) -> float:
    logps = [float(d.log_probs[tokens.ids[p]]) for d, p in zip(dists, positions)]
    return math.fsum(logps) / len(logps)


def normalized_word_probability(
    backend: MlmBackend,
    template_set: TemplateSet,
    lexicon: Lexicon,
    concept_id: str,
    template_index: int = 0,
) -> NormProbResult:
    """Probability of each attribute term in the probing context, divided by
    its probability with the concept position(s) masked as well.

    Multi-subword terms use the geometric mean of per-subtoken probabilities
    with all the term's positions masked simultaneously and are flagged
    `multi_subword`. Denominators below 1e-8 are flagged `tiny_denominator`
    but never excluded. Raises DegenerateNormalization when every
    denominator (or every ratio) vanishes.
    """
    attr_slot, concept_slot = _slot_roles(template_set)
    if concept_slot is None:
        raise MetricError("template set has no concept slot")
    template = template_set.templates[template_index]
    if template.slot_names().count(concept_slot) != 1:
        raise MetricError("template must use the concept slot exactly once")
    attr_set = lexicon.attribute_sets[template_set.attribute_set_name]
    concept_set = lexicon.concept_sets[template_set.concept_set_name]
    by_id = {w.id: w for w in concept_set.words}
    if concept_id not in by_id:
        raise KeyError(f"concept '{concept_id}' not in set '{concept_set.name}'")
    concept = by_id[concept_id]

    concept_agrees = any(
        isinstance(seg, Slot)
        and seg.name == concept_slot
        and seg.agree_with == attr_slot
        for seg in template.segments
    )

    p_norms: list[float] = []
    flags: dict[str, frozenset[str]] = {}
    denominators: list[float] = []
    for term in attr_set.terms:
        concept_features = term.features if concept_agrees else NO_FEATURES
        concept_surface = select_form(concept.forms, concept_features)
        text, spans = _render_with(
            template,
            {
                attr_slot: select_form(term.forms, term.features),
                concept_slot: concept_surface,
            },
        )
        tokens = backend.tokenize(text)
        attr_positions = _positions_in_span(tokens, spans[attr_slot][0])
        concept_positions = _positions_in_span(tokens, spans[concept_slot][0])
        if not attr_positions:
            raise MetricError(f"attribute surface for '{term.id}' has no tokens")
        if not concept_positions:
            raise MetricError(f"concept surface '{concept_id}' has no tokens")

        numerator_dists = backend.mask_distributions(tokens, attr_positions)
        numerator_log = _geometric_mean_logp(numerator_dists, tokens, attr_positions)
        denominator_dists = backend.mask_distributions(
            tokens, list(attr_positions) + concept_positions
        )
        denominator_log = _geometric_mean_logp(
            denominator_dists[: len(attr_positions)], tokens, attr_positions
        )

        numerator = math.exp(numerator_log)
        denominator = math.exp(denominator_log)
        denominators.append(denominator)
        term_flags: set[str] = set()
        if len(attr_positions) > 1:
            term_flags.add("multi_subword")
        if denominator < TINY_DENOMINATOR:
            term_flags.add("tiny_denominator")
        if denominator == 0.0:
            value = 0.0 if numerator == 0.0 else math.inf
        else:
            value = math.exp(numerator_log - denominator_log)
        p_norms.append(value)
        flags[term.id] = frozenset(term_flags)

    if all(d == 0.0 for d in denominators):
        raise DegenerateNormalization("every normalization denominator is zero")

    infinite = [i for i, v in enumerate(p_norms) if math.isinf(v)]
    if infinite:
        shares = [0.0] * len(p_norms)
        for i in infinite:
            shares[i] = 1.0 / len(infinite)
    else:
        total = math.fsum(p_norms)
        if total == 0.0:
            raise DegenerateNormalization("every normalized probability is zero")
        shares = [v / total for v in p_norms]

    return NormProbResult(
        concept_id=concept_id,
        attribute_ids=attr_set.term_ids(),
        p_norm=tuple(p_norms),
        shares=tuple(shares),
        flags=flags,
    )


def top_k(result: NormProbResult, k: int) -> list[tuple[str, float]]:
    """Top attribute terms by renormalized share, descending; ties break by
    id ascending; truncated to min(k, N)."""
    if k < 1:
        raise ValueError("k must be ≥ 1")
    ranked = sorted(
        zip(result.attribute_ids, result.shares), key=lambda item: (-item[1], item[0])
    )
    return ranked[: min(k, len(ranked))]

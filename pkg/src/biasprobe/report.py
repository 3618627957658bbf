"""Aggregation of scored results across models into comparable reports.

A report bundles, per template set and model, the attribute shares, the
categorical bias value, and the optional distribution-difference and
normalized-probability blocks, plus cross-model comparison rows and
per-category aggregates. It serializes to JSON (schema 1), a long-format
CSV (`category,set_id,metric,model,label,value`, one scalar per row), and
stacked share-bar SVG charts.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Mapping, Sequence
from xml.sax.saxutils import escape

from .backend import BackendInfo
from .errors import (
    DuplicateModel,
    ReportError,
    SchemaViolation,
    SetIdMismatchAcrossModels,
    UnknownSetOrConcept,
)
from .lexicon import Category, _parse_json
from .metrics import CbResult, KlMatrix, NormProbResult

__all__ = [
    "SCHEMA_VERSION",
    "ScoredSet",
    "ModelScores",
    "Report",
    "build_report",
    "emit_json",
    "parse_report",
    "emit_csv",
    "emit_svg_shares",
]

SCHEMA_VERSION = 1

_SHARE_SUM_TOL = 1e-9


# --------------------------------------------------------------------------
# Inputs
# --------------------------------------------------------------------------


@dataclass
class ScoredSet:
    """Everything one model produced for one template set."""

    set_id: str
    category: Category
    templates: list[str]
    attribute_ids: list[str]
    attribute_display: dict[str, str]
    shares: dict[str, dict[str, float]]  # concept id -> attribute id -> share
    cb: CbResult | None = None
    kl: tuple[int, KlMatrix] | None = None  # (template index, matrix)
    normprob: dict[str, NormProbResult] | None = None  # concept id -> result


@dataclass
class ModelScores:
    name: str
    language: str
    backend_info: BackendInfo
    sets: list[ScoredSet]


# --------------------------------------------------------------------------
# Report data model
# --------------------------------------------------------------------------


@dataclass
class ModelMeta:
    name: str
    language: str
    backend: BackendInfo


@dataclass
class CbBlock:
    value: float
    variances: list[list[float]]


@dataclass
class KlBlock:
    template_index: int
    attribute_ids: list[str]
    matrix: list[list[float]]
    max_value: float
    max_pair: list[str]


@dataclass
class NormProbBlock:
    p_norm: dict[str, float]
    shares: dict[str, float]
    flags: dict[str, list[str]]


@dataclass
class ModelSetBlock:
    model: str
    shares: dict[str, dict[str, float]]
    cb: CbBlock | None = None
    kl: KlBlock | None = None
    normprob: dict[str, NormProbBlock] | None = None


@dataclass
class SetBlock:
    set_id: str
    category: str
    templates: list[str]
    attribute_ids: list[str]
    attribute_display: dict[str, str]
    models: list[ModelSetBlock]


@dataclass
class ComparisonRow:
    category: str
    set_id: str
    metric: str
    values: dict[str, float]


@dataclass
class AggregateRow:
    category: str
    metric: str
    values: dict[str, float]


@dataclass
class Report:
    timestamp: str
    tool_version: str
    models: list[ModelMeta]
    sets: list[SetBlock]
    comparisons: list[ComparisonRow] = field(default_factory=list)
    aggregates: list[AggregateRow] = field(default_factory=list)


# --------------------------------------------------------------------------
# Building
# --------------------------------------------------------------------------


def _check_share_sums(shares: Mapping[str, Mapping[str, float]], where: str) -> None:
    for concept_id, vector in shares.items():
        total = sum(vector.values())
        if abs(total - 1.0) > _SHARE_SUM_TOL:
            raise ReportError(
                f"{where}: shares for concept '{concept_id}' sum to {total!r}"
            )


def build_report(
    model_scores: Sequence[ModelScores],
    *,
    timestamp: str,
    tool_version: str,
) -> Report:
    """Assemble per-model results into one report.

    Models keep their configured order. Every model must cover the same
    template set ids (SetIdMismatchAcrossModels otherwise); model names
    must be unique (DuplicateModel).
    """
    if not model_scores:
        raise ReportError("no model results")
    names = [m.name for m in model_scores]
    if len(set(names)) != len(names):
        raise DuplicateModel(f"duplicate model names in {names}")

    reference = model_scores[0]
    reference_ids = [s.set_id for s in reference.sets]
    if len(set(reference_ids)) != len(reference_ids):
        raise ReportError(f"model '{reference.name}' repeats a set id")
    for model in model_scores[1:]:
        ids = [s.set_id for s in model.sets]
        if sorted(ids) != sorted(reference_ids):
            raise SetIdMismatchAcrossModels(
                f"model '{model.name}' scored sets {sorted(ids)}, "
                f"expected {sorted(reference_ids)}"
            )

    by_model = {m.name: {s.set_id: s for s in m.sets} for m in model_scores}
    sets: list[SetBlock] = []
    comparisons: list[ComparisonRow] = []
    for ref_set in reference.sets:
        blocks: list[ModelSetBlock] = []
        cb_values: dict[str, float] = {}
        for model in model_scores:
            scored = by_model[model.name][ref_set.set_id]
            if scored.category != ref_set.category:
                raise ReportError(
                    f"set '{ref_set.set_id}': category differs across models"
                )
            if scored.attribute_ids != ref_set.attribute_ids:
                raise ReportError(
                    f"set '{ref_set.set_id}': attribute ids differ across models"
                )
            _check_share_sums(
                scored.shares, f"model '{model.name}', set '{ref_set.set_id}'"
            )
            cb_block = None
            if scored.cb is not None:
                cb_block = CbBlock(
                    value=scored.cb.cb,
                    variances=scored.cb.per_template_per_concept_variance.tolist(),
                )
                cb_values[model.name] = scored.cb.cb
            kl_block = None
            if scored.kl is not None:
                template_index, matrix = scored.kl
                kl_block = KlBlock(
                    template_index=template_index,
                    attribute_ids=list(matrix.attribute_ids),
                    matrix=matrix.kl.tolist(),
                    max_value=matrix.max_value,
                    max_pair=list(matrix.max_pair),
                )
            normprob_block = None
            if scored.normprob is not None:
                normprob_block = {
                    concept_id: NormProbBlock(
                        p_norm=dict(zip(r.attribute_ids, r.p_norm)),
                        shares=dict(zip(r.attribute_ids, r.shares)),
                        flags={a: sorted(f) for a, f in r.flags.items() if f},
                    )
                    for concept_id, r in scored.normprob.items()
                }
            blocks.append(
                ModelSetBlock(
                    model=model.name,
                    shares={c: dict(v) for c, v in scored.shares.items()},
                    cb=cb_block,
                    kl=kl_block,
                    normprob=normprob_block,
                )
            )
        sets.append(
            SetBlock(
                set_id=ref_set.set_id,
                category=ref_set.category.value,
                templates=list(ref_set.templates),
                attribute_ids=list(ref_set.attribute_ids),
                attribute_display=dict(ref_set.attribute_display),
                models=blocks,
            )
        )
        if cb_values:
            comparisons.append(
                ComparisonRow(
                    category=ref_set.category.value,
                    set_id=ref_set.set_id,
                    metric="cb",
                    values=cb_values,
                )
            )

    aggregates: list[AggregateRow] = []
    categories = sorted({s.category.value for s in reference.sets})
    for category in categories:
        values: dict[str, float] = {}
        for model in model_scores:
            results = [
                s.cb
                for s in model.sets
                if s.category.value == category and s.cb is not None
            ]
            if results:
                total_cells = sum(r.cell_count for r in results)
                values[model.name] = float(
                    sum(r.cb * r.cell_count for r in results) / total_cells
                )
        if values:
            aggregates.append(
                AggregateRow(category=category, metric="cb_aggregated", values=values)
            )

    return Report(
        timestamp=timestamp,
        tool_version=tool_version,
        models=[
            ModelMeta(name=m.name, language=m.language, backend=m.backend_info)
            for m in model_scores
        ],
        sets=sets,
        comparisons=comparisons,
        aggregates=aggregates,
    )


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------


def _report_to_dict(report: Report) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "meta": {
            "timestamp": report.timestamp,
            "tool_version": report.tool_version,
            "models": [
                {
                    "name": m.name,
                    "language": m.language,
                    "backend": {
                        "model_name": m.backend.model_name,
                        "language": m.backend.language,
                        "vocab_size": m.backend.vocab_size,
                        "max_sequence_length": m.backend.max_sequence_length,
                    },
                }
                for m in report.models
            ],
        },
        "sets": [
            {
                "set_id": s.set_id,
                "category": s.category,
                "templates": s.templates,
                "attribute_ids": s.attribute_ids,
                "attribute_display": s.attribute_display,
                "models": [
                    {
                        "model": b.model,
                        "shares": b.shares,
                        "cb": None
                        if b.cb is None
                        else {"value": b.cb.value, "variances": b.cb.variances},
                        "kl": None
                        if b.kl is None
                        else {
                            "template_index": b.kl.template_index,
                            "attribute_ids": b.kl.attribute_ids,
                            "matrix": b.kl.matrix,
                            "max_value": b.kl.max_value,
                            "max_pair": b.kl.max_pair,
                        },
                        "normprob": None
                        if b.normprob is None
                        else {
                            concept: {
                                "p_norm": block.p_norm,
                                "shares": block.shares,
                                "flags": block.flags,
                            }
                            for concept, block in b.normprob.items()
                        },
                    }
                    for b in s.models
                ],
            }
            for s in report.sets
        ],
        "comparisons": [
            {
                "category": c.category,
                "set_id": c.set_id,
                "metric": c.metric,
                "values": c.values,
            }
            for c in report.comparisons
        ],
        "aggregates": [
            {"category": a.category, "metric": a.metric, "values": a.values}
            for a in report.aggregates
        ],
    }


def emit_json(report: Report) -> bytes:
    doc = _report_to_dict(report)
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8")


def parse_report(source: bytes | str | BinaryIO) -> Report:
    """Inverse of emit_json: parse_report(emit_json(r)) == r."""
    doc = _parse_json(source)
    if not isinstance(doc, dict):
        raise SchemaViolation("top-level value must be an object", path="")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaViolation(
            f"unsupported schema {doc.get('schema')!r}", path="schema"
        )
    try:
        meta = doc["meta"]
        models = [
            ModelMeta(
                name=m["name"],
                language=m["language"],
                backend=BackendInfo(
                    model_name=m["backend"]["model_name"],
                    language=m["backend"]["language"],
                    vocab_size=m["backend"]["vocab_size"],
                    max_sequence_length=m["backend"]["max_sequence_length"],
                ),
            )
            for m in meta["models"]
        ]
        sets = [
            SetBlock(
                set_id=s["set_id"],
                category=s["category"],
                templates=s["templates"],
                attribute_ids=s["attribute_ids"],
                attribute_display=s["attribute_display"],
                models=[
                    ModelSetBlock(
                        model=b["model"],
                        shares=b["shares"],
                        cb=None
                        if b["cb"] is None
                        else CbBlock(
                            value=b["cb"]["value"], variances=b["cb"]["variances"]
                        ),
                        kl=None
                        if b["kl"] is None
                        else KlBlock(
                            template_index=b["kl"]["template_index"],
                            attribute_ids=b["kl"]["attribute_ids"],
                            matrix=b["kl"]["matrix"],
                            max_value=b["kl"]["max_value"],
                            max_pair=b["kl"]["max_pair"],
                        ),
                        normprob=None
                        if b["normprob"] is None
                        else {
                            concept: NormProbBlock(
                                p_norm=block["p_norm"],
                                shares=block["shares"],
                                flags=block["flags"],
                            )
                            for concept, block in b["normprob"].items()
                        },
                    )
                    for b in s["models"]
                ],
            )
            for s in doc["sets"]
        ]
        comparisons = [
            ComparisonRow(
                category=c["category"],
                set_id=c["set_id"],
                metric=c["metric"],
                values=c["values"],
            )
            for c in doc.get("comparisons", [])
        ]
        aggregates = [
            AggregateRow(category=a["category"], metric=a["metric"], values=a["values"])
            for a in doc.get("aggregates", [])
        ]
        report = Report(
            timestamp=meta["timestamp"],
            tool_version=meta["tool_version"],
            models=models,
            sets=sets,
            comparisons=comparisons,
            aggregates=aggregates,
        )
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"bad report document: {exc}") from exc
    for s in report.sets:
        for b in s.models:
            _check_share_sums(b.shares, f"model '{b.model}', set '{s.set_id}'")
    return report


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def emit_csv(report: Report) -> bytes:
    """Long-format CSV: one scalar per row, rows sorted by all columns."""
    rows: list[tuple[str, str, str, str, str, str]] = []

    def add(category: str, set_id: str, metric: str, model: str, label: str, value: float) -> None:
        rows.append((category, set_id, metric, model, label, repr(float(value))))

    for s in report.sets:
        for b in s.models:
            if b.cb is not None:
                add(s.category, s.set_id, "cb", b.model, "", b.cb.value)
            for concept_id, vector in b.shares.items():
                for attr_id, value in vector.items():
                    add(
                        s.category,
                        s.set_id,
                        "share",
                        b.model,
                        f"{concept_id}/{attr_id}",
                        value,
                    )
            if b.kl is not None:
                add(
                    s.category,
                    s.set_id,
                    "kl_max",
                    b.model,
                    f"{b.kl.max_pair[0]}|{b.kl.max_pair[1]}",
                    b.kl.max_value,
                )
            if b.normprob is not None:
                for concept_id, block in b.normprob.items():
                    for attr_id, value in block.p_norm.items():
                        add(
                            s.category,
                            s.set_id,
                            "p_norm",
                            b.model,
                            f"{concept_id}/{attr_id}",
                            value,
                        )
                    for attr_id, value in block.shares.items():
                        add(
                            s.category,
                            s.set_id,
                            "norm_share",
                            b.model,
                            f"{concept_id}/{attr_id}",
                            value,
                        )
    for agg in report.aggregates:
        for model, value in agg.values.items():
            add(agg.category, "(all)", agg.metric, model, "", value)

    rows.sort()
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["category", "set_id", "metric", "model", "label", "value"])
    writer.writerows(rows)
    return buffer.getvalue().encode("utf-8")


# --------------------------------------------------------------------------
# SVG share bars
# --------------------------------------------------------------------------

_PALETTE = (
    "#4e79a7",
    "#f28e2b",
    "#59a14f",
    "#e15759",
    "#b07aa1",
    "#76b7b2",
    "#edc948",
    "#9c755f",
    "#bab0ac",
    "#ff9da7",
)

_BAR_WIDTH = 600.0
_BAR_HEIGHT = 32.0
_ROW_GAP = 14.0
_LABEL_WIDTH = 150.0
_MARGIN = 10.0


def emit_svg_shares(report: Report, set_id: str, concept_id: str) -> str:
    """One horizontal stacked bar per model; segment widths are proportional
    to shares and labeled with display name and the share to 3 decimals."""
    target = next((s for s in report.sets if s.set_id == set_id), None)
    if target is None:
        raise UnknownSetOrConcept(f"no template set '{set_id}' in report")
    if not any(concept_id in b.shares for b in target.models):
        raise UnknownSetOrConcept(
            f"no concept '{concept_id}' in set '{set_id}' shares"
        )

    row_count = len(target.models)
    width = _MARGIN * 2 + _LABEL_WIDTH + _BAR_WIDTH
    height = _MARGIN * 2 + row_count * _BAR_HEIGHT + (row_count - 1) * _ROW_GAP
    parts: list[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        f"<title>{escape(set_id)} / {escape(concept_id)}</title>",
    ]
    for row, block in enumerate(target.models):
        vector = block.shares.get(concept_id)
        if vector is None:
            raise UnknownSetOrConcept(
                f"model '{block.model}' lacks concept '{concept_id}' in set '{set_id}'"
            )
        y = _MARGIN + row * (_BAR_HEIGHT + _ROW_GAP)
        parts.append(
            f'<text x="{_MARGIN:.3f}" y="{y + _BAR_HEIGHT / 2:.3f}" '
            f'dominant-baseline="middle" font-family="sans-serif" '
            f'font-size="13">{escape(block.model)}</text>'
        )
        x = _MARGIN + _LABEL_WIDTH
        for i, attr_id in enumerate(target.attribute_ids):
            share = vector.get(attr_id, 0.0)
            seg_width = share * _BAR_WIDTH
            color = _PALETTE[i % len(_PALETTE)]
            display = target.attribute_display.get(attr_id, attr_id)
            parts.append(
                f'<rect x="{x:.3f}" y="{y:.3f}" width="{seg_width:.3f}" '
                f'height="{_BAR_HEIGHT:.3f}" fill="{color}" stroke="#ffffff" '
                f'stroke-width="0.5"/>'
            )
            parts.append(
                f'<text x="{x + seg_width / 2:.3f}" y="{y + _BAR_HEIGHT / 2:.3f}" '
                f'text-anchor="middle" dominant-baseline="middle" '
                f'font-family="sans-serif" font-size="11" fill="#ffffff">'
                f"{escape(display)} {share:.3f}</text>"
            )
            x += seg_width
    parts.append("</svg>")
    return "\n".join(parts)

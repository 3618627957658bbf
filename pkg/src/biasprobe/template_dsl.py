"""Declension-aware sentence templates.

Syntax: ``{name}`` is a slot, ``{name@other}`` is a slot whose surface form
must agree with the term filling slot ``other``, and ``{{`` / ``}}`` are
literal braces. Parsing is lossless: rendering the parsed segments
reproduces the source exactly.

A template set groups similarly-worded template variants that share slot
bindings; expanding it over a lexicon produces every grammatical sentence
in the cartesian product of attribute terms and concept words.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import Any, BinaryIO, Iterable, Mapping, Sequence, Union

from .errors import (
    BadAgreementSyntax,
    EmptySet,
    EmptySlotName,
    InconsistentSlotNamesAcrossVariants,
    LineWithoutMarker,
    NestedBrace,
    NoMatchingForm,
    SchemaViolation,
    TooManyAttributeSlots,
    UnbalancedBrace,
    UnknownSet,
    UnknownSlot,
    ZeroOrMultipleAttributeSlots,
)
from .lexicon import NO_FEATURES, Category, Lexicon, select_form
from .lexicon import _parse_json, _require  # shared document helpers

__all__ = [
    "Literal",
    "Slot",
    "Segment",
    "Template",
    "Binding",
    "TemplateSet",
    "FilledSentence",
    "parse_template",
    "render_template",
    "bind_template_set",
    "expand",
    "import_corpus_templates",
    "load_template_set",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Slot:
    name: str
    agree_with: str | None = None


Segment = Union[Literal, Slot]


@dataclass(frozen=True)
class Template:
    raw: str
    segments: tuple[Segment, ...]

    def slot_names(self) -> list[str]:
        """Slot names in order of occurrence (with repeats)."""
        return [s.name for s in self.segments if isinstance(s, Slot)]


@dataclass(frozen=True)
class Binding:
    kind: str  # "attribute_set" | "concept_set"
    set_name: str


@dataclass(frozen=True)
class TemplateSet:
    id: str
    category: Category
    templates: tuple[Template, ...]
    bindings: Mapping[str, Binding]

    @property
    def attribute_slot(self) -> str:
        for name, b in self.bindings.items():
            if b.kind == "attribute_set":
                return name
        raise ZeroOrMultipleAttributeSlots("no attribute-bound slot")

    @property
    def concept_slot(self) -> str | None:
        for name, b in self.bindings.items():
            if b.kind == "concept_set":
                return name
        return None

    @property
    def attribute_set_name(self) -> str:
        return self.bindings[self.attribute_slot].set_name

    @property
    def concept_set_name(self) -> str | None:
        slot = self.concept_slot
        return self.bindings[slot].set_name if slot is not None else None


@dataclass(frozen=True)
class FilledSentence:
    text: str
    template_index: int
    attribute_id: str
    concept_id: str | None
    slot_spans: tuple[tuple[str, int, int], ...]


# --------------------------------------------------------------------------
# Parsing and rendering
# --------------------------------------------------------------------------


def parse_template(text: str) -> Template:
    """Parse template source into segments.

    Raises UnbalancedBrace, EmptySlotName, NestedBrace or
    BadAgreementSyntax, each carrying a character offset. Errors inside a
    slot report the offset of the slot's content (right after the ``{``).
    """
    segments: list[Segment] = []
    literal: list[str] = []

    def flush() -> None:
        if literal:
            segments.append(Literal("".join(literal)))
            literal.clear()

    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                literal.append("{")
                i += 2
                continue
            body_start = i + 1
            name_chars: list[str] = []
            agree_chars: list[str] = []
            seen_at = False
            k = body_start
            while True:
                if k >= n:
                    if seen_at:
                        raise BadAgreementSyntax("unterminated agreement", body_start)
                    raise UnbalancedBrace("unterminated slot", body_start)
                c = text[k]
                if c == "}":
                    break
                if c == "{":
                    raise NestedBrace("'{' inside slot", k)
                if c == "@":
                    if seen_at:
                        raise BadAgreementSyntax("second '@' in slot", body_start)
                    seen_at = True
                elif seen_at:
                    agree_chars.append(c)
                else:
                    name_chars.append(c)
                k += 1
            name = "".join(name_chars)
            if not name:
                raise EmptySlotName("slot name is empty", body_start)
            if seen_at and not agree_chars:
                raise BadAgreementSyntax("empty agreement target", body_start)
            flush()
            segments.append(Slot(name, "".join(agree_chars) if seen_at else None))
            i = k + 1
        elif ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                literal.append("}")
                i += 2
                continue
            raise UnbalancedBrace("unescaped '}'", i)
        else:
            literal.append(ch)
            i += 1
    flush()
    template = Template(raw=text, segments=tuple(segments))
    assert render_template(template) == text
    return template


def render_template(template: Template) -> str:
    """Inverse of parse_template; reproduces the source string exactly."""
    parts: list[str] = []
    for seg in template.segments:
        if isinstance(seg, Literal):
            parts.append(seg.text.replace("{", "{{").replace("}", "}}"))
        elif seg.agree_with is None:
            parts.append(f"{{{seg.name}}}")
        else:
            parts.append(f"{{{seg.name}@{seg.agree_with}}}")
    return "".join(parts)


# --------------------------------------------------------------------------
# Binding
# --------------------------------------------------------------------------


def bind_template_set(
    templates: Sequence[Template],
    bindings: Mapping[str, Binding],
    lexicon: Lexicon,
    *,
    set_id: str,
    category: Category,
) -> TemplateSet:
    """Attach bindings to template variants, checking every invariant.

    Raises UnknownSlot, UnknownSet, ZeroOrMultipleAttributeSlots or
    InconsistentSlotNamesAcrossVariants.
    """
    if not templates:
        raise EmptySet("template set needs ≥ 1 template", path=set_id)

    attr_slots = [n for n, b in bindings.items() if b.kind == "attribute_set"]
    concept_slots = [n for n, b in bindings.items() if b.kind == "concept_set"]
    if len(attr_slots) != 1:
        raise ZeroOrMultipleAttributeSlots(
            f"bindings must name exactly one attribute-bound slot, got {len(attr_slots)}"
        )
    if len(concept_slots) > 1:
        raise SchemaViolation(
            "at most one concept-bound slot is supported", path=set_id
        )
    attr_slot = attr_slots[0]

    for slot_name, binding in bindings.items():
        pool = (
            lexicon.attribute_sets
            if binding.kind == "attribute_set"
            else lexicon.concept_sets
        )
        if binding.set_name not in pool:
            raise UnknownSet(
                f"slot '{slot_name}' is bound to unknown {binding.kind} "
                f"'{binding.set_name}'"
            )

    reference_names: set[str] | None = None
    for idx, template in enumerate(templates):
        used = template.slot_names()
        for name in used:
            if name not in bindings:
                raise UnknownSlot(f"template {idx} uses unbound slot '{name}'")
        if used.count(attr_slot) != 1:
            raise ZeroOrMultipleAttributeSlots(
                f"template {idx} must use attribute slot '{attr_slot}' exactly "
                f"once, found {used.count(attr_slot)}"
            )
        for seg in template.segments:
            if isinstance(seg, Slot) and seg.agree_with is not None:
                if seg.agree_with != attr_slot:
                    raise UnknownSlot(
                        f"template {idx}: agreement target '{seg.agree_with}' "
                        f"is not the attribute slot '{attr_slot}'"
                    )
        names = set(used)
        if reference_names is None:
            reference_names = names
        elif names != reference_names:
            raise InconsistentSlotNamesAcrossVariants(
                f"template {idx} uses slots {sorted(names)}, "
                f"expected {sorted(reference_names)}"
            )
    assert reference_names is not None
    unused = set(bindings) - reference_names
    if unused:
        raise SchemaViolation(
            f"bindings for unused slots: {sorted(unused)}", path=set_id
        )

    return TemplateSet(
        id=set_id,
        category=category,
        templates=tuple(templates),
        bindings=dict(bindings),
    )


# --------------------------------------------------------------------------
# Expansion
# --------------------------------------------------------------------------


def _fill(
    template: Template,
    attr_slot: str,
    term: Any,
    concept: Any,
) -> tuple[str, tuple[tuple[str, int, int], ...]]:
    parts: list[str] = []
    spans: list[tuple[str, int, int]] = []
    pos = 0
    for seg in template.segments:
        if isinstance(seg, Literal):
            surface = seg.text
        else:
            if seg.name == attr_slot:
                surface = select_form(term.forms, term.features)
            else:
                features = term.features if seg.agree_with == attr_slot else NO_FEATURES
                surface = select_form(concept.forms, features)
            spans.append((seg.name, pos, pos + len(surface)))
        parts.append(surface)
        pos += len(surface)
    return "".join(parts), tuple(spans)


def expand(template_set: TemplateSet, lexicon: Lexicon) -> list[FilledSentence]:
    """Render every (template, concept, attribute) combination.

    Output order is (template index, concept index, attribute index) and is
    stable across runs. Concept slots marked ``@`` on the attribute slot are
    rendered with the attribute term's features; unmarked slots fall back to
    the featureless cascade (usually the ``default`` form).
    """
    attr_slot = template_set.attribute_slot
    attr_set = lexicon.attribute_sets[template_set.attribute_set_name]
    concept_set_name = template_set.concept_set_name
    concepts: Sequence[Any]
    if concept_set_name is None:
        concepts = [None]
    else:
        concepts = lexicon.concept_sets[concept_set_name].words

    out: list[FilledSentence] = []
    for ti, template in enumerate(template_set.templates):
        for concept in concepts:
            for term in attr_set.terms:
                try:
                    text, spans = _fill(template, attr_slot, term, concept)
                except NoMatchingForm as exc:
                    raise exc.with_context(
                        template_index=ti,
                        attribute_id=term.id,
                        concept_id=concept.id if concept is not None else None,
                    ) from exc
                out.append(
                    FilledSentence(
                        text=text,
                        template_index=ti,
                        attribute_id=term.id,
                        concept_id=concept.id if concept is not None else None,
                        slot_spans=spans,
                    )
                )
    return out


# --------------------------------------------------------------------------
# Corpus import
# --------------------------------------------------------------------------


def _escape_braces(text: str) -> str:
    return text.replace("{", "{{").replace("}", "}}")


def import_corpus_templates(
    lines: Iterable[str],
    slot_marker: str = "[SLOT]",
    bindings: Mapping[str, Binding] | None = None,
    *,
    strict: bool = True,
) -> list[Template]:
    """Turn annotator-prepared corpus lines into single-slot templates.

    Each line must contain the marker exactly once; the marker becomes the
    attribute slot named by `bindings`. In strict mode, offending lines
    raise LineWithoutMarker / TooManyAttributeSlots; otherwise they are
    skipped with a logged warning. Blank lines are ignored.
    """
    if bindings is None:
        raise ValueError("bindings are required to name the attribute slot")
    attr_slots = [n for n, b in bindings.items() if b.kind == "attribute_set"]
    if len(attr_slots) != 1:
        raise ZeroOrMultipleAttributeSlots(
            f"bindings must name exactly one attribute-bound slot, got {len(attr_slots)}"
        )
    slot = attr_slots[0]

    templates: list[Template] = []
    for lineno, raw_line in enumerate(lines, start=1):
        line = raw_line.rstrip("\n")
        if not line.strip():
            continue
        count = line.count(slot_marker)
        if count == 0:
            if strict:
                raise LineWithoutMarker(f"no '{slot_marker}' marker", lineno)
            logger.warning("corpus line %d skipped: no '%s' marker", lineno, slot_marker)
            continue
        if count > 1:
            if strict:
                raise TooManyAttributeSlots(
                    f"{count} '{slot_marker}' markers, expected 1", lineno
                )
            logger.warning(
                "corpus line %d skipped: %d '%s' markers", lineno, count, slot_marker
            )
            continue
        before, after = line.split(slot_marker)
        source = f"{_escape_braces(before)}{{{slot}}}{_escape_braces(after)}"
        templates.append(parse_template(source))
    return templates


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def _parse_bindings(raw: Any, path: str) -> dict[str, Binding]:
    if not isinstance(raw, dict) or not raw:
        raise SchemaViolation("bindings must be a non-empty object", path=path)
    bindings: dict[str, Binding] = {}
    for slot_name, spec in raw.items():
        bpath = f"{path}.{slot_name}"
        if not isinstance(spec, dict) or len(spec) != 1:
            raise SchemaViolation(
                "binding must be {'attribute_set': name} or {'concept_set': name}",
                path=bpath,
            )
        kind, set_name = next(iter(spec.items()))
        if kind not in ("attribute_set", "concept_set") or not isinstance(set_name, str):
            raise SchemaViolation(f"bad binding kind '{kind}'", path=bpath)
        bindings[slot_name] = Binding(kind=kind, set_name=set_name)
    return bindings


def load_template_set(
    source: bytes | str | BinaryIO,
    lexicon: Lexicon,
    *,
    base_dir: str = ".",
    corpus_strict: bool = True,
) -> TemplateSet:
    """Load a template set document and bind it against `lexicon`.

    The document either lists ``templates`` inline or points at a
    ``corpus_file`` of marker-annotated lines (resolved against
    `base_dir`), with an optional ``slot_marker`` (default ``[SLOT]``).
    """
    doc = _parse_json(source)
    if not isinstance(doc, dict):
        raise SchemaViolation("top-level value must be an object", path="")
    set_id = _require(doc, "id", str, "")
    try:
        category = Category(_require(doc, "category", str, ""))
    except ValueError as exc:
        raise SchemaViolation(f"bad category: {exc}", path="category") from exc
    bindings = _parse_bindings(doc.get("bindings"), "bindings")

    if "templates" in doc and "corpus_file" in doc:
        raise SchemaViolation(
            "use either 'templates' or 'corpus_file', not both", path=""
        )
    if "corpus_file" in doc:
        corpus_path = _require(doc, "corpus_file", str, "")
        marker = doc.get("slot_marker", "[SLOT]")
        if not isinstance(marker, str) or not marker:
            raise SchemaViolation("slot_marker must be non-empty", path="slot_marker")
        with io.open(f"{base_dir}/{corpus_path}", "r", encoding="utf-8") as handle:
            templates = import_corpus_templates(
                handle, marker, bindings, strict=corpus_strict
            )
    else:
        raw_templates = _require(doc, "templates", list, "")
        templates = []
        for i, raw in enumerate(raw_templates):
            if not isinstance(raw, str):
                raise SchemaViolation("template must be a string", path=f"templates[{i}]")
            templates.append(parse_template(raw))

    return bind_template_set(
        templates, bindings, lexicon, set_id=set_id, category=category
    )


def load_template_set_file(
    path: str, lexicon: Lexicon, *, corpus_strict: bool = True
) -> TemplateSet:
    base_dir = path.rsplit("/", 1)[0] if "/" in path else "."
    with io.open(path, "rb") as handle:
        return load_template_set(
            handle, lexicon, base_dir=base_dir, corpus_strict=corpus_strict
        )

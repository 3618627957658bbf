"""Word lists with grammatical features and inflection tables.

A lexicon bundles attribute sets (the protected-class terms a probe varies
over) and concept sets (the words a probe pairs them with). Every entry
carries a form table keyed by ``<gender>.<number>`` or ``default`` so that
templates can pick the surface string that agrees with the attribute term.

File format (UTF-8 JSON)::

    {
      "language": "el",
      "attribute_sets": {
        "gender": {
          "category": "gender",
          "terms": [
            {"id": "men", "display": "men",
             "features": {"gender": "masc", "number": "pl"},
             "forms": {"default": "άνδρες"}}
          ]
        }
      },
      "concept_sets": {
        "neg_adj": {
          "words": [
            {"id": "hysterical",
             "forms": {"masc.pl": "υστερικοί", "fem.pl": "υστερικές"}}
          ]
        }
      }
    }

Lexicons are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, BinaryIO, Iterable, Mapping

from .errors import (
    DuplicateId,
    EmptySet,
    MalformedDocument,
    NoMatchingForm,
    SchemaViolation,
)

__all__ = [
    "Gender",
    "Number",
    "Category",
    "FeatureBundle",
    "AttributeTerm",
    "AttributeSet",
    "ConceptWord",
    "ConceptSet",
    "Lexicon",
    "Diagnostic",
    "load_lexicon",
    "serialize_lexicon",
    "select_form",
    "validate_lexicon",
]


class Gender(str, Enum):
    MASC = "masc"
    FEM = "fem"
    NEUT = "neut"
    NONE = "none"


class Number(str, Enum):
    SG = "sg"
    PL = "pl"
    NONE = "none"


class Category(str, Enum):
    GENDER = "gender"
    RELIGION = "religion"
    ETHNICITY = "ethnicity"
    OTHER = "other"


_FORM_KEY_RE = re.compile(r"^(default|(masc|fem|neut|none)\.(sg|pl|none))$")


@dataclass(frozen=True)
class FeatureBundle:
    """Grammatical features driving declension. Unused features are `none`."""

    gender: Gender = Gender.NONE
    number: Number = Number.NONE

    def form_key(self) -> str:
        return f"{self.gender.value}.{self.number.value}"


NO_FEATURES = FeatureBundle()


@dataclass(frozen=True)
class AttributeTerm:
    """One protected-class term, e.g. a demonym or gender noun."""

    id: str
    display: str
    features: FeatureBundle
    forms: Mapping[str, str]


@dataclass(frozen=True)
class AttributeSet:
    """An ordered set of at least two attribute terms to compare."""

    name: str
    category: Category
    terms: tuple[AttributeTerm, ...]

    def term_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.terms)


@dataclass(frozen=True)
class ConceptWord:
    """A probing word (adjective, profession, ...) with agreement forms."""

    id: str
    forms: Mapping[str, str]


@dataclass(frozen=True)
class ConceptSet:
    name: str
    words: tuple[ConceptWord, ...]

    def word_ids(self) -> tuple[str, ...]:
        return tuple(w.id for w in self.words)


@dataclass(frozen=True)
class Lexicon:
    language: str
    attribute_sets: Mapping[str, AttributeSet] = field(default_factory=dict)
    concept_sets: Mapping[str, ConceptSet] = field(default_factory=dict)

    def uses_agreement(self) -> bool:
        """True when any entry carries a form key other than `default`."""
        for aset in self.attribute_sets.values():
            for term in aset.terms:
                if any(k != "default" for k in term.forms):
                    return True
        for cset in self.concept_sets.values():
            for word in cset.words:
                if any(k != "default" for k in word.forms):
                    return True
        return False


# --------------------------------------------------------------------------
# Form selection
# --------------------------------------------------------------------------


def select_form(forms: Mapping[str, str], features: FeatureBundle) -> str:
    """Pick the surface string agreeing with `features`.

    The cascade tries the exact `gender.number` key, then gender alone,
    then number alone, then `default`. Raises NoMatchingForm when nothing
    matches.
    """
    g, n = features.gender.value, features.number.value
    tried: list[str] = []
    for key in (f"{g}.{n}", f"{g}.none", f"none.{n}", "default"):
        if key in tried:
            continue
        tried.append(key)
        if key in forms:
            return forms[key]
    raise NoMatchingForm(
        f"no form for features ({g}, {n}); tried {', '.join(tried)}; "
        f"available: {', '.join(sorted(forms))}",
        tried=tuple(tried),
    )


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    d: dict[str, Any] = {}
    for k, v in pairs:
        if k in d:
            raise MalformedDocument(f"duplicate object key '{k}'")
        d[k] = v
    return d


def _read_source(source: bytes | str | BinaryIO) -> str:
    if isinstance(source, bytes):
        raw = source
    elif isinstance(source, str):
        return source
    else:
        raw = source.read()
        if isinstance(raw, str):
            return raw
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedDocument(f"not valid UTF-8: {exc}") from exc


def _parse_json(source: bytes | str | BinaryIO) -> Any:
    text = _read_source(source)
    try:
        return json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except MalformedDocument:
        raise
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc


def _require(obj: Mapping[str, Any], key: str, typ: type, path: str) -> Any:
    if key not in obj:
        raise SchemaViolation(f"missing required field '{key}'", path=path)
    value = obj[key]
    if not isinstance(value, typ) or (typ is not bool and isinstance(value, bool)):
        raise SchemaViolation(
            f"field '{key}' must be {typ.__name__}", path=f"{path}.{key}"
        )
    return value


def _parse_features(obj: Any, path: str) -> FeatureBundle:
    if not isinstance(obj, dict):
        raise SchemaViolation("features must be an object", path=path)
    try:
        gender = Gender(obj.get("gender", "none"))
        number = Number(obj.get("number", "none"))
    except ValueError as exc:
        raise SchemaViolation(f"bad feature value: {exc}", path=path) from exc
    return FeatureBundle(gender=gender, number=number)


def _parse_forms(obj: Any, path: str) -> dict[str, str]:
    if not isinstance(obj, dict) or not obj:
        raise SchemaViolation("forms must be a non-empty object", path=path)
    forms: dict[str, str] = {}
    for key, surface in obj.items():
        if not _FORM_KEY_RE.match(key):
            raise SchemaViolation(
                f"bad form-key '{key}' (expected '<gender>.<number>' or 'default')",
                path=f"{path}.{key}",
            )
        if not isinstance(surface, str) or not surface.strip():
            raise SchemaViolation(
                "surface string must be non-empty", path=f"{path}.{key}"
            )
        forms[key] = surface
    return forms


def _check_unique_ids(ids: Iterable[str], path: str) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(f"duplicate id '{i}'", path=path)
        seen.add(i)


def load_lexicon(source: bytes | str | BinaryIO) -> Lexicon:
    """Parse and validate a lexicon document.

    Raises MalformedDocument, SchemaViolation, DuplicateId or EmptySet,
    each naming the offending path.
    """
    doc = _parse_json(source)
    if not isinstance(doc, dict):
        raise SchemaViolation("top-level value must be an object", path="")
    language = _require(doc, "language", str, "")
    if not language:
        raise SchemaViolation("language must be non-empty", path="language")

    attribute_sets: dict[str, AttributeSet] = {}
    for name, raw_set in _require(doc, "attribute_sets", dict, "").items():
        path = f"attribute_sets.{name}"
        if not isinstance(raw_set, dict):
            raise SchemaViolation("attribute set must be an object", path=path)
        try:
            category = Category(_require(raw_set, "category", str, path))
        except ValueError as exc:
            raise SchemaViolation(f"bad category: {exc}", path=f"{path}.category")
        raw_terms = _require(raw_set, "terms", list, path)
        terms: list[AttributeTerm] = []
        for i, raw_term in enumerate(raw_terms):
            tpath = f"{path}.terms[{i}]"
            if not isinstance(raw_term, dict):
                raise SchemaViolation("term must be an object", path=tpath)
            term_id = _require(raw_term, "id", str, tpath)
            if not term_id:
                raise SchemaViolation("id must be non-empty", path=f"{tpath}.id")
            display = raw_term.get("display", term_id)
            if not isinstance(display, str):
                raise SchemaViolation("display must be a string", path=f"{tpath}.display")
            features = _parse_features(
                _require(raw_term, "features", dict, tpath), f"{tpath}.features"
            )
            forms = _parse_forms(raw_term.get("forms"), f"{tpath}.forms")
            terms.append(
                AttributeTerm(id=term_id, display=display, features=features, forms=forms)
            )
        if len(terms) < 2:
            raise EmptySet("attribute set needs ≥ 2 terms", path=path)
        _check_unique_ids((t.id for t in terms), path)
        attribute_sets[name] = AttributeSet(
            name=name, category=category, terms=tuple(terms)
        )

    concept_sets: dict[str, ConceptSet] = {}
    for name, raw_set in _require(doc, "concept_sets", dict, "").items():
        path = f"concept_sets.{name}"
        if not isinstance(raw_set, dict):
            raise SchemaViolation("concept set must be an object", path=path)
        raw_words = _require(raw_set, "words", list, path)
        words: list[ConceptWord] = []
        for i, raw_word in enumerate(raw_words):
            wpath = f"{path}.words[{i}]"
            if not isinstance(raw_word, dict):
                raise SchemaViolation("word must be an object", path=wpath)
            word_id = _require(raw_word, "id", str, wpath)
            if not word_id:
                raise SchemaViolation("id must be non-empty", path=f"{wpath}.id")
            forms = _parse_forms(raw_word.get("forms"), f"{wpath}.forms")
            words.append(ConceptWord(id=word_id, forms=forms))
        if not words:
            raise EmptySet("concept set needs ≥ 1 word", path=path)
        _check_unique_ids((w.id for w in words), path)
        concept_sets[name] = ConceptSet(name=name, words=tuple(words))

    return Lexicon(
        language=language,
        attribute_sets=attribute_sets,
        concept_sets=concept_sets,
    )


def serialize_lexicon(lexicon: Lexicon) -> bytes:
    """Emit the JSON document form; load_lexicon(serialize_lexicon(x)) == x."""
    doc = {
        "language": lexicon.language,
        "attribute_sets": {
            name: {
                "category": aset.category.value,
                "terms": [
                    {
                        "id": t.id,
                        "display": t.display,
                        "features": {
                            "gender": t.features.gender.value,
                            "number": t.features.number.value,
                        },
                        "forms": dict(t.forms),
                    }
                    for t in aset.terms
                ],
            }
            for name, aset in lexicon.attribute_sets.items()
        },
        "concept_sets": {
            name: {"words": [{"id": w.id, "forms": dict(w.forms)} for w in cset.words]}
            for name, cset in lexicon.concept_sets.items()
        },
    }
    return json.dumps(doc, ensure_ascii=False, indent=2).encode("utf-8")


def load_lexicon_file(path: str) -> Lexicon:
    with io.open(path, "rb") as handle:
        return load_lexicon(handle)


# --------------------------------------------------------------------------
# Validation diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


def _check_forms(forms: Mapping[str, str], path: str, out: list[Diagnostic]) -> None:
    if not forms:
        out.append(Diagnostic("error", path, "forms is empty"))
        return
    for key, surface in forms.items():
        if not _FORM_KEY_RE.match(key):
            out.append(Diagnostic("error", f"{path}.{key}", f"bad form-key '{key}'"))
        if not isinstance(surface, str) or not surface.strip():
            out.append(Diagnostic("error", f"{path}.{key}", "empty surface string"))


def validate_lexicon(lexicon: Lexicon) -> list[Diagnostic]:
    """Check every invariant on an in-memory lexicon.

    Returns an empty list when all invariants hold; never raises. Warnings
    do not count as invariant violations.
    """
    out: list[Diagnostic] = []
    if not lexicon.language:
        out.append(Diagnostic("error", "language", "language must be non-empty"))
    agreement = lexicon.uses_agreement()

    for name, aset in lexicon.attribute_sets.items():
        path = f"attribute_sets.{name}"
        if len(aset.terms) < 2:
            out.append(Diagnostic("error", path, "attribute set needs ≥ 2 terms"))
        ids = [t.id for t in aset.terms]
        for dup in sorted({i for i in ids if ids.count(i) > 1}):
            out.append(Diagnostic("error", path, f"duplicate id '{dup}'"))
        for i, term in enumerate(aset.terms):
            _check_forms(term.forms, f"{path}.terms[{i}].forms", out)
        if (
            agreement
            and len(aset.terms) >= 2
            and len({t.features for t in aset.terms}) == 1
        ):
            out.append(
                Diagnostic(
                    "warning",
                    path,
                    "all terms share one feature bundle; declension cannot "
                    "distinguish them in this lexicon",
                )
            )

    for name, cset in lexicon.concept_sets.items():
        path = f"concept_sets.{name}"
        if not cset.words:
            out.append(Diagnostic("error", path, "concept set needs ≥ 1 word"))
        ids = [w.id for w in cset.words]
        for dup in sorted({i for i in ids if ids.count(i) > 1}):
            out.append(Diagnostic("error", path, f"duplicate id '{dup}'"))
        for i, word in enumerate(cset.words):
            _check_forms(word.forms, f"{path}.words[{i}].forms", out)

    return out

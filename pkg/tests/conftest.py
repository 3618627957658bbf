"""Shared fixtures: small lexicons, template sets, and fixture builders."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from biasprobe.backend import FixtureBackend
from biasprobe.lexicon import Lexicon, load_lexicon
from biasprobe.template_dsl import TemplateSet, load_template_set

# English-flavored lexicon whose surfaces are single whitespace tokens, so
# the fixture tokenizer sees one token per word.
PLAIN_LEXICON_DOC = {
    "language": "en",
    "attribute_sets": {
        "gender": {
            "category": "gender",
            "terms": [
                {
                    "id": "men",
                    "display": "men",
                    "features": {"gender": "masc", "number": "pl"},
                    "forms": {"default": "men"},
                },
                {
                    "id": "women",
                    "display": "women",
                    "features": {"gender": "fem", "number": "pl"},
                    "forms": {"default": "women"},
                },
            ],
        }
    },
    "concept_sets": {
        "neg_adj": {"words": [{"id": "rude", "forms": {"default": "rude"}}]}
    },
}

# Greek-style lexicon: the concept word declines for gender.
GREEK_LEXICON_DOC = {
    "language": "el",
    "attribute_sets": {
        "gender": {
            "category": "gender",
            "terms": [
                {
                    "id": "men",
                    "display": "άνδρες",
                    "features": {"gender": "masc", "number": "pl"},
                    "forms": {"default": "άνδρες"},
                },
                {
                    "id": "women",
                    "display": "γυναίκες",
                    "features": {"gender": "fem", "number": "pl"},
                    "forms": {"default": "γυναίκες"},
                },
            ],
        }
    },
    "concept_sets": {
        "neg_adj": {
            "words": [
                {
                    "id": "hysterical",
                    "forms": {"masc.pl": "υστερικοί", "fem.pl": "υστερικές"},
                },
                {
                    "id": "indecisive",
                    "forms": {"masc.pl": "αναποφάσιστοι", "fem.pl": "αναποφάσιστες"},
                },
            ]
        }
    },
}

PLAIN_VOCAB = [
    "men",
    "women",
    "are",
    "rude",
    "kind",
    ".",
    "why",
    "so",
    "?",
    "[MASK]",
]


def template_set_doc(
    set_id: str = "gender_neg",
    category: str = "gender",
    templates: list[str] | None = None,
    bindings: dict | None = None,
) -> dict:
    return {
        "id": set_id,
        "category": category,
        "bindings": bindings
        or {"a": {"attribute_set": "gender"}, "c": {"concept_set": "neg_adj"}},
        "templates": templates or ["{a} are {c@a} ."],
    }


def load_lexicon_doc(doc: dict) -> Lexicon:
    return load_lexicon(json.dumps(doc).encode("utf-8"))


def load_set_doc(doc: dict, lexicon: Lexicon) -> TemplateSet:
    return load_template_set(json.dumps(doc).encode("utf-8"), lexicon)


def merge_rows(rows: list[dict]) -> list[dict]:
    """Merge rows sharing a (context, position) key into one prob table."""
    merged: dict[tuple[tuple[str, ...], int], dict[str, float]] = {}
    for row in rows:
        key = (tuple(row["context"]), row["position"])
        probs = merged.setdefault(key, {})
        for token, p in row["probs"].items():
            if token in probs and probs[token] != p:
                raise ValueError(f"conflicting prob for {token} at {key}")
            probs[token] = p
    return [
        {"context": list(ctx), "position": pos, "probs": probs}
        for (ctx, pos), probs in merged.items()
    ]


def pl_fixture(vocab: list[str], sentence_probs: dict[str, list[float]]) -> FixtureBackend:
    """Fixture assigning the given true-token probability at each position."""
    rows = []
    for sentence, probs in sentence_probs.items():
        words = sentence.split()
        assert len(words) == len(probs)
        for pos, p in enumerate(probs):
            context = list(words)
            context[pos] = "[MASK]"
            rows.append({"context": context, "position": pos, "probs": {words[pos]: p}})
    return FixtureBackend(vocab, merge_rows(rows))


@pytest.fixture
def plain_lexicon() -> Lexicon:
    return load_lexicon_doc(PLAIN_LEXICON_DOC)


@pytest.fixture
def greek_lexicon() -> Lexicon:
    return load_lexicon_doc(GREEK_LEXICON_DOC)


@pytest.fixture
def plain_set(plain_lexicon: Lexicon) -> TemplateSet:
    return load_set_doc(template_set_doc(), plain_lexicon)


@pytest.fixture
def uniform_backend() -> FixtureBackend:
    return FixtureBackend(PLAIN_VOCAB, [])


def write_json(directory: Path, name: str, doc: dict) -> Path:
    path = directory / name
    path.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")

"""Acceptance gate: one test per acceptance criterion.

Each test is self-contained, runs offline against fixture backends, and
checks its stated tolerance. Expected values come from independent
oracles (brute-force sums, stdlib variance, hand arithmetic), never from
the code paths under test. A summary line per criterion is printed at the
end of the run (see conftest).
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from biasprobe.backend import FixtureBackend
from biasprobe.cli import main
from biasprobe.lexicon import select_form
from biasprobe.metrics import cb_score, kl_divergence, normalized_word_probability
from biasprobe.scoring import normalized_shares, pseudo_log_likelihood, score_template_set
from biasprobe.template_dsl import expand, parse_template, render_template

from conftest import (
    GREEK_LEXICON_DOC,
    PLAIN_LEXICON_DOC,
    PLAIN_VOCAB,
    load_lexicon_doc,
    load_set_doc,
    template_set_doc,
    write_json,
)
from test_metrics import dist
from test_scoring import make_tensor


# --------------------------------------------------------------------------
# Criterion: PL oracle
# --------------------------------------------------------------------------


def _random_pl_case(rng: np.random.Generator):
    vocab_size = int(rng.integers(3, 11))
    vocab = [f"w{i}" for i in range(vocab_size)]
    length = int(rng.integers(1, 8))
    words = [vocab[int(i)] for i in rng.integers(0, vocab_size, size=length)]
    rows = []
    expected_logps = []
    for pos in range(length):
        context = list(words)
        context[pos] = "[MASK]"
        k = int(rng.integers(1, vocab_size + 1))
        listed = [str(t) for t in rng.choice(vocab, size=k, replace=False)]
        raw = rng.uniform(0.05, 1.0, size=k)
        if k == vocab_size:
            scaled = raw / raw.sum()
        else:
            scaled = raw / raw.sum() * float(rng.uniform(0.3, 0.95))
        probs = {t: float(v) for t, v in zip(listed, scaled)}
        rows.append({"context": context, "position": pos, "probs": probs})
        true_token = words[pos]
        if true_token in probs:
            p = probs[true_token]
        else:
            p = (1.0 - sum(probs.values())) / (vocab_size - len(probs))
        expected_logps.append(math.log(p))
    return vocab, rows, " ".join(words), math.fsum(expected_logps)


def test_pl_matches_brute_force_oracle_on_randomized_fixtures():
    rng = np.random.default_rng(20260810)
    started = time.perf_counter()
    for _ in range(120):
        vocab, rows, sentence, expected = _random_pl_case(rng)
        backend = FixtureBackend(vocab, rows)
        score = pseudo_log_likelihood(backend, sentence)
        assert math.isclose(score.log_pl, expected, rel_tol=1e-12, abs_tol=1e-12)
        assert math.isclose(
            score.log_pl,
            math.fsum(lp for _, _, lp in score.per_token_logp),
            rel_tol=1e-12,
        )
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"PL oracle sweep took {elapsed:.2f}s"


# --------------------------------------------------------------------------
# Criterion: CB oracle
# --------------------------------------------------------------------------


def _cb_oracle(values: np.ndarray) -> float:
    cells = [
        statistics.pvariance(values[t, a, :].tolist())
        for t in range(values.shape[0])
        for a in range(values.shape[1])
    ]
    return sum(cells) / len(cells)


def test_cb_matches_mean_of_population_variances_oracle():
    rng = np.random.default_rng(77)
    for _ in range(200):
        t = int(rng.integers(1, 6))
        a = int(rng.integers(1, 6))
        n = int(rng.integers(2, 6))
        values = rng.uniform(-60, 0, size=(t, a, n))
        result = cb_score(make_tensor(values))
        assert math.isclose(result.cb, _cb_oracle(values), rel_tol=1e-12, abs_tol=1e-12)

    # constant tensors give exactly zero
    for fill in (-1.5, 0.0, -123.456):
        assert cb_score(make_tensor(np.full((3, 4, 5), fill))).cb == 0.0

    # log-shift invariance per (t, a) cell
    for _ in range(50):
        values = rng.uniform(-60, 0, size=(3, 2, 4))
        shifted = values.copy()
        for t in range(3):
            for a in range(2):
                shifted[t, a, :] += rng.uniform(-30, 30)
        assert math.isclose(
            cb_score(make_tensor(values)).cb,
            cb_score(make_tensor(shifted)).cb,
            rel_tol=1e-12,
            abs_tol=1e-12,
        )


# --------------------------------------------------------------------------
# Criterion: KL properties
# --------------------------------------------------------------------------


def test_kl_properties_over_thousand_random_pairs():
    rng = np.random.default_rng(4242)
    for _ in range(1000):
        size = int(rng.integers(2, 16))
        p = rng.dirichlet(np.ones(size))
        q = rng.dirichlet(np.ones(size))
        forward = kl_divergence(dist(*p), dist(*q))
        assert forward >= 0.0
        self_kl = kl_divergence(dist(*p), dist(*p))
        assert abs(self_kl) <= 1e-12

    hand = kl_divergence(dist(0.5, 0.5), dist(0.25, 0.75))
    assert abs(hand - 0.14384) <= 1e-5


# --------------------------------------------------------------------------
# Criterion: shares
# --------------------------------------------------------------------------


def test_shares_sum_to_one_and_uniform_fixture_is_unbiased():
    rng = np.random.default_rng(5150)
    for _ in range(200):
        t = int(rng.integers(1, 6))
        a = int(rng.integers(1, 5))
        n = int(rng.integers(2, 7))
        tensor = make_tensor(rng.uniform(-80, 0, size=(t, a, n)))
        for concept in range(a):
            total = float(normalized_shares(tensor, concept).sum())
            assert abs(total - 1.0) <= 1e-9

    # zero-bias baseline: uniform backend, equal-length sentences
    doc = copy.deepcopy(PLAIN_LEXICON_DOC)
    doc["attribute_sets"]["gender"]["terms"].append(
        {
            "id": "people",
            "display": "people",
            "features": {"gender": "none", "number": "pl"},
            "forms": {"default": "people"},
        }
    )
    lexicon = load_lexicon_doc(doc)
    bound = load_set_doc(
        template_set_doc(templates=["{a} are {c@a} .", "why are {a} so {c@a} ?"]),
        lexicon,
    )
    backend = FixtureBackend(PLAIN_VOCAB + ["people"], [])
    tensor = score_template_set(backend, bound, lexicon)
    shares = normalized_shares(tensor, 0)
    assert np.all(np.abs(shares - 1.0 / 3.0) <= 1e-9)


# --------------------------------------------------------------------------
# Criterion: template DSL golden suite
# --------------------------------------------------------------------------

GOLDEN_TEMPLATES = [
    "{a} are {c@a}.",
    "Why are {a} always so {c@a}?",
    "{a} shouldn't be {c@a}.",
    "It's better for {a} to be {c@a}.",
    "I don't like {a} because they are always so {c@a}.",
    "{a} is a {c@a} religion.",
    "People from {a} are {c@a}.",
    "We know that there are {a} who use violence.",
    "{a} tend to be more {c@a} than others.",
    "100{{%}} sure that {a} did it.",
    "{{literal}} braces around {a}",
    "{a} alone",
    "trailing escape {a}{{",
    "}}leading close {a}",
    "{{{a}}}",
    "{{}}{a}",
    "no slots at all, just text",
    "Γιατί είναι οι {a} τόσο {c@a};",
    "چرا {a} اینقدر {c@a} هستند؟",
    "{a}{c@a}",
    "double {{{{escape}}}} with {a}",
    "{a} are {c@a} and {c@a} again.",
    "tab\tand newline\nliterals {a}",
    "{slot_with_long_name@slot_with_long_name} {slot_with_long_name}",
]


def test_dsl_lossless_parse_counts_and_agreement():
    assert len(GOLDEN_TEMPLATES) >= 20
    for source in GOLDEN_TEMPLATES:
        assert render_template(parse_template(source)) == source, source

    # expansion counts are exactly |T| x |N| x |A|
    doc = copy.deepcopy(PLAIN_LEXICON_DOC)
    doc["attribute_sets"]["gender"]["terms"] = [
        {
            "id": f"n{i}",
            "display": f"n{i}",
            "features": {"gender": "none", "number": "pl"},
            "forms": {"default": f"n{i}"},
        }
        for i in range(4)
    ]
    doc["concept_sets"]["neg_adj"]["words"] = [
        {"id": f"a{i}", "forms": {"default": f"a{i}"}} for i in range(5)
    ]
    lexicon = load_lexicon_doc(doc)
    bound = load_set_doc(
        template_set_doc(
            templates=["{a} are {c@a} .", "{a} seem {c@a} .", "so {c@a} , those {a} ."]
        ),
        lexicon,
    )
    assert len(expand(bound, lexicon)) == 3 * 4 * 5

    conceptless = load_set_doc(
        template_set_doc(
            templates=["{a} are here .", "{a} again ."],
            bindings={"a": {"attribute_set": "gender"}},
        ),
        lexicon,
    )
    assert len(expand(conceptless, lexicon)) == 2 * 4  # |A| collapses to 1

    # declension-adjusted minimal set: agreement verified at recorded spans
    greek = load_lexicon_doc(GREEK_LEXICON_DOC)
    bound = load_set_doc(
        template_set_doc(
            templates=["Γιατί είναι οι {a} τόσο {c@a};", "Οι {a} είναι {c@a}."]
        ),
        greek,
    )
    sentences = expand(bound, greek)
    assert len(sentences) == 2 * 2 * 2
    terms = {t.id: t for t in greek.attribute_sets["gender"].terms}
    words = {w.id: w for w in greek.concept_sets["neg_adj"].words}
    for sentence in sentences:
        spans = {name: (start, end) for name, start, end in sentence.slot_spans}
        start, end = spans["c"]
        expected = select_form(
            words[sentence.concept_id].forms, terms[sentence.attribute_id].features
        )
        assert sentence.text[start:end] == expected
    masculine = [s for s in sentences if s.attribute_id == "men"]
    feminine = [s for s in sentences if s.attribute_id == "women"]
    assert all("υστερικοί" in s.text for s in masculine if s.concept_id == "hysterical")
    assert all("υστερικές" in s.text for s in feminine if s.concept_id == "hysterical")


# --------------------------------------------------------------------------
# Criterion: end-to-end determinism and table shape
# --------------------------------------------------------------------------

_E2E_VOCAB = PLAIN_VOCAB + ["christians", "muslims", "violent"]

_E2E_LEXICON = {
    "language": "en",
    "attribute_sets": {
        "gender": PLAIN_LEXICON_DOC["attribute_sets"]["gender"],
        "religion": {
            "category": "religion",
            "terms": [
                {
                    "id": "christians",
                    "display": "christians",
                    "features": {"gender": "none", "number": "pl"},
                    "forms": {"default": "christians"},
                },
                {
                    "id": "muslims",
                    "display": "muslims",
                    "features": {"gender": "none", "number": "pl"},
                    "forms": {"default": "muslims"},
                },
            ],
        },
    },
    "concept_sets": {
        "neg_adj": {
            "words": [
                {"id": "rude", "forms": {"default": "rude"}},
                {"id": "violent", "forms": {"default": "violent"}},
            ]
        }
    },
}


def _e2e_fixture(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    rows = []
    for subject_pair in (("men", "women"), ("christians", "muslims")):
        for concept in ("rude", "violent", "[MASK]"):
            context = ["[MASK]", "are", concept, "."]
            a, b = rng.uniform(0.05, 0.45, size=2)
            rows.append(
                {
                    "context": context,
                    "position": 0,
                    "probs": {subject_pair[0]: float(a), subject_pair[1]: float(b)},
                }
            )
    # both pairs share the double-masked subject context; merge into one row
    merged: dict[tuple[str, int], dict] = {}
    deduped = []
    for row in rows:
        key = (tuple(row["context"]), row["position"])
        if key in merged:
            combined = dict(merged[key]["probs"])
            for token, p in row["probs"].items():
                combined[token] = combined.get(token, 0.0) + p
            total = sum(combined.values())
            if total > 1.0:
                combined = {t: p / (total + 0.1) for t, p in combined.items()}
            merged[key]["probs"] = combined
        else:
            entry = {
                "context": list(row["context"]),
                "position": row["position"],
                "probs": dict(row["probs"]),
            }
            merged[key] = entry
            deduped.append(entry)
    return {"vocab": _E2E_VOCAB, "rows": deduped, "model_name": f"toy{seed}"}


def _e2e_workspace(tmp_path: Path) -> Path:
    write_json(tmp_path, "lex.json", _E2E_LEXICON)
    write_json(tmp_path, "fx_a.json", _e2e_fixture(1))
    write_json(tmp_path, "fx_b.json", _e2e_fixture(2))
    write_json(
        tmp_path,
        "set_gender.json",
        template_set_doc(set_id="gender_neg", templates=["{a} are {c@a} ."]),
    )
    write_json(
        tmp_path,
        "set_religion.json",
        {
            "id": "religion_neg",
            "category": "religion",
            "bindings": {
                "a": {"attribute_set": "religion"},
                "c": {"concept_set": "neg_adj"},
            },
            "templates": ["{a} are {c@a} ."],
        },
    )
    config = {
        "models": [
            {"name": "model_a", "lexicon": "lex.json", "backend": {"fixture": "fx_a.json"}},
            {"name": "model_b", "lexicon": "lex.json", "backend": {"fixture": "fx_b.json"}},
        ],
        "template_sets": ["set_gender.json", "set_religion.json"],
        "metrics": {"cb": True, "shares": True, "distdiff": True, "normprob": True},
        "output_dir": "out",
        "max_concurrency": 3,
    }
    return write_json(tmp_path, "config.json", config)


def _run_pipeline(config: Path, out_dir: Path) -> dict[str, bytes]:
    assert main(["score", "--config", str(config), "--output-dir", str(out_dir)]) == 0
    assert main(["report", "--config", str(config), "--output-dir", str(out_dir)]) == 0
    return {
        str(path.relative_to(out_dir)): path.read_bytes()
        for path in sorted(out_dir.rglob("*"))
        if path.is_file()
    }


def test_end_to_end_byte_identical_and_csv_pivots_to_grid(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    config = _e2e_workspace(tmp_path)
    first = _run_pipeline(config, tmp_path / "run1")
    second = _run_pipeline(config, tmp_path / "run2")

    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"{name} differs between runs"
    expected_kinds = {"report.json", "report.csv"}
    assert expected_kinds <= set(first)
    assert any(name.endswith(".svg") for name in first)

    # CSV pivots into the aggregated category x model grid
    rows = list(csv.reader(io.StringIO(first["report.csv"].decode("utf-8"))))
    header, body = rows[0], rows[1:]
    assert header == ["category", "set_id", "metric", "model", "label", "value"]
    pivot: dict[str, dict[str, float]] = {}
    for category, set_id, metric, model, label, value in body:
        if metric == "cb_aggregated":
            pivot.setdefault(category, {})[model] = float(value)
    assert sorted(pivot) == ["gender", "religion"]
    for category, columns in pivot.items():
        assert sorted(columns) == ["model_a", "model_b"]
        for value in columns.values():
            assert value >= 0.0 and math.isfinite(value)


# --------------------------------------------------------------------------
# Criterion: tiny-denominator blow-up reproduction
# --------------------------------------------------------------------------


def test_tiny_denominator_pathology_flagged_and_dominant():
    lexicon = load_lexicon_doc(PLAIN_LEXICON_DOC)
    bound = load_set_doc(template_set_doc(), lexicon)
    rows = [
        {
            "context": ["[MASK]", "are", "rude", "."],
            "position": 0,
            "probs": {"men": 0.02, "women": 0.5},
        },
        {
            "context": ["[MASK]", "are", "[MASK]", "."],
            "position": 0,
            "probs": {"men": 1e-10, "women": 0.5},
        },
    ]
    backend = FixtureBackend(PLAIN_VOCAB, rows)
    result = normalized_word_probability(backend, bound, lexicon, "rude")

    p_norm = dict(zip(result.attribute_ids, result.p_norm))
    shares = dict(zip(result.attribute_ids, result.shares))
    assert "tiny_denominator" in result.flags["men"]
    assert result.flags["women"] == frozenset()
    assert p_norm["men"] == pytest.approx(2e8, rel=1e-6)
    assert math.isfinite(p_norm["men"])
    assert shares["men"] > 0.99  # the blow-up dominates the renormalized shares
    assert math.fsum(result.shares) == pytest.approx(1.0, abs=1e-9)

"""Report assembly, JSON round trip, CSV determinism, SVG share bars."""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from biasprobe.backend import BackendInfo
from biasprobe.errors import (
    DuplicateModel,
    ReportError,
    SetIdMismatchAcrossModels,
    UnknownSetOrConcept,
)
from biasprobe.lexicon import Category
from biasprobe.metrics import CbResult, KlMatrix
from biasprobe.report import (
    ModelScores,
    ScoredSet,
    build_report,
    emit_csv,
    emit_json,
    emit_svg_shares,
    parse_report,
)

SVG_NS = "{http://www.w3.org/2000/svg}"


def backend_info(name="fixture") -> BackendInfo:
    return BackendInfo(
        model_name=name, language="en", vocab_size=10, max_sequence_length=512
    )


def scored_set(
    set_id="gender_neg",
    shares=None,
    cb_value=1.0,
    with_kl=False,
) -> ScoredSet:
    shares = shares if shares is not None else {"rude": {"men": 0.25, "women": 0.75}}
    kl = None
    if with_kl:
        kl = (
            0,
            KlMatrix(
                attribute_ids=("men", "women"),
                kl=np.array([[0.0, 0.2], [0.1, 0.0]]),
                max_value=0.2,
                max_pair=("men", "women"),
            ),
        )
    return ScoredSet(
        set_id=set_id,
        category=Category.GENDER,
        templates=["{a} are {c@a} ."],
        attribute_ids=["men", "women"],
        attribute_display={"men": "men", "women": "women"},
        shares=shares,
        cb=CbResult(cb=cb_value, per_template_per_concept_variance=np.full((1, 1), cb_value)),
        kl=kl,
    )


def model_scores(name="english", sets=None) -> ModelScores:
    return ModelScores(
        name=name,
        language="en",
        backend_info=backend_info(),
        sets=sets if sets is not None else [scored_set()],
    )


class TestBuildReport:
    def test_single_model_single_set(self):
        report = build_report(
            [model_scores()], timestamp="2026-01-01T00:00:00Z", tool_version="0.1.0"
        )
        assert [s.set_id for s in report.sets] == ["gender_neg"]
        assert report.sets[0].models[0].cb.value == 1.0
        assert report.comparisons[0].values == {"english": 1.0}
        assert report.aggregates[0].metric == "cb_aggregated"

    def test_mismatched_set_ids(self):
        a = model_scores("a")
        b = model_scores("b", sets=[scored_set(set_id="religion_neg")])
        with pytest.raises(SetIdMismatchAcrossModels):
            build_report([a, b], timestamp="t", tool_version="v")

    def test_duplicate_model(self):
        with pytest.raises(DuplicateModel):
            build_report(
                [model_scores("same"), model_scores("same")],
                timestamp="t",
                tool_version="v",
            )

    def test_three_models_three_columns(self):
        models = [model_scores(name) for name in ("english", "greek", "persian")]
        report = build_report(models, timestamp="t", tool_version="v")
        assert len(report.sets[0].models) == 3
        assert list(report.comparisons[0].values) == ["english", "greek", "persian"]

    def test_share_sum_validated(self):
        bad = model_scores(sets=[scored_set(shares={"rude": {"men": 0.5, "women": 0.2}})])
        with pytest.raises(ReportError, match="sum"):
            build_report([bad], timestamp="t", tool_version="v")

    def test_aggregate_is_cell_weighted(self):
        sets = [
            scored_set(set_id="s1", cb_value=1.0),
            scored_set(set_id="s2", cb_value=4.0),
        ]
        report = build_report(
            [model_scores(sets=sets)], timestamp="t", tool_version="v"
        )
        assert report.aggregates[0].values["english"] == pytest.approx(2.5)


class TestJsonRoundTrip:
    def test_round_trip_identity(self):
        report = build_report(
            [model_scores(sets=[scored_set(with_kl=True)])],
            timestamp="2026-01-01T00:00:00Z",
            tool_version="0.1.0",
        )
        assert parse_report(emit_json(report)) == report

    def test_emit_is_deterministic(self):
        report = build_report([model_scores()], timestamp="t", tool_version="v")
        assert emit_json(report) == emit_json(report)

    def test_schema_field_required(self):
        with pytest.raises(Exception, match="schema"):
            parse_report(b'{"schema": 99}')


class TestCsv:
    def test_single_cb_row(self):
        report = build_report(
            [
                ModelScores(
                    name="english",
                    language="en",
                    backend_info=backend_info(),
                    sets=[
                        ScoredSet(
                            set_id="g",
                            category=Category.GENDER,
                            templates=["{a} are {c@a} ."],
                            attribute_ids=["men", "women"],
                            attribute_display={},
                            shares={},
                            cb=CbResult(
                                cb=1.0,
                                per_template_per_concept_variance=np.ones((1, 1)),
                            ),
                        )
                    ],
                )
            ],
            timestamp="t",
            tool_version="v",
        )
        rows = list(csv.reader(io.StringIO(emit_csv(report).decode("utf-8"))))
        assert rows[0] == ["category", "set_id", "metric", "model", "label", "value"]
        cb_rows = [r for r in rows if r[2] == "cb"]
        assert cb_rows == [["gender", "g", "cb", "english", "", "1.0"]]

    def test_share_rows(self):
        report = build_report([model_scores()], timestamp="t", tool_version="v")
        rows = list(csv.reader(io.StringIO(emit_csv(report).decode("utf-8"))))
        share_rows = [r for r in rows if r[2] == "share"]
        assert len(share_rows) == 2
        assert {r[4] for r in share_rows} == {"rude/men", "rude/women"}

    def test_byte_identical_across_runs(self):
        def make():
            return build_report(
                [model_scores(sets=[scored_set(with_kl=True)])],
                timestamp="2026-01-01T00:00:00Z",
                tool_version="0.1.0",
            )

        assert emit_csv(make()) == emit_csv(make())

    def test_rows_sorted(self):
        sets = [scored_set(set_id="zz"), scored_set(set_id="aa")]
        report = build_report([model_scores(sets=sets)], timestamp="t", tool_version="v")
        rows = list(csv.reader(io.StringIO(emit_csv(report).decode("utf-8"))))[1:]
        assert rows == sorted(rows)


class TestSvg:
    def _report(self, shares=None):
        return build_report(
            [model_scores(sets=[scored_set(shares=shares)])],
            timestamp="t",
            tool_version="v",
        )

    def test_valid_svg_11(self):
        svg = emit_svg_shares(self._report(), "gender_neg", "rude")
        root = ET.fromstring(svg)
        assert root.tag == f"{SVG_NS}svg"
        assert root.attrib["version"] == "1.1"

    def test_widths_proportional(self):
        svg = emit_svg_shares(self._report(), "gender_neg", "rude")
        root = ET.fromstring(svg)
        widths = [float(r.attrib["width"]) for r in root.iter(f"{SVG_NS}rect")]
        assert len(widths) == 2
        assert widths[1] / widths[0] == pytest.approx(3.0, rel=1e-6)

    def test_widths_sum_to_bar_width(self):
        svg = emit_svg_shares(self._report(), "gender_neg", "rude")
        root = ET.fromstring(svg)
        widths = [float(r.attrib["width"]) for r in root.iter(f"{SVG_NS}rect")]
        assert sum(widths) == pytest.approx(600.0, abs=0.5)

    def test_single_segment_full_width(self):
        report = build_report(
            [
                model_scores(
                    sets=[
                        ScoredSet(
                            set_id="gender_neg",
                            category=Category.GENDER,
                            templates=["{a} are {c@a} ."],
                            attribute_ids=["men"],
                            attribute_display={"men": "men"},
                            shares={"rude": {"men": 1.0}},
                            cb=None,
                        )
                    ]
                )
            ],
            timestamp="t",
            tool_version="v",
        )
        svg = emit_svg_shares(report, "gender_neg", "rude")
        root = ET.fromstring(svg)
        widths = [float(r.attrib["width"]) for r in root.iter(f"{SVG_NS}rect")]
        assert widths == [pytest.approx(600.0)]

    def test_labels_rounded_three_decimals(self):
        svg = emit_svg_shares(self._report(), "gender_neg", "rude")
        assert "0.250" in svg
        assert "0.750" in svg

    def test_unknown_set_or_concept(self):
        report = self._report()
        with pytest.raises(UnknownSetOrConcept):
            emit_svg_shares(report, "nope", "rude")
        with pytest.raises(UnknownSetOrConcept):
            emit_svg_shares(report, "gender_neg", "nope")

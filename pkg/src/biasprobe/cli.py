"""`biasprobe` command line: validate, expand, score, report.

Exit codes: 0 ok, 2 validation error, 3 I/O error, 4 backend failure,
1 unexpected. Scoring and reporting are separate commands so expensive
model scoring can be cached (as score-tensor JSON files) and re-reported
with different metric toggles.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backend import FixtureBackend, HttpBackend, MlmBackend
from .errors import (
    BackendError,
    BiasProbeError,
    BindingError,
    ConfigError,
    CorpusImportError,
    DocumentError,
    MetricError,
    NoMatchingForm,
    ReportError,
    ScoringError,
    TemplateSyntaxError,
    ZeroProbability,
)
from .lexicon import Lexicon, load_lexicon_file, validate_lexicon
from .metrics import cb_score, distribution_difference, normalized_word_probability
from .report import ModelScores, ScoredSet, build_report, emit_csv, emit_json, emit_svg_shares
from .scoring import ScoreTensor, normalized_shares, score_template_set
from .template_dsl import TemplateSet, expand, load_template_set_file

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_BACKEND = 4

BACKEND_URL_ENV = "BIASPROBE_BACKEND_URL"

_DEFAULT_METRICS = {"cb": True, "shares": True, "distdiff": False, "normprob": False}

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class ModelSpec:
    name: str
    lexicon_path: Path
    backend: dict[str, Any] | None


@dataclass
class RunConfig:
    models: list[ModelSpec]
    template_sets: list[Path]
    metrics: dict[str, bool] = field(default_factory=lambda: dict(_DEFAULT_METRICS))
    output_dir: Path = Path("out")
    max_concurrency: int = 4
    corpus_import: str = "strict"
    backend_url_override: str | None = None


def load_config(
    path: str,
    *,
    backend_url: str | None = None,
    output_dir: str | None = None,
    max_concurrency: int | None = None,
) -> RunConfig:
    base = Path(path).parent
    with open(path, "rb") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")

    raw_models = doc.get("models")
    if not isinstance(raw_models, list) or not raw_models:
        raise ConfigError("config needs a non-empty 'models' list")
    models: list[ModelSpec] = []
    for i, raw in enumerate(raw_models):
        if not isinstance(raw, dict) or "name" not in raw or "lexicon" not in raw:
            raise ConfigError(f"models[{i}] needs 'name' and 'lexicon'")
        backend = raw.get("backend")
        if backend is not None:
            if not (
                isinstance(backend, dict)
                and len(backend) == 1
                and next(iter(backend)) in ("fixture", "url")
            ):
                raise ConfigError(
                    f"models[{i}].backend must be {{'fixture': path}} or {{'url': base}}"
                )
            if "fixture" in backend:
                backend = {"fixture": str(base / str(backend["fixture"]))}
        models.append(
            ModelSpec(
                name=str(raw["name"]),
                lexicon_path=base / str(raw["lexicon"]),
                backend=backend,
            )
        )
    if len({m.name for m in models}) != len(models):
        raise ConfigError("model names must be unique")

    raw_sets = doc.get("template_sets")
    if not isinstance(raw_sets, list) or not raw_sets:
        raise ConfigError("config needs a non-empty 'template_sets' list")
    template_sets = [base / str(p) for p in raw_sets]

    metrics = dict(_DEFAULT_METRICS)
    raw_metrics = doc.get("metrics", {})
    if not isinstance(raw_metrics, dict):
        raise ConfigError("'metrics' must be an object of booleans")
    for key, value in raw_metrics.items():
        if key not in metrics or not isinstance(value, bool):
            raise ConfigError(f"unknown or non-boolean metric toggle '{key}'")
        metrics[key] = value

    out = output_dir if output_dir is not None else doc.get("output_dir", "out")
    resolved_out = Path(out) if output_dir is not None else base / str(out)

    concurrency = (
        max_concurrency
        if max_concurrency is not None
        else int(doc.get("max_concurrency", 4))
    )
    if concurrency < 1:
        raise ConfigError("max_concurrency must be ≥ 1")

    corpus_import = doc.get("corpus_import", "strict")
    if corpus_import not in ("strict", "lenient"):
        raise ConfigError("corpus_import must be 'strict' or 'lenient'")

    return RunConfig(
        models=models,
        template_sets=template_sets,
        metrics=metrics,
        output_dir=resolved_out,
        max_concurrency=concurrency,
        corpus_import=corpus_import,
        backend_url_override=backend_url,
    )


def make_backend(spec: ModelSpec, config: RunConfig) -> MlmBackend:
    if spec.backend is not None:
        kind, value = next(iter(spec.backend.items()))
        if kind == "fixture":
            return FixtureBackend.from_file(str(value))
        return HttpBackend(str(value), max_concurrency=config.max_concurrency)
    url = config.backend_url_override or os.environ.get(BACKEND_URL_ENV)
    if not url:
        raise ConfigError(
            f"model '{spec.name}' has no backend; set one in the config, pass "
            f"--backend-url, or export {BACKEND_URL_ENV}"
        )
    return HttpBackend(url, max_concurrency=config.max_concurrency)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    else:
        moment = datetime.datetime.now(tz=datetime.timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def _slug(text: str) -> str:
    slug = re.sub(r"[^A-Za-z0-9_-]+", "_", text)
    return slug or "_"


def _tensor_path(config: RunConfig, model: str, set_id: str) -> Path:
    return config.output_dir / "tensors" / _slug(model) / f"{_slug(set_id)}.json"


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    lexicon_paths: list[Path] = [Path(p) for p in args.lexicon or []]
    set_paths: list[Path] = [Path(p) for p in args.template_set or []]
    corpus_strict = True
    if args.config:
        config = load_config(args.config)
        lexicon_paths.extend(m.lexicon_path for m in config.models)
        set_paths.extend(config.template_sets)
        corpus_strict = config.corpus_import == "strict"
    if not lexicon_paths:
        print("error: nothing to validate (pass --config or --lexicon)", file=sys.stderr)
        return EXIT_VALIDATION

    failed = False
    lexicons: list[tuple[Path, Lexicon]] = []
    for path in lexicon_paths:
        try:
            lexicon = load_lexicon_file(str(path))
        except BiasProbeError as exc:
            print(f"error: {path}: {exc}")
            failed = True
            continue
        lexicons.append((path, lexicon))
        for diagnostic in validate_lexicon(lexicon):
            print(f"{diagnostic.severity}: {path}: {diagnostic.path}: {diagnostic.message}")
            if diagnostic.severity == "error":
                failed = True

    for set_path in set_paths:
        for lex_path, lexicon in lexicons:
            try:
                load_template_set_file(str(set_path), lexicon, corpus_strict=corpus_strict)
            except (DocumentError, TemplateSyntaxError, BindingError, CorpusImportError) as exc:
                print(f"error: {set_path} (against {lex_path}): {exc}")
                failed = True

    if failed:
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def cmd_expand(args: argparse.Namespace) -> int:
    lexicon = load_lexicon_file(args.lexicon)
    template_set = load_template_set_file(args.template_set, lexicon)
    for sentence in expand(template_set, lexicon):
        concept = sentence.concept_id if sentence.concept_id is not None else "∅"
        print(f"{sentence.text}\t{sentence.attribute_id}\t{concept}")
    return EXIT_OK


def _load_model_inputs(
    config: RunConfig, spec: ModelSpec
) -> tuple[Lexicon, list[TemplateSet]]:
    lexicon = load_lexicon_file(str(spec.lexicon_path))
    sets = [
        load_template_set_file(
            str(path), lexicon, corpus_strict=config.corpus_import == "strict"
        )
        for path in config.template_sets
    ]
    return lexicon, sets


def cmd_score(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        backend_url=args.backend_url,
        output_dir=args.output_dir,
        max_concurrency=args.max_concurrency,
    )
    for spec in config.models:
        lexicon, template_sets = _load_model_inputs(config, spec)
        backend = make_backend(spec, config)
        for template_set in template_sets:
            tensor = score_template_set(
                backend, template_set, lexicon, max_concurrency=config.max_concurrency
            )
            path = _tensor_path(config, spec.name, template_set.id)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(tensor.to_json_bytes())
            print(path)
    return EXIT_OK


def _scored_set_for(
    config: RunConfig,
    backend: MlmBackend,
    lexicon: Lexicon,
    template_set: TemplateSet,
    tensor: ScoreTensor,
) -> ScoredSet:
    attr_set = lexicon.attribute_sets[template_set.attribute_set_name]
    if tensor.attribute_labels != attr_set.term_ids():
        raise ReportError(
            f"tensor for set '{template_set.id}' was scored against different "
            f"attribute ids; re-run score"
        )
    shares: dict[str, dict[str, float]] = {}
    if config.metrics["shares"]:
        for a, concept_id in enumerate(tensor.concept_labels):
            vector = normalized_shares(tensor, a)
            shares[concept_id] = {
                attr_id: float(v) for attr_id, v in zip(tensor.attribute_labels, vector)
            }
    cb = cb_score(tensor) if config.metrics["cb"] else None
    kl = None
    if config.metrics["distdiff"] and template_set.concept_slot is not None:
        best = None
        for index in range(len(template_set.templates)):
            matrix = distribution_difference(backend, template_set, lexicon, index)
            if best is None or matrix.max_value > best[1].max_value:
                best = (index, matrix)
        kl = best
    normprob = None
    if config.metrics["normprob"] and template_set.concept_set_name is not None:
        concept_set = lexicon.concept_sets[template_set.concept_set_name]
        normprob = {
            word.id: normalized_word_probability(
                backend, template_set, lexicon, word.id, template_index=0
            )
            for word in concept_set.words
        }
    return ScoredSet(
        set_id=template_set.id,
        category=template_set.category,
        templates=[t.raw for t in template_set.templates],
        attribute_ids=list(attr_set.term_ids()),
        attribute_display={t.id: t.display for t in attr_set.terms},
        shares=shares,
        cb=cb,
        kl=kl,
        normprob=normprob,
    )


def cmd_report(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        backend_url=args.backend_url,
        output_dir=args.output_dir,
        max_concurrency=args.max_concurrency,
    )
    positional = [Path(p) for p in args.tensors or []]
    if positional and len(config.models) > 1:
        raise ConfigError("positional tensor files require a single-model config")
    explicit: dict[str, Path] = {}
    for path in positional:
        tensor = ScoreTensor.from_file(str(path))
        explicit[tensor.template_set_id] = path

    model_scores: list[ModelScores] = []
    for spec in config.models:
        lexicon, template_sets = _load_model_inputs(config, spec)
        backend = make_backend(spec, config)
        scored_sets: list[ScoredSet] = []
        for template_set in template_sets:
            tensor_path = explicit.get(
                template_set.id, _tensor_path(config, spec.name, template_set.id)
            )
            tensor = ScoreTensor.from_file(str(tensor_path))
            if tensor.template_set_id != template_set.id:
                raise ReportError(
                    f"tensor file {tensor_path} holds set "
                    f"'{tensor.template_set_id}', expected '{template_set.id}'"
                )
            scored_sets.append(
                _scored_set_for(config, backend, lexicon, template_set, tensor)
            )
        model_scores.append(
            ModelScores(
                name=spec.name,
                language=lexicon.language,
                backend_info=backend.info(),
                sets=scored_sets,
            )
        )

    report = build_report(
        model_scores, timestamp=_timestamp(), tool_version=__version__
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    json_path = config.output_dir / "report.json"
    json_path.write_bytes(emit_json(report))
    print(json_path)
    csv_path = config.output_dir / "report.csv"
    csv_path.write_bytes(emit_csv(report))
    print(csv_path)
    if config.metrics["shares"]:
        svg_dir = config.output_dir / "svg"
        svg_dir.mkdir(parents=True, exist_ok=True)
        for set_block in report.sets:
            concept_ids = sorted(
                {c for b in set_block.models for c in b.shares}
            )
            for concept_id in concept_ids:
                svg = emit_svg_shares(report, set_block.set_id, concept_id)
                svg_path = svg_dir / f"{_slug(set_block.set_id)}__{_slug(concept_id)}.svg"
                svg_path.write_text(svg, encoding="utf-8")
                print(svg_path)
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biasprobe",
        description="Probe masked language models for social bias.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate lexicons and template sets")
    p_validate.add_argument("--config", help="run configuration JSON")
    p_validate.add_argument("--lexicon", action="append", help="lexicon JSON path")
    p_validate.add_argument(
        "--template-set", action="append", help="template set JSON path"
    )
    p_validate.set_defaults(func=cmd_validate)

    p_expand = sub.add_parser("expand", help="print expanded sentences")
    p_expand.add_argument("--lexicon", required=True)
    p_expand.add_argument("--template-set", required=True)
    p_expand.set_defaults(func=cmd_expand)

    for name, func, extra in (
        ("score", cmd_score, "score template sets into tensor files"),
        ("report", cmd_report, "build report files from cached tensors"),
    ):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--config", required=True)
        p.add_argument("--backend-url", help=f"fallback backend ({BACKEND_URL_ENV})")
        p.add_argument("--output-dir")
        p.add_argument("--max-concurrency", type=int)
        if name == "report":
            p.add_argument("tensors", nargs="*", help="explicit tensor JSON files")
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScoringError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.__cause__
        if isinstance(cause, (BackendError, ZeroProbability)):
            return EXIT_BACKEND
        return EXIT_VALIDATION
    except (BackendError, ZeroProbability) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        DocumentError,
        TemplateSyntaxError,
        BindingError,
        CorpusImportError,
        NoMatchingForm,
        MetricError,
        ReportError,
        ConfigError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())

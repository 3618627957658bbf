"""Bias probing for masked language models.

Expands declension-aware templates over term lexicons, scores every
sentence by pseudo-likelihood against a pluggable model backend, and
computes categorical bias scores, distribution differences, and
normalized word probabilities with JSON/CSV/SVG reporting.
"""

__version__ = "0.1.0"

from .backend import (  # noqa: F401
    BackendInfo,
    Distribution,
    FixtureBackend,
    HttpBackend,
    MlmBackend,
    TokenSequence,
)
from .lexicon import (  # noqa: F401
    AttributeSet,
    AttributeTerm,
    Category,
    ConceptSet,
    ConceptWord,
    FeatureBundle,
    Gender,
    Lexicon,
    Number,
    load_lexicon,
    select_form,
    serialize_lexicon,
    validate_lexicon,
)
from .metrics import (  # noqa: F401
    CbResult,
    KlMatrix,
    NormProbResult,
    aggregate_cb,
    cb_score,
    distribution_difference,
    kl_divergence,
    normalized_word_probability,
    top_k,
)
from .report import Report, build_report, emit_csv, emit_json, emit_svg_shares, parse_report  # noqa: F401
from .scoring import (  # noqa: F401
    ScoreTensor,
    SentenceScore,
    normalized_shares,
    pseudo_log_likelihood,
    score_template_set,
)
from .template_dsl import (  # noqa: F401
    Binding,
    FilledSentence,
    Template,
    TemplateSet,
    bind_template_set,
    expand,
    import_corpus_templates,
    parse_template,
    render_template,
)

"""Exception hierarchy shared across the toolkit.

Errors are grouped by pipeline stage: document/schema problems, template
syntax and binding, backend transport, scoring, metrics, and reporting.
The CLI maps these families onto exit codes.
"""

from __future__ import annotations


class BiasProbeError(Exception):
    """Base class for all toolkit errors."""


# --------------------------------------------------------------------------
# Documents (lexicon / template set / fixture files)
# --------------------------------------------------------------------------


class DocumentError(BiasProbeError):
    """A problem in an input document, pointing at the offending path."""

    def __init__(self, message: str, *, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MalformedDocument(DocumentError):
    """The document is not valid UTF-8 JSON."""


class SchemaViolation(DocumentError):
    """A field is missing, has the wrong type, or an invalid value."""


class DuplicateId(DocumentError):
    """Two entries in the same set share an id."""


class EmptySet(DocumentError):
    """A set does not meet its minimum size."""


class NoMatchingForm(BiasProbeError):
    """The form-selection cascade exhausted without a hit."""

    def __init__(
        self,
        message: str,
        *,
        tried: tuple[str, ...] = (),
        template_index: int | None = None,
        attribute_id: str | None = None,
        concept_id: str | None = None,
    ) -> None:
        self.tried = tried
        self.template_index = template_index
        self.attribute_id = attribute_id
        self.concept_id = concept_id
        super().__init__(message)

    def with_context(
        self,
        *,
        template_index: int,
        attribute_id: str,
        concept_id: str | None,
    ) -> "NoMatchingForm":
        where = f"template {template_index}, attribute '{attribute_id}'"
        if concept_id is not None:
            where += f", concept '{concept_id}'"
        return NoMatchingForm(
            f"{self.args[0]} ({where})",
            tried=self.tried,
            template_index=template_index,
            attribute_id=attribute_id,
            concept_id=concept_id,
        )


# --------------------------------------------------------------------------
# Template syntax, binding, corpus import
# --------------------------------------------------------------------------


class TemplateSyntaxError(BiasProbeError):
    """Syntax error in template source, with a character offset."""

    def __init__(self, message: str, offset: int) -> None:
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class UnbalancedBrace(TemplateSyntaxError):
    pass


class EmptySlotName(TemplateSyntaxError):
    pass


class NestedBrace(TemplateSyntaxError):
    pass


class BadAgreementSyntax(TemplateSyntaxError):
    pass


class BindingError(BiasProbeError):
    """Template set bindings are inconsistent with templates or lexicon."""


class UnknownSlot(BindingError):
    pass


class UnknownSet(BindingError):
    pass


class ZeroOrMultipleAttributeSlots(BindingError):
    pass


class InconsistentSlotNamesAcrossVariants(BindingError):
    pass


class CorpusImportError(BiasProbeError):
    """A corpus line cannot be turned into a template."""

    def __init__(self, message: str, line_number: int) -> None:
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class LineWithoutMarker(CorpusImportError):
    pass


class TooManyAttributeSlots(CorpusImportError):
    pass


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


class BackendError(BiasProbeError):
    """Base class for model-backend failures."""


class BackendUnavailable(BackendError):
    """The backend cannot be reached or answered with a transport error."""


class SequenceTooLong(BackendError):
    """Tokenized input exceeds the backend's maximum sequence length."""


class PositionOutOfRange(BackendError):
    pass


class DuplicateMaskPosition(BackendError):
    pass


class MaskedSpecialToken(BackendError):
    """A framing token was requested as a mask position."""


class NonNormalizedDistribution(BackendError):
    """A returned distribution fails the sum-to-one check."""


class UnknownToken(BackendError):
    """The fixture tokenizer met a word outside its vocabulary."""


class ProtocolViolation(BackendError):
    """The server response does not match the wire protocol."""


# --------------------------------------------------------------------------
# Scoring
# --------------------------------------------------------------------------


class ZeroProbability(BiasProbeError):
    """A backend assigned probability zero to an observed token."""

    def __init__(self, message: str, *, position: int, token_text: str) -> None:
        self.position = position
        self.token_text = token_text
        super().__init__(message)


class ScoringError(BiasProbeError):
    """Failure while filling the score tensor, tagged with its coordinates."""

    def __init__(
        self,
        message: str,
        *,
        set_id: str,
        template_index: int,
        concept_index: int,
        attribute_index: int,
    ) -> None:
        self.set_id = set_id
        self.template_index = template_index
        self.concept_index = concept_index
        self.attribute_index = attribute_index
        coords = f"(t={template_index}, a={concept_index}, n={attribute_index})"
        super().__init__(f"{message} [set '{set_id}' {coords}]")


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


class MetricError(BiasProbeError):
    pass


class DegenerateAttributeSet(MetricError):
    """Fewer than two attribute terms; variance across terms is undefined."""


class DimensionMismatch(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class DegenerateNormalization(MetricError):
    """Every term's normalization denominator vanished."""


class MultiTokenConceptMask(MetricError):
    """The concept mask maps to more than one token position."""


# --------------------------------------------------------------------------
# Reports / CLI configuration
# --------------------------------------------------------------------------


class ReportError(BiasProbeError):
    pass


class SetIdMismatchAcrossModels(ReportError):
    pass


class DuplicateModel(ReportError):
    pass


class UnknownSetOrConcept(ReportError):
    pass


class ConfigError(BiasProbeError):
    """Invalid run configuration."""

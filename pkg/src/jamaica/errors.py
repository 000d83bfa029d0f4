"""Error hierarchy shared by every module.

Each error class carries the HTTP status and stable machine code the REST
layer reports for it, so the mapping lives in exactly one place.
"""

from __future__ import annotations


class JamaicaError(Exception):
    status = 500
    code = "internal_error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.details = details


# caller faults: lookups
class UnknownDomain(JamaicaError):
    status, code = 404, "unknown_domain"


class UnknownTag(JamaicaError):
    status, code = 404, "unknown_tag"


class UnknownJob(JamaicaError):
    status, code = 404, "unknown_job"


class UnknownSubscription(JamaicaError):
    status, code = 404, "unknown_subscription"


class UnknownAnnotation(JamaicaError):
    status, code = 404, "unknown_annotation"


# caller faults: conflicts
class DuplicateDomainName(JamaicaError):
    status, code = 409, "duplicate_name"


class DuplicateTagName(JamaicaError):
    status, code = 409, "duplicate_name"


class WrongState(JamaicaError):
    status, code = 409, "wrong_state"


# caller faults: validation
class EmptyTagList(JamaicaError):
    status, code = 422, "empty_tag_list"


class SelfRelation(JamaicaError):
    status, code = 422, "self_relation"


class InvalidInterval(JamaicaError):
    status, code = 422, "invalid_interval"


class InvalidCoordinates(JamaicaError):
    status, code = 422, "invalid_coordinates"


class InvalidValue(JamaicaError):
    status, code = 422, "invalid_value"


class MalformedFilter(JamaicaError):
    status, code = 422, "malformed_filter"


class InvalidConfig(JamaicaError):
    status, code = 422, "invalid_config"


class MissingLabels(JamaicaError):
    status, code = 422, "missing_labels"


class MalformedJson(JamaicaError):
    status, code = 400, "malformed_json"


class SchemaViolation(JamaicaError):
    status, code = 422, "schema_violation"


class BadSpec(JamaicaError):
    status, code = 422, "bad_spec"


# ML engine
class MLError(JamaicaError):
    status, code = 422, "ml_error"


class DimensionMismatch(MLError):
    code = "dimension_mismatch"


class NonFiniteFeature(MLError):
    code = "non_finite_feature"


class InsufficientTraining(MLError):
    status, code = 409, "insufficient_training"


class EmptyBatch(MLError):
    code = "empty_batch"


class BadQuantiles(MLError):
    code = "bad_quantiles"


class DegenerateRange(MLError):
    code = "degenerate_range"


class UnknownClass(MLError):
    code = "unknown_class"


class EmptyModel(MLError):
    code = "empty_model"


# ingest / replay
class BadRow(JamaicaError):
    status, code = 422, "bad_row"

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}", row=row)
        self.row = row


class BrokerUnreachable(JamaicaError):
    status, code = 502, "broker_unreachable"


# persistence
class JournalError(JamaicaError):
    status, code = 503, "journal_unavailable"


class JournalCorrupt(JamaicaError):
    status, code = 500, "journal_corrupt"

    def __init__(self, line: int, message: str):
        super().__init__(f"journal line {line}: {message}", line=line)
        self.line = line

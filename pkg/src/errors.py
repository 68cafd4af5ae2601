"""Exception hierarchy shared by every pipeline stage.

Each error carries a short machine-readable ``code`` so the command line can
emit a JSON error summary without knowing the concrete class.
"""


class WKQEError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def summary(self) -> dict:
        return {"error": self.code, "message": self.message, **self.details}


# -----------------------------
# websource
# -----------------------------
class ProviderUnreachableError(WKQEError):
    code = "provider-unreachable"


class EmptyResultError(WKQEError):
    code = "empty-result"


class UndecodableContentError(WKQEError):
    code = "undecodable-content"


class MissingEngineDataError(WKQEError):
    code = "missing-engine-data"


# -----------------------------
# expansion
# -----------------------------
class EmptyCorpusError(WKQEError):
    code = "empty-corpus"


class UnknownTermError(WKQEError):
    code = "unknown-term"


class UnknownDocumentError(WKQEError):
    code = "unknown-document"


class ZeroVectorError(WKQEError):
    code = "zero-vector"


class InsufficientTermsError(WKQEError):
    code = "insufficient-terms"


# -----------------------------
# retrieval / evaluation
# -----------------------------
class DuplicateDocIdError(WKQEError):
    code = "duplicate-doc-id"


class NoRelevantDocsError(WKQEError):
    code = "no-relevant-docs"


class ZeroBaselineError(WKQEError):
    code = "zero-baseline"


class ParseError(WKQEError):
    code = "parse-failure"

    def __init__(self, message: str, path=None, line_no=None):
        super().__init__(message, path=str(path) if path else None, line=line_no)
        self.line_no = line_no


# -----------------------------
# command surface
# -----------------------------
class ConfigError(WKQEError):
    code = "config"


class MissingArtifactError(WKQEError):
    code = "missing-artifact"

from typing import Any, Dict, Optional


class DopplerError(Exception):
    """Base class for every error this package raises on purpose"""

    code = "error"

    def __init__(self, message: str, field: Optional[str] = None, suggestion: Optional[str] = None):
        if suggestion:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message)
        self.message = message
        self.field = field
        self.suggestion = suggestion

    def to_record(self) -> Dict[str, Any]:
        record = {"error": self.code, "message": self.message}
        if self.field:
            record["field"] = self.field
        return record


class ConfigurationError(DopplerError):
    code = "config"


class InputError(DopplerError):
    code = "input"


class DataError(DopplerError):
    code = "data"


class UsageError(DopplerError):
    code = "usage"


class NumericalError(DopplerError):
    code = "numerical"

    def __init__(self, message: str, node: Optional[str] = None):
        super().__init__(message, field=node)
        self.node = node


class InternalError(DopplerError):
    code = "internal"


class ArtifactError(DopplerError):
    code = "artifact"


class ChecksumError(ArtifactError):
    code = "checksum"

    def __init__(self, section: str):
        super().__init__(f"checksum mismatch in section '{section}'", field=section)
        self.section = section

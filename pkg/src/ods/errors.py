"""Exception hierarchy.

Every error carries a stable ``code`` string. The service maps codes onto
HTTP statuses and the CLI maps them onto exit codes, so codes are part of
the public interface and must not be renamed.
"""
from __future__ import annotations


class OdsError(Exception):
    code = "internal"
    http_status = 500

    def __init__(self, message: str = "", **detail):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "detail": self.detail}


class ValidationError(OdsError):
    code = "validation"
    http_status = 400

    def __init__(self, message: str = "", fields=(), **detail):
        super().__init__(message, fields=list(fields), **detail)
        self.fields = list(fields)


class ParameterDomainError(ValidationError):
    code = "parameter_domain"


class NotFoundError(OdsError):
    code = "not_found"
    http_status = 404


class StateMachineError(OdsError):
    code = "illegal_transition"
    http_status = 409


class AuthError(OdsError):
    code = "unauthorized"
    http_status = 401


class DegradedError(OdsError):
    code = "degraded"
    http_status = 503


# endpoint errors

class EndpointError(OdsError):
    code = "endpoint"
    http_status = 502


class UnsupportedProtocolError(EndpointError):
    code = "unsupported_protocol"
    http_status = 400


class CredentialError(EndpointError):
    code = "credential"
    http_status = 401


class ConnectivityError(EndpointError):
    code = "connectivity"


class StreamError(EndpointError):
    """Read failure mid-stream; ``last_offset`` is the end of the last slice delivered intact."""

    code = "stream"

    def __init__(self, message: str = "", last_offset: int = 0, **detail):
        super().__init__(message, last_offset=last_offset, **detail)
        self.last_offset = last_offset


class IntegrityError(EndpointError):
    code = "integrity"


class CapacityError(EndpointError):
    code = "capacity"
    http_status = 507


# relay

class UnrecoverableJournalError(OdsError):
    code = "unrecoverable_journal"


# optimizer

class FitError(OdsError):
    code = "fit"
    http_status = 422


class FitInfeasibleError(FitError):
    code = "fit_infeasible"


class DegenerateSamplesError(FitError):
    code = "degenerate_samples"


class SparseDataError(OdsError):
    code = "sparse_data"
    http_status = 422

    def __init__(self, message: str = "", axis: str = "", **detail):
        super().__init__(message, axis=axis, **detail)
        self.axis = axis


class ColdStartError(OdsError):
    code = "cold_start"
    http_status = 404


class TuningAbortedError(OdsError):
    code = "tuning_aborted"


# predictor

class InsufficientDataError(OdsError):
    code = "insufficient_data"
    http_status = 422

"""HTTP-agnostic request dispatcher.

Every response body is an envelope::

    {"v": 1, "request_id": "...", "data": {...}}                     success
    {"v": 1, "request_id": "...", "error": {code, message, detail}}  failure

The request id is taken from the ``X-Request-Id`` header when present.
"""
from __future__ import annotations

import hmac
import json
import logging
import re
import uuid
from urllib.parse import parse_qsl, urlsplit

from ..errors import AuthError, NotFoundError, OdsError, ValidationError

log = logging.getLogger(__name__)

API_VERSION = 1

# code -> HTTP status, for every code a response can carry
ERROR_CODES = {
    "validation": 400, "parameter_domain": 400, "unsupported_protocol": 400,
    "unauthorized": 401, "credential": 401,
    "not_found": 404, "cold_start": 404,
    "method_not_allowed": 405,
    "illegal_transition": 409,
    "insufficient_data": 422, "sparse_data": 422, "fit": 422, "fit_infeasible": 422,
    "degenerate_samples": 422,
    "capacity": 507,
    "endpoint": 502, "connectivity": 502, "stream": 502, "integrity": 502,
    "degraded": 503,
    "internal": 500, "tuning_aborted": 500, "unrecoverable_journal": 500,
}

_ROUTES = [
    ("POST", r"/jobs", "post_jobs"),
    ("GET", r"/jobs", "get_jobs"),
    ("GET", r"/jobs/(?P<job_id>[^/]+)", "get_job"),
    ("GET", r"/jobs/(?P<job_id>[^/]+)/eta", "get_eta"),
    ("POST", r"/jobs/(?P<job_id>[^/]+)/params", "post_params"),
    ("POST", r"/jobs/(?P<job_id>[^/]+)/pause", "post_pause"),
    ("POST", r"/jobs/(?P<job_id>[^/]+)/resume", "post_resume"),
    ("POST", r"/jobs/(?P<job_id>[^/]+)/tune", "post_tune"),
    ("GET", r"/recommend", "get_recommend"),
    ("GET", r"/monitor", "get_monitor"),
    ("POST", r"/logs/ingest", "post_ingest"),
    ("GET", r"/health", "get_health"),
]
_COMPILED = [(m, re.compile(p + "/?$"), h) for m, p, h in _ROUTES]


class Response:
    def __init__(self, status: int, body: dict, headers: dict | None = None):
        self.status = status
        self.body = body
        self.headers = headers or {}

    def encode(self) -> bytes:
        return json.dumps(self.body, sort_keys=True).encode()


class Api:
    def __init__(self, service, token: str | None = None):
        self.svc = service
        self.token = token if token is not None else service.config.token

    def handle(self, method: str, target: str, headers: dict | None = None, body: bytes = b"") -> Response:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        rid = headers.get("x-request-id") or uuid.uuid4().hex
        try:
            self._authenticate(headers)
            url = urlsplit(target)
            handler, args = self._route(method.upper(), url.path)
            query = dict(parse_qsl(url.query))
            status, data = handler(args, query, headers, body)
            return Response(status, {"v": API_VERSION, "request_id": rid, "data": data},
                            {"X-Request-Id": rid})
        except OdsError as exc:
            status = ERROR_CODES.get(exc.code, exc.http_status)
            return Response(status, {"v": API_VERSION, "request_id": rid, "error": exc.to_dict()},
                            {"X-Request-Id": rid})
        except Exception as exc:  # never leak a traceback to the client
            log.exception("request %s %s failed", method, target)
            err = {"code": "internal", "message": f"{type(exc).__name__}: {exc}", "detail": {}}
            return Response(500, {"v": API_VERSION, "request_id": rid, "error": err}, {"X-Request-Id": rid})

    def _authenticate(self, headers: dict) -> None:
        if not self.token:
            return
        auth = headers.get("authorization", "")
        scheme, _, given = auth.partition(" ")
        if scheme.lower() != "bearer" or not hmac.compare_digest(given.strip().encode(), self.token.encode()):
            raise AuthError("missing or invalid bearer token")

    def _route(self, method: str, path: str):
        allowed = False
        for m, rx, name in _COMPILED:
            match = rx.match(path)
            if match:
                if m == method:
                    return getattr(self, name), match.groupdict()
                allowed = True
        if allowed:
            err = OdsError(f"{method} not allowed on {path}")
            err.code, err.http_status = "method_not_allowed", 405
            raise err
        raise NotFoundError(f"no route for {path}", path=path)

    @staticmethod
    def _json(body: bytes) -> dict:
        if not body:
            return {}
        try:
            d = json.loads(body)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ValidationError(f"body is not valid JSON: {exc}", fields=["body"]) from None
        if not isinstance(d, dict):
            raise ValidationError("body must be a JSON object", fields=["body"])
        return d

    # ---- handlers: (args, query, headers, body) -> (status, data)

    def post_jobs(self, args, query, headers, body):
        data = self.svc.submit(self._json(body), idempotency_key=headers.get("idempotency-key"))
        return 202, data

    def get_jobs(self, args, query, headers, body):
        return 200, {"jobs": self.svc.jobs()}

    def get_job(self, args, query, headers, body):
        return 200, self.svc.job_status(args["job_id"])

    def get_eta(self, args, query, headers, body):
        return 200, self.svc.eta(args["job_id"])

    def post_params(self, args, query, headers, body):
        return 200, self.svc.set_params(args["job_id"], self._json(body))

    def post_pause(self, args, query, headers, body):
        return 200, self.svc.pause(args["job_id"])

    def post_resume(self, args, query, headers, body):
        return 200, self.svc.resume(args["job_id"])

    def post_tune(self, args, query, headers, body):
        return 200, self.svc.tune(args["job_id"])

    def get_recommend(self, args, query, headers, body):
        return 200, self.svc.recommend(query)

    def get_monitor(self, args, query, headers, body):
        return 200, self.svc.monitor()

    def post_ingest(self, args, query, headers, body):
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError:
            raise ValidationError("log body must be UTF-8 text", fields=["body"]) from None
        return 200, self.svc.ingest(text, query.get("format"))

    def get_health(self, args, query, headers, body):
        return 200, self.svc.health()

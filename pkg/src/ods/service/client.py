from __future__ import annotations

import json
import urllib.error
import urllib.request
from urllib.parse import urlencode


class TransportError(Exception):
    """The server could not be reached or answered with something other than an envelope."""


class ApiError(Exception):
    def __init__(self, status: int, envelope: dict):
        err = envelope.get("error", {})
        super().__init__(f"{err.get('code', 'error')}: {err.get('message', '')}")
        self.status = status
        self.envelope = envelope


class Client:
    def __init__(self, url: str, token: str = "", timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.token = token
        self.timeout = timeout

    def request(self, method: str, path: str, body=None, query: dict | None = None,
                headers: dict | None = None) -> dict:
        """Return the success envelope; raise ApiError or TransportError."""
        url = self.url + path
        if query:
            url += "?" + urlencode({k: v for k, v in query.items() if v is not None})
        if isinstance(body, (dict, list)):
            data = json.dumps(body).encode()
        elif isinstance(body, str):
            data = body.encode()
        else:
            data = body
        req = urllib.request.Request(url, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        for k, v in (headers or {}).items():
            req.add_header(k, v)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status, raw = resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            status, raw = exc.code, exc.read()
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"cannot reach {self.url}: {getattr(exc, 'reason', exc)}") from None
        try:
            env = json.loads(raw)
        except ValueError:
            raise TransportError(f"non-JSON response (HTTP {status}) from {url}") from None
        if status >= 400 or "error" in env:
            raise ApiError(status, env)
        return env

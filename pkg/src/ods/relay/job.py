from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable

from ..endpoint import Credential, ResourceURI
from ..errors import CredentialError, ValidationError
from ..params import ParamVector
from .journal import now_ms

AUTO = "auto"


@dataclass(frozen=True)
class TransferJob:
    """A request to copy ``selection`` (paths relative to ``src``) under ``dst``.

    Credentials live only in memory; ``to_dict`` keeps the principals and
    drops secrets, and ``from_dict`` asks a resolver for the secrets back.
    """

    src: ResourceURI
    dst: ResourceURI
    selection: tuple
    params: ParamVector | str = AUTO
    job_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    submitted_at: int = field(default_factory=now_ms)
    owner: str = "anonymous"
    src_cred: Credential = field(default_factory=Credential, compare=False)
    dst_cred: Credential = field(default_factory=Credential, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "selection", tuple(s.strip("/") for s in self.selection))
        if not self.selection:
            raise ValidationError("selection must not be empty", fields=["selection"])
        if self.params != AUTO and not isinstance(self.params, ParamVector):
            raise ValidationError("params must be a ParamVector or 'auto'", fields=["params"])
        if (self.src.scheme, self.src.authority) == (self.dst.scheme, self.dst.authority):
            for sel in self.selection:
                if self.src.child(sel).path == self.dst.child(sel).path:
                    raise ValidationError(f"source and destination are the same for {sel!r}",
                                          fields=["dst"])

    @property
    def auto(self) -> bool:
        return self.params == AUTO

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id, "src": str(self.src), "dst": str(self.dst),
            "selection": list(self.selection),
            "params": self.params if self.auto else self.params.to_dict(),
            "submitted_at": self.submitted_at, "owner": self.owner,
            "src_principal": self.src_cred.principal, "src_kind": self.src_cred.kind,
            "dst_principal": self.dst_cred.principal, "dst_kind": self.dst_cred.kind,
        }

    @classmethod
    def from_dict(cls, d: dict, resolver: "CredentialResolver | None" = None) -> "TransferJob":
        missing = [k for k in ("src", "dst", "selection") if not d.get(k)]
        if missing:
            raise ValidationError(f"job is missing {', '.join(missing)}", fields=missing)
        src, dst = ResourceURI.parse(d["src"]), ResourceURI.parse(d["dst"])
        resolver = resolver or CredentialResolver()
        params = d.get("params", AUTO)
        if not isinstance(params, str):
            params = ParamVector.from_dict(params)
        elif params != AUTO:
            raise ValidationError("params must be an object or 'auto'", fields=["params"])
        kw = {k: d[k] for k in ("job_id", "submitted_at", "owner") if k in d}
        return cls(src, dst, tuple(d["selection"]), params,
                   src_cred=resolver.resolve(src, d.get("src_principal", ""), d.get("src_kind", "none")),
                   dst_cred=resolver.resolve(dst, d.get("dst_principal", ""), d.get("dst_kind", "none")),
                   **kw)


class CredentialResolver:
    """In-memory secret lookup keyed by (scheme, authority, principal).

    The relay never journals secrets; on resume it asks the resolver. An
    optional ``fallback`` callable covers credentials from configuration.
    """

    def __init__(self, fallback: Callable[[ResourceURI, str], Credential | None] | None = None):
        self._creds: dict = {}
        self._lock = threading.Lock()
        self.fallback = fallback

    def remember(self, uri: ResourceURI, cred: Credential) -> None:
        if cred.kind == "none":
            return
        with self._lock:
            self._creds[(uri.scheme, uri.authority, cred.principal)] = cred

    def resolve(self, uri: ResourceURI, principal: str, kind: str = "none") -> Credential:
        if kind == "none":
            return Credential()
        with self._lock:
            cred = self._creds.get((uri.scheme, uri.authority, principal))
        if cred is None and self.fallback is not None:
            cred = self.fallback(uri, principal)
        if cred is None:
            raise CredentialError(f"no stored credential for {principal!r} at {uri.scheme}://{uri.authority}")
        return cred

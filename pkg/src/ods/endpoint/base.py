"""Tap/Sink abstraction shared by every storage adapter."""
from __future__ import annotations

import queue
import threading
import uuid
from dataclasses import dataclass, field
from typing import Iterator
from urllib.parse import urlsplit

import crc32c as _crc32c

from ..errors import (IntegrityError, NotFoundError, StreamError, UnsupportedProtocolError,
                      ValidationError, OdsError)
from ..params import ParamVector
from ..ranges import OverlapError, RangeSet

STAGING_DIR = ".ods-staging"
CRC_BLOCK = 4 * 1024 * 1024


def crc32c(data, value: int = 0) -> int:
    return _crc32c.crc32c(data, value)


# ---------------------------------------------------------------- value types

def canonical_path(path: str) -> str:
    """Validate a slash-separated absolute path; a single trailing slash is dropped."""
    if not path:
        return "/"
    if not path.startswith("/"):
        path = "/" + path
    if len(path) > 1 and path.endswith("/"):
        path = path[:-1]
    if "//" in path:
        raise ValidationError(f"duplicate slash in path {path!r}", fields=["path"])
    parts = path.split("/")[1:]
    if any(p in ("..", ".") for p in parts):
        raise ValidationError(f"path {path!r} is not canonical", fields=["path"])
    return path


@dataclass(frozen=True)
class ResourceURI:
    scheme: str
    authority: str = ""
    path: str = "/"

    def __post_init__(self):
        object.__setattr__(self, "path", canonical_path(self.path))
        if self.scheme not in _REGISTRY:
            raise UnsupportedProtocolError(f"unknown scheme {self.scheme!r}", scheme=self.scheme)

    @classmethod
    def parse(cls, text: str) -> "ResourceURI":
        u = urlsplit(text)
        if not u.scheme:
            raise ValidationError(f"URI {text!r} has no scheme", fields=["uri"])
        return cls(u.scheme, u.netloc, u.path or "/")

    def child(self, rel: str) -> "ResourceURI":
        base = self.path.rstrip("/")
        return ResourceURI(self.scheme, self.authority, f"{base}/{rel.lstrip('/')}")

    def __str__(self) -> str:
        return f"{self.scheme}://{self.authority}{self.path}"


@dataclass(frozen=True)
class Credential:
    kind: str = "none"          # none | password | token
    principal: str = ""
    secret: bytes = b""

    def __post_init__(self):
        if self.kind not in ("none", "password", "token"):
            raise ValidationError(f"unknown credential kind {self.kind!r}", fields=["kind"])
        if isinstance(self.secret, str):
            object.__setattr__(self, "secret", self.secret.encode())
        if self.kind == "none" and self.secret:
            raise ValidationError("credential of kind none must not carry a secret", fields=["secret"])

    def __repr__(self) -> str:
        # never print secrets
        return f"Credential(kind={self.kind!r}, principal={self.principal!r})"

    @classmethod
    def none(cls) -> "Credential":
        return cls()


@dataclass(frozen=True)
class Stat:
    name: str
    size: int
    is_dir: bool = False
    mtime: int = 0                      # epoch ms
    children: tuple | None = None

    def __post_init__(self):
        if self.size < 0:
            raise ValidationError("size must be >= 0", fields=["size"])
        if not self.is_dir and self.children is not None:
            raise ValidationError("files have no children", fields=["children"])
        if self.is_dir and self.children is None:
            object.__setattr__(self, "children", ())

    def walk(self, prefix: str = "") -> Iterator[tuple[str, "Stat"]]:
        """(relative path, Stat) for every file in the subtree."""
        if not self.is_dir:
            yield (prefix or self.name), self
            return
        for c in self.children:
            yield from c.walk(f"{prefix}/{c.name}" if prefix else c.name)

    def to_dict(self) -> dict:
        d = {"name": self.name, "size": self.size, "is_dir": self.is_dir, "mtime": self.mtime}
        if self.is_dir:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Stat":
        kids = d.get("children")
        return cls(d["name"], int(d["size"]), bool(d.get("is_dir")), int(d.get("mtime", 0)),
                   tuple(cls.from_dict(c) for c in kids) if kids is not None else None)


def dir_stat(name: str, children, mtime: int = 0) -> Stat:
    kids = tuple(sorted(children, key=lambda s: s.name))
    return Stat(name, sum(c.size for c in kids), True, mtime, kids)


@dataclass(frozen=True)
class DataSlice:
    file_id: str
    offset: int
    length: int
    payload: bytes = field(repr=False, default=b"")
    last: bool = False

    def __post_init__(self):
        if len(self.payload) != self.length:
            raise ValidationError("payload length does not match slice length", fields=["payload"])
        if self.offset < 0:
            raise ValidationError("offset must be >= 0", fields=["offset"])

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class Capabilities:
    max_chunk: int
    out_of_order: bool = True
    parallel: bool = True
    bounded_reorder: bool = False   # sink window is pp*p slices when True


@dataclass(frozen=True)
class TranslationPlan:
    src: str
    dst: str
    chunk_size: int
    out_of_order: bool
    parallel_honored: bool
    bounded_reorder: bool

    @property
    def identity(self) -> bool:
        return self.src == self.dst

    def reorder_window(self, params: ParamVector) -> int | None:
        """Slices the sink may hold out of order; None means unbounded."""
        return params.pp * params.p if self.bounded_reorder else None

    def effective_chunk(self, requested: int | None = None) -> int:
        return min(requested, self.chunk_size) if requested else self.chunk_size

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "chunk_size": self.chunk_size,
                "out_of_order": self.out_of_order, "parallel_honored": self.parallel_honored,
                "bounded_reorder": self.bounded_reorder, "identity": self.identity}


# ---------------------------------------------------------------- adapter SPI

class ReadChannel:
    """One independent read path (for odsp: one connection)."""

    def read_many(self, ranges) -> list[bytes]:
        raise NotImplementedError

    def set_window(self, pp: int) -> None:
        """Change how many requests may be in flight; takes effect on the next call."""

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class WriteChannel:
    def write_many(self, slices) -> None:
        raise NotImplementedError

    def set_window(self, pp: int) -> None:
        pass

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ReadHandle:
    size: int

    def crc(self) -> int:
        raise NotImplementedError

    def open_channel(self, pp: int = 1) -> ReadChannel:
        raise NotImplementedError


class WriteHandle:
    def open_channel(self, pp: int = 1) -> WriteChannel:
        raise NotImplementedError

    def commit(self, crc: int) -> Stat:
        raise NotImplementedError

    def abort(self) -> None:
        raise NotImplementedError


class Adapter:
    scheme = ""
    caps = Capabilities(max_chunk=4 * 1024 * 1024)

    def authenticate(self, authority: str, cred: Credential) -> None:
        pass

    def stat(self, session: "Session", path: str) -> Stat:
        raise NotImplementedError

    def open_read(self, session: "Session", path: str) -> ReadHandle:
        raise NotImplementedError

    def open_write(self, session: "Session", path: str, size: int, transfer_id: str,
                   resume: bool) -> WriteHandle:
        raise NotImplementedError

    def remove(self, session: "Session", path: str) -> None:
        raise NotImplementedError


_REGISTRY: dict[str, Adapter] = {}
_REGISTRY_LOCK = threading.Lock()


def register(adapter: Adapter) -> Adapter:
    with _REGISTRY_LOCK:
        _REGISTRY[adapter.scheme] = adapter
    return adapter


def adapter_for(scheme: str) -> Adapter:
    try:
        return _REGISTRY[scheme]
    except KeyError:
        raise UnsupportedProtocolError(f"unknown scheme {scheme!r}", scheme=scheme) from None


def schemes() -> tuple:
    return tuple(sorted(_REGISTRY))


# ---------------------------------------------------------------- public API

@dataclass(frozen=True)
class Session:
    scheme: str
    authority: str
    cred: Credential = field(default_factory=Credential)

    @property
    def adapter(self) -> Adapter:
        return adapter_for(self.scheme)


def connect(uri: ResourceURI | str, cred: Credential | None = None) -> Session:
    """Authenticate against ``uri``'s authority; equal arguments give equal sessions."""
    if isinstance(uri, str):
        uri = ResourceURI.parse(uri)
    cred = cred or Credential()
    adapter = adapter_for(uri.scheme)
    adapter.authenticate(uri.authority, cred)
    return Session(uri.scheme, uri.authority, cred)


def list_tree(session: Session, path: str) -> Stat:
    return session.adapter.stat(session, canonical_path(path))


def translate_capabilities(src_scheme: str, dst_scheme: str) -> TranslationPlan:
    s, d = adapter_for(src_scheme).caps, adapter_for(dst_scheme).caps
    return TranslationPlan(
        src=src_scheme, dst=dst_scheme,
        chunk_size=min(s.max_chunk, d.max_chunk),
        out_of_order=d.out_of_order,
        parallel_honored=s.parallel and d.parallel,
        bounded_reorder=d.bounded_reorder,
    )


def stripes(size: int, p: int) -> list[tuple[int, int]]:
    """Split ``[0, size)`` into ``p`` contiguous stripes (fewer when size < p)."""
    if size == 0:
        return [(0, 0)]
    p = max(1, min(p, size))
    edges = [size * i // p for i in range(p + 1)]
    return [(a, b) for a, b in zip(edges, edges[1:])]


def chunked(start: int, end: int, chunk: int) -> list[tuple[int, int]]:
    """(offset, length) pieces of ``[start, end)``."""
    return [(o, min(chunk, end - o)) for o in range(start, end, chunk)]


class Tap:
    """Readable file. ``slices()`` emits DataSlices over up to p channels."""

    def __init__(self, session: Session, path: str, file_id: str | None = None):
        self.session = session
        self.path = canonical_path(path)
        self.file_id = file_id or self.path
        self.handle = session.adapter.open_read(session, self.path)

    @property
    def size(self) -> int:
        return self.handle.size

    def crc(self) -> int:
        return self.handle.crc()

    def channel(self, pp: int = 1) -> ReadChannel:
        return self.handle.open_channel(pp)

    def slices(self, params: ParamVector = ParamVector(), chunk_size: int | None = None,
               ranges=None) -> Iterator[DataSlice]:
        """Yield slices covering ``ranges`` (default: the whole file).

        Each of up to ``params.p`` channel threads owns a contiguous stripe and
        keeps ``params.pp`` reads in flight; slices from one channel arrive in
        offset order. On a read failure the iterator raises StreamError with
        the end of the contiguous delivered prefix.
        """
        chunk = chunk_size or self.session.adapter.caps.max_chunk
        size = self.size
        if size == 0:
            yield DataSlice(self.file_id, 0, 0, b"", True)
            return
        spans = [r for r in ranges if r[1] > r[0]] if ranges is not None else stripes(size, params.p)
        delivered = RangeSet()
        out: queue.Queue = queue.Queue(maxsize=max(4, params.p * params.pp * 2))
        stop = threading.Event()

        def run(span):
            try:
                with self.channel(params.pp) as ch:
                    pieces = chunked(span[0], span[1], chunk)
                    for i in range(0, len(pieces), params.pp):
                        if stop.is_set():
                            return
                        batch = pieces[i:i + params.pp]
                        for (off, n), data in zip(batch, ch.read_many(batch)):
                            out.put(DataSlice(self.file_id, off, n, data, off + n == size))
            except OdsError as exc:
                out.put(exc)
            except OSError as exc:
                out.put(StreamError(f"read failed: {exc}"))
            finally:
                out.put(None)

        workers = [threading.Thread(target=run, args=(s,), daemon=True) for s in spans]
        for w in workers:
            w.start()
        live = len(workers)
        try:
            while live:
                item = out.get()
                if item is None:
                    live -= 1
                elif isinstance(item, Exception):
                    raise StreamError(item.message or str(item), last_offset=delivered.contiguous_prefix(0),
                                      cause=getattr(item, "code", "io"))
                else:
                    delivered.add(item.offset, item.end)
                    yield item
        finally:
            stop.set()
            while live:
                if out.get() is None:
                    live -= 1


class Sink:
    """Writable file staged out of sight until ``finalize``."""

    def __init__(self, session: Session, path: str, expected_size: int,
                 transfer_id: str | None = None, resume: bool = False, present=()):
        if expected_size < 0:
            raise ValidationError("expected_size must be >= 0", fields=["expected_size"])
        self.session = session
        self.path = canonical_path(path)
        self.expected_size = expected_size
        self.transfer_id = transfer_id or uuid.uuid4().hex
        self.handle = session.adapter.open_write(session, self.path, expected_size,
                                                 self.transfer_id, resume)
        self.received = RangeSet(present)
        self._overlap = False
        self._lock = threading.Lock()
        self._default: WriteChannel | None = None
        self.closed = False

    def channel(self, pp: int = 1) -> "SinkChannel":
        return SinkChannel(self, self.handle.open_channel(pp))

    def _record(self, slices) -> None:
        with self._lock:
            for s in slices:
                if s.end > self.expected_size:
                    self._overlap = True
                try:
                    self.received.add(s.offset, s.end, strict=True)
                except OverlapError:
                    self._overlap = True

    def write(self, s: DataSlice) -> None:
        with self._lock:
            if self._default is None:
                self._default = self.handle.open_channel(1)
            self._default.write_many([s])
        self._record([s])

    def missing(self) -> list[tuple[int, int]]:
        return self.received.gaps(0, self.expected_size)

    def finalize(self, crc: int) -> Stat:
        """Verify coverage and checksum, then make the object visible atomically."""
        if self._default is not None:
            self._default.close()
            self._default = None
        gaps = self.missing()
        if self._overlap or gaps:
            self.abort()
            raise IntegrityError(
                f"{self.path}: " + ("overlapping or out-of-range slices" if self._overlap
                                    else f"missing byte ranges {gaps[:4]}"),
                gaps=gaps[:16], overlap=self._overlap)
        try:
            st = self.handle.commit(crc)
        except IntegrityError:
            self.abort()
            raise
        self.closed = True
        return st

    def abort(self) -> None:
        if self._default is not None:
            self._default.close()
            self._default = None
        if not self.closed:
            self.handle.abort()
            self.closed = True


class SinkChannel:
    def __init__(self, sink: Sink, ch: WriteChannel):
        self.sink = sink
        self.ch = ch

    def write_many(self, slices) -> None:
        slices = list(slices)
        self.ch.write_many(slices)
        self.sink._record(slices)

    def set_window(self, pp: int) -> None:
        self.ch.set_window(pp)

    def close(self) -> None:
        self.ch.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def tap(session: Session, path: str, params: ParamVector | None = None) -> Tap:
    """Open ``path`` for reading. ``params`` is accepted for symmetry; pass it to ``slices``."""
    st = list_tree(session, path)
    if st.is_dir:
        raise ValidationError(f"{path} is a directory; tap its files individually", fields=["path"])
    return Tap(session, path)


def sink(session: Session, path: str, expected_size: int, **kw) -> Sink:
    return Sink(session, path, expected_size, **kw)


def copy(src: Session, src_path: str, dst: Session, dst_path: str,
         params: ParamVector = ParamVector(), chunk_size: int | None = None) -> Stat:
    """Single-file tap-to-sink transfer (no journal); used by tests and tooling."""
    t = tap(src, src_path)
    plan = translate_capabilities(src.scheme, dst.scheme)
    chunk = plan.effective_chunk(chunk_size)
    s = sink(dst, dst_path, t.size)
    try:
        with s.channel(params.pp) as ch:
            for sl in t.slices(params, chunk):
                ch.write_many([sl])
        return s.finalize(t.crc())
    except BaseException:
        s.abort()
        raise


def require_file(st: Stat | None, path: str) -> Stat:
    if st is None:
        raise NotFoundError(f"no such path: {path}", path=path)
    return st

"""In-memory object store with whole-object commit, standing in for a cloud drive.

Stores are process-wide and addressed by name (``mem://<store>/path``). A
store may require a bearer token and may cap its total size.
"""
from __future__ import annotations

import hmac
import threading
import time

from ..errors import CapacityError, CredentialError, IntegrityError, NotFoundError
from .base import (Adapter, Capabilities, ReadChannel, ReadHandle, Stat, WriteChannel, WriteHandle,
                   crc32c, dir_stat, register)


def _now_ms() -> int:
    return int(time.time() * 1000)


class MemStore:
    """Flat map of absolute object paths to immutable bytes; directories are implied."""

    _stores: dict[str, "MemStore"] = {}
    _stores_lock = threading.Lock()

    def __init__(self, name: str = "", token: bytes | None = None, capacity: int | None = None):
        self.name = name
        self.token = token.encode() if isinstance(token, str) else token
        self.capacity = capacity
        self.objects: dict[str, tuple[bytes, int, int]] = {}   # path -> (data, mtime ms, crc)
        self.staging: dict[str, tuple[str, bytearray]] = {}    # transfer id -> (path, buffer)
        self.lock = threading.RLock()

    @classmethod
    def get(cls, name: str, create: bool = True, **kw) -> "MemStore":
        with cls._stores_lock:
            store = cls._stores.get(name)
            if store is None:
                if not create:
                    raise NotFoundError(f"no mem store named {name!r}", store=name)
                store = cls._stores[name] = cls(name, **kw)
            return store

    @classmethod
    def drop(cls, name: str) -> None:
        with cls._stores_lock:
            cls._stores.pop(name, None)

    def used(self) -> int:
        with self.lock:
            return (sum(len(d) for d, _, _ in self.objects.values())
                    + sum(len(b) for _, b in self.staging.values()))

    def put(self, path: str, data: bytes) -> None:
        with self.lock:
            self.objects[path] = (bytes(data), _now_ms(), crc32c(data))

    def read(self, path: str) -> bytes:
        with self.lock:
            try:
                return self.objects[path][0]
            except KeyError:
                raise NotFoundError(f"no such object: {path}", path=path) from None

    def crc(self, path: str) -> int:
        with self.lock:
            return self.objects[path][2]

    def stat(self, path: str) -> Stat:
        with self.lock:
            if path in self.objects:
                data, mtime, _ = self.objects[path]
                return Stat(path.rsplit("/", 1)[-1], len(data), False, mtime)
            prefix = "/" if path == "/" else path + "/"
            entries = [(p[len(prefix):], v) for p, v in self.objects.items() if p.startswith(prefix)]
            if not entries and path != "/":
                raise NotFoundError(f"no such path: {path}", path=path)
        return self._tree(path.rsplit("/", 1)[-1] or "/", entries)

    def _tree(self, name: str, entries) -> Stat:
        files, subdirs = [], {}
        for rel, (data, mtime, _) in entries:
            head, sep, tail = rel.partition("/")
            if sep:
                subdirs.setdefault(head, []).append((tail, (data, mtime, 0)))
            else:
                files.append(Stat(head, len(data), False, mtime))
        kids = files + [self._tree(n, e) for n, e in subdirs.items()]
        return dir_stat(name, kids, max((c.mtime for c in kids), default=0))

    def begin(self, transfer_id: str, path: str, size: int, resume: bool) -> bytearray:
        with self.lock:
            if resume and transfer_id in self.staging:
                return self.staging[transfer_id][1]
            if self.capacity is not None and self.used() + size > self.capacity:
                raise CapacityError(f"store {self.name!r} cannot hold {size} more bytes",
                                    capacity=self.capacity)
            buf = bytearray(size)
            self.staging[transfer_id] = (path, buf)
            return buf

    def commit(self, transfer_id: str, crc: int) -> Stat:
        with self.lock:
            path, buf = self.staging[transfer_id]
            got = crc32c(buf)
            if got != crc:
                raise IntegrityError(f"{path}: crc32c {got:08x} != expected {crc:08x}",
                                     expected=crc, actual=got)
            del self.staging[transfer_id]
            data = bytes(buf)
            mtime = _now_ms()
            self.objects[path] = (data, mtime, got)
            return Stat(path.rsplit("/", 1)[-1], len(data), False, mtime)

    def abort(self, transfer_id: str) -> None:
        with self.lock:
            self.staging.pop(transfer_id, None)

    def remove(self, path: str) -> None:
        with self.lock:
            if self.objects.pop(path, None) is None:
                raise NotFoundError(f"no such object: {path}", path=path)


class _Reader(ReadChannel):
    def __init__(self, data: bytes):
        self.view = memoryview(data)

    def read_many(self, ranges) -> list[bytes]:
        return [bytes(self.view[o:o + n]) for o, n in ranges]


class _ReadHandle(ReadHandle):
    def __init__(self, store: MemStore, path: str):
        self.data = store.read(path)
        self.size = len(self.data)
        self._crc = store.crc(path)

    def crc(self) -> int:
        return self._crc

    def open_channel(self, pp: int = 1) -> ReadChannel:
        return _Reader(self.data)


class _Writer(WriteChannel):
    def __init__(self, buf: bytearray):
        self.buf = buf

    def write_many(self, slices) -> None:
        for s in slices:
            self.buf[s.offset:s.end] = s.payload


class _WriteHandle(WriteHandle):
    def __init__(self, store: MemStore, path: str, size: int, transfer_id: str, resume: bool):
        self.store = store
        self.transfer_id = transfer_id
        self.buf = store.begin(transfer_id, path, size, resume)

    def open_channel(self, pp: int = 1) -> WriteChannel:
        return _Writer(self.buf)

    def commit(self, crc: int) -> Stat:
        return self.store.commit(self.transfer_id, crc)

    def abort(self) -> None:
        self.store.abort(self.transfer_id)


class MemAdapter(Adapter):
    scheme = "mem"
    caps = Capabilities(max_chunk=16 * 1024 * 1024)

    def authenticate(self, authority: str, cred) -> None:
        store = MemStore.get(authority)
        if store.token is not None:
            if cred.kind != "token" or not hmac.compare_digest(cred.secret, store.token):
                raise CredentialError(f"token rejected by mem store {authority!r}")

    def _store(self, session) -> MemStore:
        return MemStore.get(session.authority)

    def stat(self, session, path: str) -> Stat:
        return self._store(session).stat(path)

    def open_read(self, session, path: str) -> ReadHandle:
        return _ReadHandle(self._store(session), path)

    def open_write(self, session, path: str, size: int, transfer_id: str, resume: bool) -> WriteHandle:
        return _WriteHandle(self._store(session), path, size, transfer_id, resume)

    def remove(self, session, path: str) -> None:
        self._store(session).remove(path)


ADAPTER = register(MemAdapter())

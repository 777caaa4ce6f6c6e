"""Local directory trees. Writes are staged beside the destination and renamed on commit."""
from __future__ import annotations

import errno
import os
import threading

from ..errors import CapacityError, CredentialError, EndpointError, IntegrityError, NotFoundError
from .base import (CRC_BLOCK, STAGING_DIR, Adapter, Capabilities, ReadChannel, ReadHandle, Stat,
                   WriteChannel, WriteHandle, crc32c, dir_stat, register)


def _mtime_ms(st: os.stat_result) -> int:
    return st.st_mtime_ns // 1_000_000


def _io_error(exc: OSError, path: str):
    if exc.errno == errno.ENOSPC:
        return CapacityError(f"no space left writing {path}", path=path)
    if exc.errno == errno.ENOENT:
        return NotFoundError(f"no such path: {path}", path=path)
    return EndpointError(f"{path}: {exc.strerror or exc}", path=path)


def file_crc(path: str) -> int:
    value = 0
    with open(path, "rb") as fh:
        while block := fh.read(CRC_BLOCK):
            value = crc32c(block, value)
    return value


class _Reader(ReadChannel):
    def __init__(self, path: str):
        self.fd = os.open(path, os.O_RDONLY)
        self.path = path

    def read_many(self, ranges) -> list[bytes]:
        out = []
        for off, n in ranges:
            data = os.pread(self.fd, n, off)
            if len(data) != n:
                raise EndpointError(f"short read at {off} in {self.path}", path=self.path)
            out.append(data)
        return out

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


class _ReadHandle(ReadHandle):
    def __init__(self, path: str):
        self.path = path
        try:
            self.size = os.stat(path).st_size
        except OSError as exc:
            raise _io_error(exc, path) from None
        self._crc = None

    def crc(self) -> int:
        if self._crc is None:
            self._crc = file_crc(self.path)
        return self._crc

    def open_channel(self, pp: int = 1) -> ReadChannel:
        try:
            return _Reader(self.path)
        except OSError as exc:
            raise _io_error(exc, self.path) from None


class _Writer(WriteChannel):
    def __init__(self, path: str):
        self.fd = os.open(path, os.O_WRONLY)
        self.path = path

    def write_many(self, slices) -> None:
        try:
            for s in slices:
                if s.length:
                    os.pwrite(self.fd, s.payload, s.offset)
        except OSError as exc:
            raise _io_error(exc, self.path) from None

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


class _WriteHandle(WriteHandle):
    def __init__(self, dest: str, size: int, transfer_id: str, resume: bool):
        self.dest = dest
        self.size = size
        parent = os.path.dirname(dest)
        self.staging_dir = os.path.join(parent, STAGING_DIR)
        self.staged = os.path.join(self.staging_dir, f"{transfer_id}.{os.path.basename(dest)}.part")
        try:
            os.makedirs(self.staging_dir, exist_ok=True)
            if not (resume and os.path.exists(self.staged)):
                with open(self.staged, "wb") as fh:
                    fh.truncate(size)
        except OSError as exc:
            raise _io_error(exc, dest) from None

    def open_channel(self, pp: int = 1) -> WriteChannel:
        try:
            return _Writer(self.staged)
        except OSError as exc:
            raise _io_error(exc, self.dest) from None

    def commit(self, crc: int) -> Stat:
        got = file_crc(self.staged)
        if got != crc:
            raise IntegrityError(f"{self.dest}: crc32c {got:08x} != expected {crc:08x}",
                                 expected=crc, actual=got)
        fd = os.open(self.staged, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)
        os.replace(self.staged, self.dest)
        self._tidy()
        st = os.stat(self.dest)
        return Stat(os.path.basename(self.dest), st.st_size, False, _mtime_ms(st))

    def abort(self) -> None:
        try:
            os.unlink(self.staged)
        except FileNotFoundError:
            pass
        self._tidy()

    def _tidy(self) -> None:
        try:
            os.rmdir(self.staging_dir)
        except OSError:
            pass


class LocalFSAdapter(Adapter):
    scheme = "localfs"
    caps = Capabilities(max_chunk=64 * 1024 * 1024)

    def __init__(self):
        self._lock = threading.Lock()

    def authenticate(self, authority: str, cred) -> None:
        if authority not in ("", "localhost"):
            raise CredentialError(f"localfs serves only the local host, not {authority!r}")

    def stat(self, session, path: str) -> Stat:
        try:
            return self._stat(path, os.path.basename(path) or "/")
        except OSError as exc:
            raise _io_error(exc, path) from None

    def _stat(self, path: str, name: str) -> Stat:
        st = os.stat(path)
        if not os.path.isdir(path):
            return Stat(name, st.st_size, False, _mtime_ms(st))
        kids = [self._stat(os.path.join(path, c), c) for c in sorted(os.listdir(path)) if c != STAGING_DIR]
        return dir_stat(name, kids, _mtime_ms(st))

    def open_read(self, session, path: str) -> ReadHandle:
        if os.path.isdir(path):
            raise NotFoundError(f"{path} is a directory", path=path)
        return _ReadHandle(path)

    def open_write(self, session, path: str, size: int, transfer_id: str, resume: bool) -> WriteHandle:
        parent = os.path.dirname(path)
        try:
            os.makedirs(parent, exist_ok=True)
        except OSError as exc:
            raise _io_error(exc, parent) from None
        return _WriteHandle(path, size, transfer_id, resume)

    def remove(self, session, path: str) -> None:
        try:
            os.unlink(path)
        except OSError as exc:
            raise _io_error(exc, path) from None


ADAPTER = register(LocalFSAdapter())

"""odsp: chunked request/response storage protocol over TCP.

The server keeps objects in a MemStore. A client channel is one TCP
connection that authenticates, opens one file, and keeps up to ``pp``
READ or WRITE requests in flight before it waits for a response.
"""
from __future__ import annotations

import hmac
import itertools
import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field

from ..errors import (CapacityError, ConnectivityError, CredentialError, EndpointError,
                      IntegrityError, NotFoundError, OdsError, StreamError, ValidationError)
from . import odsp_wire as w
from .base import (Adapter, Capabilities, ReadChannel, ReadHandle, Stat, WriteChannel, WriteHandle,
                   register)
from .mem import MemStore

log = logging.getLogger(__name__)

DEFAULT_PORT = 7617
CONNECT_TIMEOUT = 5.0


# ---------------------------------------------------------------- server

class _Conn(socketserver.BaseRequestHandler):
    server: "_TCPServer"

    def setup(self):
        self.principal = None
        self.reader = None          # bytes of the file opened for reading
        self.write_id = None        # transfer id of the staged write
        self.reads = 0

    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        odsp = self.server.odsp
        while True:
            try:
                ftype, rid, payload = w.read_frame(sock)
            except (ConnectionError, OSError):
                return
            except w.ProtocolError as exc:
                log.warning("odsp: dropping connection: %s", exc)
                return
            try:
                body = self.dispatch(odsp, ftype, payload)
            except w.ProtocolError as exc:
                body = w.error(w.BAD_REQUEST, str(exc))
            except (IndexError, ValueError, UnicodeDecodeError) as exc:
                body = w.error(w.BAD_REQUEST, f"malformed request: {exc}")
            except OdsError as exc:
                body = w.error(_status_for(exc), exc.message)
            if ftype == w.READ and odsp.fail_after_reads is not None:
                self.reads += 1
                if self.reads > odsp.fail_after_reads:
                    sock.close()
                    return
            try:
                sock.sendall(w.frame(w.RESPONSE | ftype, rid, body))
            except OSError:
                return
            if ftype == w.CLOSE:
                return

    def dispatch(self, odsp: "OdspServer", ftype: int, p: bytes) -> bytes:
        store = odsp.store
        if ftype == w.OPEN and p and p[0] == w.AUTH:
            kind = p[1]
            principal, pos = w.unpack_str(p, 2)
            secret, _ = w.unpack_str(p, pos)
            if not odsp.check(kind, principal.decode(), secret):
                raise CredentialError("authentication failed")
            self.principal = principal.decode()
            return bytes([w.OK])
        if self.principal is None:
            return w.error(w.DENIED, "authenticate with OPEN mode 0 first")

        if ftype == w.OPEN:
            mode = p[0]
            path, pos = w.unpack_str(p, 1)
            path = path.decode()
            if mode == w.OPEN_READ:
                self.reader = store.read(path)
                self.write_id = None
                return w.READ_OK.pack(w.OK, len(self.reader), store.crc(path))
            if mode in (w.OPEN_WRITE, w.OPEN_RESUME):
                (size,) = w.U64.unpack_from(p, pos)
                tid, _ = w.unpack_str(p, pos + 8)
                tid = tid.decode()
                store.begin(tid, path, size, resume=(mode == w.OPEN_RESUME))
                self.write_id, self.reader = tid, None
                return bytes([w.OK])
            raise w.ProtocolError(f"unknown OPEN mode {mode}")
        if ftype == w.STAT:
            path, _ = w.unpack_str(p, 0)
            path = path.decode()
            st = store.stat(path).to_dict()
            if not st["is_dir"]:
                st["crc32c"] = store.crc(path)
            return bytes([w.OK]) + json.dumps(st, separators=(",", ":")).encode()
        if ftype == w.READ:
            if self.reader is None:
                return w.error(w.BAD_STATE, "no file open for reading")
            off, n = w.RANGE.unpack_from(p, 0)
            if off + n > len(self.reader):
                raise w.ProtocolError("read past end of file")
            return bytes([w.OK]) + self.reader[off:off + n]
        if ftype == w.WRITE:
            if self.write_id is None:
                return w.error(w.BAD_STATE, "no file open for writing")
            off, n = w.RANGE.unpack_from(p, 0)
            data = p[w.RANGE.size:]
            if len(data) != n:
                raise w.ProtocolError("WRITE length does not match payload")
            with store.lock:
                staged = store.staging.get(self.write_id)
            if staged is None:
                return w.error(w.BAD_STATE, "staged write is gone")
            buf = staged[1]
            if off + n > len(buf):
                raise w.ProtocolError("write past expected size")
            buf[off:off + n] = data
            return bytes([w.OK])
        if ftype == w.COMMIT:
            if self.write_id is None:
                return w.error(w.BAD_STATE, "no file open for writing")
            (crc,) = w.U32.unpack_from(p, 0)
            st = store.commit(self.write_id, crc)
            self.write_id = None
            return bytes([w.OK]) + json.dumps(st.to_dict()).encode()
        if ftype == w.CLOSE:
            if p and p[0] == 1 and self.write_id is not None:
                store.abort(self.write_id)
            self.write_id = self.reader = None
            return bytes([w.OK])
        raise w.ProtocolError(f"unknown frame type {ftype:#x}")


def _status_for(exc: OdsError) -> int:
    if isinstance(exc, NotFoundError):
        return w.NOT_FOUND
    if isinstance(exc, CredentialError):
        return w.DENIED
    if isinstance(exc, IntegrityError):
        return w.INTEGRITY
    if isinstance(exc, CapacityError):
        return w.NO_SPACE
    if isinstance(exc, ValidationError):
        return w.BAD_REQUEST
    return w.IO_ERROR


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    odsp: "OdspServer"


class OdspServer:
    """Threaded odsp server over a MemStore.

    ``users`` maps principal to password; ``tokens`` is a set of accepted
    bearer tokens. With neither configured, anonymous access is allowed.
    ``fail_after_reads`` drops each connection after that many READs, for
    fault-injection tests.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, store: MemStore | None = None,
                 users: dict | None = None, tokens=()):
        self.store = store or MemStore()
        self.users = {k: (v.encode() if isinstance(v, str) else v) for k, v in (users or {}).items()}
        self.tokens = {t.encode() if isinstance(t, str) else t for t in tokens}
        self.fail_after_reads: int | None = None
        self._srv = _TCPServer((host, port), _Conn)
        self._srv.odsp = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._srv.server_address[:2]

    @property
    def authority(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def check(self, kind: int, principal: str, secret: bytes) -> bool:
        if not self.users and not self.tokens:
            return True
        if kind == w.CRED_KINDS["password"] and principal in self.users:
            return hmac.compare_digest(self.users[principal], secret)
        if kind == w.CRED_KINDS["token"]:
            return any(hmac.compare_digest(t, secret) for t in self.tokens)
        return False

    def start(self) -> "OdspServer":
        self._thread = threading.Thread(target=self._srv.serve_forever, name="odsp-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._srv.serve_forever()

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# ---------------------------------------------------------------- client

@dataclass
class OdspTrace:
    """Outstanding-request accounting per connection, for protocol assertions."""

    max_outstanding: dict = field(default_factory=dict)   # conn id -> max in flight
    windows: dict = field(default_factory=dict)           # conn id -> configured pp
    requests: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, conn_id: int, window: int, outstanding: int) -> None:
        with self._lock:
            self.requests += 1
            self.windows[conn_id] = window
            if outstanding > self.max_outstanding.get(conn_id, 0):
                self.max_outstanding[conn_id] = outstanding

    def violations(self) -> list:
        return [c for c, m in self.max_outstanding.items() if m > self.windows[c]]

    def peak(self) -> int:
        return max(self.max_outstanding.values(), default=0)


_conn_ids = itertools.count(1)


class OdspConnection:
    def __init__(self, authority: str, cred, window: int = 1, trace: OdspTrace | None = None):
        host, _, port = authority.rpartition(":")
        if not host:
            host, port = authority, DEFAULT_PORT
        try:
            self.sock = socket.create_connection((host, int(port)), timeout=CONNECT_TIMEOUT)
        except (OSError, ValueError) as exc:
            raise ConnectivityError(f"cannot reach odsp server {authority}: {exc}", authority=authority) from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(60)
        self.window = max(1, window)
        self.trace = trace
        self.id = next(_conn_ids)
        self._rid = itertools.count(1)
        try:
            self.call(w.OPEN, w.open_auth(cred.kind, cred.principal, cred.secret))
        except BaseException:
            self.sock.close()
            raise

    def call(self, ftype: int, payload: bytes = b"") -> bytes:
        return self.pipeline([(ftype, payload)])[0]

    def pipeline(self, requests) -> list[bytes]:
        """Send requests keeping at most ``window`` unanswered; return response bodies in order."""
        requests = list(requests)
        out: list[bytes] = []
        sent: list[tuple[int, int]] = []
        i = 0
        try:
            while len(out) < len(requests):
                while i < len(requests) and len(sent) - len(out) < self.window:
                    ftype, payload = requests[i]
                    rid = next(self._rid)
                    self.sock.sendall(w.frame(ftype, rid, payload))
                    sent.append((ftype, rid))
                    i += 1
                    if self.trace is not None:
                        self.trace.record(self.id, self.window, len(sent) - len(out))
                rtype, rid, body = w.read_frame(self.sock)
                want_type, want_rid = sent[len(out)]
                if rtype != (w.RESPONSE | want_type) or rid != want_rid:
                    raise w.ProtocolError(f"response {rtype:#x}/{rid} does not match request {want_rid}")
                out.append(body)
        except (OSError, ConnectionError) as exc:
            raise StreamError(f"odsp connection lost: {exc}") from None
        except w.ProtocolError as exc:
            raise EndpointError(f"odsp protocol error: {exc}") from None
        for body in out:
            _raise_for(body)
        return out

    def close(self, discard: bool = False) -> None:
        try:
            self.call(w.CLOSE, b"\x01" if discard else b"")
        except OdsError:
            pass
        finally:
            self.sock.close()


def _raise_for(body: bytes) -> None:
    status = w.status_of(body)
    if status == w.OK:
        return
    msg = body[1:].decode("utf-8", "replace")
    cls = {w.NOT_FOUND: NotFoundError, w.DENIED: CredentialError, w.INTEGRITY: IntegrityError,
           w.NO_SPACE: CapacityError, w.BAD_REQUEST: ValidationError}.get(status, EndpointError)
    raise cls(msg or f"odsp status {status}")


class _Reader(ReadChannel):
    def __init__(self, conn: OdspConnection, path: str):
        self.conn = conn
        conn.call(w.OPEN, w.open_read(path))

    def read_many(self, ranges) -> list[bytes]:
        bodies = self.conn.pipeline([(w.READ, w.read_req(o, n)) for o, n in ranges])
        out = []
        for (o, n), b in zip(ranges, bodies):
            if len(b) - 1 != n:
                raise StreamError(f"short READ at offset {o}", last_offset=o)
            out.append(b[1:])
        return out

    def set_window(self, pp: int) -> None:
        self.conn.window = max(1, pp)

    def close(self) -> None:
        self.conn.close()


class _ReadHandle(ReadHandle):
    def __init__(self, adapter: "OdspAdapter", session, path: str):
        self.adapter, self.session, self.path = adapter, session, path
        conn = adapter.connection(session)
        try:
            body = conn.call(w.OPEN, w.open_read(path))
        finally:
            conn.close()
        _, self.size, self._crc = w.READ_OK.unpack_from(body, 0)

    def crc(self) -> int:
        return self._crc

    def open_channel(self, pp: int = 1) -> ReadChannel:
        return _Reader(self.adapter.connection(self.session, pp), self.path)


class _Writer(WriteChannel):
    def __init__(self, conn: OdspConnection, path: str, size: int, tid: str):
        self.conn = conn
        conn.call(w.OPEN, w.open_write(path, size, tid, resume=True))

    def write_many(self, slices) -> None:
        self.conn.pipeline([(w.WRITE, w.write_req(s.offset, s.payload)) for s in slices if s.length])

    def set_window(self, pp: int) -> None:
        self.conn.window = max(1, pp)

    def close(self) -> None:
        self.conn.close()


class _WriteHandle(WriteHandle):
    def __init__(self, adapter: "OdspAdapter", session, path: str, size: int, tid: str, resume: bool):
        self.adapter, self.session = adapter, session
        self.path, self.size, self.tid = path, size, tid
        self.control = adapter.connection(session)
        try:
            self.control.call(w.OPEN, w.open_write(path, size, tid, resume))
        except BaseException:
            self.control.close()
            raise

    def open_channel(self, pp: int = 1) -> WriteChannel:
        return _Writer(self.adapter.connection(self.session, pp), self.path, self.size, self.tid)

    def commit(self, crc: int) -> Stat:
        try:
            body = self.control.call(w.COMMIT, w.U32.pack(crc))
        except IntegrityError:
            raise
        self.control.close()
        return Stat.from_dict(json.loads(body[1:]))

    def abort(self) -> None:
        self.control.close(discard=True)


class OdspAdapter(Adapter):
    scheme = "odsp"
    caps = Capabilities(max_chunk=4 * 1024 * 1024, bounded_reorder=True)

    def __init__(self):
        self.trace: OdspTrace | None = None

    def connection(self, session, window: int = 1) -> OdspConnection:
        return OdspConnection(session.authority, session.cred, window, self.trace)

    def authenticate(self, authority: str, cred) -> None:
        from .base import Session
        self.connection(Session(self.scheme, authority, cred)).close()

    def stat(self, session, path: str) -> Stat:
        conn = self.connection(session)
        try:
            body = conn.call(w.STAT, w.pack_str(path))
        finally:
            conn.close()
        return Stat.from_dict(json.loads(body[1:]))

    def open_read(self, session, path: str) -> ReadHandle:
        return _ReadHandle(self, session, path)

    def open_write(self, session, path: str, size: int, transfer_id: str, resume: bool) -> WriteHandle:
        return _WriteHandle(self, session, path, size, transfer_id, resume)


ADAPTER = register(OdspAdapter())

"""Line-delimited JSON service exposing trie queries to external model
loops.

Each request is one JSON object per line: {"op": ..., "request_id": ...,
"session": ..., "payload": ...} with op one of open/allowed/resolve/close.
Responses echo the request_id and carry either "result" or "error"
({"code", "message"}). Error codes: MALFORMED, SESSION_UNKNOWN,
BAD_PREFIX, FINGERPRINT_MISMATCH. Tries are immutable shared state; the
session table is the only synchronized structure.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
import uuid

from .trie import (BadPrefixError, NonTerminalError, SynonymTrie,
                   allowed_next, resolve)

logger = logging.getLogger(__name__)

DEFAULT_IDLE_TIMEOUT = 600.0  # seconds

ERR_MALFORMED = "MALFORMED"
ERR_SESSION_UNKNOWN = "SESSION_UNKNOWN"
ERR_BAD_PREFIX = "BAD_PREFIX"
ERR_FINGERPRINT = "FINGERPRINT_MISMATCH"


class _Session:
    __slots__ = ("session_id", "trie_name", "created_at", "last_used")

    def __init__(self, session_id: str, trie_name: str):
        self.session_id = session_id
        self.trie_name = trie_name
        self.created_at = time.monotonic()
        self.last_used = self.created_at


class MaskService:
    """Protocol core; transport-independent. handle() is safe to call from
    any number of threads."""

    def __init__(self, tries: dict[str, SynonymTrie],
                 idle_timeout: float = DEFAULT_IDLE_TIMEOUT):
        if not tries:
            raise ValueError("at least one trie must be loaded")
        self.tries = dict(tries)
        self.idle_timeout = idle_timeout
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()

    # ------------------------------------------------------------ helpers

    def _error(self, request_id, code, message):
        return {"request_id": request_id, "ok": False,
                "error": {"code": code, "message": message}}

    def _get_session(self, session_id):
        now = time.monotonic()
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                return None
            if now - session.last_used > self.idle_timeout:
                del self._sessions[session_id]
                return None
            session.last_used = now
            return session

    def _expire_idle(self):
        now = time.monotonic()
        with self._lock:
            stale = [sid for sid, s in self._sessions.items()
                     if now - s.last_used > self.idle_timeout]
            for sid in stale:
                del self._sessions[sid]

    # ------------------------------------------------------------- handle

    def handle_line(self, line: str) -> dict:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(None, ERR_MALFORMED, f"bad JSON: {exc}")
        if not isinstance(request, dict):
            return self._error(None, ERR_MALFORMED, "request must be an object")
        return self.handle(request)

    def handle(self, request: dict) -> dict:
        request_id = request.get("request_id")
        op = request.get("op")
        payload = request.get("payload") or {}
        if not isinstance(payload, dict):
            return self._error(request_id, ERR_MALFORMED, "payload must be an object")
        self._expire_idle()
        if op == "open":
            return self._op_open(request_id, payload)
        if op in ("allowed", "resolve", "close"):
            session = self._get_session(request.get("session"))
            if session is None:
                return self._error(request_id, ERR_SESSION_UNKNOWN,
                                   f"unknown or expired session: {request.get('session')}")
            if op == "allowed":
                return self._op_allowed(request_id, session, payload)
            if op == "resolve":
                return self._op_resolve(request_id, session, payload)
            return self._op_close(request_id, session)
        return self._error(request_id, ERR_MALFORMED, f"unknown op: {op!r}")

    def _op_open(self, request_id, payload):
        name = payload.get("trie")
        trie = self.tries.get(name)
        if trie is None:
            return self._error(request_id, ERR_MALFORMED,
                               f"unknown trie: {name!r}; loaded: {sorted(self.tries)}")
        expected = payload.get("fingerprint")
        if expected is not None and expected != trie.tokenizer_fingerprint:
            return self._error(request_id, ERR_FINGERPRINT,
                               f"trie tokenizer is {trie.tokenizer_fingerprint}")
        session_id = uuid.uuid4().hex
        with self._lock:
            self._sessions[session_id] = _Session(session_id, name)
        return {"request_id": request_id, "ok": True, "result": {
            "session": session_id,
            "group": trie.group,
            "fingerprint": trie.tokenizer_fingerprint,
        }}

    @staticmethod
    def _token_list(payload, key):
        tokens = payload.get(key)
        if (not isinstance(tokens, list)
                or any(not isinstance(t, int) or isinstance(t, bool) for t in tokens)):
            raise TypeError(f"payload.{key} must be a list of token ids")
        return tokens

    def _op_allowed(self, request_id, session, payload):
        trie = self.tries[session.trie_name]
        try:
            prefix = self._token_list(payload, "prefix")
        except TypeError as exc:
            return self._error(request_id, ERR_MALFORMED, str(exc))
        try:
            tokens, eos = allowed_next(trie, prefix)
        except BadPrefixError as exc:
            return self._error(request_id, ERR_BAD_PREFIX, str(exc))
        return {"request_id": request_id, "ok": True,
                "result": {"tokens": sorted(tokens), "eos": eos}}

    def _op_resolve(self, request_id, session, payload):
        trie = self.tries[session.trie_name]
        try:
            tokens = self._token_list(payload, "tokens")
        except TypeError as exc:
            return self._error(request_id, ERR_MALFORMED, str(exc))
        try:
            concept, surface = resolve(trie, tokens)
        except (BadPrefixError, NonTerminalError) as exc:
            return self._error(request_id, ERR_BAD_PREFIX, str(exc))
        return {"request_id": request_id, "ok": True,
                "result": {"concept": concept, "surface": surface}}

    def _op_close(self, request_id, session):
        with self._lock:
            self._sessions.pop(session.session_id, None)
        return {"request_id": request_id, "ok": True, "result": {"closed": True}}


# ----------------------------------------------------------- TCP transport

class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service = self.server.mask_service
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            response = service.handle_line(line)
            self.wfile.write(json.dumps(response, ensure_ascii=False).encode("utf-8") + b"\n")
            self.wfile.flush()


class MaskServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: MaskService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.mask_service = service

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class MaskClient:
    """Minimal blocking client for the line protocol."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._fh = self._sock.makefile("rwb")
        self._counter = 0
        self._lock = threading.Lock()

    def request(self, op: str, session: str | None = None,
                payload: dict | None = None) -> dict:
        with self._lock:
            self._counter += 1
            request_id = f"c{self._counter}"
            msg = {"op": op, "request_id": request_id}
            if session is not None:
                msg["session"] = session
            if payload is not None:
                msg["payload"] = payload
            self._fh.write(json.dumps(msg, ensure_ascii=False).encode("utf-8") + b"\n")
            self._fh.flush()
            line = self._fh.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        response = json.loads(line)
        if response.get("request_id") != request_id:
            raise ConnectionError("response id does not match request")
        return response

    def close(self):
        try:
            self._fh.close()
        finally:
            self._sock.close()


def serve_stdio(service: MaskService, stdin=None, stdout=None) -> None:
    """Standard-streams transport: one request per line on stdin, one
    response per line on stdout."""
    import sys
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = service.handle_line(line)
        stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        stdout.flush()

"""Masked generation against the medlink mask service.

The service speaks line-delimited JSON over TCP: ops open / allowed /
resolve / close, responses carrying "result" or "error" {code, message}.
All constraint decisions come from the service; this module only
intersects a local model's preferences with the allowed token sets.
"""

from __future__ import annotations

import hashlib
import json
import socket

from .api import BridgeError

EOS_ID = 0  # wire-protocol convention: token ids start at 1


class ServiceError(BridgeError):
    """A service-side error, surfaced verbatim."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class MaskServiceClient:
    """Blocking client for the mask-service line protocol. One socket,
    any number of sessions."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._fh = self._sock.makefile("rwb")
        self._counter = 0

    def _request(self, op, session=None, payload=None) -> dict:
        self._counter += 1
        msg = {"op": op, "request_id": f"b{self._counter}"}
        if session is not None:
            msg["session"] = session
        if payload is not None:
            msg["payload"] = payload
        self._fh.write(json.dumps(msg).encode("utf-8") + b"\n")
        self._fh.flush()
        line = self._fh.readline()
        if not line:
            raise BridgeError("service closed the connection")
        response = json.loads(line)
        if not response.get("ok"):
            err = response.get("error") or {}
            raise ServiceError(err.get("code", "UNKNOWN"),
                               err.get("message", ""))
        return response["result"]

    def open(self, trie: str, fingerprint: str | None = None) -> dict:
        payload = {"trie": trie}
        if fingerprint is not None:
            payload["fingerprint"] = fingerprint
        return self._request("open", payload=payload)

    def allowed(self, session: str, prefix: list[int]) -> tuple[list[int], bool]:
        result = self._request("allowed", session, {"prefix": prefix})
        return result["tokens"], result["eos"]

    def resolve(self, session: str, tokens: list[int]) -> tuple[str, str]:
        result = self._request("resolve", session, {"tokens": tokens})
        return result["concept"], result["surface"]

    def close_session(self, session: str) -> None:
        self._request("close", session)

    def close(self) -> None:
        try:
            self._fh.close()
        finally:
            self._sock.close()


class ToyModel:
    """Stand-in for real model logits: a deterministic hash-based score
    per (input, prefix, token). Good enough to exercise masking; no
    linguistic content whatsoever."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, input_text: str, prefix: tuple[int, ...], token: int) -> int:
        key = f"{self.seed}|{input_text}|{','.join(map(str, prefix))}|{token}"
        return int.from_bytes(
            hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "big")

    def preferred_string(self, input_text: str, alphabet: str = "zqxj",
                         length: int = 12) -> str:
        """Unconstrained greedy output over the model's own toy alphabet;
        the control arm of the demo."""
        out = []
        for i in range(length):
            out.append(max(alphabet,
                           key=lambda ch: self.score(input_text, tuple(out_ids(out)), ord(ch))))
        return "".join(out)


def out_ids(chars: list[str]) -> list[int]:
    return [ord(c) for c in chars]


def masked_generate_demo(address: tuple[str, int], trie: str, input_text: str,
                         model: ToyModel | None = None,
                         fingerprint: str | None = None,
                         max_steps: int = 256,
                         client: MaskServiceClient | None = None) -> dict:
    """Greedy generation where each step's candidates come from the
    service's allowed-token set; the final sequence is resolved by the
    service. Returns {"concept", "surface", "tokens"}.

    Service errors (unknown trie, fingerprint mismatch, ...) propagate
    verbatim as ServiceError.
    """
    model = model or ToyModel()
    own_client = client is None
    if own_client:
        client = MaskServiceClient(*address)
    try:
        session = client.open(trie, fingerprint=fingerprint)["session"]
        prefix: list[int] = []
        for _ in range(max_steps):
            tokens, eos = client.allowed(session, prefix)
            candidates = list(tokens) + ([EOS_ID] if eos else [])
            if not candidates:
                raise BridgeError(f"dead end at prefix {prefix}")
            best = max(candidates,
                       key=lambda t: model.score(input_text, tuple(prefix), t))
            if best == EOS_ID:
                concept, surface = client.resolve(session, prefix)
                client.close_session(session)
                return {"concept": concept, "surface": surface,
                        "tokens": prefix}
            prefix.append(best)
        raise BridgeError(f"no terminal within {max_steps} steps")
    finally:
        if own_client:
            client.close()

"""Batched prompt submission.

Prompt files are NDJSON, one record per line, with a "text" field and an
id field (one of "concept_id", "case_id", or "prompt_id"). Responses are
appended to the output file as NDJSON records that carry the original id
field, the raw completion under "raw", and request provenance (prompt id,
model, timestamp, attempt count) — exactly the shape the toolkit's
ingestion commands consume.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

ID_FIELDS = ("concept_id", "case_id", "prompt_id")


class BridgeError(Exception):
    pass


class CredentialError(BridgeError):
    pass


class TransientError(BridgeError):
    """Retried per the job's policy (rate limits, timeouts, 5xx)."""


class PermanentError(BridgeError):
    """Not retried; lands in the failure report."""


@dataclass(frozen=True)
class ApiJob:
    prompt_path: str
    out_path: str
    model: str
    temperature: float = 0.7
    max_tokens: int = 512
    max_attempts: int = 3
    backoff_s: float = 0.5
    failure_path: str | None = None

    def __post_init__(self):
        if self.max_attempts < 1:
            raise BridgeError("max_attempts must be >= 1")
        if self.backoff_s < 0:
            raise BridgeError("backoff_s must be >= 0")
        if not (0.0 <= self.temperature <= 2.0):
            raise BridgeError("temperature out of range")


class Transport:
    """One chat completion per call. Raise TransientError to trigger a
    retry, PermanentError to fail the prompt outright."""

    def complete(self, prompt_id: str, text: str, job: ApiJob) -> str:
        raise NotImplementedError


class MockTransport(Transport):
    """Canned responses keyed by prompt id; optional failure injection.

    transient_failures[pid] = n makes the first n calls for pid raise
    TransientError; ids in `permanent_failures` always raise.
    """

    def __init__(self, responses: dict[str, str],
                 transient_failures: dict[str, int] | None = None,
                 permanent_failures: set[str] | None = None):
        self.responses = dict(responses)
        self.transient_failures = dict(transient_failures or {})
        self.permanent_failures = set(permanent_failures or ())
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def complete(self, prompt_id, text, job):
        with self._lock:
            self.calls.append(prompt_id)
            remaining = self.transient_failures.get(prompt_id, 0)
            if remaining > 0:
                self.transient_failures[prompt_id] = remaining - 1
                raise TransientError(f"injected transient failure for {prompt_id}")
        if prompt_id in self.permanent_failures:
            raise PermanentError(f"injected permanent failure for {prompt_id}")
        try:
            return self.responses[prompt_id]
        except KeyError:
            raise PermanentError(f"no canned response for {prompt_id}") from None


class HttpTransport(Transport):
    """Minimal OpenAI-style chat endpoint client. Endpoint and key come
    from the environment (LLM_API_BASE, LLM_API_KEY)."""

    def __init__(self, timeout: float = 60.0):
        self.base = os.environ.get("LLM_API_BASE")
        self.key = os.environ.get("LLM_API_KEY")
        self.timeout = timeout
        if not self.base:
            raise CredentialError("LLM_API_BASE is not set")
        if not self.key:
            raise CredentialError("LLM_API_KEY is not set")

    def complete(self, prompt_id, text, job):
        body = json.dumps({
            "model": job.model,
            "temperature": job.temperature,
            "max_tokens": job.max_tokens,
            "messages": [{"role": "user", "content": text}],
        }).encode("utf-8")
        req = urllib.request.Request(
            self.base.rstrip("/") + "/chat/completions", data=body,
            headers={"Authorization": f"Bearer {self.key}",
                     "Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.load(resp)
        except urllib.error.HTTPError as exc:
            if exc.code in (408, 429) or exc.code >= 500:
                raise TransientError(f"HTTP {exc.code}") from exc
            raise PermanentError(f"HTTP {exc.code}") from exc
        except OSError as exc:
            raise TransientError(str(exc)) from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise PermanentError(f"unexpected response shape: {exc}") from None


def _load_prompts(path) -> list[tuple[str, str, str]]:
    """(id_field, prompt_id, text) triples, in file order."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BridgeError(f"{path}:{lineno}: bad JSON: {exc}") from None
            id_field = next((f for f in ID_FIELDS if f in obj), None)
            if id_field is None or "text" not in obj:
                raise BridgeError(
                    f"{path}:{lineno}: record needs 'text' and one of {ID_FIELDS}")
            out.append((id_field, str(obj[id_field]), obj["text"]))
    if not out:
        raise BridgeError(f"{path}: no prompts")
    return out


def run_batch(job: ApiJob, transport: Transport, concurrency: int = 4,
              rate_limit_per_s: float | None = None,
              clock=time.time, sleep=time.sleep) -> dict:
    """Submit every prompt in the batch; append responses to job.out_path.

    Transient failures are retried up to job.max_attempts with linear
    backoff; permanent failures (and exhausted retries) are collected in
    the failure report. Responses are written once, in prompt-file order,
    so output bytes are reproducible for a fixed transport and clock.
    """
    prompts = _load_prompts(job.prompt_path)
    gate = threading.Lock()
    last_sent = [0.0]

    def throttle():
        if rate_limit_per_s is None:
            return
        with gate:
            wait = last_sent[0] + 1.0 / rate_limit_per_s - time.monotonic()
            if wait > 0:
                sleep(wait)
            last_sent[0] = time.monotonic()

    def one(item):
        id_field, pid, text = item
        for attempt in range(1, job.max_attempts + 1):
            throttle()
            try:
                raw = transport.complete(pid, text, job)
            except TransientError as exc:
                logger.warning("transient failure for %s (attempt %d): %s",
                               pid, attempt, exc)
                if attempt == job.max_attempts:
                    return None, {"prompt_id": pid, "attempts": attempt,
                                  "reason": f"retries exhausted: {exc}"}
                sleep(job.backoff_s * attempt)
            except PermanentError as exc:
                return None, {"prompt_id": pid, "attempts": attempt,
                              "reason": str(exc)}
            else:
                return {id_field: pid, "raw": raw, "prompt_id": pid,
                        "model": job.model, "timestamp": clock(),
                        "attempts": attempt}, None
        raise AssertionError("unreachable")

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        outcomes = list(pool.map(one, prompts))

    records = [r for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]

    with open(job.out_path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    if job.failure_path:
        with open(job.failure_path, "a", encoding="utf-8") as fh:
            for failure in failures:
                fh.write(json.dumps(failure, ensure_ascii=False, sort_keys=True) + "\n")
    return {"responses": len(records), "failures": failures,
            "out_path": job.out_path}

import io
import json
import threading
import time

import pytest

from medlink.kb import prune_ambiguous_synonyms
from medlink.maskservice import (ERR_BAD_PREFIX, ERR_FINGERPRINT,
                                 ERR_MALFORMED, ERR_SESSION_UNKNOWN,
                                 MaskClient, MaskServer, MaskService,
                                 serve_stdio)
from medlink.trie import allowed_next, build_trie, iter_terminals, \
    tokenizer_from_pruned

from conftest import make_concept, make_kb


@pytest.fixture
def setup(fig_pruned):
    tok = tokenizer_from_pruned("char", fig_pruned)
    tries = {"diso": build_trie(fig_pruned, "DISO", tok),
             "proc": build_trie(fig_pruned, "PROC", tok)}
    return MaskService(tries), tok, tries


def open_session(service, name="diso", fingerprint=None):
    payload = {"trie": name}
    if fingerprint is not None:
        payload["fingerprint"] = fingerprint
    resp = service.handle({"op": "open", "request_id": "r0", "payload": payload})
    assert resp["ok"], resp
    return resp["result"]["session"]


def test_requires_a_trie():
    with pytest.raises(ValueError):
        MaskService({})


def test_open_reports_group_and_fingerprint(setup):
    service, tok, tries = setup
    resp = service.handle({"op": "open", "request_id": "a",
                           "payload": {"trie": "diso"}})
    assert resp["request_id"] == "a"
    assert resp["result"]["group"] == "DISO"
    assert resp["result"]["fingerprint"] == tok.fingerprint


def test_open_fingerprint_mismatch(setup):
    service, _, _ = setup
    resp = service.handle({"op": "open", "request_id": "a",
                           "payload": {"trie": "diso",
                                       "fingerprint": "0000000000000000"}})
    assert not resp["ok"]
    assert resp["error"]["code"] == ERR_FINGERPRINT


def test_open_unknown_trie(setup):
    service, _, _ = setup
    resp = service.handle({"op": "open", "request_id": "a",
                           "payload": {"trie": "nope"}})
    assert resp["error"]["code"] == ERR_MALFORMED


def test_allowed_matches_direct_calls(setup):
    service, tok, tries = setup
    session = open_session(service)
    for tokens, _, _ in iter_terminals(tries["diso"]):
        for i in range(len(tokens) + 1):
            prefix = list(tokens[:i])
            resp = service.handle({"op": "allowed", "request_id": "x",
                                   "session": session,
                                   "payload": {"prefix": prefix}})
            expected, eos = allowed_next(tries["diso"], prefix)
            assert resp["result"] == {"tokens": sorted(expected), "eos": eos}


def test_resolve_known_synonym(setup):
    service, tok, _ = setup
    session = open_session(service)
    resp = service.handle({"op": "resolve", "request_id": "x",
                           "session": session,
                           "payload": {"tokens": list(tok.encode("Fluid Discharge"))}})
    assert resp["result"] == {"concept": "C0012621", "surface": "Fluid Discharge"}


def test_resolve_non_terminal_is_bad_prefix(setup):
    service, tok, _ = setup
    session = open_session(service)
    resp = service.handle({"op": "resolve", "request_id": "x",
                           "session": session,
                           "payload": {"tokens": list(tok.encode("Fluid"))}})
    assert resp["error"]["code"] == ERR_BAD_PREFIX


def test_allowed_bad_prefix(setup):
    service, _, _ = setup
    session = open_session(service)
    resp = service.handle({"op": "allowed", "request_id": "x",
                           "session": session, "payload": {"prefix": [424242]}})
    assert resp["error"]["code"] == ERR_BAD_PREFIX


def test_session_unknown(setup):
    service, _, _ = setup
    resp = service.handle({"op": "allowed", "request_id": "x",
                           "session": "nope", "payload": {"prefix": []}})
    assert resp["error"]["code"] == ERR_SESSION_UNKNOWN


def test_close_then_use(setup):
    service, _, _ = setup
    session = open_session(service)
    resp = service.handle({"op": "close", "request_id": "x", "session": session})
    assert resp["result"] == {"closed": True}
    resp = service.handle({"op": "allowed", "request_id": "y",
                           "session": session, "payload": {"prefix": []}})
    assert resp["error"]["code"] == ERR_SESSION_UNKNOWN


def test_malformed_variants(setup):
    service, _, _ = setup
    session = open_session(service)
    cases = [
        "this is not json",
        json.dumps([1, 2, 3]),
        json.dumps({"op": "frobnicate", "request_id": "x"}),
        json.dumps({"op": "allowed", "request_id": "x", "session": session,
                    "payload": {"prefix": "abc"}}),
        json.dumps({"op": "allowed", "request_id": "x", "session": session,
                    "payload": {"prefix": [1, True]}}),
        json.dumps({"op": "allowed", "request_id": "x", "session": session,
                    "payload": 7}),
    ]
    for line in cases:
        resp = service.handle_line(line)
        assert resp["error"]["code"] == ERR_MALFORMED, line


def test_idle_timeout_expires_sessions(fig_pruned):
    tok = tokenizer_from_pruned("char", fig_pruned)
    service = MaskService({"diso": build_trie(fig_pruned, "DISO", tok)},
                          idle_timeout=0.05)
    session = open_session(service)
    time.sleep(0.1)
    resp = service.handle({"op": "allowed", "request_id": "x",
                           "session": session, "payload": {"prefix": []}})
    assert resp["error"]["code"] == ERR_SESSION_UNKNOWN


def test_sessions_are_independent(setup):
    service, tok, _ = setup
    diso = open_session(service, "diso")
    proc = open_session(service, "proc")
    resp = service.handle({"op": "resolve", "request_id": "x", "session": proc,
                           "payload": {"tokens": list(tok.encode("Discharge"))}})
    assert resp["result"]["concept"] == "C0999001"
    resp = service.handle({"op": "resolve", "request_id": "x", "session": diso,
                           "payload": {"tokens": list(tok.encode("Fluid Discharge"))}})
    assert resp["result"]["concept"] == "C0012621"


def test_stdio_transport(setup):
    service, tok, _ = setup
    lines = [json.dumps({"op": "open", "request_id": "1",
                         "payload": {"trie": "diso"}}),
             "",
             "garbage"]
    out = io.StringIO()
    serve_stdio(service, stdin=io.StringIO("\n".join(lines) + "\n"), stdout=out)
    responses = [json.loads(l) for l in out.getvalue().splitlines()]
    assert len(responses) == 2  # blank line skipped
    assert responses[0]["ok"]
    assert responses[1]["error"]["code"] == ERR_MALFORMED


def tcp_workload(tok):
    """Deterministic request script shared by the TCP replay test."""
    ops = []
    for surface in ("Fluid Discharge", "Discharge", "Aortic Stenosis", "AS"):
        enc = list(tok.encode(surface))
        for i in range(len(enc) + 1):
            ops.append(("allowed", {"prefix": enc[:i]}))
        ops.append(("resolve", {"tokens": enc}))
    return ops


def test_tcp_replay_matches_in_process(setup):
    """Concurrent TCP clients get bit-identical results to direct
    in-process handle() calls for the same workload."""
    service, tok, tries = setup
    server = MaskServer(service)
    server.serve_in_background()
    host, port = server.address

    reference_session = open_session(service)
    reference = []
    for op, payload in tcp_workload(tok):
        resp = service.handle({"op": op, "request_id": "r",
                               "session": reference_session, "payload": payload})
        reference.append(resp.get("result", resp.get("error")))

    results = [None] * 4
    errors = []

    def client_run(slot):
        try:
            client = MaskClient(host, port)
            opened = client.request("open", payload={"trie": "diso"})
            session = opened["result"]["session"]
            answers = []
            for op, payload in tcp_workload(tok):
                resp = client.request(op, session=session, payload=payload)
                answers.append(resp.get("result", resp.get("error")))
            client.request("close", session=session)
            client.close()
            results[slot] = answers
        except Exception as exc:  # surfaced in the main thread
            errors.append(exc)

    threads = [threading.Thread(target=client_run, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    server.shutdown()
    server.server_close()
    assert not errors
    for answers in results:
        assert answers == reference

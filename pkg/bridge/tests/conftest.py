"""Fixtures driving the medlink toolkit strictly from the outside:
NDJSON files, the CLI as a subprocess, and the TCP mask service."""

import json
import re
import subprocess
import sys
import time

import pytest

CLI = [sys.executable, "-u", "-m", "medlink.cli"]

KB_CONCEPTS = [
    {"id": "B0001", "title": "alpha wave", "group": "DISO",
     "types": ["Finding"], "definitions": ["Rhythmic alpha activity."],
     "synonyms": ["alpha wave", "alpha rhythm"]},
    {"id": "B0002", "title": "beta spike", "group": "DISO",
     "types": ["Finding"], "definitions": ["Transient beta component."],
     "synonyms": ["beta spike", "fast spike"]},
    {"id": "B0003", "title": "gamma burst", "group": "DISO",
     "types": ["Finding"], "definitions": ["High-frequency burst."],
     "synonyms": ["gamma burst"]},
    {"id": "B0004", "title": "delta slowing", "group": "DISO",
     "types": ["Finding"], "definitions": ["Diffuse slow-wave pattern."],
     "synonyms": ["delta slowing", "slow wave focus"]},
]


def run_cli(*args, check=True):
    proc = subprocess.run(CLI + [str(a) for a in args],
                          capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"medlink {' '.join(map(str, args))} failed:\n"
                             f"{proc.stdout}\n{proc.stderr}")
    return proc


def cli_json(*args):
    return json.loads(run_cli(*args).stdout)


@pytest.fixture(scope="session")
def kb_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("kb") / "kb.ndjson"
    with open(path, "w", encoding="utf-8") as fh:
        for record in KB_CONCEPTS:
            fh.write(json.dumps(record) + "\n")
    return path


@pytest.fixture(scope="session")
def kb_synonyms():
    return {s for c in KB_CONCEPTS for s in c["synonyms"]}


@pytest.fixture(scope="session")
def trie_file(kb_file, tmp_path_factory):
    work = tmp_path_factory.mktemp("trie")
    pruned = work / "pruned.ndjson"
    run_cli("kb-prune", kb_file, "--out", pruned)
    trie = work / "diso.trie"
    run_cli("trie-build", "--kb", pruned, "--group", "DISO", "--out", trie)
    return trie


@pytest.fixture(scope="session")
def trie_fingerprint(trie_file, kb_file, tmp_path_factory):
    # trie-build prints the fingerprint; rebuild to a scratch path to read it
    work = tmp_path_factory.mktemp("fp")
    pruned = work / "pruned.ndjson"
    run_cli("kb-prune", kb_file, "--out", pruned)
    out = cli_json("trie-build", "--kb", pruned, "--group", "DISO",
                   "--out", work / "scratch.trie")
    return out["fingerprint"]


@pytest.fixture(scope="session")
def mask_server(trie_file):
    proc = subprocess.Popen(CLI + ["serve", "--trie", f"diso={trie_file}",
                                   "--port", "0"],
                            stdout=subprocess.DEVNULL,
                            stderr=subprocess.PIPE, text=True)
    deadline = time.monotonic() + 20
    line = ""
    while time.monotonic() < deadline:
        line = proc.stderr.readline()
        if line:
            break
    match = re.search(r"listening on ([\d.]+):(\d+)", line)
    if not match:
        proc.terminate()
        raise RuntimeError(f"server did not start: {line!r}")
    yield match.group(1), int(match.group(2))
    proc.terminate()
    proc.wait(timeout=10)

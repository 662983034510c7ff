"""Per-semantic-group synonym tries over tokenized surface forms.

A trie path spells the token encoding of one kept synonym; EOS marks
terminals, and each terminal resolves to a single concept. Residual
terminal collisions (possible only through the title-fallback rule of
pruning) resolve to the smallest concept id and are recorded.
"""

from __future__ import annotations

import gzip
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

from .kb import PrunedKB, normalize_surface

TRIE_FORMAT = "medlink-trie/1"


class TrieError(ValueError):
    pass


class BadPrefixError(TrieError):
    """Prefix does not correspond to any trie path."""


class NonTerminalError(TrieError):
    """Token sequence ends at a non-terminal node."""


class FingerprintMismatchError(TrieError):
    """Serialized trie was built with a different tokenizer."""


class TokenizerError(ValueError):
    pass


# ------------------------------------------------------------- tokenizers

class Tokenizer:
    """Token id 0 is reserved for EOS in both reference tokenizers."""

    name: str
    eos_id: int = 0

    def encode(self, s: str) -> list[int]:
        raise NotImplementedError

    def decode(self, ids: list[int]) -> str:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        raise NotImplementedError

    @property
    def fingerprint(self) -> str:
        raise NotImplementedError


class _TableTokenizer(Tokenizer):
    """Shared machinery for the character and whitespace tokenizers: a
    fixed sorted unit vocabulary with ids starting at 1."""

    kind = ""

    def __init__(self, units):
        self._units = [None] + sorted(set(units))
        self._ids = {u: i for i, u in enumerate(self._units) if i > 0}

    def _split(self, s: str) -> list[str]:
        raise NotImplementedError

    def _join(self, units: list[str]) -> str:
        raise NotImplementedError

    def encode(self, s):
        try:
            return [self._ids[u] for u in self._split(s)]
        except KeyError as exc:
            raise TokenizerError(f"unit not in vocabulary: {exc.args[0]!r}") from None

    def decode(self, ids):
        units = []
        for i in ids:
            if i == self.eos_id:
                continue
            if not 0 < i < len(self._units):
                raise TokenizerError(f"token id out of range: {i}")
            units.append(self._units[i])
        return self._join(units)

    @property
    def vocab_size(self):
        return len(self._units)

    @property
    def fingerprint(self):
        payload = json.dumps([self.kind, self._units[1:]], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    @property
    def units(self):
        return list(self._units[1:])


class CharTokenizer(_TableTokenizer):
    """One token per character."""

    kind = "char"
    name = "char"

    def _split(self, s):
        return list(s)

    def _join(self, units):
        return "".join(units)

    @classmethod
    def from_corpus(cls, strings) -> "CharTokenizer":
        return cls({c for s in strings for c in s})


class WhitespaceTokenizer(_TableTokenizer):
    """One token per whitespace-delimited word."""

    kind = "whitespace"
    name = "whitespace"

    def _split(self, s):
        return s.split()

    def _join(self, units):
        return " ".join(units)

    @classmethod
    def from_corpus(cls, strings) -> "WhitespaceTokenizer":
        return cls({w for s in strings for w in s.split()})


def tokenizer_from_pruned(kind: str, pruned: PrunedKB) -> Tokenizer:
    surfaces = [s for syns in pruned.kept.values() for s in syns]
    if kind == "char":
        return CharTokenizer.from_corpus(surfaces)
    if kind == "whitespace":
        return WhitespaceTokenizer.from_corpus(surfaces)
    raise TokenizerError(f"unknown tokenizer kind: {kind}")


# ------------------------------------------------------------------ trie

class _Node:
    __slots__ = ("children", "terminal")

    def __init__(self):
        self.children: dict[int, _Node] = {}
        self.terminal: tuple[str, str] | None = None  # (concept id, surface)


@dataclass
class SynonymTrie:
    group: str
    tokenizer_fingerprint: str
    kb_version: str = ""
    root: _Node = field(default_factory=_Node)
    max_len: int = 0
    size: int = 0                     # number of terminal surfaces
    collisions: list[dict] = field(default_factory=list)

    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count

    def _walk(self, prefix) -> _Node:
        node = self.root
        for tok in prefix:
            child = node.children.get(tok)
            if child is None:
                raise BadPrefixError(f"prefix {list(prefix)} not in trie")
            node = child
        return node


def build_trie(pruned: PrunedKB, group: str, tokenizer: Tokenizer) -> SynonymTrie:
    """Trie over the encodings of every kept synonym in the group.

    Raises on tokenizer round-trip failures (all offenders listed); terminal
    collisions keep the smallest concept id and are logged on the trie.
    """
    from .kb import candidates_for_group
    concept_ids = sorted(candidates_for_group(pruned, group))
    trie = SynonymTrie(group=group, tokenizer_fingerprint=tokenizer.fingerprint,
                       kb_version=pruned.base.version_tag)
    offenders = []
    for cid in concept_ids:
        for syn in pruned.kept_synonyms(cid):
            tokens = tokenizer.encode(syn)
            if not tokens or normalize_surface(tokenizer.decode(tokens)) != normalize_surface(syn):
                offenders.append((cid, syn))
    if offenders:
        raise TrieError(f"tokenizer round-trip failed for {len(offenders)} synonyms: "
                        f"{offenders[:10]}")
    for cid in concept_ids:
        for syn in pruned.kept_synonyms(cid):
            tokens = tokenizer.encode(syn)
            node = trie.root
            for tok in tokens:
                node = node.children.setdefault(tok, _Node())
            if node.terminal is None:
                node.terminal = (cid, syn)
                trie.size += 1
            elif node.terminal[0] != cid:
                winner = min(node.terminal[0], cid)
                loser = max(node.terminal[0], cid)
                trie.collisions.append({
                    "surface": syn, "winner": winner, "loser": loser,
                })
                if winner != node.terminal[0]:
                    node.terminal = (cid, syn)
            trie.max_len = max(trie.max_len, len(tokens))
    return trie


def allowed_next(trie: SynonymTrie, prefix) -> tuple[set[int], bool]:
    """Token ids that extend `prefix` along some synonym, and whether EOS
    may terminate here."""
    node = trie._walk(prefix)
    return set(node.children), node.terminal is not None


def resolve(trie: SynonymTrie, tokens) -> tuple[str, str]:
    """(concept id, surface) of the synonym spelled by `tokens`."""
    node = trie._walk(tokens)
    if node.terminal is None:
        raise NonTerminalError(f"tokens {list(tokens)} do not end at a synonym")
    return node.terminal


def iter_terminals(trie: SynonymTrie):
    """Yield (tokens, concept id, surface) for every terminal path."""
    stack = [((), trie.root)]
    while stack:
        tokens, node = stack.pop()
        if node.terminal is not None:
            yield tokens, node.terminal[0], node.terminal[1]
        for tok, child in node.children.items():
            stack.append((tokens + (tok,), child))


# ---------------------------------------------------------- serialization

def serialize_trie(trie: SynonymTrie, path) -> None:
    """Gzipped JSON: header plus a breadth-first node table. Child maps key
    token ids (as strings, a JSON constraint) to node indices."""
    nodes = []
    index = {id(trie.root): 0}
    order = [trie.root]
    queue = deque([trie.root])
    while queue:
        node = queue.popleft()
        for child in node.children.values():
            index[id(child)] = len(order)
            order.append(child)
            queue.append(child)
    for node in order:
        nodes.append([
            {str(tok): index[id(child)] for tok, child in node.children.items()},
            list(node.terminal) if node.terminal is not None else None,
        ])
    payload = {
        "format": TRIE_FORMAT,
        "group": trie.group,
        "tokenizer_fingerprint": trie.tokenizer_fingerprint,
        "kb_version": trie.kb_version,
        "max_len": trie.max_len,
        "size": trie.size,
        "collisions": trie.collisions,
        "nodes": nodes,
    }
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, separators=(",", ":"))


def load_trie(path, expected_fingerprint: str | None = None) -> SynonymTrie:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != TRIE_FORMAT:
        raise TrieError(f"unsupported trie format: {payload.get('format')}")
    if (expected_fingerprint is not None
            and payload["tokenizer_fingerprint"] != expected_fingerprint):
        raise FingerprintMismatchError(
            f"trie built with tokenizer {payload['tokenizer_fingerprint']}, "
            f"expected {expected_fingerprint}")
    raw = payload["nodes"]
    nodes = [_Node() for _ in raw]
    for node, (children, terminal) in zip(nodes, raw):
        node.children = {int(tok): nodes[i] for tok, i in children.items()}
        node.terminal = tuple(terminal) if terminal is not None else None
    return SynonymTrie(
        group=payload["group"],
        tokenizer_fingerprint=payload["tokenizer_fingerprint"],
        kb_version=payload["kb_version"],
        root=nodes[0] if nodes else _Node(),
        max_len=payload["max_len"],
        size=payload["size"],
        collisions=payload["collisions"],
    )

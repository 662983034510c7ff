"""Knowledge-base loading, validation, and in-group synonym disambiguation.

The candidate KB is a line-delimited UTF-8 file, one JSON object per line
with fields: id, title, group, types, definitions, synonyms. Concepts whose
surface forms collide with another concept of the same semantic group get
those surfaces removed before representation and trie building.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

KB_FIELDS = {"id", "title", "group", "types", "definitions", "synonyms"}


class KBError(ValueError):
    """Raised for malformed KB files or invalid concept lookups."""


def normalize_surface(s: str) -> str:
    """Canonical form used for surface-string equality: NFKC, case-fold,
    whitespace runs collapsed to single spaces, trimmed."""
    s = unicodedata.normalize("NFKC", s).casefold()
    return " ".join(s.split())


@dataclass(frozen=True)
class Concept:
    id: str
    title: str
    group: str
    types: tuple[str, ...] = ()
    definitions: tuple[str, ...] = ()
    synonyms: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise KBError("concept id must be non-empty")
        if not self.group:
            raise KBError(f"concept {self.id}: group must be non-empty")
        if not self.synonyms:
            raise KBError(f"concept {self.id}: empty synonym list")
        if self.title not in self.synonyms:
            raise KBError(f"concept {self.id}: title not among synonyms")


@dataclass(frozen=True)
class KnowledgeBase:
    concepts: dict[str, Concept]
    version_tag: str = ""

    @property
    def groups(self) -> set[str]:
        return {c.group for c in self.concepts.values()}

    def concept(self, concept_id: str) -> Concept:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise KBError(f"unknown concept id: {concept_id}") from None


@dataclass(frozen=True)
class PrunedKB:
    """Result of in-group synonym disambiguation.

    kept[e] and dropped[e] partition the deduplicated synonym set of e.
    Concepts that lost every synonym fall back to their title and are
    listed in `flagged`; such titles may still collide and are resolved
    deterministically at trie-build time.
    """

    base: KnowledgeBase
    kept: dict[str, tuple[str, ...]]
    dropped: dict[str, tuple[tuple[str, tuple[str, ...]], ...]]
    flagged: frozenset[str] = frozenset()

    def concept(self, concept_id: str) -> Concept:
        return self.base.concept(concept_id)

    @property
    def groups(self) -> set[str]:
        return self.base.groups

    def kept_synonyms(self, concept_id: str) -> tuple[str, ...]:
        self.base.concept(concept_id)  # raises on unknown id
        return self.kept[concept_id]

    def report(self) -> dict:
        """Machine-readable pruning report."""
        return {
            "version_tag": self.base.version_tag,
            "flagged_concepts": sorted(self.flagged),
            "dropped": {
                cid: [{"synonym": s, "colliding_ids": list(ids)} for s, ids in drops]
                for cid, drops in self.dropped.items()
                if drops
            },
        }


def _parse_record(obj: dict, lineno: int) -> Concept:
    if not isinstance(obj, dict):
        raise KBError(f"line {lineno}: record is not an object")
    missing = {"id", "title", "group", "synonyms"} - obj.keys()
    if missing:
        raise KBError(f"line {lineno}: missing fields {sorted(missing)}")
    unknown = obj.keys() - KB_FIELDS
    if unknown:
        logger.warning("line %d: ignoring unknown fields %s", lineno, sorted(unknown))
    if not obj["synonyms"]:
        raise KBError(f"line {lineno}: empty synonym list")
    synonyms: list[str] = []
    seen = set()
    for s in obj["synonyms"]:
        if not isinstance(s, str) or not s:
            raise KBError(f"line {lineno}: empty or non-string synonym")
        if s not in seen:
            seen.add(s)
            synonyms.append(s)
    title = obj["title"]
    if title not in seen:
        synonyms.insert(0, title)
    try:
        return Concept(
            id=obj["id"],
            title=title,
            group=obj["group"],
            types=tuple(obj.get("types", ())),
            definitions=tuple(obj.get("definitions", ())),
            synonyms=tuple(synonyms),
        )
    except KBError as exc:
        raise KBError(f"line {lineno}: {exc}") from None


def load_kb(path, version_tag: str = "") -> KnowledgeBase:
    """Load and validate a line-delimited KB file."""
    concepts: dict[str, Concept] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise KBError(f"line {lineno}: malformed record: {exc}") from None
            concept = _parse_record(obj, lineno)
            if concept.id in concepts:
                raise KBError(f"line {lineno}: duplicate concept id {concept.id}")
            concepts[concept.id] = concept
    return KnowledgeBase(concepts=concepts, version_tag=version_tag)


def save_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(kb.concepts):
            c = kb.concepts[cid]
            fh.write(json.dumps({
                "id": c.id,
                "title": c.title,
                "group": c.group,
                "types": list(c.types),
                "definitions": list(c.definitions),
                "synonyms": list(c.synonyms),
            }, ensure_ascii=False, sort_keys=True) + "\n")


def prune_ambiguous_synonyms(kb: KnowledgeBase | PrunedKB) -> PrunedKB:
    """Remove synonyms shared by two or more concepts of the same semantic
    group. Cross-group collisions are left intact. A concept that loses
    every synonym keeps its title and is flagged.

    Accepts either a KnowledgeBase or an already-pruned KB; re-pruning is
    a no-op (idempotence is covered by property tests).
    """
    if isinstance(kb, PrunedKB):
        base = kb.base
        surfaces = {cid: kb.kept[cid] for cid in base.concepts}
        prior_dropped = kb.dropped
        prior_flagged = kb.flagged
    else:
        base = kb
        surfaces = {cid: c.synonyms for cid, c in kb.concepts.items()}
        prior_dropped = {}
        prior_flagged = frozenset()

    # normalized surface -> owning concept ids, per group
    owners: dict[str, dict[str, set[str]]] = {}
    for cid, syns in surfaces.items():
        group = base.concepts[cid].group
        per_group = owners.setdefault(group, {})
        for s in syns:
            per_group.setdefault(normalize_surface(s), set()).add(cid)

    kept: dict[str, tuple[str, ...]] = {}
    dropped: dict[str, tuple[tuple[str, tuple[str, ...]], ...]] = {}
    flagged = set(prior_flagged)
    for cid, syns in surfaces.items():
        concept = base.concepts[cid]
        per_group = owners[concept.group]
        keep: list[str] = []
        drop: list[tuple[str, tuple[str, ...]]] = []
        for s in syns:
            holders = per_group[normalize_surface(s)]
            if len(holders) == 1:
                keep.append(s)
            else:
                drop.append((s, tuple(sorted(holders - {cid}))))
        if not keep:
            # fallback: the concept must stay reachable
            keep = [concept.title]
            drop = [(s, ids) for s, ids in drop if s != concept.title]
            flagged.add(cid)
        merged = list(prior_dropped.get(cid, ())) + drop
        kept[cid] = tuple(keep)
        dropped[cid] = tuple(merged)
    return PrunedKB(base=base, kept=kept, dropped=dropped, flagged=frozenset(flagged))


def save_pruned(pruned: PrunedKB, path) -> None:
    """Pruned KB file: the base KB records extended with kept/dropped/
    flagged fields, so the artifact is self-contained."""
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(pruned.base.concepts):
            c = pruned.base.concepts[cid]
            fh.write(json.dumps({
                "id": c.id,
                "title": c.title,
                "group": c.group,
                "types": list(c.types),
                "definitions": list(c.definitions),
                "synonyms": list(c.synonyms),
                "kept": list(pruned.kept[cid]),
                "dropped": [{"synonym": s, "colliding_ids": list(ids)}
                            for s, ids in pruned.dropped[cid]],
                "flagged": cid in pruned.flagged,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_pruned(path, version_tag: str = "") -> PrunedKB:
    concepts: dict[str, Concept] = {}
    kept: dict[str, tuple[str, ...]] = {}
    dropped: dict[str, tuple[tuple[str, tuple[str, ...]], ...]] = {}
    flagged = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                concept = Concept(
                    id=obj["id"], title=obj["title"], group=obj["group"],
                    types=tuple(obj.get("types", ())),
                    definitions=tuple(obj.get("definitions", ())),
                    synonyms=tuple(obj["synonyms"]),
                )
                kept[concept.id] = tuple(obj["kept"])
                dropped[concept.id] = tuple(
                    (d["synonym"], tuple(d["colliding_ids"]))
                    for d in obj.get("dropped", ()))
                if obj.get("flagged"):
                    flagged.add(concept.id)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise KBError(f"line {lineno}: bad pruned record: {exc}") from None
            if concept.id in concepts:
                raise KBError(f"line {lineno}: duplicate concept id {concept.id}")
            concepts[concept.id] = concept
    base = KnowledgeBase(concepts=concepts, version_tag=version_tag)
    return PrunedKB(base=base, kept=kept, dropped=dropped, flagged=frozenset(flagged))


def candidates_for_group(kb: KnowledgeBase | PrunedKB, group: str) -> set[str]:
    """Concept ids whose semantic group equals `group`."""
    base = kb.base if isinstance(kb, PrunedKB) else kb
    if group not in base.groups:
        raise KBError(f"unknown group label: {group}")
    return {cid for cid, c in base.concepts.items() if c.group == group}

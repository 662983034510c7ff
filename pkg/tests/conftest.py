import json
import random

import pytest

from medlink.kb import Concept, KnowledgeBase, prune_ambiguous_synonyms


def make_concept(cid, title, group, synonyms=None, definitions=(), types=()):
    synonyms = list(synonyms) if synonyms else [title]
    if title not in synonyms:
        synonyms.insert(0, title)
    return Concept(id=cid, title=title, group=group, types=tuple(types),
                   definitions=tuple(definitions), synonyms=tuple(synonyms))


def make_kb(concepts, version_tag="test"):
    return KnowledgeBase(concepts={c.id: c for c in concepts},
                         version_tag=version_tag)


def random_kb(rng: random.Random, n_concepts=20, n_groups=2,
              shared_synonyms=0, alphabet="abcdefgh", max_synonyms=4):
    """Random KB; `shared_synonyms` strings are planted into two concepts
    of the same group to force in-group collisions."""
    groups = [f"G{g}" for g in range(n_groups)]
    concepts = []
    used = set()

    def fresh_string():
        while True:
            s = "".join(rng.choice(alphabet) for _ in range(rng.randint(3, 10)))
            if s not in used:
                used.add(s)
                return s

    for i in range(n_concepts):
        title = fresh_string()
        syns = [title] + [fresh_string() for _ in range(rng.randint(0, max_synonyms - 1))]
        concepts.append(make_concept(f"C{i:04d}", title, rng.choice(groups), syns))
    for _ in range(shared_synonyms):
        group = rng.choice(groups)
        members = [c for c in concepts if c.group == group]
        if len(members) < 2:
            continue
        a, b = rng.sample(members, 2)
        shared = fresh_string()
        for c in (a, b):
            concepts[concepts.index(c)] = make_concept(
                c.id, c.title, c.group, list(c.synonyms) + [shared])
    return make_kb(concepts)


@pytest.fixture
def fig_kb():
    """Four-concept fixture: two Disorders concepts share the surface
    "Discharge"; a Procedures concept carries it too (cross-group)."""
    return make_kb([
        make_concept("C0012621", "Fluid Discharge", "DISO",
                     ["Fluid Discharge", "Discharge", "Body Fluid Discharge"],
                     definitions=["Passage of fluid from the body."]),
        make_concept("C0030685", "Patient Discharge", "DISO",
                     ["Patient Discharge", "Discharge"]),
        make_concept("C0003869", "Aortic Stenosis", "DISO",
                     ["Aortic Stenosis", "AS"]),
        make_concept("C0999001", "Discharge Procedure", "PROC",
                     ["Discharge Procedure", "Discharge"]),
    ])


@pytest.fixture
def fig_pruned(fig_kb):
    return prune_ambiguous_synonyms(fig_kb)


def write_kb_file(kb, path):
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(kb.concepts):
            c = kb.concepts[cid]
            fh.write(json.dumps({
                "id": c.id, "title": c.title, "group": c.group,
                "types": list(c.types), "definitions": list(c.definitions),
                "synonyms": list(c.synonyms),
            }) + "\n")

"""Structured prompts for synthetic example generation, and validation of
model responses into mention records.

A generation prompt has three blocks, in order: a task description, k
randomly sampled human-annotated exemplars, and the target concept's KB
metadata (title, group, types, definitions, synonyms). Responses come
back as `mention<TAB>sentence` lines; each accepted line must contain its
mention exactly once.
"""

from __future__ import annotations

import json
import logging
import random
import re
import zlib
from dataclasses import dataclass
from importlib import resources

from .kb import Concept, KnowledgeBase
from .seqformat import MentionRecord, Source, extract_context

logger = logging.getLogger(__name__)

DEFAULT_EXAMPLES_PER_CONCEPT = 3
DEFAULT_EXEMPLAR_COUNT = 5
TEMPLATE_VERSION = "gen/1"

REJECT_MALFORMED = "MALFORMED_LINE"
REJECT_NOT_FOUND = "MENTION_NOT_FOUND"
REJECT_AMBIGUOUS = "MENTION_AMBIGUOUS"
REJECT_DUPLICATE = "DUPLICATE_SENTENCE"
REJECT_OVERFLOW = "LIMIT_EXCEEDED"


class SynthGenError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationPrompt:
    concept_id: str
    language: str
    text: str
    exemplar_ids: tuple[int, ...]     # indices into the exemplar dataset
    template_version: str = TEMPLATE_VERSION


@dataclass(frozen=True)
class SyntheticExample:
    concept_id: str
    mention: str
    sentence: str
    offset: int

    def to_mention_record(self, concept: Concept, window: int = 64) -> MentionRecord:
        left, right = extract_context(
            self.sentence, (self.offset, self.offset + len(self.mention)), window)
        return MentionRecord(
            doc_id=f"synth:{self.concept_id}",
            mention=self.sentence[self.offset:self.offset + len(self.mention)],
            left_ctx=left, right_ctx=right,
            group=concept.group, gold_concept=self.concept_id,
            source=Source.SYNTHETIC,
        )


@dataclass(frozen=True)
class Rejection:
    line_no: int
    line: str
    reason: str


def select_concepts(kb: KnowledgeBase, require_definition: bool = False) -> list[Concept]:
    """Generation targets in stable id order; optionally only concepts
    carrying at least one definition."""
    ids = sorted(kb.concepts)
    if require_definition:
        ids = [i for i in ids if kb.concepts[i].definitions]
    return [kb.concepts[i] for i in ids]


def load_template(language: str, kind: str = "generation") -> str:
    name = f"{kind}_{language}.txt"
    ref = resources.files("medlink.templates").joinpath(name)
    if not ref.is_file():
        raise SynthGenError(f"no template {name}; add one under medlink/templates")
    return ref.read_text(encoding="utf-8")


def render_template(template: str, values: dict[str, str]) -> str:
    out = template
    for key, val in values.items():
        out = out.replace("{{" + key + "}}", val)
    leftover = re.findall(r"\{\{\w+\}\}", out)
    if leftover:
        raise SynthGenError(f"unsubstituted placeholders: {leftover}")
    return out


def _concept_seed(global_seed: int, concept_id: str) -> int:
    # per-concept derivation keeps batches reproducible and order-independent
    return zlib.crc32(f"{global_seed}:{concept_id}".encode()) & 0xFFFFFFFF


def format_exemplar(rec: MentionRecord) -> str:
    sentence = " ".join(p for p in (rec.left_ctx, f"[{rec.mention}]", rec.right_ctx) if p)
    return f"- mention: {rec.mention} | sentence: {sentence}"


def build_prompt(concept: Concept, dataset: list[MentionRecord], k: int,
                 seed: int, template: str | None = None,
                 language: str = "en",
                 examples_per_concept: int = DEFAULT_EXAMPLES_PER_CONCEPT) -> GenerationPrompt:
    """Render one generation prompt; exemplars are sampled uniformly
    without replacement under a seed derived from (seed, concept id)."""
    if k > len(dataset):
        raise SynthGenError(f"k={k} exceeds dataset size {len(dataset)}")
    if k == 0:
        logger.warning("concept %s: empty exemplar block", concept.id)
    if template is None:
        template = load_template(language)
    rng = random.Random(_concept_seed(seed, concept.id))
    exemplar_ids = tuple(sorted(rng.sample(range(len(dataset)), k)))
    text = render_template(template, {
        "title": concept.title,
        "group": concept.group,
        "types": ", ".join(concept.types) if concept.types else "(none)",
        "definitions": "\n".join(f"- {d}" for d in concept.definitions) or "- (none)",
        "synonyms": "\n".join(f"- {s}" for s in concept.synonyms),
        "exemplars": "\n".join(format_exemplar(dataset[i]) for i in exemplar_ids),
        "R": str(examples_per_concept),
    })
    return GenerationPrompt(concept_id=concept.id, language=language,
                            text=text, exemplar_ids=exemplar_ids)


def _find_mention(mention: str, sentence: str) -> list[int]:
    pattern = re.compile(re.escape(mention), re.IGNORECASE)
    return [m.start() for m in pattern.finditer(sentence)]


def parse_response(raw: str, concept: Concept,
                   limit: int = DEFAULT_EXAMPLES_PER_CONCEPT
                   ) -> tuple[list[SyntheticExample], list[Rejection]]:
    """Split a raw model response into accepted SyntheticExamples and a
    rejection report. Never raises; every non-accepted line carries a
    reason code."""
    accepted: list[SyntheticExample] = []
    rejected: list[Rejection] = []
    seen_sentences: set[str] = set()
    for line_no, line in enumerate(raw.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            rejected.append(Rejection(line_no, line, REJECT_MALFORMED))
            continue
        mention, sentence = parts
        hits = _find_mention(mention, sentence)
        if not hits:
            rejected.append(Rejection(line_no, line, REJECT_NOT_FOUND))
            continue
        if len(hits) > 1:
            rejected.append(Rejection(line_no, line, REJECT_AMBIGUOUS))
            continue
        key = sentence.casefold()
        if key in seen_sentences:
            rejected.append(Rejection(line_no, line, REJECT_DUPLICATE))
            continue
        if len(accepted) >= limit:
            rejected.append(Rejection(line_no, line, REJECT_OVERFLOW))
            continue
        seen_sentences.add(key)
        accepted.append(SyntheticExample(
            concept_id=concept.id, mention=mention,
            sentence=sentence, offset=hits[0]))
    return accepted, rejected


# ---------------------------------------------------------------- file IO

def save_prompts(prompts: list[GenerationPrompt], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(json.dumps({
                "concept_id": p.concept_id, "language": p.language,
                "text": p.text, "exemplar_ids": list(p.exemplar_ids),
                "template_version": p.template_version,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_responses(path) -> list[tuple[str, str]]:
    """(concept_id, raw response) pairs from a response batch file."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append((obj["concept_id"], obj["raw"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise SynthGenError(f"line {lineno}: bad response record: {exc}") from None
    return out

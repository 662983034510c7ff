"""Input/target sequence construction and training-stream composition.

Inputs follow the fixed marker layout

    <left> [ <mention> ] { <group> } <right> [SEP] [ <mention> ] <cue>

and targets are the adaptive concept representation of the gold concept.
Human and synthetic example streams combine under three strategies:
synthetic-pretrain (SPT), combined shuffle (COMB), and interleaved with
human upsampling to exactly half the stream (INT).
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field, asdict
from enum import Enum

from .kb import PrunedKB
from .tfidf import TfidfModel, adaptive_representation

SEP = "[SEP]"
CUES = {"en": "is", "fr": "est", "es": "es"}
DEFAULT_CONTEXT_WINDOW = 64


class SeqFormatError(ValueError):
    pass


class Source(str, Enum):
    HUMAN = "human"
    SYNTHETIC = "synthetic"


class Strategy(str, Enum):
    SPT = "spt"
    COMB = "comb"
    INT = "int"


@dataclass(frozen=True)
class MentionRecord:
    doc_id: str
    mention: str
    left_ctx: str
    right_ctx: str
    group: str
    gold_concept: str
    source: Source = Source.HUMAN

    def __post_init__(self):
        if not self.mention:
            raise SeqFormatError("mention must be non-empty")


@dataclass(frozen=True)
class MentionSpan:
    start: int
    end: int
    text: str
    group: str
    concept_id: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    mentions: tuple[MentionSpan, ...] = ()


@dataclass(frozen=True)
class TrainingExample:
    input: str
    target: str
    source: Source
    doc_id: str
    concept_id: str

    def to_json(self) -> str:
        return json.dumps({
            "input": self.input,
            "target": self.target,
            "source": self.source.value,
            "doc_id": self.doc_id,
            "concept_id": self.concept_id,
        }, ensure_ascii=False, sort_keys=True)


def extract_context(text: str, span: tuple[int, int],
                    window: int = DEFAULT_CONTEXT_WINDOW) -> tuple[str, str]:
    """Up to `window` whitespace tokens on each side of the span, joined
    with single spaces. Truncates at document boundaries."""
    start, end = span
    if not (0 <= start < end <= len(text)):
        raise SeqFormatError(f"span {span} out of range for text of length {len(text)}")
    left_tokens = text[:start].split()
    right_tokens = text[end:].split()
    return (" ".join(left_tokens[-window:]) if window else "",
            " ".join(right_tokens[:window]) if window else "")


def build_input(rec: MentionRecord, cue: str = "is") -> str:
    """Render the marker layout; empty contexts elide without double spaces."""
    parts = [rec.left_ctx, "[", rec.mention, "]", "{", rec.group, "}",
             rec.right_ctx, SEP, "[", rec.mention, "]", cue]
    return " ".join(p for p in parts if p)


_INPUT_RE = re.compile(
    r"^(?:(?P<left>.*?) )?\[ (?P<mention>.*?) \] \{ (?P<group>.*?) \}"
    r"(?: (?P<right>.*?))? \[SEP\] \[ .* \] .*$"
)


def parse_input(s: str) -> tuple[str, str, str, str]:
    """Inverse of build_input for inputs whose fields carry no marker
    characters: returns (left_ctx, mention, group, right_ctx)."""
    m = _INPUT_RE.match(s)
    if m is None:
        raise SeqFormatError(f"not a valid input sequence: {s!r}")
    return (m.group("left") or "", m.group("mention"),
            m.group("group"), m.group("right") or "")


def build_target(rec: MentionRecord, pruned: PrunedKB, model: TfidfModel) -> str:
    return adaptive_representation(pruned, model, rec.mention, rec.gold_concept)


def build_example(rec: MentionRecord, pruned: PrunedKB, model: TfidfModel,
                  cue: str = "is") -> TrainingExample:
    return TrainingExample(
        input=build_input(rec, cue=cue),
        target=build_target(rec, pruned, model),
        source=rec.source,
        doc_id=rec.doc_id,
        concept_id=rec.gold_concept,
    )


def compose(human: list[TrainingExample], synthetic: list[TrainingExample],
            strategy: Strategy | str, seed: int) -> list[TrainingExample]:
    """Combine the two sources into one ordered training stream.

    SPT: all synthetic (shuffled) followed by all human (shuffled).
    COMB: one shuffle of the union.
    INT: strict alternation, synthetic at even positions appearing exactly
    once each, human at odd positions sampled with replacement so human
    examples make up exactly half of the stream.
    """
    strategy = Strategy(strategy)
    rng = random.Random(seed)
    if strategy is Strategy.SPT:
        synth = list(synthetic)
        rng.shuffle(synth)
        hum = list(human)
        rng.shuffle(hum)
        return synth + hum
    if strategy is Strategy.COMB:
        if not human and not synthetic:
            raise SeqFormatError("COMB requires at least one example")
        union = list(human) + list(synthetic)
        rng.shuffle(union)
        return union
    # INT
    if not human or not synthetic:
        raise SeqFormatError("INT requires non-empty human and synthetic lists")
    synth = list(synthetic)
    rng.shuffle(synth)
    stream: list[TrainingExample] = []
    for ex in synth:
        stream.append(ex)
        stream.append(human[rng.randrange(len(human))])
    return stream


def subsample_documents(documents: list[Document], fraction: float,
                        seed: int) -> list[Document]:
    """Keep ceil(fraction * |docs|) documents, chosen uniformly without
    replacement, mentions intact, original order preserved."""
    if not 0.0 <= fraction <= 1.0:
        raise SeqFormatError(f"fraction out of range: {fraction}")
    n_keep = math.ceil(fraction * len(documents))
    if n_keep >= len(documents):
        return list(documents)
    rng = random.Random(seed)
    keep = set(rng.sample(range(len(documents)), n_keep))
    return [d for i, d in enumerate(documents) if i in keep]


def records_from_document(doc: Document, window: int = DEFAULT_CONTEXT_WINDOW,
                          source: Source = Source.HUMAN) -> list[MentionRecord]:
    records = []
    for span in doc.mentions:
        left, right = extract_context(doc.text, (span.start, span.end), window)
        records.append(MentionRecord(
            doc_id=doc.doc_id, mention=span.text, left_ctx=left,
            right_ctx=right, group=span.group, gold_concept=span.concept_id,
            source=source,
        ))
    return records


# ---------------------------------------------------------------- file IO

def load_documents(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                docs.append(Document(
                    doc_id=obj["doc_id"],
                    text=obj["text"],
                    mentions=tuple(MentionSpan(
                        start=m["start"], end=m["end"], text=m["text"],
                        group=m["group"], concept_id=m["concept_id"],
                    ) for m in obj.get("mentions", ())),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SeqFormatError(f"line {lineno}: bad document record: {exc}") from None
    return docs


def save_documents(docs: list[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({
                "doc_id": d.doc_id,
                "text": d.text,
                "mentions": [asdict(m) for m in d.mentions],
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_examples(path) -> list[TrainingExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(TrainingExample(
                    input=obj["input"], target=obj["target"],
                    source=Source(obj["source"]), doc_id=obj["doc_id"],
                    concept_id=obj["concept_id"],
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SeqFormatError(f"line {lineno}: bad example record: {exc}") from None
    return out


def save_examples(examples: list[TrainingExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")

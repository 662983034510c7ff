"""Judge-protocol prompts, verdict parsing, and agreement statistics for
the four-class clinical-relation labeling of prediction/gold mismatches.

Labels: Correct, Broad, Narrow, NoRelation. Responses that name no class
land in a separate parse-failure bucket, never silently defaulted. For
overstatement, the severity order is NoRelation < {Broad, Narrow} <
Correct, with Broad and Narrow mutually incomparable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .evalharness import bootstrap_ci
from .synthgen import render_template, load_template


class JudgeError(ValueError):
    pass


class Label(str, Enum):
    CORRECT = "Correct"
    BROAD = "Broad"
    NARROW = "Narrow"
    NO_RELATION = "NoRelation"


PARSE_FAILURE = "ParseFailure"

# severity rank used for the overstatement check; Broad and Narrow share a
# rank so neither overstates the other
_SEVERITY = {Label.NO_RELATION: 0, Label.BROAD: 1, Label.NARROW: 1, Label.CORRECT: 2}

_LABEL_RE = re.compile(r"\b(correct|broad|narrow|no[\s_-]?relation)\b", re.IGNORECASE)
_CANON = {"correct": Label.CORRECT, "broad": Label.BROAD, "narrow": Label.NARROW}


@dataclass(frozen=True)
class ConceptSummary:
    concept_id: str
    title: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class JudgeCase:
    case_id: str
    doc_id: str
    mention: str
    left_ctx: str
    right_ctx: str
    predicted: ConceptSummary
    gold: ConceptSummary

    def __post_init__(self):
        if self.predicted.concept_id == self.gold.concept_id:
            raise JudgeError("judge cases cover mismatched predictions only")


@dataclass(frozen=True)
class JudgeVerdict:
    case_id: str
    doc_id: str
    label: Label | None          # None == parse failure
    raw: str = ""


def build_judge_prompt(case: JudgeCase, exemplars: list[str],
                       template: str | None = None) -> str:
    """Render the judging prompt for one mismatch case. Exactly five
    labeled exemplar strings are required."""
    if len(exemplars) != 5:
        raise JudgeError(f"expected 5 exemplars, got {len(exemplars)}")
    if template is None:
        template = load_template("en", kind="judge")
    return render_template(template, {
        "exemplars": "\n".join(exemplars),
        "mention": case.mention,
        "left": case.left_ctx,
        "right": case.right_ctx,
        "predicted_id": case.predicted.concept_id,
        "predicted_title": case.predicted.title,
        "predicted_synonyms": ", ".join(case.predicted.synonyms) or "(none)",
        "gold_id": case.gold.concept_id,
        "gold_title": case.gold.title,
        "gold_synonyms": ", ".join(case.gold.synonyms) or "(none)",
    })


def parse_verdict(raw: str) -> Label | None:
    """Last class name occurring in the response wins; None when no class
    name appears."""
    matches = _LABEL_RE.findall(raw)
    if not matches:
        return None
    token = matches[-1].lower()
    return _CANON.get(token, Label.NO_RELATION)


def label_distribution(verdicts: list[JudgeVerdict],
                       exact_match_doc_ids: list[str],
                       B: int = 1000, seed: int = 0,
                       level: float = 0.95) -> dict[str, tuple[float, float, float]]:
    """Per-label percentages with document-level bootstrap CIs.

    Exact-match mentions count as Correct without judging; percentages run
    over all evaluated mentions, with parse failures reported as their own
    bucket.
    """
    if not verdicts and not exact_match_doc_ids:
        raise JudgeError("no evaluated mentions")
    # one (doc_id, bucket) row per evaluated mention
    rows = [(doc_id, Label.CORRECT.value) for doc_id in exact_match_doc_ids]
    rows += [(v.doc_id, v.label.value if v.label is not None else PARSE_FAILURE)
             for v in verdicts]
    by_doc: dict[str, list[str]] = {}
    for doc_id, bucket in rows:
        by_doc.setdefault(doc_id, []).append(bucket)
    docs = [by_doc[d] for d in sorted(by_doc)]

    buckets = [l.value for l in Label] + [PARSE_FAILURE]
    out = {}
    for bucket in buckets:
        def metric(resampled, bucket=bucket):
            total = sum(len(d) for d in resampled)
            count = sum(1 for d in resampled for b in d if b == bucket)
            return 100.0 * count / total

        out[bucket] = bootstrap_ci(metric, docs, B=B, seed=seed, level=level)
    return out


def agreement_report(judge: list[JudgeVerdict], human: list[JudgeVerdict]) -> dict:
    """Exact agreement, per-label precision of the judge, and the rate of
    judge labels strictly above the human label in severity."""
    judge_by_id = {v.case_id: v for v in judge}
    human_by_id = {v.case_id: v for v in human}
    if judge_by_id.keys() != human_by_id.keys():
        raise JudgeError("judge and human verdicts cover different cases")
    if not judge_by_id:
        raise JudgeError("no cases")

    pairs = [(judge_by_id[cid].label, human_by_id[cid].label)
             for cid in sorted(judge_by_id)]
    agree = sum(1 for j, h in pairs if j == h) / len(pairs)

    precision = {}
    for label in Label:
        predicted = [(j, h) for j, h in pairs if j == label]
        if predicted:
            precision[label.value] = sum(1 for j, h in predicted if j == h) / len(predicted)
        else:
            precision[label.value] = None

    overstated = sum(
        1 for j, h in pairs
        if j is not None and h is not None and _SEVERITY[j] > _SEVERITY[h])
    return {
        "agreement": agree,
        "per_label_precision": precision,
        "overstatement_rate": overstated / len(pairs),
        "cases": len(pairs),
    }


# ---------------------------------------------------------------- file IO

def load_verdicts(path) -> list[JudgeVerdict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                label = obj["label"]
                out.append(JudgeVerdict(
                    case_id=obj["case_id"], doc_id=obj["doc_id"],
                    label=Label(label) if label is not None else None,
                    raw=obj.get("raw", "")))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise JudgeError(f"line {lineno}: bad verdict record: {exc}") from None
    return out


def save_verdicts(verdicts: list[JudgeVerdict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps({
                "case_id": v.case_id, "doc_id": v.doc_id,
                "label": v.label.value if v.label is not None else None,
                "raw": v.raw,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def _summary(obj: dict) -> ConceptSummary:
    return ConceptSummary(concept_id=obj["concept_id"], title=obj["title"],
                          synonyms=tuple(obj.get("synonyms", ())))


def load_cases(path) -> list[JudgeCase]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(JudgeCase(
                    case_id=obj["case_id"], doc_id=obj["doc_id"],
                    mention=obj["mention"], left_ctx=obj["left_ctx"],
                    right_ctx=obj["right_ctx"],
                    predicted=_summary(obj["predicted"]),
                    gold=_summary(obj["gold"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise JudgeError(f"line {lineno}: bad case record: {exc}") from None
    return out

"""Linking metrics, seen/unseen stratification, document-level bootstrap
confidence intervals, confidence-threshold analysis, and efficiency
probing of candidate structures."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .trie import SynonymTrie, allowed_next, iter_terminals, resolve


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    mention_idx: int
    gold: str
    candidates: tuple[tuple[str, float], ...]   # (concept id, confidence), best first

    def __post_init__(self):
        confs = [c for _, c in self.candidates]
        if confs != sorted(confs, reverse=True):
            raise EvalError("candidates must be sorted by confidence descending")
        if any(not (0.0 < c <= 1.0) for c in confs):
            raise EvalError("confidences must lie in (0, 1]")

    @property
    def top1(self) -> tuple[str, float] | None:
        return self.candidates[0] if self.candidates else None


def recall_at_k(preds: list[PredictionRecord], k: int) -> float:
    """Fraction of mentions whose gold concept is among the top-k candidates."""
    if k < 1:
        raise EvalError("k must be >= 1")
    if not preds:
        raise EvalError("empty prediction list")
    hits = sum(1 for p in preds if p.gold in {c for c, _ in p.candidates[:k]})
    return hits / len(preds)


def stratify_seen_unseen(train_concepts: set[str], preds: list[PredictionRecord]
                         ) -> tuple[list[PredictionRecord], list[PredictionRecord]]:
    """Partition predictions by whether the gold concept occurred in the
    training split. Callers decide whether synthetic coverage counts by
    choosing what goes into `train_concepts`."""
    seen = [p for p in preds if p.gold in train_concepts]
    unseen = [p for p in preds if p.gold not in train_concepts]
    return seen, unseen


def bootstrap_ci(metric, docs: list, B: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float, float]:
    """Document-level empirical bootstrap percentile interval.

    Resamples whole documents with replacement B times and evaluates
    `metric` (a function of a document list) on each resample. Returns
    (point estimate, lo, hi). Deterministic given the seed.
    """
    if B < 100:
        raise EvalError("B must be >= 100")
    if not docs:
        raise EvalError("no documents")
    if len(docs) == 1:
        import warnings
        warnings.warn("single-document input: zero-width bootstrap interval")
    point = float(metric(docs))
    rng = np.random.default_rng(seed)
    n = len(docs)
    indices = rng.integers(0, n, size=(B, n))
    stats = np.empty(B)
    for b in range(B):
        stats[b] = metric([docs[i] for i in indices[b]])
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(stats, 100 * alpha))
    hi = float(np.percentile(stats, 100 * (1 - alpha)))
    return point, min(lo, point), max(hi, point)


def group_by_document(preds: list[PredictionRecord]) -> list[list[PredictionRecord]]:
    by_doc: dict[str, list[PredictionRecord]] = {}
    for p in preds:
        by_doc.setdefault(p.doc_id, []).append(p)
    return [by_doc[d] for d in sorted(by_doc)]


def recall_at_k_ci(preds: list[PredictionRecord], k: int, B: int = 1000,
                   seed: int = 0, level: float = 0.95):
    docs = group_by_document(preds)

    def metric(resampled):
        flat = [p for doc in resampled for p in doc]
        return recall_at_k(flat, k)

    return bootstrap_ci(metric, docs, B=B, seed=seed, level=level)


def threshold_analysis(preds: list[PredictionRecord], tau: float) -> dict:
    """Emit predictions whose top-1 confidence exceeds tau; precision over
    the emitted set, recall over all mentions. Precision is None when
    nothing clears the threshold."""
    if not 0.0 <= tau <= 1.0:
        raise EvalError(f"threshold out of range: {tau}")
    emitted = [p for p in preds if p.top1 is not None and p.top1[1] > tau]
    correct = sum(1 for p in emitted if p.top1[0] == p.gold)
    total = len(preds)
    precision = correct / len(emitted) if emitted else None
    recall = correct / total if total else 0.0
    if precision is None or precision + recall == 0:
        f1 = None if precision is None else 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "tau": tau,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "kept_fraction": len(emitted) / total if total else 0.0,
    }


# --------------------------------------------------- efficiency probing

class DenseSynonymIndex:
    """Baseline candidate structure: one fixed-width float32 vector per
    synonym, the memory shape of an embedding-based candidate index."""

    def __init__(self, synonyms: list[str], concept_ids: list[str], dim: int = 256):
        if len(synonyms) != len(concept_ids):
            raise EvalError("synonym/concept lists must align")
        self.synonyms = list(synonyms)
        self.concept_ids = list(concept_ids)
        rng = np.random.default_rng(0)
        self.vectors = rng.standard_normal((len(synonyms), dim)).astype(np.float32)

    @property
    def nbytes(self) -> int:
        return (self.vectors.nbytes
                + sum(len(s.encode("utf-8")) for s in self.synonyms)
                + sum(len(c.encode("utf-8")) for c in self.concept_ids))

    def save(self, path) -> None:
        np.savez(path, vectors=self.vectors,
                 synonyms=np.array(self.synonyms, dtype=object),
                 concept_ids=np.array(self.concept_ids, dtype=object),
                 allow_pickle=True)


def efficiency_probe(trie: SynonymTrie, workload: list[tuple[int, ...]],
                     serialized_bytes: int | None = None) -> dict:
    """Throughput and footprint report for a built trie. Numbers are
    recorded, not asserted against any external reference."""
    report = {
        "group": trie.group,
        "synonyms": trie.size,
        "nodes": trie.node_count(),
        "serialized_bytes": serialized_bytes,
        "allowed_next_qps": None,
        "resolve_qps": None,
    }
    if not workload:
        return report
    start = time.perf_counter()
    for prefix in workload:
        allowed_next(trie, prefix)
    elapsed = time.perf_counter() - start
    report["allowed_next_qps"] = len(workload) / elapsed if elapsed > 0 else float("inf")

    terminals = [tokens for tokens, _, _ in iter_terminals(trie)]
    sample = terminals[:min(len(terminals), len(workload))]
    if sample:
        start = time.perf_counter()
        for tokens in sample:
            resolve(trie, tokens)
        elapsed = time.perf_counter() - start
        report["resolve_qps"] = len(sample) / elapsed if elapsed > 0 else float("inf")
    return report


# ---------------------------------------------------------------- file IO

def load_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(PredictionRecord(
                    doc_id=obj["doc_id"],
                    mention_idx=obj["mention_idx"],
                    gold=obj["gold"],
                    candidates=tuple((c["id"], c["confidence"])
                                     for c in obj["candidates"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"line {lineno}: bad prediction record: {exc}") from None
    return out


def save_predictions(preds: list[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({
                "doc_id": p.doc_id,
                "mention_idx": p.mention_idx,
                "gold": p.gold,
                "candidates": [{"id": c, "confidence": conf}
                               for c, conf in p.candidates],
            }, ensure_ascii=False, sort_keys=True) + "\n")

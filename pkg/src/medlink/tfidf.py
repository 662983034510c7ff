"""Character n-gram TF-IDF vectors and concept-representation selection.

A concept is rendered for generation either statically (its preferred
title) or adaptively: the kept synonym most cosine-similar to the mention
under character 3-gram TF-IDF. The vectorizer is fit on the kept synonyms
of the pruned KB so every concept stays representable, annotated or not.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .kb import KBError, KnowledgeBase, PrunedKB, normalize_surface

PAD = "#"
MODEL_FORMAT = "medlink-tfidf/1"


class TfidfError(ValueError):
    pass


def char_ngrams(s: str, n: int) -> list[str]:
    """Character n-grams of the normalized string, padded with one boundary
    marker on each side. Strings shorter than n-2 yield no grams."""
    padded = PAD + normalize_surface(s) + PAD
    if len(padded) < n:
        return []
    return [padded[i:i + n] for i in range(len(padded) - n + 1)]


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise TfidfError("sparse indices must be strictly increasing")
        if any(not math.isfinite(w) for w in self.weights):
            raise TfidfError("sparse weights must be finite")

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices, self.weights))

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights))


ZERO_VECTOR = SparseVector((), ())


@dataclass(frozen=True)
class TfidfModel:
    n: int
    vocab: dict[str, int]            # n-gram -> dense column index
    idf: tuple[float, ...]
    doc_count: int


def fit(corpus: list[str], n: int = 3) -> TfidfModel:
    """Fit a character n-gram TF-IDF model.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, N = len(corpus). The vocabulary
    is sorted lexicographically so fitting is order-independent.
    """
    if not corpus:
        raise TfidfError("empty corpus")
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(set(char_ngrams(doc, n)))
    grams = sorted(df)
    vocab = {g: i for i, g in enumerate(grams)}
    count = len(corpus)
    idf = tuple(math.log((1 + count) / (1 + df[g])) + 1.0 for g in grams)
    return TfidfModel(n=n, vocab=vocab, idf=idf, doc_count=count)


def vectorize(model: TfidfModel, s: str) -> SparseVector:
    """tf-idf vector of s, L2-normalized; grams outside the fitted
    vocabulary are dropped. Empty / all-unknown strings give a zero vector."""
    tf = Counter(char_ngrams(s, model.n))
    entries = sorted(
        (model.vocab[g], count * model.idf[model.vocab[g]])
        for g, count in tf.items()
        if g in model.vocab
    )
    if not entries:
        return ZERO_VECTOR
    norm = math.sqrt(sum(w * w for _, w in entries))
    return SparseVector(
        indices=tuple(i for i, _ in entries),
        weights=tuple(w / norm for _, w in entries),
    )


def cosine(u: SparseVector, v: SparseVector) -> float:
    """Cosine similarity; 0.0 when either vector is zero."""
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = 0.0
    i = j = 0
    while i < len(u.indices) and j < len(v.indices):
        a, b = u.indices[i], v.indices[j]
        if a == b:
            dot += u.weights[i] * v.weights[j]
            i += 1
            j += 1
        elif a < b:
            i += 1
        else:
            j += 1
    return min(1.0, max(0.0, dot / (nu * nv)))


def fit_on_pruned(pruned: PrunedKB, n: int = 3) -> TfidfModel:
    """Fit on all kept synonyms of the pruned KB."""
    corpus = [s for cid in sorted(pruned.kept) for s in pruned.kept[cid]]
    return fit(corpus, n=n)


def adaptive_representation(pruned: PrunedKB, model: TfidfModel,
                            mention: str, concept_id: str) -> str:
    """The kept synonym of the concept with the highest cosine similarity
    to the mention. Ties break to the lexicographically smallest synonym;
    an all-zero score row falls back to the preferred title (or, when the
    title itself was pruned, the smallest kept synonym)."""
    concept = pruned.concept(concept_id)
    kept = pruned.kept_synonyms(concept_id)
    vm = vectorize(model, mention)
    best = None
    best_score = -1.0
    for syn in sorted(kept):
        score = cosine(vm, vectorize(model, syn))
        if score > best_score:
            best, best_score = syn, score
    if best_score <= 0.0:
        return concept.title if concept.title in kept else min(kept)
    return best


def static_representation(kb: KnowledgeBase | PrunedKB, concept_id: str) -> str:
    """Preferred-title baseline representation."""
    return kb.concept(concept_id).title


class Representer:
    """Pluggable representation backend (the comparison harness slot)."""

    def pick(self, mention: str, concept_id: str) -> str:
        raise NotImplementedError


class TfidfRepresenter(Representer):
    def __init__(self, pruned: PrunedKB, model: TfidfModel | None = None):
        self.pruned = pruned
        self.model = model if model is not None else fit_on_pruned(pruned)

    def pick(self, mention, concept_id):
        return adaptive_representation(self.pruned, self.model, mention, concept_id)


class TitleRepresenter(Representer):
    def __init__(self, kb: KnowledgeBase | PrunedKB):
        self.kb = kb

    def pick(self, mention, concept_id):
        return static_representation(self.kb, concept_id)


class EmbeddingRepresenter(Representer):
    """Slot for dense embedding backends; intentionally unimplemented."""

    def __init__(self, *args, **kwargs):
        raise NotImplementedError("dense embedding backends are not shipped")


BACKENDS = {
    "tfidf": TfidfRepresenter,
    "title": TitleRepresenter,
    "embedding": EmbeddingRepresenter,
}


def save_model(model: TfidfModel, path) -> None:
    """Line-delimited text dump: one header line, then gram<TAB>idf rows
    in column order."""
    grams = sorted(model.vocab, key=model.vocab.get)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": MODEL_FORMAT,
            "n": model.n,
            "doc_count": model.doc_count,
            "size": len(grams),
        }, sort_keys=True) + "\n")
        for g, w in zip(grams, model.idf):
            fh.write(f"{g}\t{w!r}\n")


def load_model(path) -> TfidfModel:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != MODEL_FORMAT:
            raise TfidfError(f"unsupported model format: {header.get('format')}")
        vocab: dict[str, int] = {}
        idf: list[float] = []
        for line in fh:
            gram, weight = line.rstrip("\n").split("\t")
            vocab[gram] = len(idf)
            idf.append(float(weight))
    if len(vocab) != header["size"]:
        raise TfidfError("model file truncated")
    return TfidfModel(n=header["n"], vocab=vocab, idf=tuple(idf),
                      doc_count=header["doc_count"])

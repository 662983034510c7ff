"""Guided greedy and beam decoding over a synonym trie.

The scorer is any autoregressive next-token distribution; the decoder
masks it to trie-valid continuations so every emitted sequence resolves
to a knowledge-base concept. Confidence is exp of the summed raw token
log-probabilities (a length-normalized variant is also reported).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .trie import SynonymTrie, Tokenizer, allowed_next, resolve


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecodingResult:
    concept: str
    surface: str
    tokens: tuple[int, ...]
    logprob_sum: float

    @property
    def confidence(self) -> float:
        return math.exp(self.logprob_sum)

    @property
    def normalized_confidence(self) -> float:
        # per-step geometric mean; the +1 counts the EOS step
        return math.exp(self.logprob_sum / (len(self.tokens) + 1))


# --------------------------------------------------------------- scorers

class Scorer:
    """Next-token log-probability distribution over the full vocabulary.

    Implementations return an array of shape (vocab_size,) whose
    exponentials sum to 1. `concurrent` declares whether next_logprobs may
    be called from multiple threads.
    """

    concurrent = True

    def next_logprobs(self, input: str, prefix: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError


class UniformScorer(Scorer):
    def __init__(self, vocab_size: int):
        self._logprobs = np.full(vocab_size, -math.log(vocab_size))

    def next_logprobs(self, input, prefix):
        return self._logprobs


class PreferenceScorer(Scorer):
    """Puts probability `p` on the next token of a preferred sequence
    (EOS once the sequence is exhausted); the remaining mass spreads
    uniformly. Off-sequence prefixes score uniformly."""

    def __init__(self, vocab_size: int, preferred: list[int], p: float = 0.9,
                 eos_id: int = 0):
        self.vocab_size = vocab_size
        self.preferred = tuple(preferred)
        self.p = p
        self.eos_id = eos_id

    def next_logprobs(self, input, prefix):
        if tuple(prefix) == self.preferred[:len(prefix)]:
            target = (self.preferred[len(prefix)]
                      if len(prefix) < len(self.preferred) else self.eos_id)
            out = np.full(self.vocab_size,
                          math.log((1 - self.p) / (self.vocab_size - 1)))
            out[target] = math.log(self.p)
            return out
        return np.full(self.vocab_size, -math.log(self.vocab_size))


class RandomScorer(Scorer):
    """Deterministic pseudo-random distributions keyed on (seed, prefix);
    used for fuzzing and benchmarks."""

    def __init__(self, vocab_size: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.seed = seed

    def next_logprobs(self, input, prefix):
        key = f"{self.seed}|{input}|{','.join(map(str, prefix))}".encode()
        digest = hashlib.blake2b(key, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        logits = rng.standard_normal(self.vocab_size) * 3.0
        return logits - _logsumexp(logits)


class TableScorer(Scorer):
    """Scorer backed by an explicit (prefix -> token -> probability) table;
    unlisted mass spreads uniformly over the remaining vocabulary."""

    def __init__(self, vocab_size: int, table: dict[tuple[int, ...], dict[int, float]]):
        self.vocab_size = vocab_size
        self.table = table

    @classmethod
    def from_tsv(cls, path, vocab_size: int) -> "TableScorer":
        """Rows: comma-separated prefix ids (empty for root) <TAB> token id
        <TAB> probability."""
        table: dict[tuple[int, ...], dict[int, float]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                prefix_s, token_s, prob_s = line.split("\t")
                prefix = tuple(int(t) for t in prefix_s.split(",") if t)
                table.setdefault(prefix, {})[int(token_s)] = float(prob_s)
        return cls(vocab_size, table)

    def next_logprobs(self, input, prefix):
        pinned = self.table.get(tuple(prefix), {})
        mass = sum(pinned.values())
        if mass > 1.0 + 1e-9:
            raise DecodeError(f"table row for prefix {prefix} exceeds unit mass")
        rest = self.vocab_size - len(pinned)
        fill = (1.0 - mass) / rest if rest else 0.0
        out = np.full(self.vocab_size, math.log(fill) if fill > 0 else -math.inf)
        for tok, p in pinned.items():
            out[tok] = math.log(p) if p > 0 else -math.inf
        return out


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


# -------------------------------------------------------------- decoding

def _step_candidates(scorer, trie, input, prefix, renormalize, eos_id):
    """(token, logprob, is_eos) candidates at this prefix, trie-masked."""
    tokens, eos_ok = allowed_next(trie, prefix)
    logprobs = scorer.next_logprobs(input, prefix)
    # EOS id is reserved by the shipped tokenizers and never a trie child
    candidates = sorted(tokens)
    if eos_ok:
        candidates = [eos_id] + candidates
    cand_lps = [(tok, float(logprobs[tok])) for tok in candidates]
    if renormalize:
        total = _logsumexp(np.array([lp for _, lp in cand_lps]))
        cand_lps = [(tok, lp - total) for tok, lp in cand_lps]
    return [(tok, lp, eos_ok and tok == eos_id) for tok, lp in cand_lps]


def constrained_greedy(scorer: Scorer, trie: SynonymTrie, input: str,
                       renormalize: bool = False,
                       eos_id: int = 0) -> DecodingResult:
    """Greedy argmax over trie-masked scorer distributions. The result
    always resolves to a concept of the trie's group."""
    if not trie.root.children and trie.root.terminal is None:
        raise DecodeError("empty trie")
    prefix: tuple[int, ...] = ()
    logprob_sum = 0.0
    max_steps = trie.max_len + 1
    for _ in range(max_steps):
        candidates = _step_candidates(scorer, trie, input, prefix,
                                      renormalize, eos_id)
        tok, lp, is_eos = max(candidates, key=lambda c: (c[1], -c[0]))
        logprob_sum += lp
        if is_eos:
            concept, surface = resolve(trie, prefix)
            return DecodingResult(concept=concept, surface=surface,
                                  tokens=prefix, logprob_sum=logprob_sum)
        prefix = prefix + (tok,)
    raise DecodeError(f"step limit {max_steps} exceeded")


def constrained_beam(scorer: Scorer, trie: SynonymTrie, input: str, k: int,
                     renormalize: bool = False,
                     eos_id: int = 0) -> list[DecodingResult]:
    """Beam search over the constrained lattice. Finished hypotheses hold
    beam slots, so width 1 agrees with constrained_greedy. Returns up to k
    results sorted by logprob_sum descending, one per concept (the
    best-scoring surface is kept)."""
    if k < 1:
        raise DecodeError("beam width must be >= 1")
    if not trie.root.children and trie.root.terminal is None:
        raise DecodeError("empty trie")
    # beam items: (logprob_sum, prefix tokens, finished flag)
    beams: list[tuple[float, tuple[int, ...], bool]] = [(0.0, (), False)]
    max_steps = trie.max_len + 1
    for _ in range(max_steps):
        if all(done for _, _, done in beams):
            break
        pool: list[tuple[float, tuple[int, ...], bool]] = []
        for lp_sum, prefix, done in beams:
            if done:
                pool.append((lp_sum, prefix, True))
                continue
            for tok, lp, is_eos in _step_candidates(scorer, trie, input,
                                                    prefix, renormalize,
                                                    eos_id):
                if is_eos:
                    pool.append((lp_sum + lp, prefix, True))
                else:
                    pool.append((lp_sum + lp, prefix + (tok,), False))
        pool.sort(key=lambda b: (-b[0], b[1], not b[2]))
        beams = pool[:k]
    best_per_concept: dict[str, DecodingResult] = {}
    for lp_sum, prefix, done in beams:
        if not done:
            continue
        concept, surface = resolve(trie, prefix)
        if concept not in best_per_concept:
            best_per_concept[concept] = DecodingResult(
                concept=concept, surface=surface, tokens=prefix,
                logprob_sum=lp_sum)
    results = sorted(best_per_concept.values(),
                     key=lambda r: (-r.logprob_sum, r.tokens))
    return results[:k]


def unconstrained_greedy(scorer: Scorer, tokenizer: Tokenizer, input: str,
                         max_steps: int = 64) -> tuple[list[int], float]:
    """Control decoder with no trie mask; stops at EOS or the step limit.
    Exists to demonstrate that unguided decoding can leave the KB."""
    prefix: list[int] = []
    logprob_sum = 0.0
    for _ in range(max_steps):
        logprobs = scorer.next_logprobs(input, tuple(prefix))
        tok = int(np.argmax(logprobs))
        logprob_sum += float(logprobs[tok])
        if tok == tokenizer.eos_id:
            break
        prefix.append(tok)
    return prefix, logprob_sum

"""Command-line interface.

Subcommand groups: kb, rep, data, trie, decode, synth, judge, eval, serve.
Run `medlink <group> --help` for details.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import evalharness, judge, kb, seqformat, synthgen, tfidf, trie as trie_mod
from .decode import TableScorer, constrained_greedy
from .maskservice import MaskServer, MaskService


def _print(obj):
    print(json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2))


# ------------------------------------------------------------------- kb

def cmd_kb_validate(args):
    base = kb.load_kb(args.path)
    _print({"concepts": len(base.concepts), "groups": sorted(base.groups)})


def cmd_kb_prune(args):
    base = kb.load_kb(args.path, version_tag=args.version_tag)
    pruned = kb.prune_ambiguous_synonyms(base)
    kb.save_pruned(pruned, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(pruned.report(), fh, ensure_ascii=False, indent=2)
    dropped = sum(len(d) for d in pruned.dropped.values())
    _print({"concepts": len(base.concepts), "dropped_synonyms": dropped,
            "flagged_concepts": len(pruned.flagged)})


# ------------------------------------------------------------------ rep

def cmd_rep_build(args):
    pruned = kb.load_pruned(args.kb)
    model = tfidf.fit_on_pruned(pruned, n=args.n)
    tfidf.save_model(model, args.out)
    _print({"vocab": len(model.vocab), "doc_count": model.doc_count})


def cmd_rep_pick(args):
    pruned = kb.load_pruned(args.kb)
    model = tfidf.load_model(args.model)
    picked = tfidf.adaptive_representation(pruned, model, args.mention, args.concept)
    _print({"concept": args.concept, "mention": args.mention, "synonym": picked})


# ----------------------------------------------------------------- data

def cmd_data_compose(args):
    human = seqformat.load_examples(args.human)
    synthetic = seqformat.load_examples(args.synthetic)
    stream = seqformat.compose(human, synthetic, args.strategy, args.seed)
    seqformat.save_examples(stream, args.out)
    _print({"total": len(stream),
            "human": sum(1 for e in stream if e.source is seqformat.Source.HUMAN)})


def cmd_data_subsample(args):
    docs = seqformat.load_documents(args.data)
    kept = seqformat.subsample_documents(docs, args.fraction, args.seed)
    seqformat.save_documents(kept, args.out)
    _print({"kept_documents": len(kept), "of": len(docs)})


# ----------------------------------------------------------------- trie

def cmd_trie_build(args):
    pruned = kb.load_pruned(args.kb)
    tokenizer = trie_mod.tokenizer_from_pruned(args.tokenizer, pruned)
    built = trie_mod.build_trie(pruned, args.group, tokenizer)
    trie_mod.serialize_trie(built, args.out)
    _print({"group": args.group, "synonyms": built.size,
            "nodes": built.node_count(), "collisions": len(built.collisions),
            "fingerprint": built.tokenizer_fingerprint})


def cmd_trie_query(args):
    built = trie_mod.load_trie(args.trie)
    prefix = [int(t) for t in args.prefix.split(",") if t] if args.prefix else []
    tokens, eos = trie_mod.allowed_next(built, prefix)
    _print({"prefix": prefix, "tokens": sorted(tokens), "eos": eos})


def cmd_decode(args):
    built = trie_mod.load_trie(args.trie)
    kind, _, spec_path = args.scorer.partition(":")
    if kind != "table":
        raise SystemExit(f"unsupported scorer spec: {args.scorer}")
    scorer = TableScorer.from_tsv(spec_path, vocab_size=args.vocab_size)
    text = sys.stdin.read() if args.input == "-" else args.input
    result = constrained_greedy(scorer, built, text)
    _print({"concept": result.concept, "surface": result.surface,
            "tokens": list(result.tokens), "logprob_sum": result.logprob_sum,
            "confidence": result.confidence})


# ---------------------------------------------------------------- synth

def cmd_synth_prompts(args):
    base = kb.load_kb(args.kb)
    docs = seqformat.load_documents(args.data)
    dataset = [r for d in docs for r in seqformat.records_from_document(d)]
    concepts = synthgen.select_concepts(base, require_definition=args.require_definition)
    prompts = [synthgen.build_prompt(c, dataset, k=args.k, seed=args.seed,
                                     language=args.lang,
                                     examples_per_concept=args.per_concept)
               for c in concepts]
    synthgen.save_prompts(prompts, args.out)
    _print({"prompts": len(prompts)})


def cmd_synth_ingest(args):
    base = kb.load_kb(args.kb)
    responses = synthgen.load_responses(args.responses)
    docs = []
    rejections = []
    for concept_id, raw in responses:
        concept = base.concept(concept_id)
        accepted, rejected = synthgen.parse_response(raw, concept,
                                                     limit=args.per_concept)
        rejections.extend({"concept_id": concept_id, "line_no": r.line_no,
                           "reason": r.reason} for r in rejected)
        for i, ex in enumerate(accepted):
            docs.append(seqformat.Document(
                doc_id=f"synth:{concept_id}:{i}", text=ex.sentence,
                mentions=(seqformat.MentionSpan(
                    start=ex.offset, end=ex.offset + len(ex.mention),
                    text=ex.sentence[ex.offset:ex.offset + len(ex.mention)],
                    group=concept.group, concept_id=concept_id),)))
    seqformat.save_documents(docs, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for r in rejections:
                fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
    _print({"accepted": len(docs), "rejected": len(rejections)})


# ---------------------------------------------------------------- judge

def cmd_judge_stats(args):
    verdicts = judge.load_verdicts(args.verdicts)
    exact = []
    if args.exact_matches:
        with open(args.exact_matches, encoding="utf-8") as fh:
            exact = [line.strip() for line in fh if line.strip()]
    dist = judge.label_distribution(verdicts, exact, B=args.bootstrap,
                                    seed=args.seed)
    _print({bucket: {"pct": round(p, 4), "lo": round(lo, 4), "hi": round(hi, 4)}
            for bucket, (p, lo, hi) in dist.items()})


def cmd_judge_agreement(args):
    report = judge.agreement_report(judge.load_verdicts(args.judge),
                                    judge.load_verdicts(args.human))
    _print(report)


# ----------------------------------------------------------------- eval

def cmd_eval_run(args):
    preds = evalharness.load_predictions(args.preds)
    out = {"recall_at_1": evalharness.recall_at_k(preds, 1)}
    point, lo, hi = evalharness.recall_at_k_ci(preds, 1, B=args.bootstrap,
                                               seed=args.seed)
    out["recall_at_1_ci"] = [lo, hi]
    if args.train:
        train = {e.concept_id for e in seqformat.load_examples(args.train)
                 if e.source is seqformat.Source.HUMAN}
        seen, unseen = evalharness.stratify_seen_unseen(train, preds)
        out["seen"] = {"count": len(seen),
                       "recall_at_1": evalharness.recall_at_k(seen, 1) if seen else None}
        out["unseen"] = {"count": len(unseen),
                         "recall_at_1": evalharness.recall_at_k(unseen, 1) if unseen else None}
    _print(out)


def cmd_eval_threshold(args):
    preds = evalharness.load_predictions(args.preds)
    _print(evalharness.threshold_analysis(preds, args.tau))


def cmd_eval_bench(args):
    built = trie_mod.load_trie(args.trie)
    import os
    import random
    rng = random.Random(0)
    terminals = [t for t, _, _ in trie_mod.iter_terminals(built)]
    workload = [t[:rng.randrange(len(t) + 1)] for t in terminals
                for _ in range(max(1, args.queries // max(1, len(terminals))))]
    report = evalharness.efficiency_probe(built, workload[:args.queries],
                                          serialized_bytes=os.path.getsize(args.trie))
    _print(report)


# ---------------------------------------------------------------- serve

def cmd_serve(args):
    tries = {}
    for spec in args.trie:
        name, _, path = spec.partition("=")
        if not path:
            raise SystemExit(f"trie spec must be name=path: {spec}")
        tries[name] = trie_mod.load_trie(path)
    service = MaskService(tries, idle_timeout=args.idle_timeout)
    if args.stdio:
        from .maskservice import serve_stdio
        serve_stdio(service)
        return
    server = MaskServer(service, host=args.host, port=args.port)
    host, port = server.address
    print(f"listening on {host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


# ------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medlink")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kb-validate", help="validate a KB file")
    p.add_argument("path")
    p.set_defaults(func=cmd_kb_validate)

    p = sub.add_parser("kb-prune", help="remove in-group ambiguous synonyms")
    p.add_argument("path")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--version-tag", default="")
    p.set_defaults(func=cmd_kb_prune)

    p = sub.add_parser("rep-build", help="fit the char n-gram TF-IDF model")
    p.add_argument("--kb", required=True, help="pruned KB file")
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=3)
    p.set_defaults(func=cmd_rep_build)

    p = sub.add_parser("rep-pick", help="pick the concept representation for a mention")
    p.add_argument("--kb", required=True, help="pruned KB file")
    p.add_argument("--model", required=True)
    p.add_argument("--mention", required=True)
    p.add_argument("--concept", required=True)
    p.set_defaults(func=cmd_rep_pick)

    p = sub.add_parser("data-compose", help="compose human + synthetic training streams")
    p.add_argument("--human", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--strategy", required=True, choices=["spt", "comb", "int"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_compose)

    p = sub.add_parser("data-subsample", help="document-level subsampling")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_subsample)

    p = sub.add_parser("trie-build", help="build a per-group synonym trie")
    p.add_argument("--kb", required=True, help="pruned KB file")
    p.add_argument("--group", required=True)
    p.add_argument("--tokenizer", default="char", choices=["char", "whitespace"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trie_build)

    p = sub.add_parser("trie-query", help="allowed continuations of a prefix")
    p.add_argument("--trie", required=True)
    p.add_argument("--prefix", default="", help="comma-separated token ids")
    p.set_defaults(func=cmd_trie_query)

    p = sub.add_parser("decode", help="constrained greedy decode with a table scorer")
    p.add_argument("--trie", required=True)
    p.add_argument("--scorer", required=True, help="table:<tsv path>")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--input", default="-")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("synth-prompts", help="build generation prompts")
    p.add_argument("--kb", required=True)
    p.add_argument("--data", required=True, help="human-annotated documents")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--per-concept", type=int, default=3)
    p.add_argument("--lang", default="en")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-definition", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_prompts)

    p = sub.add_parser("synth-ingest", help="validate responses into a synthetic dataset")
    p.add_argument("--kb", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--per-concept", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_synth_ingest)

    p = sub.add_parser("judge-stats", help="label distribution with bootstrap CIs")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--exact-matches", help="file of doc ids, one per exact-match mention")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_judge_stats)

    p = sub.add_parser("judge-agreement", help="judge vs human agreement report")
    p.add_argument("--judge", required=True)
    p.add_argument("--human", required=True)
    p.set_defaults(func=cmd_judge_agreement)

    p = sub.add_parser("eval-run", help="Recall@1 with bootstrap CI and stratification")
    p.add_argument("--preds", required=True)
    p.add_argument("--train", help="training example dump (human sources define Seen)")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_run)

    p = sub.add_parser("eval-threshold", help="confidence-threshold analysis")
    p.add_argument("--preds", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.set_defaults(func=cmd_eval_threshold)

    p = sub.add_parser("eval-bench", help="trie throughput and footprint probe")
    p.add_argument("--trie", required=True)
    p.add_argument("--queries", type=int, default=10000)
    p.set_defaults(func=cmd_eval_bench)

    p = sub.add_parser("serve", help="run the allowed-token mask service")
    p.add_argument("--trie", action="append", required=True,
                   help="name=path, repeatable")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--idle-timeout", type=float, default=600.0)
    p.add_argument("--stdio", action="store_true")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (kb.KBError, tfidf.TfidfError, seqformat.SeqFormatError,
            trie_mod.TrieError, synthgen.SynthGenError, judge.JudgeError,
            evalharness.EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

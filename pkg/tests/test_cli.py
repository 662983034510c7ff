"""End-to-end smoke tests driving the CLI in-process via main(argv)."""

import json

import pytest

from medlink.cli import main
from medlink.evalharness import PredictionRecord, save_predictions
from medlink.seqformat import (Document, MentionSpan, Source,
                               TrainingExample, save_documents,
                               save_examples)
from medlink.trie import load_trie, tokenizer_from_pruned
from medlink.kb import load_pruned

from conftest import write_kb_file


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr().out
    return rc, (json.loads(out) if out.strip() else None)


@pytest.fixture
def kb_path(tmp_path, fig_kb):
    path = tmp_path / "kb.ndjson"
    write_kb_file(fig_kb, path)
    return path


@pytest.fixture
def pruned_path(tmp_path, kb_path, capsys):
    out = tmp_path / "pruned.ndjson"
    rc, _ = run(capsys, "kb-prune", str(kb_path), "--out", str(out))
    assert rc == 0
    return out


def test_kb_validate(kb_path, capsys):
    rc, obj = run(capsys, "kb-validate", str(kb_path))
    assert rc == 0
    assert obj["concepts"] == 4
    assert "DISO" in obj["groups"]


def test_kb_validate_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"id": "C1"}\n')
    rc, _ = run(capsys, "kb-validate", str(bad))
    assert rc == 1


def test_kb_prune_report(tmp_path, kb_path, capsys):
    out = tmp_path / "pruned.ndjson"
    report = tmp_path / "report.json"
    rc, obj = run(capsys, "kb-prune", str(kb_path), "--out", str(out),
                  "--report", str(report))
    assert rc == 0
    assert obj["dropped_synonyms"] == 2  # both DISO "Discharge" copies
    assert json.loads(report.read_text())["dropped"]


def test_rep_build_and_pick(tmp_path, pruned_path, capsys):
    model = tmp_path / "tfidf.model"
    rc, obj = run(capsys, "rep-build", "--kb", str(pruned_path),
                  "--out", str(model))
    assert rc == 0 and obj["vocab"] > 0
    rc, obj = run(capsys, "rep-pick", "--kb", str(pruned_path),
                  "--model", str(model), "--mention", "discharge",
                  "--concept", "C0012621")
    assert rc == 0
    assert obj["synonym"] == "Fluid Discharge"


def test_trie_build_query_decode(tmp_path, pruned_path, capsys):
    trie_path = tmp_path / "diso.trie"
    rc, obj = run(capsys, "trie-build", "--kb", str(pruned_path),
                  "--group", "DISO", "--out", str(trie_path))
    assert rc == 0 and obj["synonyms"] > 0

    rc, obj = run(capsys, "trie-query", "--trie", str(trie_path), "--prefix", "")
    assert rc == 0 and obj["tokens"] and not obj["eos"]

    # table scorer steering toward "AS"
    pruned = load_pruned(pruned_path)
    tok = tokenizer_from_pruned("char", pruned)
    target = tok.encode("AS")
    lines = [f"{','.join(map(str, target[:i]))}\t{t}\t0.9"
             for i, t in enumerate(target)]
    lines.append(f"{','.join(map(str, target))}\t0\t0.9")
    tsv = tmp_path / "scorer.tsv"
    tsv.write_text("\n".join(lines) + "\n")
    rc, obj = run(capsys, "decode", "--trie", str(trie_path),
                  "--scorer", f"table:{tsv}", "--vocab-size",
                  str(tok.vocab_size), "--input", "aortic stenosis noted")
    assert rc == 0
    assert obj["concept"] == "C0003869"
    assert obj["surface"] == "AS"


def test_data_compose_int(tmp_path, capsys):
    def ex(i, source):
        return TrainingExample(input=f"in{i}", target=f"t{i}",
                               source=source, doc_id=f"d{i}", concept_id="C1")
    human = [ex(i, Source.HUMAN) for i in range(6)]
    synth = [ex(100 + i, Source.SYNTHETIC) for i in range(4)]
    hp, sp, op = (tmp_path / n for n in ("h.ndjson", "s.ndjson", "o.ndjson"))
    save_examples(human, hp)
    save_examples(synth, sp)
    rc, obj = run(capsys, "data-compose", "--human", str(hp),
                  "--synthetic", str(sp), "--strategy", "int",
                  "--seed", "7", "--out", str(op))
    assert rc == 0
    assert obj["total"] == 8  # 2 * len(synthetic)
    assert obj["human"] == 4


def test_data_subsample(tmp_path, capsys):
    docs = [Document(doc_id=f"d{i}", text=f"text {i}") for i in range(10)]
    dp, op = tmp_path / "docs.ndjson", tmp_path / "kept.ndjson"
    save_documents(docs, dp)
    rc, obj = run(capsys, "data-subsample", "--data", str(dp),
                  "--fraction", "0.3", "--seed", "1", "--out", str(op))
    assert rc == 0
    assert obj["kept_documents"] == 3


def test_synth_prompts_and_ingest(tmp_path, kb_path, capsys):
    docs = []
    for i in range(3):
        text = f"Case {i}: purulent discharge from the wound."
        start = text.index("discharge")
        docs.append(Document(doc_id=f"d{i}", text=text, mentions=(
            MentionSpan(start=start, end=start + len("discharge"),
                        text="discharge", group="DISO",
                        concept_id="C0012621"),)))
    dp = tmp_path / "docs.ndjson"
    save_documents(docs, dp)
    prompts = tmp_path / "prompts.ndjson"
    rc, obj = run(capsys, "synth-prompts", "--kb", str(kb_path),
                  "--data", str(dp), "--k", "2", "--out", str(prompts))
    assert rc == 0 and obj["prompts"] == 4

    responses = tmp_path / "responses.ndjson"
    raw = ("discharge\tThe patient had foul discharge overnight.\n"
           "fluid discharge\tContinued fluid discharge was documented.\n"
           "no tab line\n")
    responses.write_text(json.dumps({"concept_id": "C0012621", "raw": raw}) + "\n")
    out = tmp_path / "synth_docs.ndjson"
    report = tmp_path / "rejects.ndjson"
    rc, obj = run(capsys, "synth-ingest", "--kb", str(kb_path),
                  "--responses", str(responses), "--out", str(out),
                  "--report", str(report))
    assert rc == 0
    assert obj == {"accepted": 2, "rejected": 1}
    assert json.loads(report.read_text().splitlines()[0])["reason"]


def test_judge_stats_and_agreement(capsys, tmp_path):
    import pathlib
    fixtures = pathlib.Path(__file__).parent / "fixtures"
    rc, obj = run(capsys, "judge-stats",
                  "--verdicts", str(fixtures / "judge_distribution_verdicts.ndjson"),
                  "--exact-matches", str(fixtures / "judge_distribution_exact.txt"),
                  "--bootstrap", "200", "--seed", "3")
    assert rc == 0
    assert obj["Correct"]["pct"] == pytest.approx(72.6)

    rc, obj = run(capsys, "judge-agreement",
                  "--judge", str(fixtures / "judge_agreement_judge.ndjson"),
                  "--human", str(fixtures / "judge_agreement_human.ndjson"))
    assert rc == 0
    assert obj["cases"] == 150
    assert obj["agreement"] == pytest.approx(100 / 150)


def test_eval_run_and_threshold(tmp_path, capsys):
    preds = [PredictionRecord(doc_id=f"d{i % 4}", mention_idx=i,
                              gold="C1" if i % 2 else "C2",
                              candidates=(("C1", 0.8), ("C2", 0.4)))
             for i in range(20)]
    pp = tmp_path / "preds.ndjson"
    save_predictions(preds, pp)
    rc, obj = run(capsys, "eval-run", "--preds", str(pp), "--bootstrap", "200")
    assert rc == 0
    assert obj["recall_at_1"] == 0.5
    lo, hi = obj["recall_at_1_ci"]
    assert lo <= 0.5 <= hi

    rc, obj = run(capsys, "eval-threshold", "--preds", str(pp), "--tau", "0.5")
    assert rc == 0
    assert obj["kept_fraction"] == 1.0  # all top confidences 0.8 > 0.5

    train = [TrainingExample(input="i", target="t", source=Source.HUMAN,
                             doc_id="d", concept_id="C1")]
    tp = tmp_path / "train.ndjson"
    save_examples(train, tp)
    rc, obj = run(capsys, "eval-run", "--preds", str(pp), "--train", str(tp),
                  "--bootstrap", "100")
    assert rc == 0
    assert obj["seen"]["count"] == 10 and obj["unseen"]["count"] == 10


def test_eval_bench(tmp_path, pruned_path, capsys):
    trie_path = tmp_path / "diso.trie"
    rc, _ = run(capsys, "trie-build", "--kb", str(pruned_path),
                "--group", "DISO", "--out", str(trie_path))
    assert rc == 0
    rc, obj = run(capsys, "eval-bench", "--trie", str(trie_path),
                  "--queries", "200")
    assert rc == 0
    assert obj["allowed_next_qps"] > 0
    assert obj["serialized_bytes"] == trie_path.stat().st_size

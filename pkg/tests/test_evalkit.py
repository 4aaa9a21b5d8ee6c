import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posebench.curation import PairSample
from posebench.evalkit import (
    CoverageMismatch,
    EmptyOverlap,
    EvalError,
    PredictionSet,
    consistency_rate,
    evaluate_run,
    macro_f1,
    read_predictions,
    write_predictions,
    write_report,
)
from posebench.geometry import PoseVector


def make_samples(labels, tags=None, kind="bench"):
    tags = tags or ["15"] * len(labels)
    out = []
    for i, (label_index, tag) in enumerate(zip(labels, tags)):
        phi = 0.2 if label_index == 0 else -0.2
        out.append(
            PairSample(
                sample_id=f"seq:{i:06d}-{i + 10:06d}",
                kind=kind,
                src_index=i,
                tgt_index=i + 10,
                tag=tag,
                label="a" if label_index == 0 else "b",
                label_index=label_index,
                sign=1 if label_index == 0 else -1,
                pose_vector=PoseVector(0.0, phi, 0.0, 0.0, 0.0, 0.0),
                tau=17.0,
                mean_deviation=3.0,
            )
        )
    return out


def preds_for(samples, fn):
    return PredictionSet({s.sample_id: fn(s) for s in samples})


class TestMacroF1:
    def test_perfect(self):
        gold = make_samples([0, 1] * 10)
        assert macro_f1(preds_for(gold, lambda s: s.label_index), gold) == 1.0

    def test_inverted(self):
        gold = make_samples([0, 1] * 10)
        assert macro_f1(preds_for(gold, lambda s: 1 - s.label_index), gold) == 0.0

    def test_constant_on_balanced_is_one_third(self):
        gold = make_samples([0, 1] * 10)
        score = macro_f1(preds_for(gold, lambda s: 0), gold)
        assert score == pytest.approx(1.0 / 3.0)

    def test_random_predictor_near_half(self):
        gold = make_samples([0, 1] * 500)
        rng = np.random.default_rng(99)
        score = macro_f1(preds_for(gold, lambda s: int(rng.integers(0, 2))), gold)
        assert abs(score - 0.5) < 0.1

    def test_abstentions_penalized(self):
        gold = make_samples([0, 0, 1, 1])
        # Two right answers, two abstentions: recall suffers on both classes.
        preds = PredictionSet({
            gold[0].sample_id: 0,
            gold[2].sample_id: 1,
        })
        score = macro_f1(preds, gold)
        # Per class: tp=1, fp=0, fn=1 so F1 = 2/3 each.
        assert score == pytest.approx(2.0 / 3.0)

    def test_empty_overlap(self):
        gold = make_samples([0, 1])
        with pytest.raises(EmptyOverlap):
            macro_f1(PredictionSet({"other:000000-000001": 0}), make_samples([0, 1]))
        with pytest.raises(EvalError):
            macro_f1(PredictionSet({"missing:999999-999998": 1,
                                    gold[0].sample_id: 0}), gold)

    def test_degenerate_single_class_gold(self):
        gold = make_samples([0, 0, 0, 0])
        score = macro_f1(preds_for(gold, lambda s: 0), gold)
        # Class 1 never appears anywhere and contributes F1 = 0.
        assert score == pytest.approx(0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(list(range(12))))
    def test_invariant_under_relabeling_and_order(self, perm):
        gold = make_samples([0, 1] * 6)
        preds = preds_for(gold, lambda s: s.label_index if s.src_index % 3 else 1 - s.label_index)
        base = macro_f1(preds, gold)
        renamed_gold = []
        renamed_preds = {}
        for new_pos, idx in enumerate(perm):
            s = gold[idx]
            new_id = f"renamed:{new_pos:06d}-{new_pos + 1:06d}"
            renamed_gold.append(
                PairSample(
                    sample_id=new_id, kind=s.kind, src_index=s.src_index,
                    tgt_index=s.tgt_index, tag=s.tag, label=s.label,
                    label_index=s.label_index, sign=s.sign, pose_vector=s.pose_vector,
                    tau=s.tau, mean_deviation=s.mean_deviation,
                )
            )
            renamed_preds[new_id] = preds.get(s.sample_id)
        assert macro_f1(PredictionSet(renamed_preds), renamed_gold) == pytest.approx(base)

    def test_complement_mirrors_confusion(self):
        from posebench.evalkit import _confusion

        gold = make_samples([0, 1, 0, 0, 1, 1, 0, 1])
        preds = preds_for(gold, lambda s: s.label_index if s.src_index % 3 else 1 - s.label_index)
        complement = PredictionSet({sid: 1 - v for sid, v in preds.labels.items()})
        gold_map = {s.sample_id: s.label_index for s in gold}
        c0, c1 = _confusion(gold_map, preds)
        d0, d1 = _confusion(gold_map, complement)
        for c, d in ((c0, d0), (c1, d1)):
            assert d.tp == c.fn and d.fn == c.tp
            assert d.fp == c.tn and d.tn == c.fp
        perfect = preds_for(gold, lambda s: s.label_index)
        inverted = PredictionSet({sid: 1 - v for sid, v in perfect.labels.items()})
        assert macro_f1(perfect, gold) == 1.0
        assert macro_f1(inverted, gold) == 0.0


class TestConsistency:
    def test_exact_complement_is_100(self):
        gold = make_samples([0, 1] * 5)
        orig = preds_for(gold, lambda s: s.label_index)
        swapped = PredictionSet({sid: 1 - v for sid, v in orig.labels.items()})
        assert consistency_rate(orig, swapped, gold) == 100.0

    def test_identical_sets_are_0(self):
        gold = make_samples([0, 1] * 5)
        orig = preds_for(gold, lambda s: s.label_index)
        assert consistency_rate(orig, orig, gold) == 0.0

    def test_symmetric(self):
        gold = make_samples([0, 1] * 8)
        rng = np.random.default_rng(3)
        a = preds_for(gold, lambda s: int(rng.integers(0, 2)))
        b = preds_for(gold, lambda s: int(rng.integers(0, 2)))
        assert consistency_rate(a, b, gold) == consistency_rate(b, a, gold)

    def test_abstention_breaks_consistency(self):
        gold = make_samples([0, 0])
        orig = PredictionSet({gold[0].sample_id: 0, gold[1].sample_id: 0})
        swapped = PredictionSet({gold[0].sample_id: 1, gold[1].sample_id: None})
        assert consistency_rate(orig, swapped, gold) == 50.0

    def test_coverage_mismatch(self):
        gold = make_samples([0, 1, 0])
        orig = preds_for(gold, lambda s: s.label_index)
        partial = PredictionSet({gold[0].sample_id: 1})
        with pytest.raises(CoverageMismatch):
            consistency_rate(orig, partial, gold)


class TestEvaluateRun:
    def test_single_group_equals_macro_f1(self):
        gold = make_samples([0, 1] * 10)
        preds = preds_for(gold, lambda s: s.label_index if s.src_index % 2 else 1 - s.label_index)
        report = evaluate_run(gold, preds)
        assert len(report.groups) == 1
        assert report.groups[0].macro_f1 == pytest.approx(macro_f1(preds, gold))
        assert report.average_macro_f1 == pytest.approx(macro_f1(preds, gold))

    def test_groups_ordered_and_weighted(self):
        tags = ["15"] * 4 + ["30"] * 4 + ["45"] * 8
        gold = make_samples([0, 1] * 8, tags=tags)
        preds = preds_for(gold, lambda s: s.label_index)
        # Miss every 45-degree sample.
        worse = dict(preds.labels)
        for s in gold:
            if s.tag == "45":
                worse[s.sample_id] = 1 - s.label_index
        report = evaluate_run(gold, PredictionSet(worse))
        assert [g.tag for g in report.groups] == ["15", "30", "45"]
        by_tag = {g.tag: g.macro_f1 for g in report.groups}
        expected = (by_tag["15"] * 4 + by_tag["30"] * 4 + by_tag["45"] * 8) / 16
        assert report.average_macro_f1 == pytest.approx(expected)

    def test_diag_groups_in_dof_order(self):
        tags = ["t_z", "theta", "phi", "theta"]
        gold = make_samples([0, 1, 0, 1], tags=tags, kind="diag")
        report = evaluate_run(gold, preds_for(gold, lambda s: s.label_index))
        assert [g.tag for g in report.groups] == ["theta", "phi", "t_z"]

    def test_report_round_trip_and_table(self, tmp_path):
        gold = make_samples([0, 1] * 6, tags=["15", "15", "30", "30"] * 3)
        preds = preds_for(gold, lambda s: s.label_index)
        swapped = PredictionSet({sid: 1 - v for sid, v in preds.labels.items()})
        report = evaluate_run(gold, preds, swapped)
        assert report.consistency_pct == 100.0
        path = tmp_path / "report.json"
        write_report(report, path)
        doc = json.loads(path.read_text())
        assert doc["average_macro_f1"] == 1.0
        assert doc["consistency_pct"] == 100.0
        assert [g["tag"] for g in doc["groups"]] == ["15", "30"]
        table = report.format_table()
        assert "macro-F1" in table and "average" in table


class TestPredictionIO:
    def test_round_trip_with_abstentions(self, tmp_path):
        preds = PredictionSet({"a:000000-000001": 0, "b:000002-000003": None, "c:000004-000005": 1})
        path = tmp_path / "preds.csv"
        write_predictions(preds, path)
        back = read_predictions(path)
        assert back.labels == preds.labels

    def test_junk_labels_abstain(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("sample_id,label_index\nx:000000-000001,2\ny:000000-000001,maybe\nz:000000-000001,1\n")
        preds = read_predictions(path)
        assert preds.labels == {"x:000000-000001": None, "y:000000-000001": None, "z:000000-000001": 1}

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("sample_id,label_index\nx,0\nx,1\n")
        with pytest.raises(EvalError):
            read_predictions(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("id,label\nx,0\n")
        with pytest.raises(EvalError):
            read_predictions(path)

    def test_invalid_label_value_rejected(self):
        with pytest.raises(EvalError):
            PredictionSet({"a": 3})

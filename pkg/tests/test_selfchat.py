import json

import pytest

from gradechat.levels import LEVELS, Level
from gradechat.lm import LmError, STUDENT, TUTOR
from gradechat.selfchat import (
    ABORTED,
    COMPLETE,
    DialogueSpec,
    SelfChatEngine,
    SuiteError,
    aggregate_suite,
    drift_to_csv,
    plan_suite,
    run_dialogue,
    run_suite,
    suite_report_to_dict,
    write_transcripts_jsonl,
)


@pytest.fixture(scope="module")
def engine(bundle):
    return SelfChatEngine(
        lm=bundle.lm,
        predictor=bundle.predictor,
        tokenizer=bundle.tokenizer,
        gold_lexicon=bundle.gold_lexicon,
        heuristic_lexicon=bundle.heuristic_lexicon,
        rerank_candidates=3,
    )


class TestPlanSuite:
    def test_default_plan_is_75_per_method(self):
        specs = plan_suite(["baseline"])
        assert len(specs) == 75

    def test_two_methods_double_the_plan(self):
        specs = plan_suite(["baseline", "fudge"])
        assert len(specs) == 150

    def test_one_dialogue_per_pair(self):
        specs = plan_suite(["baseline"], dialogues_per_pair=1)
        assert len(specs) == 25

    def test_every_pair_exactly_three_times(self):
        specs = plan_suite(["baseline"])
        pairs = {}
        for spec in specs:
            key = (spec.tutor_level.value, spec.student_level.value)
            pairs[key] = pairs.get(key, 0) + 1
        assert len(pairs) == 25 and set(pairs.values()) == {3}

    def test_topics_from_student_level_without_duplicates_in_pair(self):
        from gradechat.prompts import selfchat_topics

        topics = selfchat_topics()
        specs = plan_suite(["baseline"])
        for spec in specs:
            assert spec.topic in topics[spec.student_level.value]
        for tutor in LEVELS:
            for student in LEVELS:
                mine = [
                    s.topic
                    for s in specs
                    if s.tutor_level == tutor and s.student_level == student
                ]
                assert len(set(mine)) == 3

    def test_insufficient_topics_rejected(self):
        topics = {lv.value: ["only-one"] for lv in LEVELS}
        with pytest.raises(SuiteError, match="topics"):
            plan_suite(["baseline"], topics=topics)

    def test_unknown_method_rejected(self):
        with pytest.raises(SuiteError, match="valid"):
            plan_suite(["rlhf"])

    def test_deterministic_seeds(self):
        a = plan_suite(["baseline"], seed=5)
        b = plan_suite(["baseline"], seed=5)
        assert a == b


def spec_for(method="baseline", turns=2, seed=3):
    return DialogueSpec(
        tutor_level=Level(1),
        student_level=Level(1),
        topic="favorite food",
        method=method,
        turns=turns,
        seed=seed,
    )


class TestRunDialogue:
    def test_single_turn_dialogue_shape(self, engine):
        transcript = run_dialogue(spec_for(turns=1), engine)
        assert transcript.status == COMPLETE
        roles = [t.role for t in transcript.turns]
        assert roles == [STUDENT, TUTOR]

    def test_roles_alternate_student_first(self, engine):
        transcript = run_dialogue(spec_for(turns=3), engine)
        roles = [t.role for t in transcript.turns]
        assert roles == [STUDENT, TUTOR] * 3
        for a, b in zip(roles, roles[1:]):
            assert a != b

    def test_metrics_present_for_every_tutor_turn(self, engine):
        transcript = run_dialogue(spec_for(turns=3), engine)
        for record in transcript.turns:
            if record.role == TUTOR:
                assert record.metrics is not None
            else:
                assert record.metrics is None

    def test_seeded_reproducibility(self, engine):
        a = run_dialogue(spec_for(turns=2), engine)
        b = run_dialogue(spec_for(turns=2), engine)
        assert a == b

    def test_concurrent_runner_matches_sequential(self, engine):
        specs = [spec_for(turns=1, seed=s) for s in range(6)]
        assert run_suite(specs, engine, workers=4) == run_suite(specs, engine)

    @pytest.mark.parametrize("method", ["baseline", "detailed", "overgenerate", "fudge"])
    def test_all_methods_run(self, engine, method):
        transcript = run_dialogue(spec_for(method=method, turns=1), engine)
        assert transcript.status == COMPLETE

    def test_abort_keeps_turns_so_far(self, bundle):
        class FlakyLM:
            def __init__(self, lm):
                self.lm = lm
                self.joiner = lm.joiner
                self.calls = 0

            def complete(self, context):
                self.calls += 1
                if self.calls > 3:
                    raise LmError("provider fell over")
                return self.lm.complete(context)

            def next_distribution(self, *a, **kw):
                return self.lm.next_distribution(*a, **kw)

            def sequence_log_probs(self, tokens):
                return self.lm.sequence_log_probs(tokens)

        flaky = FlakyLM(bundle.lm)
        engine = SelfChatEngine(
            lm=flaky,
            predictor=bundle.predictor,
            tokenizer=bundle.tokenizer,
            gold_lexicon=bundle.gold_lexicon,
            heuristic_lexicon=bundle.heuristic_lexicon,
        )
        transcript = run_dialogue(spec_for(turns=6), engine)
        assert transcript.status == ABORTED
        assert len(transcript.turns) == 3  # student, tutor, student of failed pair
        assert "fell over" in transcript.error


class TestAggregate:
    def test_singleton_suite_report(self, engine):
        transcript = run_dialogue(spec_for(turns=2), engine)
        report = aggregate_suite([transcript])
        assert len(report.reports) == 1
        row = report.reports[0].as_row()
        assert set(row) == {
            "Model",
            "Avg. Length",
            "Avg. PPL",
            "div@3",
            "Readability",
            "TMR",
            "ControlError",
        }

    def test_drift_series_mean(self, engine):
        transcripts = [run_dialogue(spec_for(turns=2, seed=s), engine) for s in (1, 2)]
        report = aggregate_suite(transcripts)
        drift = report.drift["baseline"]
        per_turn = {}
        for t in transcripts:
            for i, rec in enumerate(t.tutor_turns(), start=1):
                per_turn.setdefault(i, []).append(rec.metrics.tmr)
        for point in drift:
            values = per_turn[point.turn_index]
            assert point.mean_tmr == pytest.approx(sum(values) / len(values), abs=1e-9)
            assert point.n == len(values)

    def test_aborted_excluded_and_counted(self, engine, bundle):
        good = run_dialogue(spec_for(turns=1), engine)
        bad = good.__class__(spec=good.spec, turns=good.turns[:1], status=ABORTED, error="x")
        report = aggregate_suite([good, bad])
        assert report.aborted["baseline"] == 1
        assert report.reports[0].n_utterances == 1

    def test_method_with_no_complete_transcripts_marked_absent(self, engine):
        good = run_dialogue(spec_for(turns=1), engine)
        lost = run_dialogue(spec_for(method="fudge", turns=1), engine)
        lost = lost.__class__(spec=lost.spec, turns=(), status=ABORTED, error="x")
        report = aggregate_suite([good, lost])
        assert report.absent_methods == ("fudge",)
        assert [r.method for r in report.reports] == ["baseline"]

    def test_aggregation_conservation(self, engine):
        transcripts = [run_dialogue(spec_for(turns=2, seed=s), engine) for s in range(4)]
        report = aggregate_suite(transcripts)
        all_turns = [
            rec.metrics for t in transcripts for rec in t.tutor_turns()
        ]
        expected_tmr = sum(m.tmr for m in all_turns) / len(all_turns) * 100
        assert report.reports[0].tmr_percent == pytest.approx(expected_tmr, abs=1e-9)


class TestPersistence:
    def test_jsonl_round_trip_fields(self, engine, tmp_path):
        transcripts = [run_dialogue(spec_for(turns=1), engine)]
        path = tmp_path / "transcripts.jsonl"
        write_transcripts_jsonl(path, transcripts)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert record["schema_version"] == 1
        assert record["spec"]["method"] == "baseline"
        assert [t["role"] for t in record["turns"]] == ["student", "tutor"]

    def test_report_dict_and_drift_csv(self, engine):
        transcripts = [run_dialogue(spec_for(turns=2, seed=s), engine) for s in (1, 2)]
        report = aggregate_suite(transcripts)
        payload = suite_report_to_dict(report)
        assert payload["rows"][0]["Model"] == "baseline"
        csv_text = drift_to_csv(report)
        assert csv_text.splitlines()[0] == "method,turn_index,mean_tmr,n"
        assert len(csv_text.splitlines()) == 3

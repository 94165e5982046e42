import io
import json
from pathlib import Path

import pytest

from gradechat.cli import main

DATA = Path(__file__).parent / "data"


@pytest.fixture()
def corpus_dir(tmp_path):
    """Five-level corpus over the register vocabulary."""
    from gradechat.synthcorpus import EASY_LEMMAS, HARD_LEMMAS

    out = tmp_path / "corpus"
    out.mkdir()
    words = {
        "n5": EASY_LEMMAS[:8],
        "n4": EASY_LEMMAS[8:16],
        "n3": EASY_LEMMAS[16:] + HARD_LEMMAS[:4],
        "n2": HARD_LEMMAS[4:12],
        "n1": HARD_LEMMAS[12:],
    }
    import random

    rng = random.Random(0)
    for name, vocab in words.items():
        lines = [
            "".join(rng.choice(vocab) for _ in range(5)) + "。" for _ in range(30)
        ]
        (out / f"{name}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


class TestBuildVocab:
    def test_gold_decks_to_lexicon_files(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["build-vocab", "--decks", str(DATA / "decks"), "--out", str(out)])
        assert code == 0
        for name in ("n5.json", "n3.json", "meta.json", "manifest.json"):
            assert (out / name).exists()

    def test_missing_input_dir_exit_4_names_path(self, tmp_path, capsys):
        code = main(["build-vocab", "--decks", "/no/such/deckdir", "--out", str(tmp_path / "o")])
        assert code == 4
        assert "/no/such/deckdir" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["build-vocab", "--decks", str(DATA / "decks"), "--out", str(out)]) == 0
        for path in sorted(out1.glob("n*.json")):
            assert (out2 / path.name).read_bytes() == path.read_bytes()

    def test_heuristic_corpus_build(self, tmp_path, corpus_dir):
        out = tmp_path / "heur"
        code = main(["build-vocab", "--corpus", str(corpus_dir), "--out", str(out)])
        assert code == 0
        data = json.loads((out / "n5.json").read_text(encoding="utf-8"))
        assert data

    def test_needs_one_input_kind(self, tmp_path, capsys):
        assert main(["build-vocab", "--out", str(tmp_path / "x")]) == 2

    def test_unknown_external_backend_exit_3(self, tmp_path, corpus_dir, capsys):
        code = main(["build-vocab", "--corpus", str(corpus_dir),
                     "--tokenizer-backend", "external:sudachi", "--out", str(tmp_path / "x")])
        assert code == 3
        assert "sudachi" in capsys.readouterr().err


class TestTrain:
    def test_fixture_corpus_produces_models_and_manifest(self, tmp_path, corpus_dir):
        out = tmp_path / "models"
        code = main(["train", "--corpus", str(corpus_dir), "--epochs", "2",
                     "--learning-rate", "0.2", "--seed", "3", "--out", str(out)])
        assert code == 0
        assert (out / "predictor.npz").exists()
        assert (out / "ngram.json").exists()
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["subcommand"] == "train"
        assert manifest["seed"] == 3
        assert manifest["inputs"]

    def test_seeded_rerun_identical_model_files(self, tmp_path, corpus_dir):
        outs = [tmp_path / "m1", tmp_path / "m2"]
        for out in outs:
            assert main(["train", "--corpus", str(corpus_dir), "--epochs", "1",
                         "--learning-rate", "0.2", "--seed", "9", "--out", str(out)]) == 0
        assert (outs[0] / "predictor.npz").read_bytes() == (outs[1] / "predictor.npz").read_bytes()
        assert (outs[0] / "ngram.json").read_bytes() == (outs[1] / "ngram.json").read_bytes()

    def test_missing_level_exit_2_names_level(self, tmp_path, corpus_dir, capsys):
        (corpus_dir / "n3.txt").unlink()
        code = main(["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "m")])
        assert code == 2
        assert "N3" in capsys.readouterr().err


class TestChat:
    def test_interactive_session_writes_transcript(self, tmp_path, monkeypatch, capsys):
        transcript = tmp_path / "chat.jsonl"
        monkeypatch.setattr("sys.stdin", io.StringIO("ねこがすき\nいぬもすき\n\n"))
        code = main(["chat", "--method", "fudge", "--lambda", "0.8", "--level", "N5",
                     "--seed", "5", "--transcript", str(transcript)])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("tutor>") == 2
        records = [json.loads(l) for l in transcript.read_text(encoding="utf-8").splitlines()]
        assert len(records) == 2
        assert records[0]["method"] == "fudge"

    def test_unknown_method_exit_2_lists_valid(self, capsys):
        code = main(["chat", "--method", "psychic", "--level", "N5"])
        assert code == 2
        err = capsys.readouterr().err
        for name in ("baseline", "detailed", "overgenerate", "fudge"):
            assert name in err


class TestSelfchatEvalScoreReport:
    def test_small_suite_and_report_chain(self, tmp_path, capsys):
        out = tmp_path / "suite"
        code = main(["selfchat-eval", "--methods", "baseline", "--turns", "1",
                     "--seed", "1", "--out", str(out)])
        assert code == 0
        transcripts = (out / "transcripts.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(transcripts) == 75
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert report["rows"][0]["Model"] == "baseline"

        rep_out = tmp_path / "rereport"
        code = main(["report", "--transcripts", str(out / "transcripts.jsonl"),
                     "--plot", "--out", str(rep_out)])
        assert code == 0
        assert (rep_out / "drift.csv").read_text(encoding="utf-8").startswith("method,")

    def test_score_over_export_fixture(self, tmp_path):
        export = [
            {
                "session_id": "s1",
                "method": "baseline",
                "annotations": [
                    {"turn_index": 1, "tmr": 0.5, "understood_overall": False,
                     "superseded": False, "spans": [[0, 2]], "revision": 1},
                    {"turn_index": 2, "tmr": 0.0, "understood_overall": True,
                     "superseded": False, "spans": [], "revision": 1},
                ],
                "survey": {"understand": 6, "effort": 5, "comfort": 7, "natural": 6, "again": 8},
            },
            {
                "session_id": "s2",
                "method": "fudge",
                "annotations": [
                    {"turn_index": 1, "tmr": 0.1, "understood_overall": True,
                     "superseded": False, "spans": [], "revision": 1},
                ],
                "survey": {"understand": 9, "effort": 3, "comfort": 8, "natural": 8, "again": 9},
            },
        ]
        export_path = tmp_path / "export.json"
        export_path.write_text(json.dumps(export), encoding="utf-8")
        out = tmp_path / "scored"
        assert main(["score", "--export", str(export_path), "--out", str(out)]) == 0
        table = json.loads((out / "human_eval.json").read_text(encoding="utf-8"))
        rows = {r["Model"]: r for r in table}
        assert rows["baseline"]["%Rounds Not Understood"] == pytest.approx(50.0)
        assert rows["baseline"]["TMR"] == pytest.approx(25.0)
        assert rows["fudge"]["Understood?"] == 9

    def test_config_file_supplies_defaults_flags_win(self, tmp_path):
        config = tmp_path / "config.json"
        out_from_config = tmp_path / "from_config"
        config.write_text(
            json.dumps(
                {"selfchat-eval": {"methods": "baseline", "turns": 1, "seed": 2,
                                   "out": str(out_from_config)}}
            ),
            encoding="utf-8",
        )
        assert main(["--config", str(config), "selfchat-eval"]) == 0
        assert (out_from_config / "report.json").exists()
        # explicit flag beats config
        out_flag = tmp_path / "flagged"
        assert main(["--config", str(config), "selfchat-eval", "--out", str(out_flag)]) == 0
        assert (out_flag / "report.json").exists()

    def test_unknown_method_exit_2(self, tmp_path, capsys):
        code = main(["selfchat-eval", "--methods", "osmosis", "--out", str(tmp_path / "x")])
        assert code == 2


class TestManifests:
    def test_manifest_written_with_digests(self, tmp_path):
        out = tmp_path / "out"
        main(["build-vocab", "--decks", str(DATA / "decks"), "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["subcommand"] == "build-vocab"
        assert all(d.startswith("sha256:") for d in manifest["inputs"].values())
        assert manifest["tool_version"]

    def test_no_writes_outside_out_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "target"
        main(["build-vocab", "--decks", str(DATA / "decks"), "--out", str(out)])
        assert list(workdir.iterdir()) == []

#!/usr/bin/env python3
"""Run the full self-chat evaluation for all four methods on the demo engine.

Produces the automatic-evaluation table (one row per method) plus per-turn
TMR drift series, the toy-scale analogue of the full pipeline.
"""
import argparse
from pathlib import Path

from gradechat.metrics import report_rows_to_csv
from gradechat.selfchat import (
    SelfChatEngine,
    aggregate_suite,
    drift_to_csv,
    plan_suite,
    run_suite,
    suite_report_to_dict,
    write_transcripts_jsonl,
)
from gradechat.synthcorpus import build_demo_bundle
from gradechat.util import write_stable_json


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--methods", default="baseline,detailed,overgenerate,fudge")
    parser.add_argument("--turns", type=int, default=6)
    parser.add_argument("--lambda", dest="fudge_lambda", type=float, default=0.8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="selfchat_out")
    args = parser.parse_args()

    bundle = build_demo_bundle(seed=args.seed)
    engine = SelfChatEngine(
        lm=bundle.lm,
        predictor=bundle.predictor,
        tokenizer=bundle.tokenizer,
        gold_lexicon=bundle.gold_lexicon,
        heuristic_lexicon=bundle.heuristic_lexicon,
        fudge_lambda=args.fudge_lambda,
    )
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    specs = plan_suite(methods, turns=args.turns, seed=args.seed)
    print(f"running {len(specs)} dialogues ({len(methods)} methods x 75)")
    transcripts = run_suite(specs, engine)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    transcripts_path = out / "transcripts.jsonl"
    if transcripts_path.exists():
        transcripts_path.unlink()
    write_transcripts_jsonl(transcripts_path, transcripts)
    report = aggregate_suite(transcripts)
    write_stable_json(out / "report.json", suite_report_to_dict(report))
    (out / "report.csv").write_text(report_rows_to_csv(report.reports), encoding="utf-8")
    (out / "drift.csv").write_text(drift_to_csv(report), encoding="utf-8")

    for row in report.reports:
        cells = row.as_row()
        print(
            f"{cells['Model']:<14} len={cells['Avg. Length']:.2f} "
            f"ppl={cells['Avg. PPL']:.2f} div@3={cells['div@3']:.3f} "
            f"TMR={cells['TMR']:.1f} ctl={cells['ControlError']:.2f}"
        )
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()

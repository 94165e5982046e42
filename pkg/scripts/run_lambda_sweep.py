#!/usr/bin/env python3
"""Sweep the guided-decoding control weight and report mean TMR per value.

Runs the synthetic two-register setup: hard-skewed bigram base model,
prefix difficulty predictor, beginner target. Seeds are paired across the
sweep so differences reflect control strength, not sampling noise.
"""
import argparse
import json
from pathlib import Path

from gradechat.control import FudgeConfig, generate_fudge
from gradechat.levels import Level
from gradechat.lm import TUTOR, ChatContext, GenerationConfig
from gradechat.metrics import token_miss_rate
from gradechat.synthcorpus import build_demo_bundle
from gradechat.util import derive_seed


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lambdas", default="0,0.25,0.5,0.8,0.9")
    parser.add_argument("--generations", type=int, default=100)
    parser.add_argument("--max-tokens", type=int, default=10)
    parser.add_argument("--target-level", default="N5")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="lambda_sweep.json")
    args = parser.parse_args()

    bundle = build_demo_bundle(seed=args.seed)
    target = Level.parse(args.target_level)
    lambdas = [float(x) for x in args.lambdas.split(",")]

    rows = []
    for lam in lambdas:
        tmrs, lengths = [], []
        for i in range(args.generations):
            ctx = ChatContext(
                system_prompt="sweep",
                speaker=TUTOR,
                generation=GenerationConfig.tutor_default(
                    max_tokens=args.max_tokens, seed=derive_seed(args.seed, "sweep", i)
                ),
            )
            text = generate_fudge(
                ctx, bundle.lm, bundle.predictor, FudgeConfig(lam, target, top_k=50)
            )
            utt = bundle.tokenizer.tokenize(text)
            tmrs.append(token_miss_rate(utt, bundle.gold_lexicon, target).tmr)
            lengths.append(len(utt.tokens))
        row = {
            "lambda": lam,
            "mean_tmr": sum(tmrs) / len(tmrs),
            "mean_length": sum(lengths) / len(lengths),
            "n": args.generations,
        }
        rows.append(row)
        print(f"lambda={lam:<5} mean TMR={row['mean_tmr']:.4f} mean length={row['mean_length']:.2f}")

    Path(args.out).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

"""Command line interface.

Subcommands: gen-corpus, train, link, eval, sweep, grad-check, reward-table.
Every run echoes its full config, seed and config hash so results can be
reproduced bit-exactly; outputs carry no timestamps.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import CorpusError, gold_recall, load_corpus, save_corpus
from .harness import (
    STRATEGIES,
    grad_check,
    run_baseline,
    sweep,
    write_sweep_csv,
)
from .model import build_model, load_checkpoint, save_checkpoint
from .rewards import (
    EpisodeOutcome,
    error_indices,
    first_error_index,
    reward_r1,
    reward_r2,
    reward_r3,
    transition_counts,
    PROB_SCALED_TRANSITIONS,
    TransitionRewards,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, evaluate, train
from .local_transformer import TransformerConfig


def _echo_config(config: TrainConfig) -> None:
    print(f"# config_hash={config.config_hash()} seed={config.seed}")
    print("# config=" + json.dumps(config.to_dict(), sort_keys=True))


def _load_config(path: str) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))


def _build_from_config(store, config: TrainConfig):
    rng = np.random.default_rng(config.seed).spawn(1)[0]
    tcfg = None
    if config.local_model == "transformer":
        tcfg = TransformerConfig(
            layers=config.encoder_layers, heads=config.attention_heads,
            head_dim=config.head_dim, model_dim=config.model_dim,
            ff_dim=config.encoder_ff_dim, hidden=config.head_hidden,
            max_seq_len=config.max_seq_len, max_candidates=config.max_candidates,
            drop_rate=config.drop_rate,
        )
    return build_model(
        store, rng, local_model=config.local_model, top_words=config.top_words,
        policy_top_k=config.policy_top_k, selector_top_k=config.selector_top_k,
        fusion_hidden=config.fusion_hidden, features=config.features,
        feature_norm=config.feature_norm, fusion=config.fusion,
        transformer_config=tcfg,
    )


def _cmd_gen_corpus(args) -> int:
    spec = SyntheticSpec(
        num_docs=args.docs,
        mentions_per_doc=args.mentions,
        candidates_per_mention=args.candidates,
        embedding_dim=args.dim,
        anchor_fraction=args.anchor_fraction,
        noise_scale=args.noise,
        seed=args.seed,
    )
    docs, store = generate_synthetic(spec)
    save_corpus(docs, store, args.out)
    print(f"# spec={json.dumps(spec.__dict__, sort_keys=True)}")
    print(f"wrote {len(docs)} documents to {args.out} "
          f"(gold recall {gold_recall(docs):.3f})")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    _echo_config(config)
    docs, store = load_corpus(args.corpus)
    n_val = max(1, int(len(docs) * args.val_fraction)) if len(docs) > 1 else 0
    val_docs, train_docs = docs[:n_val], docs[n_val:]
    result = train(train_docs, val_docs, store, config)
    save_checkpoint(result.params, args.out,
                    meta={"config": config.to_dict(), "seed": config.seed})
    if args.metrics:
        with open(args.metrics, "w") as fh:
            for row in result.metrics:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    final = result.metrics[-1] if result.metrics else {}
    print(f"best_val_accuracy={result.best_val_accuracy:.6f}")
    print(f"final_epoch={json.dumps(final, sort_keys=True)}")
    return 0


def _cmd_link(args) -> int:
    config = _load_config(args.config)
    _echo_config(config)
    docs, store = load_corpus(args.corpus)
    params = _build_from_config(store, config)
    load_checkpoint(params, args.checkpoint)
    episodes = evaluate(docs, store, params, config)
    with open(args.out, "w") as fh:
        for doc, ep in zip(docs, episodes):
            by_step = dict(zip(ep.order, range(len(ep.order))))
            rec = {
                "id": doc.id,
                "links": [
                    {
                        "mention": m.id,
                        "predicted": ep.predicted[by_step[m.position]],
                        "probability": ep.predicted_prob[by_step[m.position]],
                        "step": by_step[m.position],
                    }
                    for m in doc.mentions
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"annotated {len(docs)} documents -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args.config)
    if args.window is not None:
        window = None if args.window == "L" else int(args.window)
        config = TrainConfig.from_dict({**config.to_dict(),
                                        "window": "L" if window is None else window})
    _echo_config(config)
    docs, store = load_corpus(args.corpus)
    params = _build_from_config(store, config)
    load_checkpoint(params, args.checkpoint)
    report = run_baseline(docs, store, params, config, args.order, seed=config.seed)
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    _echo_config(config)
    docs, store = load_corpus(args.corpus)
    n = len(docs)
    n_val = max(1, n // 10)
    n_test = max(1, n // 5)
    val_docs = docs[:n_val]
    test_docs = docs[n_val:n_val + n_test]
    train_docs = docs[n_val + n_test:]
    grid = None
    if args.grid:
        raw = args.grid.split(",")
        if args.axis == "window":
            grid = [None if g == "L" else int(g) for g in raw]
        elif args.axis == "gamma1":
            grid = [float(g) for g in raw]
        else:
            grid = raw
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = sweep(train_docs, val_docs, test_docs, store, config, args.axis,
                 grid=grid, seeds=seeds)
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} rows -> {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    report = grad_check(tolerance=args.tolerance, seed=args.seed,
                        samples_per_tensor=args.samples)
    for name in sorted(report["per_tensor"]):
        print(f"{name}: {report['per_tensor'][name]:.3e}")
    status = "PASS" if report["passed"] else "FAIL"
    print(f"max_relative_error={report['max_relative_error']:.3e} "
          f"tolerance={report['tolerance']:.1e} {status}")
    return 0 if report["passed"] else 1


def _parse_flags(text: str) -> tuple[bool, ...]:
    if not text or any(c not in "01" for c in text):
        raise ValueError("flags must be a non-empty string of 0s and 1s")
    return tuple(c == "1" for c in text)


def _cmd_reward_table(args) -> int:
    flags = _parse_flags(args.flags)
    n = args.L if args.L is not None else len(flags)
    if n != len(flags):
        raise ValueError(f"--L {n} does not match {len(flags)} flags")
    t = args.t if args.t is not None else n
    outcome = EpisodeOutcome(flags, gamma=args.gamma)
    lam = TransitionRewards(*[float(x) for x in args.transition.split(",")])
    probs = [float(x) for x in args.probs.split(",")] if args.probs else None

    # exact base values via integer/rational arithmetic
    base_r1 = Fraction(-n + first_error_index(flags))
    base_r3 = sum((Fraction(-1) + Fraction(idx - n, n) for idx in error_indices(flags)),
                  Fraction(0))
    counts = transition_counts(flags)
    base_r2 = (Fraction(counts["tt"]) * Fraction(lam.tt).limit_denominator()
               + Fraction(counts["tf"]) * Fraction(lam.tf).limit_denominator()
               + Fraction(counts["ff"]) * Fraction(lam.ff).limit_denominator()
               + Fraction(counts["ft"]) * Fraction(lam.ft).limit_denominator())

    prefactor = args.gamma ** (n - t) / n
    print(f"flags={args.flags} L={n} t={t} gamma={args.gamma}")
    print(f"transitions: {counts['tt']}xTT {counts['tf']}xTF "
          f"{counts['ff']}xFF {counts['ft']}xFT")
    print(f"R1: base={base_r1} ({float(base_r1):.6f})  "
          f"discounted={reward_r1(outcome, t):.6f}")
    print(f"R2[{args.transition}]: base={base_r2} ({float(base_r2):.6f})  "
          f"discounted={reward_r2(outcome, t, lam):.6f}")
    if probs is not None:
        r22 = reward_r2(outcome, t, PROB_SCALED_TRANSITIONS, probs)
        print(f"R2-prob-scaled: discounted={r22:.6f}")
    print(f"R3: base={base_r3} ({float(base_r3):.6f})  "
          f"discounted={reward_r3(outcome, t):.6f}")
    print(f"# prefactor gamma^(L-t)/L = {prefactor:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynel",
        description="Sequential entity linking with a learned mention ordering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=100)
    p.add_argument("--mentions", type=int, default=8)
    p.add_argument("--candidates", type=int, default=8)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--anchor-fraction", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--metrics", default=None, help="optional metrics JSONL path")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("link", help="annotate a corpus with predictions")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_link)

    p = sub.add_parser("eval", help="evaluate under an ordering strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--order", choices=STRATEGIES, default="dynamic")
    p.add_argument("--window", default=None, help="override window (int or L)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate over a hyper-parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--axis", choices=("window", "gamma1", "reward"), required=True)
    p.add_argument("--grid", default=None, help="comma-separated grid override")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=4)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("reward-table", help="print all rewards for a flag string")
    p.add_argument("--flags", required=True, help="e.g. 1110001")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--t", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--transition", default="0,-2,-1,0")
    p.add_argument("--probs", default=None,
                   help="comma-separated per-step probabilities for prob-scaled R2")
    p.set_defaults(func=_cmd_reward_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

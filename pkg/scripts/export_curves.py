#!/usr/bin/env python3
"""Export budget-sweep and iteration-sweep robustness curves for a trained
checkpoint as CSV (columns: x, accuracy, attack, seed).

    python scripts/export_curves.py --checkpoint runs/desk-hat/checkpoint.npz \
        --config configs/desk-hat.json --out curves
"""

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from advspeaker import evaluate as ev  # noqa: E402
from advspeaker.attacks import pgd_spec  # noqa: E402
from advspeaker.cli import build_corpus  # noqa: E402
from advspeaker.config import load_config  # noqa: E402
from advspeaker.model import load_checkpoint  # noqa: E402

EPSILONS = [0.0, 0.001, 0.002, 0.005, 0.01, 0.1]
ITERATIONS = [1, 10, 20, 40, 100]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default="curves")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    config = load_config(args.config)
    corpus = build_corpus(config)
    params, meta = load_checkpoint(args.checkpoint)
    if meta["corpus_fingerprint"] and meta["corpus_fingerprint"] != corpus.fingerprint:
        print("error: checkpoint corpus fingerprint does not match the config",
              file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = dict(batch_size=config.eval.batch_size,
                  segment_length=config.train.segment_length, seed=args.seed)
    note = f"checkpoint={args.checkpoint} fingerprint={config.fingerprint()} seed={config.seed}"

    eps_curve = ev.epsilon_sweep(params, corpus, EPSILONS,
                                 pgd_spec(config.eval.epsilon, 10), **kwargs)
    (out / "epsilon_sweep.csv").write_text(
        ev.curve_csv(eps_curve, "pgd10", args.seed, header_note=note))
    print("epsilon sweep:", [(e, round(a, 2)) for e, a in eps_curve])

    iter_curve = ev.iteration_sweep(params, corpus, ITERATIONS,
                                    pgd_spec(config.eval.epsilon, 10), **kwargs)
    (out / "iteration_sweep.csv").write_text(
        ev.curve_csv(iter_curve, "pgd", args.seed, header_note=note))
    print("iteration sweep:", [(t, round(a, 2)) for t, a in iter_curve])
    return 0


if __name__ == "__main__":
    sys.exit(main())

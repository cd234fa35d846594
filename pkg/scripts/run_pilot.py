#!/usr/bin/env python3
"""End-to-end pilot: synthesize a book, train, score a fresh book, evaluate.

Everything runs through the installed CLI, so the artifacts on disk are
exactly what the command-line workflow produces:

    out/
      book_train/   claims, eligibility, labs, manifest for the training book
      book_score/   same files for the held-out scoring book
      model/        fitted two-stage model plus QA and sweep reports
      pred/         predictions.csv and skips.csv for the scoring book
      eval/         report.json and lift.csv
      drivers.csv   top per-group rate drivers in pmpm dollars
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
warnings.filterwarnings("ignore", message=".*TBB.*")  # platform thread-layer noise

from groupcast.cli import main as cli  # noqa: E402


def run(argv: list[str]) -> None:
    print("$ groupcast " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="pilot_out", help="output directory")
    ap.add_argument("--groups", type=int, default=120, help="groups per book")
    ap.add_argument("--train-seed", type=int, default=7)
    ap.add_argument("--score-seed", type=int, default=8)
    ap.add_argument("--concessions", type=float, default=0.3,
                    help="fraction of groups with softened renewal cost")
    args = ap.parse_args()

    out = args.out
    book_train = os.path.join(out, "book_train")
    book_score = os.path.join(out, "book_score")
    model = os.path.join(out, "model")
    pred = os.path.join(out, "pred")
    evaldir = os.path.join(out, "eval")
    drivers = os.path.join(out, "drivers.csv")

    def data(book: str) -> list[str]:
        return ["--claims", f"{book}/claims.csv",
                "--eligibility", f"{book}/eligibility.csv",
                "--labs", f"{book}/labs.csv",
                "--renewal", "2017-01-01"]

    run(["synth", "--out", book_train, "--seed", str(args.train_seed),
         "--n-groups", str(args.groups),
         "--concessions", str(args.concessions)])
    run(["synth", "--out", book_score, "--seed", str(args.score_seed),
         "--n-groups", str(args.groups),
         "--concessions", str(args.concessions)])
    run(["train", *data(book_train), "--out", model])
    run(["predict", *data(book_score), "--model", model, "--out", pred])
    run(["evaluate", *data(book_score),
         "--predictions", f"{pred}/predictions.csv", "--out", evaldir])
    run(["explain", *data(book_score), "--model", model,
         "--out", drivers, "--top", "3"])

    with open(os.path.join(evaldir, "report.json")) as fh:
        report = json.load(fh)
    print()
    print("pilot digest")
    print(f"  groups scored        {report['n_groups']}")
    print(f"  normalized pmpm MAE  {report['normalized_mae']:.4f}")
    print(f"  pmpm R^2             {report['r_squared']:.4f}")
    print(f"  Gini (normalized)    {report['gini']:.4f}"
          f" ({report['gini_normalized']:.4f})")
    for row in report["concessions"]:
        print(f"  concessions at {row['level']:.0%}:"
              f" precision {row['precision']:.2f} recall {row['recall']:.2f}")
    if report["lift"] is not None:
        ae = [f"{b['ae_normalized']:.3f}" for b in report["lift"]["model"]]
        print(f"  lift A/E by decile   {' '.join(ae)}")

    with open(drivers) as fh:
        rows = list(csv.DictReader(fh))
    print("  sample rate drivers")
    for row in rows[:6]:
        print(f"    {row['group_id']:<8} {row['feature_name']:<44}"
              f" {float(row['pmpm_dollars']):+9.2f}")


if __name__ == "__main__":
    main()

"""Run the synthetic syntactic-generalisation experiment and print the summary.

    python3 scripts/run_challenge.py --out runs/challenge [--steps 600] [--seeds 0,1,2]
"""
import argparse
import logging
import time

from treedec.challenge import ChallengeConfig, format_report, run_challenge


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/challenge")
    p.add_argument("--steps", type=int, default=ChallengeConfig.steps)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default="vanilla,gcn,parent")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ChallengeConfig(steps=args.steps, seeds=tuple(int(s) for s in args.seeds.split(",")),
                          variants=tuple(args.variants.split(",")))
    start = time.time()
    report = run_challenge(cfg, args.out)
    print(format_report(report))
    print(f"total {time.time() - start:.0f}s; report in {args.out}/report.json")


if __name__ == "__main__":
    main()

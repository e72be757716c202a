"""Bidirectional long-run session: Monte-Carlo tags, loopback netlink session,
shaped distillation channel. Repeats the run over several seeds and prints
per-run and mean SKR, QBER and visibility next to the analytic twin.

Run:  python3 scripts/long_run.py --runs 3 --out results/long_run
"""
from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from coexqkd.cli import Scenario, cmd_run

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "longrun_bidirectional.json"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", type=Path, default=SCENARIO)
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--duration", type=float, default=None, help="simulated seconds per run")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args(argv)

    base = Scenario.load(args.scenario)
    if args.duration is not None:
        base.duration_s = args.duration
    twin = base.model().evaluate(base.channel_plan(), base.fiber(base.profile))
    print(f"analytic twin: skr={twin.skr:.1f} b/s qber={100 * twin.qber:.2f} % V={twin.visibility:.3f}")

    rows = []
    for k in range(args.runs):
        sc = dataclasses.replace(base, seed=base.seed + k)
        res = cmd_run(sc)
        rep = res.report
        same = res.alice_key is not None and np.array_equal(res.alice_key, res.bob_key)
        rows.append({"seed": sc.seed, "status": res.status, "skr": rep.skr, "qber": rep.qber,
                     "visibility": rep.visibility, "key_bits": rep.key_bits_emitted,
                     "keys_identical": bool(same)})
        print(f"seed {sc.seed}: {res.status} skr={rep.skr:.1f} b/s qber={100 * rep.qber:.2f} % "
              f"V={rep.visibility:.3f} keys_identical={same}")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("skr", "qber", "visibility")}
    print(f"mean: skr={mean['skr']:.1f} b/s qber={100 * mean['qber']:.2f} % V={mean['visibility']:.3f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "long_run.json").write_text(json.dumps(
            {"twin": {"skr": twin.skr, "qber": twin.qber, "visibility": twin.visibility},
             "runs": rows, "mean": mean}, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

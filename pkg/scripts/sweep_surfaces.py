"""Write the calibrated SKR surfaces (HCF and SMF) and the named operating points.

Outputs CSV files plus a points.json summary in the output directory.

Run:  python3 scripts/sweep_surfaces.py --out results/surfaces
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from coexqkd.cli import Scenario, cmd_plan, cmd_sweep
from coexqkd.linkplan import c_band_6ch_plan, load_plan
from coexqkd.pipeline import default_calibration

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def named_points() -> dict:
    cal = default_calibration()
    model, hcf, smf = cal.model(), cal.profile("hcf"), cal.profile("smf")
    points = {
        "kappa_hcf_25ch_9dbm": model.evaluate(load_plan(25, 9.0), hcf),
        "psi_hcf_25ch_12dbm": model.evaluate(load_plan(25, 12.0), hcf),
        "tau_hcf_6ch_-1dbm": model.evaluate(c_band_6ch_plan(-1.0), hcf),
        "smf_25ch_-13dbm": model.evaluate(load_plan(25, -13.0), smf),
    }
    out = {k: {"skr": p.skr, "qber": p.qber, "visibility": p.visibility,
               "noise_total": p.noise_total} for k, p in points.items()}
    out["calibration"] = cal.to_dict()
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/surfaces"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name in ("hcf_sweep", "smf_sweep"):
        res = cmd_sweep(Scenario.load(SCENARIOS / f"{name}.json"))
        (args.out / f"{name}.csv").write_text(res.to_csv(), newline="")
        print(f"{name}: {len(res.rows)} rows")
    summary = named_points()
    summary["plan_hcf_vs_smf"] = cmd_plan(Scenario.load(SCENARIOS / "plan_hcf_vs_smf.json"))
    (args.out / "points.json").write_text(json.dumps(summary, indent=2) + "\n")
    for k, v in summary.items():
        if "skr" in v:
            print(f"{k:24s} skr={v['skr']:9.1f} b/s  qber={100 * v['qber']:.2f} %  V={v['visibility']:.3f}")
    print(f"budget gap HCF-SMF: {summary['plan_hcf_vs_smf']['budget_gap_db']:.2f} dB")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Scenario runner: sweep, run, distill, plan and calibrate subcommands."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cow_sim import (DetectorModel, EmissionSchedule, FrameConfig, TagStream, align, simulate,
                      sync_recover)
from .distill import DistillationReport, DistillConfig, distill_keys, sift, write_key
from .errors import (CoexError, InfeasibleError, InsufficientSampleError, ScenarioError,
                     SyncError)
from .linkplan import (ChannelPlan, PowerLimit, build_channel_plan, load_plan,
                       max_coexistence_power, quantum_path_loss, required_key_rate)
from .netlink.session import SessionConfig, run_alice_session, run_bob_session, run_loopback
from .netlink.shaper import ShaperConfig, shape_throughput
from .netlink.transport import parse_endpoint, tcp_connect, tcp_listen
from .pipeline import Calibration, LinkModel, cached_calibration
from .spectral import FiberProfile, builtin_profile, load_profile

log = logging.getLogger("coexqkd")

MODES = ("analytic", "montecarlo", "session")
DEFAULT_POWERS = tuple(float(p) for p in range(-20, 15))
DEFAULT_COUNTS = (1, 6, 13, 25)
SWEEP_FIELDS = ("channel_count", "aggregate_dbm", "skr", "qber", "visibility", "noise_total")


def _grid(spec) -> tuple[float, ...]:
    if isinstance(spec, dict):
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec.get("step", 1.0))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 9) for i in range(n))
    return tuple(float(x) for x in spec)


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "analytic"
    profile: str = "hcf"
    compare_profile: str = "smf"
    plan: dict = field(default_factory=lambda: {"preset": "load", "channels": 25,
                                                "aggregate_dbm": 9.0})
    frame: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    distill: dict = field(default_factory=dict)
    session: dict = field(default_factory=dict)
    shaper: dict | None = None
    calibration: str | None = "auto"
    aggregate_dbm: tuple[float, ...] = DEFAULT_POWERS
    channel_counts: tuple[int, ...] = DEFAULT_COUNTS
    duration_s: float = 2.0
    seed: int = 0
    skr_target: float = 1000.0
    offset_ns: float = 0.0
    jitter_ns: float = 0.0
    key_renewal: dict = field(default_factory=lambda: {"capacity": 250e9, "chunk": 64e9,
                                                       "key_len": 256})
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> Scenario:
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir", "aggregate_dbm",
                                                              "channel_counts"}
        extra = set(d) - known - {"sweep"}
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        kw = {k: v for k, v in d.items() if k in known}
        sweep = d.get("sweep", {})
        try:
            if "aggregate_dbm" in sweep:
                kw["aggregate_dbm"] = _grid(sweep["aggregate_dbm"])
            if "channel_counts" in sweep:
                kw["channel_counts"] = tuple(int(c) for c in sweep["channel_counts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed sweep axes: {exc}") from None
        sc = cls(**kw, base_dir=base_dir or Path.cwd())
        sc.validate()
        return sc

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(d, path.parent)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.aggregate_dbm or not self.channel_counts:
            raise ScenarioError("sweep axes must be non-empty")
        if self.duration_s < 0:
            raise ScenarioError("duration_s must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        try:
            self.channel_plan()
            self.frame_config()
            self.detector_model()
            self.distill_config()
            self.session_config()
            self.fiber(self.profile)
        except CoexError as exc:
            raise ScenarioError(str(exc)) from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from None

    # -- builders ----------------------------------------------------------

    def cal(self) -> Calibration | None:
        if self.calibration is None:
            return None
        if self.calibration == "auto":
            return cached_calibration(self.uncalibrated_model())
        return Calibration.load(self.base_dir / self.calibration)

    def fiber(self, ref: str) -> FiberProfile:
        path = self.base_dir / ref
        prof = load_profile(path) if ref.endswith(".json") else builtin_profile(ref)
        cal = self.cal()
        return cal.profile(prof) if cal else prof

    def channel_plan(self) -> ChannelPlan:
        return build_channel_plan(self.plan)

    def frame_config(self) -> FrameConfig:
        if "mu" in self.frame:
            raise ScenarioError("mean photon number belongs under plan.quantum.mu")
        return FrameConfig(**{"rng_seed": self.seed, **self.frame})

    def detector_model(self) -> DetectorModel:
        det = DetectorModel(**self.detector)
        cal = self.cal()
        if cal and "intrinsic_visibility" not in self.detector:
            det = dataclasses.replace(det, intrinsic_visibility=cal.intrinsic_visibility)
        return det

    def distill_config(self) -> DistillConfig:
        return DistillConfig(**{"seed": self.seed, **self.distill})

    def session_config(self) -> SessionConfig:
        return SessionConfig(distill=self.distill_config(), **self.session)

    def uncalibrated_model(self) -> LinkModel:
        # seeds do not enter the analytic model; dropping them keeps the fit cache warm
        return LinkModel(dataclasses.replace(self.frame_config(), rng_seed=0),
                         DetectorModel(**self.detector),
                         dataclasses.replace(self.distill_config(), seed=0))

    def model(self) -> LinkModel:
        return LinkModel(self.frame_config(), self.detector_model(), self.distill_config())


# -- sweep -----------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\r\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(float(r[k])) if k != "channel_count" else r[k] for k in SWEEP_FIELDS})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"fields": list(SWEEP_FIELDS), "rows": self.rows}, indent=1)


def cmd_sweep(sc: Scenario) -> SweepResult:
    """Analytic SKR surface over (channel count, aggregate power)."""
    profile = sc.fiber(sc.profile)
    model = sc.model()
    base = sc.channel_plan()
    rows = []
    for n in sorted(sc.channel_counts):
        for p in sorted(sc.aggregate_dbm):
            plan = load_plan(n, p, quantum=base.quantum, ce_losses=base.ce_losses, ase=base.ase)
            res = model.evaluate(plan, profile)
            rows.append({"channel_count": n, "aggregate_dbm": p, "skr": res.skr, "qber": res.qber,
                         "visibility": res.visibility, "noise_total": res.noise_total})
    return SweepResult(rows)


# -- run -------------------------------------------------------------------


@dataclass
class RunResult:
    report: DistillationReport
    schedule: EmissionSchedule | None = None
    tags: TagStream | None = None
    alice_key: np.ndarray | None = None
    bob_key: np.ndarray | None = None
    recovered_offset_ns: float | None = None
    status: str = "key"


def simulate_scenario(sc: Scenario) -> tuple[EmissionSchedule, TagStream, float | None]:
    """Monte-Carlo tags for the scenario, synchronized and aligned."""
    frame = sc.frame_config()
    det = sc.detector_model()
    profile = sc.fiber(sc.profile)
    plan = sc.channel_plan()
    noise = sc.model().noise(plan, profile)
    n_frames = int(round(sc.duration_s * frame.frame_rate))
    frame = dataclasses.replace(frame, mu=plan.quantum.mu)
    sched, tags = simulate(frame, det, quantum_path_loss(plan, profile), noise, n_frames,
                           offset_ns=sc.offset_ns, jitter_ns=sc.jitter_ns)
    offset = None
    if not tags.aligned:
        offset = sync_recover(tags, frame.frame_period_ns, frame.slot_ns, frame.slots_per_frame)
        tags = align(tags, offset)
    return sched, tags, offset


def cmd_run(sc: Scenario) -> RunResult:
    if sc.mode == "analytic":
        raise ScenarioError("run needs mode montecarlo or session")
    if int(round(sc.duration_s * sc.frame_config().frame_rate)) == 0:
        return RunResult(DistillationReport(no_key=True), status="no_key")
    sched, tags, offset = simulate_scenario(sc)
    if sc.mode == "montecarlo":
        sk = sift(sched, tags)
        try:
            ka, kb, rep = distill_keys(sk, sched, sc.distill_config())
        except InsufficientSampleError as exc:
            # same outcome a session reports for a too-short sifted key
            log.warning("%s", exc)
            rep = DistillationReport(sifted_bits=len(sk), duration_s=sk.duration_s, no_key=True)
            return RunResult(rep, sched, tags, None, None, offset, "no_key")
        status = "no_key" if rep.no_key else "key"
        return RunResult(rep, sched, tags, ka, kb, offset, status)
    shaper = ShaperConfig(**sc.shaper) if sc.shaper else None
    res = run_loopback(sched, tags, sc.session_config(), shaper=shaper)
    if not res.symmetric:  # would be a protocol bug; never hand out a one-sided key
        raise CoexError("session ended asymmetrically")
    return RunResult(res.alice.report, sched, tags, res.alice.key, res.bob.key, offset,
                     res.alice.status)


# -- plan ------------------------------------------------------------------


def cmd_plan(sc: Scenario, skr_target: float | None = None) -> dict:
    target = sc.skr_target if skr_target is None else skr_target
    model = sc.model()
    plan = sc.channel_plan()
    out: dict = {"skr_target": target}
    limits: dict[str, PowerLimit | None] = {}
    for key, ref in (("profile", sc.profile), ("compare_profile", sc.compare_profile)):
        try:
            limits[key] = max_coexistence_power(plan, sc.fiber(ref), target, model)
            out[key] = {"name": ref, "max_aggregate_dbm": limits[key].aggregate_dbm,
                        "unclamped": limits[key].unclamped}
        except InfeasibleError as exc:
            limits[key] = None
            out[key] = {"name": ref, "infeasible": str(exc)}
    a, b = limits["profile"], limits["compare_profile"]
    out["budget_gap_db"] = a.aggregate_dbm - b.aggregate_dbm if a and b else None
    kr = sc.key_renewal
    need = required_key_rate(float(kr["capacity"]), float(kr["chunk"]), float(kr["key_len"]))
    out["required_key_rate"] = {**kr, "bit_per_s": need, "target_meets_it": target >= need}
    return out


# -- distill (networked) ---------------------------------------------------


def cmd_distill(sc: Scenario, role: str, endpoint: str, listen: bool, out: Path | None,
                timeout: float = 10.0, protocol_version: int | None = None) -> int:
    """One endpoint of a networked session. Both ends simulate the shared
    scenario from its seed; Alice keeps the schedule, Bob the tags (and the
    schedule only as the modeled error-correction reference)."""
    host, port = parse_endpoint(endpoint)
    cfg = sc.session_config()
    if protocol_version is not None:
        cfg = dataclasses.replace(cfg, version=protocol_version)
    sched, tags, _ = simulate_scenario(sc)
    transport = (tcp_listen(host, port, timeout) if listen else tcp_connect(host, port, timeout))
    if sc.shaper:
        transport = shape_throughput(transport, ShaperConfig(**sc.shaper))
    if role == "alice":
        res = run_alice_session(transport, sched, cfg)
    else:
        from .distill import ModeledReconciler

        res = run_bob_session(transport, tags, cfg, sched.config,
                              ModeledReconciler(cfg.distill.f_ec, sched))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if res.has_key:
            write_key(out / f"{role}.key", res.key, res.report)
        else:
            (out / f"{role}.key.json").write_text(res.report.to_json())
    print(json.dumps({"role": role, "status": res.status, "reason": res.reason,
                      "key_bits": 0 if res.key is None else int(res.key.size)}))
    if res.status == "aborted":
        print(f"session aborted: {res.reason}", file=sys.stderr)
        return 3
    return 0


# -- entry point -----------------------------------------------------------


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, newline="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coexqkd", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", type=Path, required=scenario_required,
                       help="scenario JSON file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")

    common(sub.add_parser("sweep", help="analytic SKR vs aggregate power and channel count"))
    common(sub.add_parser("run", help="Monte-Carlo or loopback-session run"))
    p = sub.add_parser("distill", help="run one networked session endpoint")
    common(p)
    p.add_argument("--role", choices=("alice", "bob"), required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--connect", metavar="HOST:PORT")
    g.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--timeout", type=float, default=10.0, help="connect/accept timeout, s")
    p.add_argument("--protocol-version", type=int, default=None, help=argparse.SUPPRESS)
    p = sub.add_parser("plan", help="co-existence limits and budget gap")
    common(p)
    p.add_argument("--skr-target", type=float, default=None)
    p = sub.add_parser("calibrate", help="fit Raman scale and visibility to the 9 dBm point")
    common(p, scenario_required=False)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = Scenario.load(args.scenario) if args.scenario else Scenario()
        if args.seed is not None:
            sc.seed = args.seed
            sc.validate()
        out = args.out
        if args.command == "sweep":
            res = cmd_sweep(sc)
            _write(out, "sweep.csv", res.to_csv())
            _write(out, "sweep.json", res.to_json())
            if out is None:
                sys.stdout.write(res.to_csv())
        elif args.command == "run":
            res = cmd_run(sc)
            text = res.report.to_json()
            print(text)
            _write(out, "report.json", text + "\n")
            if out is not None and res.alice_key is not None and res.status == "key":
                write_key(out / "alice.key", res.alice_key, res.report)
                write_key(out / "bob.key", res.bob_key, res.report)
        elif args.command == "distill":
            return cmd_distill(sc, args.role, args.connect or args.listen, bool(args.listen), out,
                               args.timeout, args.protocol_version)
        elif args.command == "plan":
            text = json.dumps(cmd_plan(sc, args.skr_target), indent=2)
            print(text)
            _write(out, "plan.json", text + "\n")
        elif args.command == "calibrate":
            cal = cached_calibration(sc.uncalibrated_model())
            text = json.dumps(cal.to_dict(), indent=2)
            print(text)
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                cal.save(out / "calibration.json")
    except SyncError as exc:
        print(f"sync failed: {exc}", file=sys.stderr)
        return 4
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except CoexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Alice and Bob session state machines over a byte-stream transport.

Message order::

    A -> B  Hello                 B -> A  Hello
    B -> A  DetectionsAnnounce    A -> B  SiftDecision      (one pair per batch)
    B -> A  SampleDisclose
    A -> B  ParamEstimate                                   (stop here if no key)
    A -> B  PaSeed
    A -> B  KeyConfirm(hA)        B -> A  KeyConfirm(hB) | Abort
    A -> B  KeyConfirm(hA) | Abort

Any failure before the confirm exchange aborts both sides: the side that sees
it sends Abort (best effort) and the other side reads that Abort or a dead
stream. In the confirm exchange Alice commits only on a matching hB; Bob,
having sent hB, commits unless a valid Abort follows. With at most one
corrupted or truncated frame per session (truncation half-closes the stream
in that direction) these rules never leave exactly one side with a key.
"""
from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from ..cow_sim import EmissionSchedule, FrameConfig, TagStream, require_aligned
from ..distill import (MIN_SAMPLE, DistillConfig, DistillationReport, ModeledReconciler,
                       MonitorCounts, ParameterEstimate, Reconciler, ToeplitzSeed, bob_data_slots,
                       build_report, choose_sample, estimate_parameters, monitor_clicks,
                       monitor_opportunities, sift_decision, toeplitz_hash)
from ..errors import CoexError, SeedError, TransportError, VersionError, WireError
from .shaper import ShaperConfig, shape_throughput
from .transport import Fault, Transport, pipe_pair
from .wire import (ALICE, BOB, VERSION, Abort, AbortCode, DetectionsAnnounce, Hello, KeyConfirm,
                   NetMessage, PaSeed, ParamEstimate, SampleDisclose, SiftDecision, decode_message,
                   encode_message, read_frame)

PHASES = ("hello", "announcing", "sifting", "estimating", "amplifying", "confirmed", "aborted")
TRANSITIONS = {
    "hello": {"announcing"},
    "announcing": {"sifting", "estimating"},
    "sifting": {"announcing", "estimating"},
    "estimating": {"amplifying"},
    "amplifying": {"confirmed"},
}


class PeerAbort(CoexError):
    def __init__(self, msg: Abort):
        super().__init__(f"peer aborted (code {msg.code}): {msg.detail}")
        self.code = msg.code


class ProtocolViolation(CoexError):
    def __init__(self, detail: str, code: int = AbortCode.PROTOCOL):
        super().__init__(detail)
        self.code = code


@dataclass(frozen=True)
class SessionConfig:
    version: int = VERSION
    frames_per_batch: int = 1000
    distill: DistillConfig = field(default_factory=DistillConfig)
    confirm_bits: int = 32
    visibility_override: float | None = None  # Alice only; forces the estimate

    def __post_init__(self):
        if self.frames_per_batch < 1:
            raise ValueError("frames_per_batch must be >= 1")
        if self.confirm_bits % 8 or not 8 <= self.confirm_bits <= 256:
            raise ValueError("confirm_bits must be a multiple of 8 in [8, 256]")


@dataclass
class SessionOutcome:
    status: str  # "key", "no_key" or "aborted"
    key: np.ndarray | None
    report: DistillationReport
    reason: str = ""
    phase: str = "hello"

    @property
    def has_key(self) -> bool:
        return self.status == "key"


class _Endpoint:
    def __init__(self, transport: Transport, cfg: SessionConfig):
        self.t = transport
        self.cfg = cfg
        self.phase = "hello"
        self.report = DistillationReport(aborted=False)

    def advance(self, phase: str) -> None:
        if phase not in TRANSITIONS.get(self.phase, ()):
            raise ProtocolViolation(f"phase {phase} after {self.phase}")
        self.phase = phase

    def send(self, msg: NetMessage) -> None:
        self.t.send(encode_message(msg, self.cfg.version))

    def recv(self) -> NetMessage:
        return decode_message(read_frame(self.t.recv_exact), self.cfg.version)

    def expect(self, *types: type) -> NetMessage:
        msg = self.recv()
        if isinstance(msg, Abort):
            raise PeerAbort(msg)
        if not isinstance(msg, types):
            raise ProtocolViolation(f"in phase {self.phase}: unexpected {type(msg).__name__}")
        return msg

    def try_send(self, msg: NetMessage) -> None:
        try:
            self.send(msg)
        except (CoexError, OSError):
            pass

    def outcome(self, status: str, key=None, reason: str = "") -> SessionOutcome:
        if status == "aborted":
            self.report.aborted = True
            self.report.abort_reason = reason
            self.report.key_bits_emitted = 0
            self.phase = "aborted"
        return SessionOutcome(status, key, self.report, reason, self.phase)


def _abort_code(exc: BaseException) -> int:
    if isinstance(exc, ProtocolViolation):
        return exc.code
    if isinstance(exc, VersionError):
        return AbortCode.VERSION
    if isinstance(exc, WireError):
        return AbortCode.INTEGRITY
    if isinstance(exc, TransportError):
        return AbortCode.TRANSPORT
    return AbortCode.LOCAL


def _digest(bits: np.ndarray, nbytes: int) -> bytes:
    return hashlib.sha256(np.packbits(bits).tobytes() + len(bits).to_bytes(8, "little")).digest()[:nbytes]


def _run(ep: _Endpoint, body) -> SessionOutcome:
    try:
        return body()
    except PeerAbort as exc:
        return ep.outcome("aborted", reason=str(exc))
    except (CoexError, ValueError) as exc:
        ep.try_send(Abort(_abort_code(exc), str(exc)[:200]))
        return ep.outcome("aborted", reason=f"{type(exc).__name__}: {exc}")
    finally:
        ep.t.close()


def _sample_size(n: int, disclosure: float) -> int:
    return int(round(n * disclosure))


def run_alice_session(transport: Transport, schedule: EmissionSchedule,
                      config: SessionConfig = SessionConfig()) -> SessionOutcome:
    ep = _Endpoint(transport, config)
    return _run(ep, lambda: _alice(ep, schedule, config))


def _alice(ep: _Endpoint, schedule: EmissionSchedule, cfg: SessionConfig) -> SessionOutcome:
    frame = schedule.config
    ns = frame.slots_per_frame
    ep.send(Hello(cfg.version, ALICE))
    hello = ep.expect(Hello)
    if hello.role != BOB:
        raise ProtocolViolation("peer is not Bob")

    ep.advance("announcing")
    bits, c_int, c_non, announced, next_frame = [], 0, 0, 0, 0
    while True:
        ann = ep.expect(DetectionsAnnounce)
        ep.advance("sifting")
        end = ann.frame_index + ann.n_frames
        if ann.frame_index != next_frame or ann.n_frames > cfg.frames_per_batch \
                or end > schedule.n_frames:
            raise ProtocolViolation(f"announcement for frames {ann.frame_index}..{end} out of "
                                    f"sequence", AbortCode.FRAMES_MISMATCH)
        part = schedule.slice(ann.frame_index, end)
        base = ann.frame_index * ns
        data = base + np.asarray(ann.data_slots, dtype=np.int64)
        mon = base + np.asarray(ann.monitor_slots, dtype=np.int64)
        if (data.size and data.max() >= end * ns) or (mon.size and mon.max() >= end * ns):
            raise ProtocolViolation("announced slot outside its batch")
        keep, decoy = sift_decision(part, data)
        kept_pairs = data[keep] // 2 - part.first_frame * frame.pairs_per_frame
        bits.append(part.bits.ravel()[kept_pairs])
        ci, cn = monitor_clicks(part, mon)
        c_int += ci
        c_non += cn
        announced += data.size
        ep.send(SiftDecision(ann.frame_index, tuple(keep.tolist()), tuple(decoy.tolist())))
        next_frame = end
        if ann.last:
            break
        ep.advance("announcing")
    if next_frame != schedule.n_frames:
        raise ProtocolViolation(f"peer covered {next_frame} of {schedule.n_frames} frames",
                                AbortCode.FRAMES_MISMATCH)

    ep.advance("estimating")
    alice = np.concatenate(bits) if bits else np.zeros(0, dtype=np.uint8)
    n = alice.size
    k = _sample_size(n, cfg.distill.disclosure)
    duration = schedule.duration_ps * 1e-12
    if k < MIN_SAMPLE:
        ep.report = DistillationReport(sifted_bits=n, duration_s=duration, no_key=True)
        return ep.outcome("no_key", reason="sifted key too short for parameter estimation")
    sample = ep.expect(SampleDisclose)
    idx = np.asarray(sample.indices, dtype=np.int64)
    if idx.size != k or len(sample.bits) != k or (k and (idx.max() >= n or np.any(np.diff(idx) <= 0))):
        raise ProtocolViolation("malformed sample disclosure")
    n_int, n_non = monitor_opportunities(schedule)
    params = estimate_parameters(MonitorCounts(c_int, c_non, n_int, n_non), alice[idx],
                                 np.asarray(sample.bits, dtype=np.uint8), cfg.distill.confidence)
    if cfg.visibility_override is not None:
        params = ParameterEstimate(params.qber, params.qber_ci, cfg.visibility_override, 0.0,
                                   params.sample_size, params.sample_errors)
    ep.send(ParamEstimate(params.qber, params.visibility, params.visibility_sigma,
                          params.sample_errors, params.sample_size))
    ep.report, m = build_report(n, k, params, duration, cfg.distill,
                                announced / duration if duration else 0.0, frame)
    ep.report.confirm_bits = cfg.confirm_bits
    key_len = m - cfg.confirm_bits
    if key_len <= 0:
        ep.report.no_key = True
        return ep.outcome("no_key", reason="secret fraction leaves no key")

    ep.advance("amplifying")
    rest = np.setdiff1d(np.arange(n), idx, assume_unique=True)
    seed = ToeplitzSeed.random(rest.size, m, np.random.default_rng([cfg.distill.seed, 3]))
    ep.send(PaSeed(rest.size, m, tuple(seed.bits.tolist())))
    out = toeplitz_hash(alice[rest], seed)
    digest = _digest(out, cfg.confirm_bits // 8)
    ep.send(KeyConfirm(digest))
    try:
        reply = ep.recv()
    except (WireError, TransportError) as exc:
        ep.try_send(Abort(_abort_code(exc), "confirm reply lost"))
        return ep.outcome("aborted", reason=f"confirm reply lost: {exc}")
    if isinstance(reply, Abort):
        return ep.outcome("aborted", reason=f"peer aborted (code {reply.code}): {reply.detail}")
    if not isinstance(reply, KeyConfirm) or reply.digest != digest:
        ep.try_send(Abort(AbortCode.CONFIRM_MISMATCH, "key confirmation failed"))
        return ep.outcome("aborted", reason="key confirmation failed")
    ep.try_send(KeyConfirm(digest))
    ep.advance("confirmed")
    ep.report.key_bits_emitted = key_len
    return ep.outcome("key", key=out[:key_len])


def run_bob_session(transport: Transport, tags: TagStream, config: SessionConfig = SessionConfig(),
                    frame: FrameConfig = FrameConfig(),
                    reconciler: Reconciler | None = None) -> SessionOutcome:
    """Bob's side. `reconciler` stands in for error correction; the default
    leakage-only model without a reference leaves Bob's errors in place."""
    ep = _Endpoint(transport, config)
    return _run(ep, lambda: _bob(ep, tags, config, frame,
                                 reconciler or ModeledReconciler(config.distill.f_ec)))


def _bob(ep: _Endpoint, tags: TagStream, cfg: SessionConfig, frame: FrameConfig,
         reconciler: Reconciler) -> SessionOutcome:
    require_aligned(tags)
    ns = frame.slots_per_frame
    n_frames = math.ceil(tags.duration_ps / frame.frame_period_ps)
    data, mon, _ = bob_data_slots(tags, frame)

    hello = ep.expect(Hello)
    if hello.role != ALICE:
        raise ProtocolViolation("peer is not Alice")
    ep.send(Hello(cfg.version, BOB))

    ep.advance("announcing")
    bits, indices = [], []
    starts = list(range(0, n_frames, cfg.frames_per_batch)) or [0]
    for start in starts:
        end = min(start + cfg.frames_per_batch, n_frames)
        lo, hi = start * ns, end * ns
        d = data[np.searchsorted(data, lo):np.searchsorted(data, hi)]
        m_ = mon[np.searchsorted(mon, lo):np.searchsorted(mon, hi)]
        ep.send(DetectionsAnnounce(start, end - start, start == starts[-1],
                                   tuple((d - lo).tolist()), tuple((m_ - lo).tolist())))
        ep.advance("sifting")
        dec = ep.expect(SiftDecision)
        if dec.frame_index != start or len(dec.keep) != d.size or len(dec.decoy) != d.size:
            raise ProtocolViolation("sift decision does not match announcement")
        kept = d[np.asarray(dec.keep, dtype=bool)]
        bits.append((kept & 1).astype(np.uint8))
        indices.append(kept // 2)
        ep.advance("announcing")

    ep.advance("estimating")
    bob = np.concatenate(bits)
    pair_idx = np.concatenate(indices)
    n = bob.size
    k = _sample_size(n, cfg.distill.disclosure)
    duration = n_frames * frame.frame_period_ps * 1e-12
    if k < MIN_SAMPLE:
        ep.report = DistillationReport(sifted_bits=n, duration_s=duration, no_key=True)
        return ep.outcome("no_key", reason="sifted key too short for parameter estimation")
    idx = choose_sample(n, cfg.distill.disclosure, np.random.default_rng([cfg.distill.seed, 2]))
    ep.send(SampleDisclose(tuple(idx.tolist()), tuple(bob[idx].tolist())))
    pe = ep.expect(ParamEstimate)
    if pe.sample_size != k or not 0 <= pe.sample_errors <= k:
        raise ProtocolViolation("parameter estimate does not match the disclosed sample",
                                AbortCode.PARAM_MISMATCH)
    ci = binomtest(pe.sample_errors, k).proportion_ci(cfg.distill.confidence, method="wilson")
    params = ParameterEstimate(pe.qber, (float(ci.low), float(ci.high)), pe.visibility,
                               pe.visibility_sigma, k, pe.sample_errors)
    ep.report, m = build_report(n, k, params, duration, cfg.distill,
                                data.size / duration if duration else 0.0, frame)
    ep.report.confirm_bits = cfg.confirm_bits
    key_len = m - cfg.confirm_bits
    if key_len <= 0:
        ep.report.no_key = True
        return ep.outcome("no_key", reason="secret fraction leaves no key")

    ep.advance("amplifying")
    ps = ep.expect(PaSeed)
    rest = np.setdiff1d(np.arange(n), idx, assume_unique=True)
    if ps.n != rest.size or ps.m != m:
        raise ProtocolViolation(f"PA parameters (n={ps.n}, m={ps.m}) differ from local "
                                f"(n={rest.size}, m={m})", AbortCode.PARAM_MISMATCH)
    try:
        seed = ToeplitzSeed(np.asarray(ps.seed, dtype=np.uint8), ps.n, ps.m)
    except SeedError as exc:
        raise ProtocolViolation(str(exc), AbortCode.PARAM_MISMATCH) from None
    corrected, _ = reconciler.reconcile(pair_idx[rest], bob[rest], params.qber)
    out = toeplitz_hash(corrected, seed)
    digest = _digest(out, cfg.confirm_bits // 8)
    confirm = ep.expect(KeyConfirm)
    if confirm.digest != digest:
        ep.try_send(Abort(AbortCode.CONFIRM_MISMATCH, "key confirmation failed"))
        return ep.outcome("aborted", reason="key confirmation failed")
    ep.send(KeyConfirm(digest))
    try:
        final = ep.recv()
    except (WireError, TransportError):
        final = None  # only an explicit Abort vetoes the key
    if isinstance(final, Abort):
        return ep.outcome("aborted", reason=f"peer aborted (code {final.code}): {final.detail}")
    ep.advance("confirmed")
    ep.report.key_bits_emitted = key_len
    return ep.outcome("key", key=out[:key_len])


@dataclass
class LoopbackResult:
    alice: SessionOutcome
    bob: SessionOutcome
    transcript: list[tuple[int, bytes]] | None = None

    @property
    def symmetric(self) -> bool:
        """Both sides hold the same key, or neither holds one."""
        if self.alice.has_key and self.bob.has_key:
            return bool(np.array_equal(self.alice.key, self.bob.key))
        return not self.alice.has_key and not self.bob.has_key


def run_loopback(schedule: EmissionSchedule, tags: TagStream, config: SessionConfig = SessionConfig(),
                 reconciler: Reconciler | None = None, *, fault: Fault | None = None,
                 shaper: ShaperConfig | None = None, record: bool = False,
                 bob_config: SessionConfig | None = None) -> LoopbackResult:
    """Run both endpoints in-process; Bob on a worker thread."""
    a, b = pipe_pair(fault=fault, record=record)
    ta: Transport = a
    tb: Transport = b
    if shaper is not None:
        ta, tb = shape_throughput(a, shaper), shape_throughput(b, shaper)
    if reconciler is None:
        reconciler = ModeledReconciler(config.distill.f_ec, schedule)
    box: dict[str, SessionOutcome] = {}
    worker = threading.Thread(target=lambda: box.setdefault(
        "bob", run_bob_session(tb, tags, bob_config or config, schedule.config, reconciler)))
    worker.start()
    alice = run_alice_session(ta, schedule, config)
    worker.join()
    return LoopbackResult(alice, box["bob"], a.transcript)

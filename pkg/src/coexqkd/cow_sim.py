"""COW physical layer: frames, SPAD click generation and the analytic twin.

Timing conventions: a frame holds `slots_per_frame` slots of `slot_ns` each,
starting at the frame start; the rest of the frame period is idle.  Pair k of
a frame covers slots 2k and 2k+1.  A key pair carries bit 0 as a pulse in its
first slot and bit 1 as a pulse in its second slot; a decoy pair fills both.
Signal clicks are time-stamped at the slot centre.  Timestamps are integer
picoseconds.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import AlignmentRequiredError, SyncError
from .spectral import NoiseBreakdown

DATA, MONITOR = 0, 1
LINE_NAMES = {DATA: "data", MONITOR: "monitor"}
PS_PER_NS = 1000


@dataclass(frozen=True)
class FrameConfig:
    slot_ns: float = 1.0
    slots_per_frame: int = 64
    frame_period_ns: float = 1024.0
    pulse_rate_ghz: float = 1.0
    mu: float = 0.1
    decoy_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.slots_per_frame % 2:
            raise ValueError("slots_per_frame must be even (slots come in pairs)")
        if self.slots_per_frame * self.slot_ns > self.frame_period_ns:
            raise ValueError("slots_per_frame * slot_ns must fit in frame_period_ns")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if not 0 <= self.decoy_fraction < 0.5:
            raise ValueError("decoy_fraction must be in [0, 0.5)")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @property
    def pairs_per_frame(self) -> int:
        return self.slots_per_frame // 2

    @property
    def frame_rate(self) -> float:
        return 1e9 / self.frame_period_ns

    @property
    def slot_ps(self) -> int:
        return int(round(self.slot_ns * PS_PER_NS))

    @property
    def frame_period_ps(self) -> int:
        return int(round(self.frame_period_ns * PS_PER_NS))


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.10
    dark_cps: float = 620.0
    dead_time_ns: float = 10_000.0
    data_split: float = 0.75
    monitor_split: float = 0.25
    intrinsic_visibility: float = 0.98
    intrinsic_qber: float = 0.0067

    def __post_init__(self):
        if not math.isclose(self.data_split + self.monitor_split, 1.0, abs_tol=1e-12):
            raise ValueError("data_split + monitor_split must equal 1")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if not 0 < self.intrinsic_visibility <= 1:
            raise ValueError("intrinsic_visibility must be in (0, 1]")
        if not 0 <= self.intrinsic_qber <= 0.5:
            raise ValueError("intrinsic_qber must be in [0, 0.5]")
        if self.dark_cps < 0 or self.dead_time_ns < 0:
            raise ValueError("dark_cps and dead_time_ns must be >= 0")

    @property
    def destructive_factor(self) -> float:
        """Destructive-port click probability relative to a non-interfering slot.

        Chosen as (1-V)/(1+V) so that the C_non/C_int estimator returns V
        exactly on a background-free link.
        """
        v = self.intrinsic_visibility
        return (1.0 - v) / (1.0 + v)


def config_hash(config: FrameConfig, det: DetectorModel | None = None) -> int:
    payload = {"frame": dataclasses.asdict(config)}
    if det is not None:
        payload["detector"] = dataclasses.asdict(det)
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, stream: str, batch_index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream, batch); streams never overlap."""
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return np.random.default_rng([int(seed), tag, int(batch_index)])


@dataclass
class EmissionSchedule:
    """Alice's ground truth: bits and decoy flags per pair, per frame."""

    config: FrameConfig
    bits: np.ndarray  # (n_frames, pairs) uint8
    decoy: np.ndarray  # (n_frames, pairs) bool
    first_frame: int = 0

    @property
    def n_frames(self) -> int:
        return int(self.bits.shape[0])

    @property
    def duration_ps(self) -> int:
        return self.n_frames * self.config.frame_period_ps

    @property
    def frame_starts_ps(self) -> np.ndarray:
        idx = np.arange(self.first_frame, self.first_frame + self.n_frames, dtype=np.int64)
        return idx * self.config.frame_period_ps

    @property
    def occupied(self) -> np.ndarray:
        """(n_frames, slots) mask of slots that carry a pulse."""
        return occupancy(self.bits, self.decoy)

    def slice(self, start: int, stop: int) -> EmissionSchedule:
        return EmissionSchedule(self.config, self.bits[start:stop], self.decoy[start:stop],
                                self.first_frame + start)

    @classmethod
    def concatenate(cls, parts: list[EmissionSchedule]) -> EmissionSchedule:
        return cls(parts[0].config, np.concatenate([p.bits for p in parts]),
                   np.concatenate([p.decoy for p in parts]), parts[0].first_frame)


def occupancy(bits: np.ndarray, decoy: np.ndarray) -> np.ndarray:
    first = decoy | (bits == 0)
    second = decoy | (bits == 1)
    occ = np.empty((bits.shape[0], bits.shape[1] * 2), dtype=bool)
    occ[:, 0::2] = first
    occ[:, 1::2] = second
    return occ


def generate_frames(config: FrameConfig, n_frames: int, rng: np.random.Generator | None = None,
                    *, first_frame: int = 0) -> EmissionSchedule:
    """Uniform random key bits; each pair is a decoy with probability decoy_fraction."""
    if n_frames <= 0:
        raise ValueError("n_frames must be > 0")
    if rng is None:
        rng = make_rng(config.rng_seed, "alice")
    shape = (n_frames, config.pairs_per_frame)
    bits = rng.integers(0, 2, size=shape, dtype=np.uint8)
    decoy = rng.random(shape) < config.decoy_fraction
    return EmissionSchedule(config, bits, decoy, first_frame)


@dataclass
class TagStream:
    """Time-tagged detections; `timestamps` (ps) sorted, `lines` DATA/MONITOR."""

    timestamps: np.ndarray
    lines: np.ndarray
    duration_ps: int
    seed: int = 0
    config_hash: int = 0
    aligned: bool = True
    detector: DetectorModel | None = field(default=None, compare=False)

    VERSION = 1
    MAGIC = b"QTAG"
    _HEADER = struct.Struct("<4sBQQQQB")
    _RECORD = np.dtype([("t", "<u8"), ("line", "u1")])

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def line(self, which: int | str) -> np.ndarray:
        if isinstance(which, str):
            which = {"data": DATA, "monitor": MONITOR}[which]
        return self.timestamps[self.lines == which]

    def check_invariants(self, dead_time_ns: float | None = None) -> None:
        """Raise AssertionError unless per-line timestamps are strictly increasing
        and separated by at least the dead time."""
        if dead_time_ns is None:
            dead_time_ns = self.detector.dead_time_ns if self.detector else 0.0
        min_gap = dead_time_ns * PS_PER_NS
        for ln in (DATA, MONITOR):
            gaps = np.diff(self.line(ln))
            if gaps.size and (gaps.min() <= 0 or gaps.min() < min_gap):
                raise AssertionError(f"{LINE_NAMES[ln]} line violates ordering/dead time "
                                     f"(min gap {gaps.min()} ps < {min_gap} ps)")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(self.MAGIC, self.VERSION, self.seed, self.config_hash,
                                 self.duration_ps, len(self), int(self.aligned))
        rec = np.empty(len(self), dtype=self._RECORD)
        rec["t"] = self.timestamps
        rec["line"] = self.lines
        return head + rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> TagStream:
        if len(buf) < cls._HEADER.size:
            raise ValueError("tag file truncated")
        magic, version, seed, chash, duration, n, flags = cls._HEADER.unpack_from(buf)
        if magic != cls.MAGIC:
            raise ValueError("not a tag stream file")
        if version != cls.VERSION:
            raise ValueError(f"unsupported tag stream version {version}")
        body = buf[cls._HEADER.size:]
        if len(body) != n * cls._RECORD.itemsize:
            raise ValueError("tag file length does not match record count")
        rec = np.frombuffer(body, dtype=cls._RECORD)
        return cls(rec["t"].astype(np.int64), rec["line"].astype(np.uint8), duration,
                   seed, chash, bool(flags & 1))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> TagStream:
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp_ps", "line"])
            for t, ln in zip(self.timestamps.tolist(), self.lines.tolist()):
                w.writerow([t, LINE_NAMES[ln]])


def apply_dead_time(times: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Non-paralyzable dead time on a sorted array: keep a click only if it is at
    least `dead_time_ps` after the previously kept one."""
    if times.size == 0:
        return times
    step = max(int(dead_time_ps), 1)
    keep = []
    i, n = 0, times.size
    while i < n:
        keep.append(i)
        i = int(np.searchsorted(times, times[i] + step, side="left"))
    return times[np.asarray(keep)]


def click_probabilities(config: FrameConfig, path_loss_db: float,
                        det: DetectorModel) -> tuple[float, float]:
    """Per-occupied-slot click probability on the data and monitor lines."""
    t = 10.0 ** (-path_loss_db / 10.0)
    p_data = -math.expm1(-config.mu * t * det.efficiency * det.data_split)
    p_mon = -math.expm1(-config.mu * t * det.efficiency * det.monitor_split)
    return p_data, p_mon


def background_rates(noise: NoiseBreakdown, det: DetectorModel) -> tuple[float, float, float, float]:
    """(data noise, data dark, monitor noise, monitor dark) clicks/s before dead time."""
    n = noise.total * det.efficiency
    return n * det.data_split, det.dark_cps, n * det.monitor_split, det.dark_cps


def _raw_clicks(schedule: EmissionSchedule, p_data: float, p_mon: float, det: DetectorModel,
                bg_data: float, bg_mon: float, rng: np.random.Generator,
                jitter_ps: float) -> tuple[np.ndarray, np.ndarray]:
    cfg = schedule.config
    occ = schedule.occupied
    nf, ns = occ.shape
    starts = schedule.frame_starts_ps[:, None]
    centre = np.arange(ns, dtype=np.int64) * cfg.slot_ps + cfg.slot_ps // 2

    click_d = occ & (rng.random(occ.shape) < p_data)
    # intrinsic error: a key-pair click shows up in the partner slot
    key_slot = ~np.repeat(schedule.decoy, 2, axis=1)
    flip = click_d & key_slot & (rng.random(occ.shape) < det.intrinsic_qber)
    slot_idx = np.broadcast_to(np.arange(ns), occ.shape)
    slot_d = np.where(flip, slot_idx ^ 1, slot_idx)[click_d]
    t_data = (starts + np.zeros((1, ns), dtype=np.int64))[click_d] + centre[slot_d]

    prev = np.zeros_like(occ)
    prev[:, 1:] = occ[:, :-1]
    p_m = np.where(prev, p_mon * det.destructive_factor, p_mon)
    click_m = occ & (rng.random(occ.shape) < p_m)
    t_mon = (starts + centre[None, :])[click_m]

    t0 = schedule.first_frame * cfg.frame_period_ps
    span = schedule.duration_ps
    seconds = span * 1e-12
    out = []
    for t_sig, rate in ((t_data, bg_data), (t_mon, bg_mon)):
        if jitter_ps > 0 and t_sig.size:
            t_sig = t_sig + np.rint(rng.normal(0.0, jitter_ps, t_sig.size)).astype(np.int64)
        n_bg = rng.poisson(rate * seconds)
        t_bg = t0 + rng.integers(0, span, size=n_bg, dtype=np.int64)
        out.append(np.concatenate([t_sig, t_bg]))
    return out[0], out[1]


def _assemble(t_data: np.ndarray, t_mon: np.ndarray, det: DetectorModel, duration_ps: int,
              seed: int, chash: int, offset_ps: int) -> TagStream:
    dead = int(round(det.dead_time_ns * PS_PER_NS))
    t_data = apply_dead_time(np.sort(t_data + offset_ps, kind="stable"), dead)
    t_mon = apply_dead_time(np.sort(t_mon + offset_ps, kind="stable"), dead)
    ts = np.concatenate([t_data, t_mon])
    ln = np.concatenate([np.full(t_data.size, DATA, np.uint8), np.full(t_mon.size, MONITOR, np.uint8)])
    order = np.lexsort((ln, ts))
    tags = TagStream(ts[order], ln[order], duration_ps, seed, chash, aligned=offset_ps == 0,
                     detector=det)
    tags.check_invariants()
    return tags


def propagate_and_detect(schedule: EmissionSchedule, path_loss_db: float, noise: NoiseBreakdown,
                         det: DetectorModel, rng: np.random.Generator | None = None, *,
                         offset_ns: float = 0.0, jitter_ns: float = 0.0) -> TagStream:
    """Monte-Carlo SPAD detection of `schedule` after `path_loss_db` of loss.

    Background (in-band noise and dark counts) is Poisson and uniform in time.
    `offset_ns` shifts every timestamp by a constant the receiver does not
    know; such a stream must go through sync_recover/align before sifting.
    """
    cfg = schedule.config
    if rng is None:
        rng = make_rng(cfg.rng_seed, "bob")
    p_data, p_mon = click_probabilities(cfg, path_loss_db, det)
    nd, dd, nm, dm = background_rates(noise, det)
    t_data, t_mon = _raw_clicks(schedule, p_data, p_mon, det, nd + dd, nm + dm, rng,
                                jitter_ns * PS_PER_NS)
    return _assemble(t_data, t_mon, det, schedule.duration_ps, cfg.rng_seed,
                     config_hash(cfg, det), int(round(offset_ns * PS_PER_NS)))


def simulate(config: FrameConfig, det: DetectorModel, path_loss_db: float, noise: NoiseBreakdown,
             n_frames: int, *, batch_frames: int = 32768, offset_ns: float = 0.0,
             jitter_ns: float = 0.0) -> tuple[EmissionSchedule, TagStream]:
    """Batched end-to-end simulation.

    Every batch draws from generators keyed on (seed, batch index) and covers
    its own time range, so batches could run in any order; dead time is
    applied after the deterministic merge.
    """
    if n_frames <= 0:
        raise ValueError("n_frames must be > 0")
    p_data, p_mon = click_probabilities(config, path_loss_db, det)
    nd, dd, nm, dm = background_rates(noise, det)
    parts, data, mon = [], [], []
    for b, start in enumerate(range(0, n_frames, batch_frames)):
        nb = min(batch_frames, n_frames - start)
        sched = generate_frames(config, nb, make_rng(config.rng_seed, "alice", b), first_frame=start)
        td, tm = _raw_clicks(sched, p_data, p_mon, det, nd + dd, nm + dm,
                             make_rng(config.rng_seed, "bob", b), jitter_ns * PS_PER_NS)
        parts.append(sched)
        data.append(td)
        mon.append(tm)
    schedule = EmissionSchedule.concatenate(parts)
    tags = _assemble(np.concatenate(data), np.concatenate(mon), det, schedule.duration_ps,
                     config.rng_seed, config_hash(config, det), int(round(offset_ns * PS_PER_NS)))
    return schedule, tags


# -- analytic twin ---------------------------------------------------------


@dataclass(frozen=True)
class LineRates:
    signal: float
    noise: float
    dark: float

    @property
    def total(self) -> float:
        return self.signal + self.noise + self.dark


@dataclass(frozen=True)
class AnalyticRates:
    """Expected detected rates (after dead time) and derived key statistics."""

    data: LineRates
    monitor: LineRates
    expected_qber: float
    expected_visibility: float
    sifted_rate: float  # bit/s before sample disclosure
    key_pair_rate: float = 0.0  # key pairs emitted per second
    interference_rate: float = 0.0  # monitor opportunities/s, interfering
    noninterference_rate: float = 0.0

    @property
    def signal_click_rate(self) -> LineRates:
        return self.data


def _live_probability(lam: np.ndarray, window_bins: int) -> np.ndarray:
    """Stationary probability that a non-paralyzable detector is live at the start
    of each bin of a periodic click-probability profile `lam` (one period).

    Exact for independent per-bin clicks: P(dead at k) is the expected number of
    accepted clicks in the preceding `window_bins` bins, i.e. L = 1 - C (lam * L)
    with C circulant. Solved by GMRES on FFT products, dense LU as a fallback.
    """
    period = lam.size
    if window_bins <= 0:
        return np.ones(period)
    fc = _window_spectrum(period, window_bins)
    op = LinearOperator((period, period), dtype=float,
                        matvec=lambda v: v + np.fft.irfft(fc * np.fft.rfft(lam * v), n=period))
    live, info = gmres(op, np.ones(period), rtol=1e-13, atol=0.0, restart=100, maxiter=50)
    if info != 0:
        a = _window_matrix(period, window_bins) * lam[None, :]
        a[np.diag_indices(period)] += 1.0
        live = np.linalg.solve(a, np.ones(period))
    return live


def _window_counts(period: int, window_bins: int) -> np.ndarray:
    """counts[d] = how often lag d (mod period) occurs among lags 1..window_bins."""
    return np.bincount(np.arange(1, window_bins + 1) % period, minlength=period).astype(float)


@lru_cache(maxsize=8)
def _window_spectrum(period: int, window_bins: int) -> np.ndarray:
    return np.fft.rfft(_window_counts(period, window_bins))


def _window_matrix(period: int, window_bins: int) -> np.ndarray:
    k = np.arange(period)
    return _window_counts(period, window_bins)[(k[:, None] - k[None, :]) % period]


def analytic_rates(config: FrameConfig, path_loss_db: float, noise: NoiseBreakdown,
                   det: DetectorModel) -> AnalyticRates:
    """Closed-form expectation of what propagate_and_detect + sift would measure.

    QBER = (1/2 * background in key gates + intrinsic_qber * signal) / (signal
    + background in key gates); a key gate is one slot of a key pair.
    Visibility = (c_non - c_int) / (c_non + c_int) over per-opportunity click
    probabilities; background adds equally to both so it pulls V towards 0.
    Dead time enters through the exact periodic live probability; background
    clicks at random times inside a bin are treated as bin-aligned, an error of
    order slot_ns / dead_time_ns in the rates (5e-5 at the defaults).
    """
    p_d, p_m = click_probabilities(config, path_loss_db, det)
    nd, dd, nm, dm = background_rates(noise, det)
    bin_s = config.slot_ns * 1e-9
    period = int(round(config.frame_period_ns / config.slot_ns))
    ns = config.slots_per_frame
    d = config.decoy_fraction
    o = (1.0 + d) / 2.0  # P(slot occupied)
    qv = det.destructive_factor
    # later bins whose centre falls strictly inside the dead time of a click
    window = max(math.ceil(det.dead_time_ns / config.slot_ns - 1e-9) - 1, 0)

    b_d = (nd + dd) * bin_s
    b_m = (nm + dm) * bin_s
    lam_d = np.full(period, -math.expm1(-b_d))
    lam_d[:ns] = 1.0 - math.exp(-b_d) * (1.0 - o * p_d)

    # monitor: per-slot mean signal click prob
    sig_m = np.zeros(period)
    sig_m[0] = o * p_m
    sig_m[2:ns:2] = p_m * (o * (1 - o) + o * o * qv)
    sig_m[1:ns:2] = p_m * ((1 - d) / 2 + d * qv)
    lam_m = np.full(period, -math.expm1(-b_m))
    lam_m[:ns] = 1.0 - math.exp(-b_m) * (1.0 - sig_m[:ns])

    live_d = _live_probability(lam_d, window)
    live_m = _live_probability(lam_m, window)
    fr = config.frame_rate

    # a bin's click is background if any background photon fires, else signal
    e_d, e_m = math.exp(-b_d), math.exp(-b_m)
    g_d, g_m = -math.expm1(-b_d), -math.expm1(-b_m)

    def line_rates(live, sig, e_bg, g_bg, noise_rate, dark_rate):
        s = float(np.sum(sig[:ns] * live[:ns])) * e_bg * fr
        bg_total = float(np.sum(live)) * g_bg * fr
        share = noise_rate / (noise_rate + dark_rate) if noise_rate + dark_rate > 0 else 0.0
        return LineRates(s, share * bg_total, (1.0 - share) * bg_total)

    sig_d = np.zeros(period)
    sig_d[:ns] = o * p_d
    data = line_rates(live_d, sig_d, e_d, g_d, nd, dd)
    monitor = line_rates(live_m, sig_m, e_m, g_m, nm, dm)

    pair_live = live_d[0:ns:2] + live_d[1:ns:2]
    sig_key = float(np.sum((1 - d) * 0.5 * e_d * p_d * pair_live))
    bg_key = float(np.sum((1 - d) * g_d * pair_live))
    sifted = sig_key + bg_key
    errors = det.intrinsic_qber * sig_key + 0.5 * bg_key
    qber = errors / sifted if sifted > 0 else 0.5

    lm = live_m[:ns]
    n_int = np.zeros(ns)
    n_non = np.zeros(ns)
    n_non[0] = o
    n_int[2::2] = o * o
    n_non[2::2] = o * (1 - o)
    n_int[1::2] = d
    n_non[1::2] = (1 - d) / 2
    c_int = float(np.sum(n_int * (e_m * p_m * qv + g_m) * lm))
    c_non = float(np.sum(n_non * (e_m * p_m + g_m) * lm))
    r_int = c_int / n_int.sum() if n_int.sum() > 0 else 0.0
    r_non = c_non / n_non.sum()
    vis = (r_non - r_int) / (r_non + r_int) if (r_non + r_int) > 0 else 0.0

    return AnalyticRates(data=data, monitor=monitor, expected_qber=qber,
                         expected_visibility=vis, sifted_rate=sifted * fr,
                         key_pair_rate=(1 - d) * config.pairs_per_frame * fr,
                         interference_rate=float(n_int.sum()) * fr,
                         noninterference_rate=float(n_non.sum()) * fr)


# -- synchronization -------------------------------------------------------

MIN_SYNC_TAGS = 100


def sync_recover(tags: TagStream, frame_period_ns: float, slot_ns: float = 1.0,
                 slots_per_frame: int = 64, bin_ps: int = 50) -> float:
    """Recover the constant timing offset (ns, modulo the frame period).

    Folds all tags onto one frame period and picks the circular shift that best
    correlates the histogram with the expected comb of slot centres.
    """
    if len(tags) < MIN_SYNC_TAGS:
        raise SyncError(f"only {len(tags)} tags; need at least {MIN_SYNC_TAGS} to synchronize")
    period_ps = int(round(frame_period_ns * PS_PER_NS))
    nbins = period_ps // bin_ps
    phase = (tags.timestamps % period_ps) // bin_ps
    hist = np.bincount(phase.astype(np.int64), minlength=nbins)[:nbins].astype(float)
    hist -= hist.mean()

    x = (np.arange(nbins) + 0.5) * bin_ps
    slot_ps = slot_ns * PS_PER_NS
    template = np.zeros(nbins)
    sigma = 0.25 * slot_ps
    for k in range(slots_per_frame):
        c = (k + 0.5) * slot_ps
        dist = (x - c + period_ps / 2) % period_ps - period_ps / 2
        template += np.exp(-0.5 * (dist / sigma) ** 2)
    template -= template.mean()
    corr = np.fft.irfft(np.fft.rfft(hist) * np.conj(np.fft.rfft(template)), n=nbins)
    best = int(np.argmax(corr))
    return best * bin_ps / PS_PER_NS


def align(tags: TagStream, offset_ns: float, frame_period_ns: float | None = None) -> TagStream:
    """Remove a recovered offset; tags that would fall before t=0 are dropped."""
    off = int(round(offset_ns * PS_PER_NS))
    ts = tags.timestamps - off
    keep = ts >= 0
    return dataclasses.replace(tags, timestamps=ts[keep], lines=tags.lines[keep], aligned=True)


def require_aligned(tags: TagStream) -> None:
    if not tags.aligned:
        raise AlignmentRequiredError("tag stream is not aligned; run sync_recover + align first")

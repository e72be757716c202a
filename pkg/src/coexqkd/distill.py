"""Sifting, parameter estimation, error-correction leakage, Toeplitz privacy
amplification and the secret-key-rate bound."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import entr
from scipy.stats import binomtest

from .cow_sim import DATA, MONITOR, EmissionSchedule, FrameConfig, TagStream, require_aligned
from .errors import InsufficientSampleError, SeedError

REPORT_SCHEMA = "coexqkd.distillation-report"
REPORT_VERSION = 1
MIN_SAMPLE = 100
LN2 = math.log(2.0)


# -- slot bookkeeping ------------------------------------------------------


def tags_to_slots(times_ps: np.ndarray, config: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map timestamps to global slot indices; returns (slot_index, in_gate mask)."""
    period = config.frame_period_ps
    frame = times_ps // period
    slot = (times_ps - frame * period) // config.slot_ps
    in_gate = slot < config.slots_per_frame
    return frame * config.slots_per_frame + slot, in_gate


@dataclass(frozen=True)
class MonitorCounts:
    interfering_clicks: int = 0
    noninterfering_clicks: int = 0
    interfering_opportunities: int = 0
    noninterfering_opportunities: int = 0

    def visibility(self) -> tuple[float, float]:
        """(V, 1-sigma) from opportunity-normalized click counts."""
        if self.interfering_opportunities == 0 or self.noninterfering_opportunities == 0:
            return 0.0, 0.0
        r_int = self.interfering_clicks / self.interfering_opportunities
        r_non = self.noninterfering_clicks / self.noninterfering_opportunities
        s = r_int + r_non
        if s == 0:
            return 0.0, 0.0
        v = (r_non - r_int) / s
        var_int = self.interfering_clicks / self.interfering_opportunities**2
        var_non = self.noninterfering_clicks / self.noninterfering_opportunities**2
        sigma = 2.0 * math.sqrt(r_int**2 * var_non + r_non**2 * var_int) / s**2
        return v, sigma


def monitor_opportunities(schedule: EmissionSchedule) -> tuple[int, int]:
    """(interfering, non-interfering) occupied-slot counts of the whole schedule."""
    occ = schedule.occupied
    prev = np.zeros_like(occ)
    prev[:, 1:] = occ[:, :-1]
    n_int = int(np.count_nonzero(occ & prev))
    return n_int, int(np.count_nonzero(occ)) - n_int


def monitor_clicks(schedule: EmissionSchedule, monitor_slots: np.ndarray) -> tuple[int, int]:
    """(interfering, non-interfering) monitor clicks; clicks in empty slots are ignored."""
    ns = schedule.config.slots_per_frame
    occ = schedule.occupied.ravel()
    g = np.asarray(monitor_slots, dtype=np.int64) - schedule.first_frame * ns
    g = g[(g >= 0) & (g < occ.size)]
    hit = occ[g]
    prev = np.zeros(g.size, dtype=bool)
    inner = (g % ns) != 0
    prev[inner] = occ[g[inner] - 1]
    return int(np.count_nonzero(hit & prev)), int(np.count_nonzero(hit & ~prev))


def monitor_tally(schedule: EmissionSchedule, monitor_slots: np.ndarray) -> MonitorCounts:
    """Alice's tally of Bob's monitor-line slots against the emitted pattern."""
    c_int, c_non = monitor_clicks(schedule, monitor_slots)
    n_int, n_non = monitor_opportunities(schedule)
    return MonitorCounts(c_int, c_non, n_int, n_non)


def sift_decision(schedule: EmissionSchedule, data_slots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Alice's answer to announced data-line slots: (keep mask, decoy flags).

    A detection is kept if it lies in a key pair of the schedule and is the
    first detection announced in that pair.
    """
    cfg = schedule.config
    pairs = np.asarray(data_slots, dtype=np.int64) // 2 - schedule.first_frame * cfg.pairs_per_frame
    valid = (pairs >= 0) & (pairs < schedule.decoy.size)
    decoy = np.zeros(pairs.size, dtype=bool)
    decoy[valid] = schedule.decoy.ravel()[pairs[valid]]
    first = np.zeros(pairs.size, dtype=bool)
    _, idx = np.unique(pairs, return_index=True)
    first[idx] = True
    return valid & ~decoy & first, decoy & valid


@dataclass
class SiftedKey:
    """Bob's sifted key and the bookkeeping around it.

    `indices` are global pair indices (frame * pairs_per_frame + pair).
    """

    bits: np.ndarray
    indices: np.ndarray
    monitor: MonitorCounts = field(default_factory=MonitorCounts)
    decoy_clicks: int = 0
    out_of_gate: int = 0
    double_clicks: int = 0
    duration_s: float = 0.0
    data_clicks: int = 0

    def __len__(self) -> int:
        return int(self.bits.size)


def bob_data_slots(tags: TagStream, config: FrameConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Bob's in-gate data and monitor slot indices plus his out-of-gate count."""
    d_slots, d_in = tags_to_slots(tags.line(DATA), config)
    m_slots, m_in = tags_to_slots(tags.line(MONITOR), config)
    return d_slots[d_in], m_slots[m_in], int(np.count_nonzero(~d_in))


def sift(schedule: EmissionSchedule, tags: TagStream, config: FrameConfig | None = None) -> SiftedKey:
    """Sift Bob's aligned tags against Alice's emission schedule.

    Bit 0 is a click in the first slot of a pair, bit 1 in the second.
    """
    require_aligned(tags)
    config = config or schedule.config
    d_slots, m_slots, out_of_gate = bob_data_slots(tags, config)
    keep, decoy = sift_decision(schedule, d_slots)
    kept = d_slots[keep]
    valid = (d_slots // 2 - schedule.first_frame * config.pairs_per_frame) < schedule.decoy.size
    doubles = int(np.count_nonzero(valid & ~decoy & ~keep))
    return SiftedKey(bits=(kept & 1).astype(np.uint8), indices=kept // 2,
                     monitor=monitor_tally(schedule, m_slots),
                     decoy_clicks=int(np.count_nonzero(decoy)),
                     out_of_gate=out_of_gate + int(np.count_nonzero(~valid)), double_clicks=doubles,
                     duration_s=tags.duration_ps * 1e-12, data_clicks=int(tags.line(DATA).size))


def alice_bits_at(schedule: EmissionSchedule, indices: np.ndarray) -> np.ndarray:
    return schedule.bits.ravel()[np.asarray(indices, dtype=np.int64)
                                 - schedule.first_frame * schedule.config.pairs_per_frame]


# -- estimation ------------------------------------------------------------


@dataclass(frozen=True)
class ParameterEstimate:
    qber: float
    qber_ci: tuple[float, float]
    visibility: float
    visibility_sigma: float
    sample_size: int
    sample_errors: int


def choose_sample(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted positions of the disclosed sample within a sifted key of length n."""
    k = int(round(n * fraction))
    return np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)


def estimate_parameters(monitor: MonitorCounts, alice_sample: np.ndarray, bob_sample: np.ndarray,
                        confidence: float = 0.9973) -> ParameterEstimate:
    """QBER with a Wilson interval from the disclosed sample, and visibility from
    opportunity-normalized monitor counts."""
    n = int(np.size(alice_sample))
    if n != int(np.size(bob_sample)):
        raise ValueError("sample halves differ in length")
    if n < MIN_SAMPLE:
        raise InsufficientSampleError(f"disclosed sample of {n} bits < {MIN_SAMPLE}")
    errors = int(np.count_nonzero(np.asarray(alice_sample) != np.asarray(bob_sample)))
    ci = binomtest(errors, n).proportion_ci(confidence, method="wilson")
    v, v_sigma = monitor.visibility()
    return ParameterEstimate(errors / n, (float(ci.low), float(ci.high)), v, v_sigma, n, errors)


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    # log1p keeps the (1 - p) term accurate for tiny p
    q = 1.0 - p
    tail = -q * math.log1p(-p) if p < 0.5 else float(entr(q))
    return float((entr(p) + tail) / LN2)


def secret_fraction(qber: float, visibility: float, f_ec: float = 1.1) -> float:
    """r = 1 - f_ec h(Q) - h((1 + xi)/2), xi = 2V - 1, clamped to [0, 1].

    Anticorrelated monitor statistics (V < 1/2) carry no phase information, so
    xi is floored at 0, which keeps r monotone in V.
    """
    if not (0.0 <= qber <= 1.0 and 0.0 <= visibility <= 1.0):
        raise ValueError("qber and visibility must be in [0, 1]")
    if f_ec < 1.0:
        raise ValueError("f_ec must be >= 1")
    xi = max(2.0 * visibility - 1.0, 0.0)
    r = 1.0 - f_ec * binary_entropy(qber) - binary_entropy((1.0 + xi) / 2.0)
    return min(max(r, 0.0), 1.0)


def pa_margin(epsilon_pa: float) -> int:
    return math.ceil(2.0 * math.log2(1.0 / epsilon_pa))


# -- privacy amplification -------------------------------------------------


@dataclass(frozen=True)
class ToeplitzSeed:
    """n + m - 1 bits defining the m x n Toeplitz matrix T[i][j] = bits[i - j + n - 1]."""

    bits: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        if self.m < 0 or self.n < 0 or self.m > self.n:
            raise SeedError(f"need 0 <= m <= n, got n={self.n}, m={self.m}")
        need = self.n + self.m - 1 if self.m else 0
        if np.size(self.bits) != need:
            raise SeedError(f"seed has {np.size(self.bits)} bits, need n + m - 1 = {need}")

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator) -> ToeplitzSeed:
        return cls(rng.integers(0, 2, size=n + m - 1 if m else 0, dtype=np.uint8), n, m)

    def matrix(self) -> np.ndarray:
        i = np.arange(self.m)[:, None]
        j = np.arange(self.n)[None, :]
        return np.asarray(self.bits, dtype=np.uint8)[i - j + self.n - 1]


_DIRECT_LIMIT = 1 << 12


def toeplitz_hash(data: np.ndarray, seed: ToeplitzSeed, m: int | None = None) -> np.ndarray:
    """Multiply `data` by the seed's Toeplitz matrix over GF(2).

    Row i of the product is the parity of a sliding window of the seed against
    the reversed input, i.e. the convolution seed * data taken at offset
    n - 1 + i. Small inputs use packed-integer popcounts; large ones an FFT
    convolution of 0/1 vectors, exact while sums stay far below 2**52.
    """
    x = np.asarray(data, dtype=np.uint8)
    m = seed.m if m is None else m
    if x.size != seed.n or m != seed.m:
        raise SeedError(f"seed is for n={seed.n}, m={seed.m}; got n={x.size}, m={m}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    n = seed.n
    s = np.asarray(seed.bits, dtype=np.uint8)
    if n <= _DIRECT_LIMIT:
        s_int = int.from_bytes(np.packbits(s[::-1]).tobytes(), "big") >> (-s.size % 8)
        x_rev = int.from_bytes(np.packbits(x).tobytes(), "big") >> (-n % 8)
        return np.array([(s_int >> i & x_rev).bit_count() & 1 for i in range(m)], dtype=np.uint8)
    conv = fftconvolve(s.astype(np.float64), x.astype(np.float64))[n - 1:n - 1 + m]
    return (np.rint(conv).astype(np.int64) & 1).astype(np.uint8)


# -- error correction ------------------------------------------------------


class Reconciler(Protocol):
    """Pluggable error correction: returns corrected bits and leaked bit count."""

    def reconcile(self, indices: np.ndarray, bits: np.ndarray, qber: float) -> tuple[np.ndarray, int]:
        ...


@dataclass
class ModeledReconciler:
    """Leakage-only model: charges f_ec * h(Q) * n bits and, when given Alice's
    reference bits, returns them as the corrected key (a perfect code)."""

    f_ec: float = 1.1
    reference: EmissionSchedule | None = None

    def leakage(self, n: int, qber: float) -> int:
        return math.ceil(self.f_ec * binary_entropy(qber) * n)

    def reconcile(self, indices, bits, qber):
        corrected = bits if self.reference is None else alice_bits_at(self.reference, indices)
        return np.array(corrected, dtype=np.uint8), self.leakage(len(bits), qber)


# -- reports ---------------------------------------------------------------


@dataclass
class DistillationReport:
    qber: float = 0.0
    qber_ci: tuple[float, float] = (0.0, 0.0)
    visibility: float = 0.0
    visibility_sigma: float = 0.0
    duration_s: float = 0.0
    sifted_bits: int = 0
    disclosed_bits: int = 0
    remaining_bits: int = 0
    sifted_rate: float = 0.0  # after disclosure, bit/s
    secret_fraction: float = 0.0
    skr: float = 0.0
    key_bits_emitted: int = 0
    ec_leakage_bits: int = 0
    pa_margin_bits: int = 0
    confirm_bits: int = 0
    no_key: bool = False
    aborted: bool = False
    abort_reason: str = ""
    detection_rate: float = 0.0
    pulse_rate: float = 1e9
    slot_rate: float = 62.5e6

    @property
    def ratio_per_pulse(self) -> float:
        return self.skr / self.pulse_rate if self.pulse_rate else 0.0

    @property
    def ratio_per_slot(self) -> float:
        return self.skr / self.slot_rate if self.slot_rate else 0.0

    @property
    def ratio_per_detection(self) -> float:
        return self.skr / self.detection_rate if self.detection_rate else 0.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["qber_ci"] = list(self.qber_ci)
        d["key_generation_ratio"] = {"per_pulse": self.ratio_per_pulse,
                                     "per_slot": self.ratio_per_slot,
                                     "per_detection": self.ratio_per_detection}
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **d}

    @classmethod
    def from_dict(cls, d: dict) -> DistillationReport:
        if d.get("schema") != REPORT_SCHEMA or d.get("version") != REPORT_VERSION:
            raise ValueError("unsupported report schema")
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        kw["qber_ci"] = tuple(kw.get("qber_ci", (0.0, 0.0)))
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def skr_rate(sifted_rate: float, qber: float, visibility: float, f_ec: float = 1.1,
             disclosure: float = 0.1) -> float:
    """Asymptotic SKR (bit/s) from a pre-disclosure sifted rate."""
    return sifted_rate * (1.0 - disclosure) * secret_fraction(qber, visibility, f_ec)


@dataclass(frozen=True)
class DistillConfig:
    f_ec: float = 1.1
    epsilon_pa: float = 1e-10
    disclosure: float = 0.1
    confidence: float = 0.9973
    seed: int = 0


def final_length(n_remaining: int, fraction: float, epsilon_pa: float) -> int:
    """floor(n * r) - margin; <= 0 means no key is possible."""
    return math.floor(n_remaining * fraction) - pa_margin(epsilon_pa)


def build_report(sifted_bits: int, disclosed: int, params: ParameterEstimate, duration_s: float,
                 cfg: DistillConfig, detection_rate: float = 0.0, frame: FrameConfig | None = None,
                 ) -> tuple[DistillationReport, int]:
    """Report with every rate filled in, plus the PA output length m."""
    frame = frame or FrameConfig()
    remaining = sifted_bits - disclosed
    r = secret_fraction(params.qber, params.visibility, cfg.f_ec)
    rate = remaining / duration_s if duration_s > 0 else 0.0
    m = final_length(remaining, r, cfg.epsilon_pa)
    rep = DistillationReport(
        qber=params.qber, qber_ci=params.qber_ci, visibility=params.visibility,
        visibility_sigma=params.visibility_sigma, duration_s=duration_s, sifted_bits=sifted_bits,
        disclosed_bits=disclosed, remaining_bits=remaining, sifted_rate=rate, secret_fraction=r,
        skr=rate * r, ec_leakage_bits=math.ceil(cfg.f_ec * binary_entropy(params.qber) * remaining),
        pa_margin_bits=pa_margin(cfg.epsilon_pa), no_key=m <= 0, detection_rate=detection_rate,
        pulse_rate=frame.pulse_rate_ghz * 1e9,
        slot_rate=frame.slots_per_frame * frame.frame_rate)
    return rep, max(m, 0)


def distill_keys(sifted: SiftedKey, schedule: EmissionSchedule, cfg: DistillConfig = DistillConfig(),
                 reconciler: Reconciler | None = None) -> tuple[np.ndarray, np.ndarray, DistillationReport]:
    """Offline distillation with both parties' material in one process.

    Returns (alice_key, bob_key, report). The keys are equal whenever the
    reconciler corrected every error.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(sifted)
    alice = alice_bits_at(schedule, sifted.indices)
    sample = choose_sample(n, cfg.disclosure, rng)
    params = estimate_parameters(sifted.monitor, alice[sample], sifted.bits[sample], cfg.confidence)
    rest = np.setdiff1d(np.arange(n), sample, assume_unique=True)
    dur = sifted.duration_s
    rep, m = build_report(n, sample.size, params, dur, cfg,
                          sifted.data_clicks / dur if dur > 0 else 0.0, schedule.config)
    if m == 0:
        empty = np.zeros(0, dtype=np.uint8)
        return empty, empty, rep
    reconciler = reconciler or ModeledReconciler(cfg.f_ec, schedule)
    bob, _ = reconciler.reconcile(sifted.indices[rest], sifted.bits[rest], params.qber)
    seed = ToeplitzSeed.random(rest.size, m, rng)
    ka = toeplitz_hash(alice[rest], seed)
    kb = toeplitz_hash(bob, seed)
    rep.key_bits_emitted = m
    return ka, kb, rep


def write_key(path: str | Path, key: np.ndarray, report: DistillationReport) -> tuple[Path, Path]:
    """Key as packed bits (MSB first) plus a JSON sidecar `<path>.json`."""
    path = Path(path)
    path.write_bytes(np.packbits(np.asarray(key, dtype=np.uint8)).tobytes())
    side = path.with_name(path.name + ".json")
    side.write_text(report.to_json())
    return path, side


def read_key(path: str | Path, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(Path(path).read_bytes(), dtype=np.uint8))[:n_bits]

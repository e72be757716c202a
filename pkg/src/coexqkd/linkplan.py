"""Spectral layout, loss budgets, classical BER and the co-existence planner."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable

from scipy.special import erfc, erfcinv

from .errors import InfeasibleError, PlanInvalidError
from .spectral import FiberProfile, photon_rate

if TYPE_CHECKING:
    from .pipeline import LinkModel

C_NM_THZ = 299792.458
DIRECTIONS = ("downstream", "upstream")
ROLES = ("load", "distill_down", "distill_up")

# 25 load channels on the 50 GHz ITU grid from 1540.56 to 1598.89 nm: the six
# 100 GHz-spaced channels next to the quantum channel, eleven more C-band
# channels (17 in C, as in the earlier C-band experiment) and eight in L.
GRID_25CH_THZ = (
    194.6, 194.5, 194.4, 194.3, 194.2, 194.1,
    193.9, 193.7, 193.5, 193.3, 193.1, 192.8, 192.6, 192.4, 192.2, 192.0, 191.8,
    190.6, 190.15, 189.7, 189.25, 188.8, 188.35, 187.9, 187.5,
)
QUANTUM_NM = 1538.0
SYNC_NM = 1611.0
DOWNLINK_NM = 1554.94
UPLINK_NM = 1552.52
UPLINK_DBM = -12.5


def thz_to_nm(thz: float) -> float:
    return round(C_NM_THZ / thz, 2)


def dbm_sum(powers_dbm: Iterable[float]) -> float:
    total = sum(10.0 ** (p / 10.0) for p in powers_dbm)
    return 10.0 * math.log10(total) if total > 0 else -math.inf


@dataclass(frozen=True)
class QuantumChannel:
    wavelength: float = QUANTUM_NM
    mu: float = 0.1
    filter_bandwidth: float = 0.8


@dataclass(frozen=True)
class ClassicalChannel:
    wavelength: float
    launch_power: float  # dBm at the fiber input
    direction: str = "downstream"
    role: str = "load"


@dataclass(frozen=True)
class CoexElementLosses:
    quantum_mux_db: float = 0.76
    classical_tx_db: float = 6.3
    quantum_demux_db: float = 0.74
    classical_rx_db: float = 2.5
    notch_rejection_db: float = 95.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise PlanInvalidError(f"{f.name} must be >= 0")


@dataclass(frozen=True)
class AseBackground:
    """Amplifier background inside the quantum filter, photons/s at the link input.

    With load channels present the booster's in-band ASE sits `inband_rel_db`
    below the aggregate downstream power and is further suppressed by the
    transmitter notch. Without load the booster runs unsaturated and a fixed,
    higher `no_load_rate` applies.
    """

    loaded_rate: float = 0.0
    no_load_rate: float = 2.0e4
    inband_rel_db: float = 35.0

    def inband_rate(self, plan: ChannelPlan, probe: float) -> float:
        down = [c.launch_power for c in plan.classical if c.direction == "downstream"]
        if not any(c.role == "load" for c in plan.classical):
            return self.no_load_rate
        leak_dbm = dbm_sum(down) - self.inband_rel_db - plan.ce_losses.notch_rejection_db
        return self.loaded_rate + photon_rate(10.0 ** (leak_dbm / 10.0), probe)


@dataclass(frozen=True)
class ChannelPlan:
    quantum: QuantumChannel = field(default_factory=QuantumChannel)
    sync_wavelength: float = SYNC_NM
    classical: tuple[ClassicalChannel, ...] = ()
    ce_losses: CoexElementLosses = field(default_factory=CoexElementLosses)
    ase: AseBackground = field(default_factory=AseBackground)

    def __post_init__(self):
        q = self.quantum
        if not 0 < q.mu <= 1:
            raise PlanInvalidError(f"mu must be in (0, 1], got {q.mu}")
        if not q.filter_bandwidth > 0:
            raise PlanInvalidError("quantum filter_bandwidth must be > 0")
        seen = set()
        for ch in self.classical:
            if ch.direction not in DIRECTIONS:
                raise PlanInvalidError(f"unknown direction {ch.direction!r}")
            if ch.role not in ROLES:
                raise PlanInvalidError(f"unknown role {ch.role!r}")
            if abs(ch.wavelength - q.wavelength) < q.filter_bandwidth:
                raise PlanInvalidError(
                    f"classical channel at {ch.wavelength} nm collides with the quantum "
                    f"window {q.wavelength} +/- {q.filter_bandwidth} nm")
            if ch.wavelength in seen:
                raise PlanInvalidError(f"duplicate classical wavelength {ch.wavelength} nm")
            seen.add(ch.wavelength)

    @property
    def load_channels(self) -> tuple[ClassicalChannel, ...]:
        return tuple(c for c in self.classical if c.role == "load" and c.direction == "downstream")

    def with_offset(self, offset_db: float) -> ChannelPlan:
        """Shift every downstream channel by `offset_db` (equalized sweep)."""
        chans = tuple(dataclasses.replace(c, launch_power=c.launch_power + offset_db)
                      if c.direction == "downstream" else c for c in self.classical)
        return dataclasses.replace(self, classical=chans)

    def with_aggregate(self, aggregate_dbm: float) -> ChannelPlan:
        current = aggregate_launch_power(self)
        if math.isinf(current):
            raise PlanInvalidError("plan has no downstream load channels to scale")
        return self.with_offset(aggregate_dbm - current)

    def with_quantum(self, **changes) -> ChannelPlan:
        return dataclasses.replace(self, quantum=dataclasses.replace(self.quantum, **changes))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _equal_power(aggregate_dbm: float, n: int) -> float:
    return aggregate_dbm - 10.0 * math.log10(n)


def load_grid(n_channels: int = 25) -> list[float]:
    """The `n_channels` grid wavelengths closest to the quantum channel."""
    if not 0 <= n_channels <= len(GRID_25CH_THZ):
        raise PlanInvalidError(f"channel count must be in [0, {len(GRID_25CH_THZ)}]")
    return [thz_to_nm(f) for f in GRID_25CH_THZ[:n_channels]]


def load_plan(n_channels: int = 25, aggregate_dbm: float = 12.0, **kwargs) -> ChannelPlan:
    """Equal-power downstream load on the first `n_channels` grid slots."""
    if n_channels == 0:
        return ChannelPlan(**kwargs)
    p = _equal_power(aggregate_dbm, n_channels)
    chans = tuple(ClassicalChannel(wl, p) for wl in load_grid(n_channels))
    return ChannelPlan(classical=chans, **kwargs)


def c_band_6ch_plan(aggregate_dbm: float = -1.0, **kwargs) -> ChannelPlan:
    """Six C-band channels from 1540.56 to 1544.53 nm."""
    return load_plan(6, aggregate_dbm, **kwargs)


def bidirectional_plan(downlink_dbm: float = 9.0, uplink_dbm: float = UPLINK_DBM,
                       **kwargs) -> ChannelPlan:
    """25-slot grid with the 10GbE distillation pair on the fiber.

    1554.94 nm carries the downlink and is boosted together with the 23 load
    channels (24 downstream channels share `downlink_dbm`); 1552.52 nm is the
    counter-propagating uplink at `uplink_dbm`.
    """
    p = _equal_power(downlink_dbm, 24)
    chans = []
    for wl in load_grid(25):
        if wl == UPLINK_NM:
            chans.append(ClassicalChannel(wl, uplink_dbm, "upstream", "distill_up"))
        elif wl == DOWNLINK_NM:
            chans.append(ClassicalChannel(wl, p, "downstream", "distill_down"))
        else:
            chans.append(ClassicalChannel(wl, p))
    return ChannelPlan(classical=tuple(chans), **kwargs)


def build_channel_plan(spec: dict) -> ChannelPlan:
    """Build a validated plan from a JSON-style spec.

    Either a preset (``{"preset": "load", "channels": 25, "aggregate_dbm": 12}``,
    ``"c6"`` or ``"bidirectional"``) or an explicit ``"classical"`` list of
    ``{wavelength, launch_power, direction, role}``. Optional keys:
    ``quantum``, ``sync_wavelength``, ``ce_losses``, ``ase``.
    """
    spec = dict(spec)
    common = {}
    if "quantum" in spec:
        common["quantum"] = QuantumChannel(**spec["quantum"])
    if "sync_wavelength" in spec:
        common["sync_wavelength"] = float(spec["sync_wavelength"])
    if "ce_losses" in spec:
        common["ce_losses"] = CoexElementLosses(**spec["ce_losses"])
    if "ase" in spec:
        common["ase"] = AseBackground(**spec["ase"])
    try:
        preset = spec.get("preset")
        if preset is None:
            chans = tuple(ClassicalChannel(float(c["wavelength"]), float(c["launch_power"]),
                                           c.get("direction", "downstream"), c.get("role", "load"))
                          for c in spec.get("classical", []))
            return ChannelPlan(classical=chans, **common)
        if preset == "load":
            return load_plan(int(spec.get("channels", 25)), float(spec.get("aggregate_dbm", 12.0)),
                             **common)
        if preset == "c6":
            return c_band_6ch_plan(float(spec.get("aggregate_dbm", -1.0)), **common)
        if preset == "bidirectional":
            return bidirectional_plan(float(spec.get("aggregate_dbm", 9.0)),
                                      float(spec.get("uplink_dbm", UPLINK_DBM)), **common)
    except (KeyError, TypeError) as exc:
        raise PlanInvalidError(f"malformed plan spec: {exc}") from None
    raise PlanInvalidError(f"unknown plan preset {preset!r}")


def aggregate_launch_power(plan: ChannelPlan) -> float:
    """dB-sum of the downstream load channels' launch powers; -inf if there are none."""
    return dbm_sum(c.launch_power for c in plan.load_channels)


def quantum_path_loss(plan: ChannelPlan, profile: FiberProfile) -> float:
    ce = plan.ce_losses
    return ce.quantum_mux_db + profile.total_loss_db(plan.quantum.wavelength) + ce.quantum_demux_db


def required_key_rate(capacity: float, chunk: float, key_len: float) -> float:
    """Key rate (bit/s) to renew a `key_len`-bit key every `chunk` bytes at `capacity` bit/s."""
    if capacity < 0 or chunk <= 0 or key_len < 0:
        raise ValueError("capacity and key_len must be >= 0, chunk > 0")
    return capacity / (8.0 * chunk) * key_len


@dataclass(frozen=True)
class ClassicalReceiver:
    sensitivity_dbm: float = -23.6
    reference_ber: float = 1e-10
    ber_floor: float = 1e-18

    def __post_init__(self):
        if not 0 < self.reference_ber < 1:
            raise ValueError("reference_ber must be in (0, 1)")
        if not self.ber_floor < self.reference_ber:
            raise ValueError("ber_floor must be below reference_ber")


def classical_ber(rop: float, rx: ClassicalReceiver = ClassicalReceiver()) -> float:
    """Gaussian Q-factor BER with Q proportional to linear received power."""
    q_ref = math.sqrt(2.0) * float(erfcinv(2.0 * rx.reference_ber))
    q = q_ref * 10.0 ** ((rop - rx.sensitivity_dbm) / 10.0)
    return max(0.5 * float(erfc(q / math.sqrt(2.0))), rx.ber_floor)


@dataclass(frozen=True)
class PowerLimit:
    aggregate_dbm: float
    unclamped: bool = False


BRACKET_DBM = (-40.0, 30.0)


def max_coexistence_power(plan: ChannelPlan, profile: FiberProfile, skr_target: float,
                          model: LinkModel | None = None,
                          skr_fn: Callable[[ChannelPlan], float] | None = None,
                          tol_db: float = 0.1) -> PowerLimit:
    """Largest aggregate load power (equalized channels) with SKR >= `skr_target`.

    Bisection over a uniform per-channel offset within [-40, +30] dBm.
    """
    if skr_fn is None:
        from .pipeline import LinkModel as _LinkModel

        m = model or _LinkModel()
        skr_fn = lambda p: m.evaluate(p, profile).skr  # noqa: E731
    lo, hi = BRACKET_DBM
    if skr_fn(plan.with_aggregate(hi)) >= skr_target:
        return PowerLimit(hi, unclamped=True)
    if skr_fn(plan.with_aggregate(lo)) < skr_target:
        raise InfeasibleError(f"SKR target {skr_target} bit/s unreachable even at {lo} dBm")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if skr_fn(plan.with_aggregate(mid)) >= skr_target:
            lo = mid
        else:
            hi = mid
    return PowerLimit(0.5 * (lo + hi))


def budget_gap(profile_a: FiberProfile, profile_b: FiberProfile, plan: ChannelPlan,
               skr_target: float, model: LinkModel | None = None) -> float:
    """Extra permissible launch power (dB) of medium `a` over medium `b`."""
    a = max_coexistence_power(plan, profile_a, skr_target, model)
    b = max_coexistence_power(plan, profile_b, skr_target, model)
    return a.aggregate_dbm - b.aggregate_dbm

"""Anchored spontaneous Raman scattering (SpRS) and attenuation models.

Raman coefficients are in photons / (s * mW pump * nm probe bandwidth * km).
Profiles are immutable; every rate function here is pure.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import OutOfRangeError, ProfileError

if TYPE_CHECKING:
    from .linkplan import ChannelPlan

WAVELENGTH_MIN_NM = 1250.0
WAVELENGTH_MAX_NM = 1650.0
H_PLANCK = 6.62607015e-34
C_LIGHT = 299792458.0


def db_per_km_to_neper(db_per_km: float) -> float:
    return db_per_km * math.log(10.0) / 10.0


def photon_rate(power_mw: float, wavelength_nm: float) -> float:
    """Photons per second carried by `power_mw` at `wavelength_nm`."""
    return power_mw * 1e-3 * wavelength_nm * 1e-9 / (H_PLANCK * C_LIGHT)


@dataclass(frozen=True)
class RamanAnchor:
    pump_wavelength: float
    probe_wavelength: float
    coefficient: float

    def __post_init__(self):
        if not (math.isfinite(self.coefficient) and self.coefficient >= 0):
            raise ProfileError(f"raman coefficient must be finite and >= 0, got {self.coefficient}")
        for wl in (self.pump_wavelength, self.probe_wavelength):
            if not WAVELENGTH_MIN_NM <= wl <= WAVELENGTH_MAX_NM:
                raise ProfileError(f"anchor wavelength {wl} nm outside [1250, 1650] nm")


@dataclass(frozen=True)
class FiberProfile:
    """A transmission medium: length, attenuation and Raman anchor tables.

    `pigtail_equivalent_km` is the SMF-equivalent Raman length contributed by
    the pigtails of the co-existence elements; it is used for media whose own
    Raman response is weak (HCF).
    """

    name: str
    length_km: float
    attenuation_anchors: tuple[tuple[float, float], ...]
    raman_anchors: tuple[RamanAnchor, ...]
    calibration_scale: float = 1.0
    pigtail_equivalent_km: float = 0.0
    _tables: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not self.length_km >= 0:
            raise ProfileError("length_km must be >= 0")
        if not self.calibration_scale > 0:
            raise ProfileError("calibration_scale must be > 0")
        if self.pigtail_equivalent_km < 0:
            raise ProfileError("pigtail_equivalent_km must be >= 0")
        if not self.attenuation_anchors or not self.raman_anchors:
            raise ProfileError(f"profile {self.name!r} needs attenuation and raman anchors")
        att_wl = [wl for wl, _ in self.attenuation_anchors]
        if att_wl != sorted(att_wl) or any(loss < 0 for _, loss in self.attenuation_anchors):
            raise ProfileError("attenuation anchors must be sorted by wavelength with loss >= 0")

        tables: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        for pump in sorted({a.pump_wavelength for a in self.raman_anchors}):
            rows = [a for a in self.raman_anchors if a.pump_wavelength == pump]
            probes = [a.probe_wavelength for a in rows]
            if probes != sorted(probes) or len(set(probes)) != len(probes):
                raise ProfileError(f"raman anchors for pump {pump} nm must be sorted and unique")
            tables[pump] = (np.array(probes), np.array([a.coefficient for a in rows]))
        object.__setattr__(self, "_tables", tables)

    @property
    def pump_table_wavelengths(self) -> tuple[float, ...]:
        return tuple(self._tables)

    def attenuation_db_per_km(self, wavelength_nm: float) -> float:
        wls = [wl for wl, _ in self.attenuation_anchors]
        if not wls[0] <= wavelength_nm <= wls[-1]:
            raise OutOfRangeError(f"{wavelength_nm} nm outside attenuation anchors of {self.name!r}")
        return float(np.interp(wavelength_nm, wls, [v for _, v in self.attenuation_anchors]))

    def total_loss_db(self, wavelength_nm: float) -> float:
        return self.attenuation_db_per_km(wavelength_nm) * self.length_km

    def with_scale(self, calibration_scale: float) -> FiberProfile:
        return dataclasses.replace(self, calibration_scale=calibration_scale)

    def with_length(self, length_km: float) -> FiberProfile:
        return dataclasses.replace(self, length_km=length_km)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "length_km": self.length_km,
            "pigtail_equivalent_km": self.pigtail_equivalent_km,
            "attenuation": [{"nm": wl, "db_per_km": v} for wl, v in self.attenuation_anchors],
            "raman": [{"pump_nm": a.pump_wavelength, "probe_nm": a.probe_wavelength,
                       "coeff": a.coefficient} for a in self.raman_anchors],
            "calibration_scale": self.calibration_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FiberProfile:
        try:
            return cls(
                name=str(d["name"]),
                length_km=float(d["length_km"]),
                attenuation_anchors=tuple((float(a["nm"]), float(a["db_per_km"]))
                                          for a in d["attenuation"]),
                raman_anchors=tuple(RamanAnchor(float(a["pump_nm"]), float(a["probe_nm"]),
                                                float(a["coeff"])) for a in d["raman"]),
                calibration_scale=float(d.get("calibration_scale", 1.0)),
                pigtail_equivalent_km=float(d.get("pigtail_equivalent_km", 0.0)),
            )
        except KeyError as exc:
            raise ProfileError(f"profile JSON missing field {exc}") from None


def load_profile(path: str | Path) -> FiberProfile:
    return FiberProfile.from_dict(json.loads(Path(path).read_text()))


def save_profile(profile: FiberProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=1) + "\n")


@lru_cache(maxsize=None)
def _builtin(name: str) -> FiberProfile:
    text = resources.files("coexqkd.data").joinpath(f"{name}.json").read_text()
    return FiberProfile.from_dict(json.loads(text))


def builtin_profiles() -> tuple[FiberProfile, FiberProfile, FiberProfile]:
    """Return the (SMF, HCF, TFF) profiles shipped with the package.

    The anchor tables are approximate digitizations of measured spectra: SMF
    is broad with an O-band tail and a dip 2 nm either side of the pump, HCF
    sits 35 dB below SMF (1550 -> 1538 nm) and is flat, TFF stands for the
    SMF-28 pigtails of the thin-film filter cascade (SMF coefficients over
    0.05 km).
    """
    return _builtin("smf"), _builtin("hcf"), _builtin("tff")


def builtin_profile(name: str) -> FiberProfile:
    try:
        return _builtin(name.lower())
    except FileNotFoundError:
        raise ProfileError(f"no built-in profile named {name!r}") from None


def _pump_table(profile: FiberProfile, pump: float) -> tuple[np.ndarray, np.ndarray]:
    pumps = np.array(profile.pump_table_wavelengths)
    if len(pumps) == 1:
        half_gap = 5.0
    else:
        half_gap = float(np.max(np.diff(pumps))) / 2.0
    if not (pumps[0] - half_gap <= pump <= pumps[-1] + half_gap):
        raise OutOfRangeError(f"pump {pump} nm outside Raman anchor coverage of {profile.name!r}")
    # ties go to the shorter pump wavelength
    return profile._tables[float(pumps[int(np.argmin(np.abs(pumps - pump)))])]


def raman_coefficient(profile: FiberProfile, pump: float, probe: float) -> float:
    """Raman coefficient at (pump, probe), log-linear between anchors, scaled.

    Uses the anchor table whose pump wavelength is nearest to `pump`. No
    extrapolation outside the table's probe coverage.
    """
    probes, coeffs = _pump_table(profile, pump)
    if not probes[0] <= probe <= probes[-1]:
        raise OutOfRangeError(f"probe {probe} nm outside Raman anchor coverage of {profile.name!r}")
    i = int(np.searchsorted(probes, probe))
    if probes[i] == probe:
        value = coeffs[i]
    else:
        x0, x1, y0, y1 = probes[i - 1], probes[i], coeffs[i - 1], coeffs[i]
        if y0 == y1:
            value = y0
        elif y0 == 0.0 or y1 == 0.0:
            value = y0 + (y1 - y0) * (probe - x0) / (x1 - x0)
        else:
            t = (probe - x0) / (x1 - x0)
            value = math.exp(math.log(y0) + t * (math.log(y1) - math.log(y0)))
    return float(value) * profile.calibration_scale


def _check_rate_args(pump_power: float, bandwidth: float) -> None:
    if pump_power < 0:
        raise ValueError("pump_power must be >= 0")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")


def forward_spontaneous_raman_rate(pump_power: float, profile: FiberProfile, pump: float,
                                   probe: float, bandwidth: float) -> float:
    """Co-propagating SpRS photons/s at the fiber output: rho*P*dl*L*exp(-a*L)."""
    _check_rate_args(pump_power, bandwidth)
    rho = raman_coefficient(profile, pump, probe)
    a = db_per_km_to_neper(profile.attenuation_db_per_km(probe))
    length = profile.length_km
    return rho * pump_power * bandwidth * length * math.exp(-a * length)


def backward_spontaneous_raman_rate(pump_power: float, profile: FiberProfile, pump: float,
                                    probe: float, bandwidth: float) -> float:
    """Counter-propagating SpRS photons/s at the pump's input end: rho*P*dl*(1-exp(-2aL))/(2a)."""
    _check_rate_args(pump_power, bandwidth)
    rho = raman_coefficient(profile, pump, probe)
    a = db_per_km_to_neper(profile.attenuation_db_per_km(probe))
    length = profile.length_km
    x = 2.0 * a * length
    # -expm1(-x)/x keeps the a -> 0 limit exact
    eff = length if x == 0.0 else length * (-math.expm1(-x)) / x
    return rho * pump_power * bandwidth * eff


@dataclass(frozen=True)
class ChannelNoise:
    wavelength: float
    direction: str
    forward_rate: float
    backward_rate: float


@dataclass(frozen=True)
class NoiseBreakdown:
    """In-band noise at the quantum receiver input, photons/s, itemized."""

    per_channel: tuple[ChannelNoise, ...] = ()
    pigtail_rate: float = 0.0
    ase_rate: float = 0.0

    @property
    def total(self) -> float:
        return (sum(c.forward_rate + c.backward_rate for c in self.per_channel)
                + self.pigtail_rate + self.ase_rate)

    @property
    def raman_rate(self) -> float:
        return sum(c.forward_rate + c.backward_rate for c in self.per_channel)

    @classmethod
    def constant(cls, photons_per_s: float) -> NoiseBreakdown:
        """A flat background not tied to any channel (used by simulations and tests)."""
        return cls(ase_rate=float(photons_per_s))

    def to_dict(self) -> dict:
        return {
            "per_channel": [dataclasses.asdict(c) for c in self.per_channel],
            "pigtail_rate": self.pigtail_rate,
            "ase_rate": self.ase_rate,
            "total": self.total,
        }


def aggregate_inband_noise(plan: ChannelPlan, profile: FiberProfile, probe: float | None = None,
                           bandwidth: float | None = None,
                           pigtail_profile: FiberProfile | None = None) -> NoiseBreakdown:
    """Sum the in-band noise every classical channel of `plan` puts on the quantum channel.

    Downstream channels contribute forward SpRS over the link plus the SpRS of
    the transmitter-side pigtails (attenuated by the link); upstream channels
    contribute backward SpRS plus the receiver-side pigtails, unattenuated.
    ASE and notch leakage come from the plan's ASE settings.
    """
    probe = plan.quantum.wavelength if probe is None else probe
    bandwidth = plan.quantum.filter_bandwidth if bandwidth is None else bandwidth
    if pigtail_profile is None:
        pigtail_profile = builtin_profile("tff").with_scale(profile.calibration_scale)
    link_t = 10.0 ** (-profile.total_loss_db(probe) / 10.0)

    channels = []
    pigtail = 0.0
    for ch in plan.classical:
        p_mw = 10.0 ** (ch.launch_power / 10.0)
        if ch.direction == "downstream":
            fwd = forward_spontaneous_raman_rate(p_mw, profile, ch.wavelength, probe, bandwidth)
            channels.append(ChannelNoise(ch.wavelength, ch.direction, fwd, 0.0))
            weight = link_t
        else:
            bwd = backward_spontaneous_raman_rate(p_mw, profile, ch.wavelength, probe, bandwidth)
            channels.append(ChannelNoise(ch.wavelength, ch.direction, 0.0, bwd))
            weight = 1.0
        if profile.pigtail_equivalent_km > 0:
            rho = raman_coefficient(pigtail_profile, ch.wavelength, probe)
            pigtail += rho * p_mw * bandwidth * profile.pigtail_equivalent_km * weight

    ase = plan.ase.inband_rate(plan, probe) * link_t
    return NoiseBreakdown(per_channel=tuple(channels), pigtail_rate=pigtail, ase_rate=ase)


def output_rate_spectrum(profile: FiberProfile, pump: float, pump_power_mw: float,
                         probes: Sequence[float], bandwidth: float = 0.1) -> np.ndarray:
    """Forward output-end SpRS spectrum, photons/s per `bandwidth` (Fig.-2 style view)."""
    return np.array([forward_spontaneous_raman_rate(pump_power_mw, profile, pump, p, bandwidth)
                     for p in probes])

"""Analytic end-to-end link model and the two-scalar calibration fit."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .cow_sim import AnalyticRates, DetectorModel, FrameConfig, analytic_rates
from .distill import DistillConfig, secret_fraction
from .linkplan import ChannelPlan, load_plan, quantum_path_loss
from .spectral import FiberProfile, NoiseBreakdown, aggregate_inband_noise, builtin_profile


@dataclass(frozen=True)
class PointResult:
    skr: float
    qber: float
    visibility: float
    sifted_rate: float  # after sample disclosure
    secret_fraction: float
    noise_total: float
    path_loss_db: float
    rates: AnalyticRates = field(repr=False, compare=False)
    noise: NoiseBreakdown = field(repr=False, compare=False)


@dataclass(frozen=True)
class LinkModel:
    frame: FrameConfig = field(default_factory=FrameConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
    distill: DistillConfig = field(default_factory=DistillConfig)
    pigtail_profile: FiberProfile | None = None

    def frame_for(self, plan: ChannelPlan) -> FrameConfig:
        return dataclasses.replace(self.frame, mu=plan.quantum.mu)

    def noise(self, plan: ChannelPlan, profile: FiberProfile) -> NoiseBreakdown:
        return aggregate_inband_noise(plan, profile, pigtail_profile=self.pigtail_profile)

    def evaluate(self, plan: ChannelPlan, profile: FiberProfile) -> PointResult:
        noise = self.noise(plan, profile)
        loss = quantum_path_loss(plan, profile)
        rates = analytic_rates(self.frame_for(plan), loss, noise, self.detector)
        r = secret_fraction(rates.expected_qber, rates.expected_visibility, self.distill.f_ec)
        sifted = rates.sifted_rate * (1.0 - self.distill.disclosure)
        return PointResult(sifted * r, rates.expected_qber, rates.expected_visibility, sifted, r,
                           noise.total, loss, rates, noise)

    def with_visibility(self, v: float) -> LinkModel:
        return dataclasses.replace(self, detector=dataclasses.replace(self.detector,
                                                                      intrinsic_visibility=v))


# kappa: 25 channels at 9 dBm aggregate on HCF gives 1 kb/s at QBER 1.31 %
KAPPA_SKR = 1000.0
KAPPA_QBER = 0.0131
KAPPA_DBM = 9.0


@dataclass(frozen=True)
class Calibration:
    """One shared Raman scale for all built-in media plus the intrinsic visibility."""

    raman_scale: float
    intrinsic_visibility: float
    residual_skr: float = 0.0
    residual_qber: float = 0.0

    def profile(self, name_or_profile: str | FiberProfile) -> FiberProfile:
        p = builtin_profile(name_or_profile) if isinstance(name_or_profile, str) else name_or_profile
        return p.with_scale(self.raman_scale)

    def model(self, base: LinkModel | None = None) -> LinkModel:
        return (base or LinkModel()).with_visibility(self.intrinsic_visibility)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Calibration:
        return cls(**json.loads(Path(path).read_text()))


def calibrate(base: LinkModel | None = None, plan: ChannelPlan | None = None,
              profile: FiberProfile | None = None, target_skr: float = KAPPA_SKR,
              target_qber: float = KAPPA_QBER) -> Calibration:
    """Least-squares fit of (log10 Raman scale, intrinsic visibility) to the kappa point."""
    base = base or LinkModel()
    plan = plan or load_plan(25, KAPPA_DBM)
    profile = profile or builtin_profile("hcf")

    def point(x):
        scale, v = 10.0 ** x[0], x[1]
        return base.with_visibility(v).evaluate(plan, profile.with_scale(scale))

    def residuals(x):
        res = point(x)
        return [(res.skr - target_skr) / target_skr, (res.qber - target_qber) / target_qber]

    x0 = np.array([0.0, 0.95])
    fit = least_squares(residuals, x0, bounds=([-6.0, 0.5], [6.0, 1.0]), x_scale=[1.0, 0.05],
                        xtol=1e-12, ftol=1e-12)
    res = point(fit.x)
    return Calibration(float(10.0 ** fit.x[0]), float(fit.x[1]), float(res.skr - target_skr),
                       float(res.qber - target_qber))


@lru_cache(maxsize=16)
def cached_calibration(base: LinkModel) -> Calibration:
    return calibrate(base)


def default_calibration() -> Calibration:
    return cached_calibration(LinkModel())

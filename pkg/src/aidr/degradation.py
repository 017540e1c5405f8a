"""Ground-truth degradation causes and received-image quality.

Causes A-G perturb the multi-access links; H flags the rendering model
itself. Severity ``s`` in (0, 1] maps linearly onto channel knobs:
SNR offset ``-20 s`` dB and throughput multiplier ``1 - 0.9 s``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .channel import Tech, TechnologyProfile
from .errors import InvalidInputError, InvalidScenarioError

MAX_SNR_DROP_DB = 20.0
# Aggregation-layer loss hits every link, but only mildly.
AGGREGATION_SNR_DROP_DB = 6.0
MAX_THROUGHPUT_CUT = 0.9
PSNR_CAP_DB = 99.0
# Rendering-quality proxy: a healthy 3D-GS render of a perfect input tops
# out here, and a model fault costs a fixed penalty on top of channel loss.
RENDER_PSNR_CEILING_DB = 38.0
MODEL_FAULT_PENALTY_DB = 12.0


class CauseCode(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"
    G = "G"
    H = "H"


class Effect(str, enum.Enum):
    NOISE = "noise"
    THROUGHPUT = "throughput"
    OUTAGE = "outage"
    AGGREGATION = "aggregation"
    MODEL = "model"


@dataclass(frozen=True)
class DegradationCause:
    code: CauseCode
    description: str
    effect: Effect
    tech: Tech | None = None

    @property
    def mats_based(self) -> bool:
        return self.code is not CauseCode.H

    @property
    def index(self) -> int:
        return list(CauseCode).index(self.code)


_TAXONOMY = (
    DegradationCause(CauseCode.A, "WiFi channel noise", Effect.NOISE, Tech.WIFI),
    DegradationCause(CauseCode.B, "5G channel noise", Effect.NOISE, Tech.FIVEG),
    DegradationCause(CauseCode.C, "LiFi channel noise", Effect.NOISE, Tech.LIFI),
    DegradationCause(CauseCode.D, "WiFi throughput collapse", Effect.THROUGHPUT, Tech.WIFI),
    DegradationCause(CauseCode.E, "5G throughput collapse", Effect.THROUGHPUT, Tech.FIVEG),
    DegradationCause(CauseCode.F, "LiFi link blockage/outage", Effect.OUTAGE, Tech.LIFI),
    DegradationCause(CauseCode.G, "Aggregation-layer bit loss across all channels", Effect.AGGREGATION),
    DegradationCause(CauseCode.H, "AI model (3D-GS) internal fault", Effect.MODEL),
)


def taxonomy() -> list[DegradationCause]:
    return list(_TAXONOMY)


def cause(code: str | CauseCode) -> DegradationCause:
    return _TAXONOMY[list(CauseCode).index(CauseCode(code))]


def snr_offset_for(severity: float) -> float:
    return -MAX_SNR_DROP_DB * severity


def throughput_multiplier_for(severity: float) -> float:
    return 1.0 - MAX_THROUGHPUT_CUT * severity


@dataclass(frozen=True)
class DegradationScenario:
    cause: DegradationCause
    severity: float
    snr_offset_db: float
    throughput_multiplier: float
    affected_tech: Tech | None
    seed: int
    scene_id: str

    def __post_init__(self):
        if not (0.0 < self.severity <= 1.0):
            raise InvalidScenarioError(f"severity must lie in (0, 1], got {self.severity}")
        if self.snr_offset_db > 0 or not math.isfinite(self.snr_offset_db):
            raise InvalidScenarioError(f"snr_offset_db must be finite and <= 0, got {self.snr_offset_db}")
        if not (0.0 < self.throughput_multiplier <= 1.0):
            raise InvalidScenarioError(
                f"throughput_multiplier must lie in (0, 1], got {self.throughput_multiplier}")
        if self.affected_tech != self.cause.tech:
            raise InvalidScenarioError(
                f"cause {self.cause.code.value} ({self.cause.description}) affects "
                f"{self.cause.tech.value if self.cause.tech else 'no single link'}, "
                f"scenario names {self.affected_tech.value if self.affected_tech else 'none'}")

    @classmethod
    def make(cls, code: str | CauseCode, severity: float, seed: int = 0, scene_id: str = "") -> "DegradationScenario":
        """Build a scenario whose knobs follow the severity decision table."""
        c = cause(code)
        if c.effect is Effect.MODEL:
            snr, mult = 0.0, 1.0
        elif c.effect is Effect.NOISE:
            snr, mult = snr_offset_for(severity), 1.0
        elif c.effect is Effect.THROUGHPUT:
            snr, mult = 0.0, throughput_multiplier_for(severity)
        elif c.effect is Effect.OUTAGE:
            snr, mult = snr_offset_for(severity), throughput_multiplier_for(severity)
        else:
            snr, mult = -AGGREGATION_SNR_DROP_DB * severity, 1.0
        return cls(c, float(severity), snr, mult, c.tech, int(seed), scene_id)

    @property
    def scenario_id(self) -> str:
        return f"{self.scene_id}:{self.cause.code.value}:{self.severity:.6f}:{self.seed}"

    def to_dict(self) -> dict:
        return {
            "cause": self.cause.code.value,
            "severity": self.severity,
            "snr_offset_db": self.snr_offset_db,
            "throughput_multiplier": self.throughput_multiplier,
            "affected_tech": self.affected_tech.value if self.affected_tech else None,
            "seed": self.seed,
            "scene_id": self.scene_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationScenario":
        try:
            c = cause(d["cause"])
            # an omitted affected_tech means "whatever the cause targets"
            raw = d.get("affected_tech", c.tech)
            tech = Tech(raw) if raw is not None else None
            severity = float(d["severity"])
        except (KeyError, ValueError) as exc:
            raise InvalidScenarioError(f"bad scenario record {d!r}: {exc}") from exc
        if "snr_offset_db" not in d and "throughput_multiplier" not in d:
            s = cls.make(c.code, severity, int(d.get("seed", 0)), d.get("scene_id", ""))
            if tech != s.affected_tech:
                raise InvalidScenarioError(f"cause {c.code.value} does not affect {tech}")
            return s
        return cls(c, severity, float(d["snr_offset_db"]), float(d["throughput_multiplier"]), tech,
                   int(d.get("seed", 0)), d.get("scene_id", ""))


@dataclass(frozen=True)
class Injection:
    profiles: list[TechnologyProfile]
    model_fault: bool


def inject(scenario: DegradationScenario, nominal: Sequence[TechnologyProfile]) -> Injection:
    techs = [p.tech for p in nominal]
    if sorted(t.value for t in techs) != sorted(t.value for t in Tech):
        raise InvalidScenarioError(f"nominal profiles must cover {[t.value for t in Tech]}, got {[t.value for t in techs]}")
    effect = scenario.cause.effect
    if effect is Effect.MODEL:
        return Injection(list(nominal), True)
    out = []
    for p in nominal:
        if effect is Effect.AGGREGATION or p.tech == scenario.affected_tech:
            p = replace(p, nominal_snr_db=p.nominal_snr_db + scenario.snr_offset_db,
                        throughput_bps=p.throughput_bps * scenario.throughput_multiplier)
        out.append(p)
    return Injection(out, False)


def gold_label(scenario: DegradationScenario) -> int:
    return scenario.cause.index


@dataclass(frozen=True)
class QualityReport:
    mse: float
    psnr_db: float
    per_tech_ber: dict

    def to_dict(self) -> dict:
        return {"mse": self.mse, "psnr_db": self.psnr_db, "per_tech_ber": dict(self.per_tech_ber)}


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0**2 / mse)


def measure_quality(original: np.ndarray, received: np.ndarray, per_tech_ber: dict | None = None) -> QualityReport:
    original = np.asarray(original)
    received = np.asarray(received)
    if original.shape != received.shape:
        raise InvalidInputError(f"dimension mismatch: {original.shape} vs {received.shape}")
    if original.size == 0:
        raise InvalidInputError("empty image")
    diff = original.astype(np.float64) - received.astype(np.float64)
    mse = float(np.mean(diff * diff))
    return QualityReport(mse, psnr_from_mse(mse), dict(per_tech_ber or {}))


def rendering_psnr(quality: QualityReport, model_fault: bool) -> float:
    """Proxy for the 3D rendering quality obtained from the received views."""
    base = min(quality.psnr_db, RENDER_PSNR_CEILING_DB)
    return base - (MODEL_FAULT_PENALTY_DB if model_fault else 0.0)

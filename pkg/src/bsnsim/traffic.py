"""Traffic taxonomy and frame arrival generators.

Three families: periodic CBR normal traffic (high/medium/low designation is
an application label, not inferred from rates), coordinator-initiated
on-demand requests, and Poisson emergency events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .core import SimTime, US_PER_S


class TrafficClass(Enum):
    NORMAL_HIGH = "NormalHigh"
    NORMAL_MEDIUM = "NormalMedium"
    NORMAL_LOW = "NormalLow"
    ON_DEMAND_CONTINUOUS = "OnDemandContinuous"
    ON_DEMAND_NON_CONTINUOUS = "OnDemandNonContinuous"
    EMERGENCY = "Emergency"


NORMAL_CLASSES = (TrafficClass.NORMAL_HIGH, TrafficClass.NORMAL_MEDIUM,
                  TrafficClass.NORMAL_LOW)

_PRIORITY = {
    TrafficClass.NORMAL_LOW: 0,
    TrafficClass.NORMAL_MEDIUM: 1,
    TrafficClass.NORMAL_HIGH: 2,
    TrafficClass.ON_DEMAND_NON_CONTINUOUS: 3,
    TrafficClass.ON_DEMAND_CONTINUOUS: 4,
    TrafficClass.EMERGENCY: 5,
}


def priority(cls: TrafficClass) -> int:
    """Total priority order; higher rank wins channel access."""
    return _PRIORITY[cls]


@dataclass
class TrafficSpec:
    """One node's traffic pattern. CBR classes use period; Emergency uses rate."""

    node: str
    cls: TrafficClass
    payload_bytes: int = 128
    period: Optional[SimTime] = None        # ticks, CBR classes
    rate_per_s: float = 0.0                 # lambda, Emergency
    start_offset: SimTime = 0
    dst: str = "bnc"

    def __post_init__(self):
        if self.payload_bytes <= 0:
            raise ValueError("payload_bytes must be positive")
        if self.cls in NORMAL_CLASSES:
            if self.period is None or self.period <= 0:
                raise ValueError("normal traffic needs period > 0")
        elif self.cls is TrafficClass.EMERGENCY:
            if self.rate_per_s < 0:
                raise ValueError("emergency rate must be >= 0")


def next_normal_arrival(spec: TrafficSpec, now: SimTime) -> SimTime:
    """Smallest start_offset + k*period strictly greater than now."""
    if spec.cls not in NORMAL_CLASSES:
        raise ValueError(f"wrong generator: {spec.cls.value} is not Normal traffic")
    if spec.start_offset > now:
        return spec.start_offset
    k = (now - spec.start_offset) // spec.period + 1
    return spec.start_offset + k * spec.period


def next_emergency(rate_per_s: float, rng, now: SimTime) -> Optional[SimTime]:
    """Poisson arrival: now + Exp(lambda), rounded up to ticks. None if rate 0."""
    if rate_per_s < 0:
        raise ValueError("rate must be >= 0")
    if rate_per_s == 0:
        return None
    delay_s = rng.expovariate(rate_per_s)
    return now + max(1, math.ceil(delay_s * US_PER_S))


class OnDemandMode(Enum):
    CONTINUOUS = "Continuous"
    NON_CONTINUOUS = "NonContinuous"


@dataclass
class OnDemandRequest:
    """Descriptor for a coordinator-initiated information request."""

    target: str
    mode: OnDemandMode
    duration: SimTime = 0          # Continuous only
    stream_period: SimTime = US_PER_S

    def response_offsets(self) -> list[SimTime]:
        """Offsets of response frames relative to service start."""
        if self.mode is OnDemandMode.NON_CONTINUOUS:
            return [0]
        out = []
        t = 0
        while t < self.duration:
            out.append(t)
            t += self.stream_period
        return out

    @property
    def cls(self) -> TrafficClass:
        if self.mode is OnDemandMode.CONTINUOUS:
            return TrafficClass.ON_DEMAND_CONTINUOUS
        return TrafficClass.ON_DEMAND_NON_CONTINUOUS


def issue_on_demand(target: str, mode: OnDemandMode, duration: SimTime = 0,
                    stream_period: SimTime = US_PER_S,
                    known_nodes: Optional[set] = None) -> OnDemandRequest:
    """Build an on-demand request; rejects unknown targets when a roster is given."""
    if known_nodes is not None and target not in known_nodes:
        raise ValueError(f"unknown target node: {target}")
    return OnDemandRequest(target=target, mode=mode, duration=duration,
                           stream_period=stream_period)

"""Bands, channels, path loss with shadowing, CCA, and delivery resolution.

Two link modes exist and are never composed: geometric mode (log-distance
path loss, log-normal shadowing, capture-margin collisions) and empirical
mode (per-site packet success probabilities from measurement tables).
An optional interference gate models a nearby microwave oven degrading
otherwise-successful receptions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .core import SimTime, Simulator

DEFAULT_MIN_DISTANCE_M = 0.01
MICROWAVE_PASS_PROBABILITY = 0.9685  # measured mean packet success, oven ON

# Transmissions that ended this recently are still visible to CCA lookback.
_RECENT_KEEP_US = 2_000


class Band(Enum):
    MICS_402_405 = "MICS_402_405"
    ISM_2_4 = "ISM_2_4"
    WMTS = "WMTS"
    UWB = "UWB"


@dataclass(frozen=True)
class ChannelId:
    """A channel is the pair (frequency band, PHY technique tag)."""

    band: Band
    phy: int = 0


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def distance_to(self, other: "Position") -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2
                         + (self.z - other.z) ** 2)


@dataclass(frozen=True)
class PathLossParams:
    """Log-distance model: pl_d0 + 10*exponent*log10(d/d0) + N(0, sigma^2)."""

    pl_d0: float
    d0: float
    exponent: float
    shadow_sigma: float = 0.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.exponent < 0:
            raise ValueError("exponent must be non-negative")
        if self.shadow_sigma < 0:
            raise ValueError("shadow_sigma must be non-negative")


def path_loss_db(distance: float, params: PathLossParams, rng=None,
                 min_distance: float = DEFAULT_MIN_DISTANCE_M) -> float:
    """Path loss in dB at the given distance; draws shadowing when sigma > 0."""
    if distance < min_distance:
        raise ValueError(f"degenerate geometry: distance {distance} < {min_distance}")
    loss = params.pl_d0 + 10.0 * params.exponent * math.log10(distance / params.d0)
    if params.shadow_sigma > 0:
        if rng is None:
            raise ValueError("shadowing requires an RNG stream")
        loss += rng.gauss(0.0, params.shadow_sigma)
    return loss


def rx_power_dbm(tx_dbm: float, loss_db: float) -> float:
    return tx_dbm - loss_db


class CcaResult(Enum):
    IDLE = "Idle"
    BUSY = "Busy"


class DeliveryOutcome(Enum):
    DELIVERED = "Delivered"
    COLLIDED = "Collided"
    BELOW_SENSITIVITY = "BelowSensitivity"
    OFF_CHANNEL = "OffChannel"
    # Engine-internal extras, never produced by a clean single-link resolve:
    CORRUPTED = "Corrupted"   # interference gate hit
    ABORTED = "Aborted"       # transmitter died mid-frame


class LinkMatrix:
    """Per-posture packet success probabilities between body sites."""

    def __init__(self, entries: dict[tuple[str, str, str], float]):
        for key, p in entries.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"success rate out of [0,1] for {key}: {p}")
        self._entries = dict(entries)

    @classmethod
    def from_csv(cls, path) -> "LinkMatrix":
        """Load from CSV with header posture,src,dst,success_rate."""
        entries = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"posture", "src", "dst", "success_rate"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ValueError(f"link matrix CSV must have header {sorted(expected)}")
            for row in reader:
                key = (row["posture"].strip().lower(), row["src"].strip(),
                       row["dst"].strip())
                entries[key] = float(row["success_rate"])
        return cls(entries)

    def success_p(self, src_site: str, dst_site: str, posture: str) -> float:
        """Missing entries mean no link (probability 0)."""
        return self._entries.get((posture.lower(), src_site, dst_site), 0.0)

    def keys(self):
        return self._entries.keys()


def empirical_outcome(src_site: str, dst_site: str, posture: str,
                      matrix: LinkMatrix, rng) -> bool:
    """Bernoulli draw against the matrix entry; True means Success."""
    p = matrix.success_p(src_site, dst_site, posture)
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    return rng.random() < p


def interference_gate(enabled: bool, rng,
                      pass_probability: float = MICROWAVE_PASS_PROBABILITY) -> bool:
    """True means Pass. Disabled gates always pass."""
    if not enabled:
        return True
    if pass_probability >= 1.0:
        return True
    return rng.random() < pass_probability


@dataclass
class Transmission:
    """One frame on the air on one channel."""

    channel: ChannelId
    power_dbm: float
    start: SimTime
    airtime: SimTime
    frame: object = None
    radio: object = None
    tx_position: Optional[Position] = None
    on_result: Optional[Callable] = None
    aborted: bool = False
    loss_cache: dict = field(default_factory=dict)

    @property
    def end(self) -> SimTime:
        return self.start + self.airtime


def _overlaps(tx: Transmission, start: SimTime, end: SimTime) -> bool:
    return tx.start < end and tx.end > start


def cca(channel: ChannelId, listener: Position, threshold_dbm: float,
        active: Iterable[Transmission], params: PathLossParams, rng=None,
        at: Optional[SimTime] = None,
        min_distance: float = DEFAULT_MIN_DISTANCE_M) -> CcaResult:
    """Energy-detection clear channel assessment at the listener position.

    Busy iff any transmission on the same ChannelId (other channels are
    invisible) reaches the listener at or above the threshold. When `at`
    is given, only transmissions in the air at that instant are considered.
    """
    for tx in active:
        if tx.channel != channel:
            continue
        if at is not None and not (tx.start <= at < tx.end):
            continue
        loss = path_loss_db(tx.tx_position.distance_to(listener), params, rng,
                            min_distance)
        if rx_power_dbm(tx.power_dbm, loss) >= threshold_dbm:
            return CcaResult.BUSY
    return CcaResult.IDLE


def geometric_outcome(rx_dbm: float, interferer_dbms: Iterable[float],
                      sensitivity_dbm: float,
                      capture_margin_db: float) -> DeliveryOutcome:
    """Judge one reception given the wanted and interfering powers."""
    if rx_dbm < sensitivity_dbm:
        return DeliveryOutcome.BELOW_SENSITIVITY
    for o_dbm in interferer_dbms:
        if o_dbm >= rx_dbm - capture_margin_db:
            return DeliveryOutcome.COLLIDED
    return DeliveryOutcome.DELIVERED


def resolve_delivery(tx: Transmission, receiver_pos: Position, *,
                     params: PathLossParams,
                     sensitivity_dbm: float = -95.0,
                     capture_margin_db: float = 10.0,
                     listening: bool = True,
                     listening_since: SimTime = 0,
                     receiver_channel: Optional[ChannelId] = None,
                     others: Iterable[Transmission] = (),
                     rng=None) -> DeliveryOutcome:
    """Single-reception resolution used by unit tests and small harnesses.

    The engine path (Medium) applies the same rules with cached shadowing.
    """
    chan = receiver_channel if receiver_channel is not None else tx.channel
    if chan != tx.channel or not listening or listening_since > tx.start:
        return DeliveryOutcome.OFF_CHANNEL
    rx_dbm = rx_power_dbm(
        tx.power_dbm,
        path_loss_db(tx.tx_position.distance_to(receiver_pos), params, rng))
    interferers = []
    for other in others:
        if other is tx or other.channel != tx.channel:
            continue
        if _overlaps(other, tx.start, tx.end):
            interferers.append(rx_power_dbm(
                other.power_dbm,
                path_loss_db(other.tx_position.distance_to(receiver_pos),
                             params, rng)))
    return geometric_outcome(rx_dbm, interferers, sensitivity_dbm,
                             capture_margin_db)


class _ChannelState:
    """Per-channel registries, interned once so hot paths skip dict hashing."""

    __slots__ = ("channel", "radios", "by_node", "active", "recent", "rate",
                 "params")

    def __init__(self, channel: ChannelId, rate: int, params: PathLossParams):
        self.channel = channel
        self.radios: list = []
        self.by_node: dict[str, list] = {}
        self.active: list[Transmission] = []
        self.recent: list[Transmission] = []
        self.rate = rate
        self.params = params


class Medium:
    """Shared radio medium: tracks live transmissions and resolves receptions.

    All mutations happen inside event dispatch of the owning simulator.
    """

    def __init__(self, sim: Simulator, *,
                 mode: str = "geometric",
                 pathloss: Optional[dict[ChannelId, PathLossParams]] = None,
                 default_params: Optional[PathLossParams] = None,
                 link_matrix: Optional[LinkMatrix] = None,
                 posture: str = "standing",
                 interference_enabled: bool = False,
                 interference_pass_p: float = MICROWAVE_PASS_PROBABILITY,
                 capture_margin_db: float = 10.0,
                 sensitivity_dbm: float = -95.0,
                 min_distance_m: float = DEFAULT_MIN_DISTANCE_M,
                 data_rates: Optional[dict[ChannelId, int]] = None,
                 default_rate_bps: int = 250_000,
                 keep_tx_log: bool = False):
        if mode not in ("geometric", "empirical"):
            raise ValueError(f"unknown link mode: {mode}")
        if mode == "empirical" and link_matrix is None:
            raise ValueError("empirical mode requires a link matrix")
        self.sim = sim
        self.mode = mode
        self.pathloss = dict(pathloss or {})
        self.default_params = default_params or PathLossParams(40.0, 0.1, 3.38, 4.0)
        self.link_matrix = link_matrix
        self.posture = posture
        self.interference_enabled = interference_enabled
        self.interference_pass_p = interference_pass_p
        self.capture_margin_db = capture_margin_db
        self.sensitivity_dbm = sensitivity_dbm
        self.min_distance_m = min_distance_m
        self.data_rates = dict(data_rates or {})
        self.default_rate_bps = default_rate_bps
        self._chans: dict[ChannelId, _ChannelState] = {}
        self.data_collisions = 0
        self.interference_corrupts = 0
        self.tx_log: Optional[list] = [] if keep_tx_log else None

    # -- configuration helpers -------------------------------------------

    def params_for(self, channel: ChannelId) -> PathLossParams:
        return self.pathloss.get(channel, self.default_params)

    def rate_for(self, channel: ChannelId) -> int:
        return self.data_rates.get(channel, self.default_rate_bps)

    def airtime_ticks(self, nbytes: int, channel: ChannelId) -> SimTime:
        bits = nbytes * 8
        rate = self.rate_for(channel)
        return (bits * 1_000_000 + rate - 1) // rate

    def _chan(self, channel: ChannelId) -> _ChannelState:
        cs = self._chans.get(channel)
        if cs is None:
            cs = _ChannelState(channel, self.rate_for(channel),
                               self.params_for(channel))
            self._chans[channel] = cs
        return cs

    def register_radio(self, radio) -> None:
        cs = self._chan(radio.channel)
        cs.radios.append(radio)
        cs.by_node.setdefault(radio.nid, []).append(radio)
        radio.chan_state = cs

    # -- transmission lifecycle ------------------------------------------

    def begin_tx(self, radio, frame, power_dbm: float,
                 airtime: Optional[SimTime] = None,
                 on_result: Optional[Callable] = None) -> Transmission:
        cs = radio.chan_state
        if airtime is None:
            bits = frame.nbytes * 8
            airtime = (bits * 1_000_000 + cs.rate - 1) // cs.rate
        tx = Transmission(channel=radio.channel, power_dbm=power_dbm,
                          start=self.sim.now, airtime=airtime, frame=frame,
                          radio=radio, tx_position=radio.position,
                          on_result=on_result)
        radio.enter_tx()
        radio.current_tx = tx
        cs.active.append(tx)
        self.sim.schedule(airtime, "tx_end", radio.key,
                          lambda: self._finish_tx(tx, cs))
        return tx

    def abort_tx(self, tx: Transmission) -> None:
        tx.aborted = True

    def _finish_tx(self, tx: Transmission, cs: _ChannelState) -> None:
        cs.active.remove(tx)
        cs.recent.append(tx)
        self._prune_recent(cs)
        if tx.radio is not None and not tx.radio.dead:
            tx.radio.exit_tx()
        frame = tx.frame
        if tx.aborted:
            if tx.on_result is not None:
                tx.on_result(DeliveryOutcome.ABORTED)
            return
        link_dst = getattr(frame, "link_dst", None)
        link_result: Optional[DeliveryOutcome] = None
        tx_node = tx.radio.nid if tx.radio is not None else None
        tx_start = tx.start
        # Unicast frames only matter to their destination; no MAC here reacts
        # to overheard unicasts, and CCA is energy-based, not decode-based.
        candidates = (cs.radios if link_dst is None
                      else cs.by_node.get(link_dst, ()))
        for radio in candidates:
            node_id = radio.nid
            if node_id == tx_node or radio.dead:
                continue
            if not radio.listening or radio.rx_ok_since > tx_start:
                if node_id == link_dst and link_result is None:
                    link_result = DeliveryOutcome.OFF_CHANNEL
                continue
            outcome = self._resolve(tx, radio, cs)
            if node_id == link_dst and link_result is not DeliveryOutcome.DELIVERED:
                link_result = outcome
            if outcome is DeliveryOutcome.DELIVERED:
                radio.deliver(frame, tx)
        if link_dst is not None and link_result is None:
            link_result = DeliveryOutcome.OFF_CHANNEL
        if (link_result is DeliveryOutcome.COLLIDED and frame is not None
                and getattr(frame, "kind", None) is not None
                and frame.kind.value == "data"):
            self.data_collisions += 1
        if self.tx_log is not None:
            self.tx_log.append((tx.start, tx.end, cs.channel,
                                tx.radio.nid if tx.radio else None,
                                getattr(frame, "kind", None), link_dst,
                                link_result))
        if tx.on_result is not None:
            tx.on_result(link_result)

    def _prune_recent(self, cs: _ChannelState) -> None:
        horizon = self.sim.now - _RECENT_KEEP_US
        recent = cs.recent
        while recent and recent[0].end < horizon:
            recent.pop(0)

    # -- reception rules ---------------------------------------------------

    def _loss_db(self, tx: Transmission, radio, cs: _ChannelState) -> float:
        loss = tx.loss_cache.get(radio.key)
        if loss is None:
            params = cs.params
            rng = None
            if params.shadow_sigma > 0:
                rng = self.sim.stream(f"shadow:{tx.radio.nid}:{radio.nid}")
            loss = path_loss_db(tx.tx_position.distance_to(radio.position),
                                params, rng, self.min_distance_m)
            tx.loss_cache[radio.key] = loss
        return loss

    def _resolve(self, tx: Transmission, radio, cs: _ChannelState) -> DeliveryOutcome:
        if not radio.listening or radio.rx_ok_since > tx.start:
            return DeliveryOutcome.OFF_CHANNEL
        interferers = [o for o in cs.active
                       if o is not tx and _overlaps(o, tx.start, tx.end)]
        for o in cs.recent:
            if o is not tx and _overlaps(o, tx.start, tx.end):
                interferers.append(o)
        if self.mode == "geometric":
            rx_dbm = rx_power_dbm(tx.power_dbm, self._loss_db(tx, radio, cs))
            outcome = geometric_outcome(
                rx_dbm,
                (rx_power_dbm(o.power_dbm, self._loss_db(o, radio, cs))
                 for o in interferers),
                self.sensitivity_dbm, self.capture_margin_db)
            if outcome is not DeliveryOutcome.DELIVERED:
                return outcome
        else:
            if interferers:
                return DeliveryOutcome.COLLIDED
            rng = self.sim.stream(f"link:{tx.radio.nid}:{radio.nid}")
            if not empirical_outcome(tx.radio.site, radio.site, self.posture,
                                     self.link_matrix, rng):
                return DeliveryOutcome.BELOW_SENSITIVITY
        if self.interference_enabled:
            rng = self.sim.stream(f"intf:{radio.nid}")
            if not interference_gate(True, rng, self.interference_pass_p):
                self.interference_corrupts += 1
                return DeliveryOutcome.CORRUPTED
        return DeliveryOutcome.DELIVERED

    def cca_busy(self, radio, threshold_dbm: float,
                 window_start: SimTime) -> bool:
        """Energy detection over [window_start, now] on the radio's channel.

        A transmission that started at or before `now` and was still in the
        air after `window_start` is visible; other channels never are.
        """
        now = self.sim.now
        cs = radio.chan_state
        self._prune_recent(cs)
        me = radio.nid
        for pool in (cs.active, cs.recent):
            for tx in pool:
                if tx.radio is radio or tx.radio.nid == me:
                    continue
                if tx.start > now or tx.end <= window_start:
                    continue
                if self.mode == "empirical":
                    return True
                rx = rx_power_dbm(tx.power_dbm, self._loss_db(tx, radio, cs))
                if rx >= threshold_dbm:
                    return True
        return False

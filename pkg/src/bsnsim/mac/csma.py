"""Beacon-enabled 802.15.4-style MAC: superframes, slotted CSMA/CA, GTS.

The coordinator broadcasts beacons every beacon interval; devices track
beacons, contend in the CAP with slotted CSMA/CA (two CCAs one backoff unit
apart), and may hold guaranteed slots at the tail of the active period.
Guaranteed slots expire after a configurable number of idle superframes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

from ..core import SimTime
from ..frames import BEACON_BYTES, Frame, FrameKind, Mpdu
from .base import CCA_US, TURNAROUND_US, UNIT_BACKOFF_US, MacBase

BASE_SLOT_US = 960         # one superframe slot at SO=0
NUM_SUPERFRAME_SLOTS = 16


@dataclass(frozen=True)
class SuperframeConfig:
    """Beacon-enabled superframe shape."""

    beacon_order: int = 6
    superframe_order: int = 6
    base_slot_ticks: int = BASE_SLOT_US
    num_slots: int = NUM_SUPERFRAME_SLOTS
    num_gts_slots: int = 2

    def __post_init__(self):
        if not 0 <= self.superframe_order <= self.beacon_order <= 14:
            raise ValueError("need 0 <= SO <= BO <= 14")
        if not 0 <= self.num_gts_slots < self.num_slots:
            raise ValueError("GTS slots must leave room for the CAP")

    @property
    def beacon_interval(self) -> SimTime:
        return self.base_slot_ticks * self.num_slots * (1 << self.beacon_order)

    @property
    def active_duration(self) -> SimTime:
        return self.base_slot_ticks * self.num_slots * (1 << self.superframe_order)

    @property
    def slot_ticks(self) -> SimTime:
        return self.base_slot_ticks * (1 << self.superframe_order)


@dataclass(frozen=True)
class CsmaState:
    """Slotted CSMA/CA backoff state."""

    nb: int = 0
    be: int = 3
    min_be: int = 3
    max_be: int = 5
    max_backoffs: int = 4

    def __post_init__(self):
        if not self.min_be <= self.be <= self.max_be:
            raise ValueError("need macMinBE <= BE <= aMaxBE")
        if not 0 <= self.nb:
            raise ValueError("NB must be non-negative")


@dataclass(frozen=True)
class TransmitAfter:
    delay: SimTime  # ticks until the transmission may start


@dataclass(frozen=True)
class Deferred:
    state: CsmaState


@dataclass(frozen=True)
class ChannelAccessFailure:
    pass


def csma_attempt(state: CsmaState, rng, cca_fn: Callable[[int], bool]):
    """One backoff round of slotted CSMA/CA.

    Draws a backoff in [0, 2^BE - 1] units, then performs CCA at that unit
    boundary and the next (CW = 2); cca_fn(unit_offset) reports Busy. Both
    idle yields TransmitAfter with the total delay to the transmit boundary;
    a busy CCA yields Deferred with bumped NB/BE, or ChannelAccessFailure
    once NB exceeds macMaxCSMABackoffs.
    """
    backoff = rng.randrange(1 << state.be)
    if cca_fn(backoff) or cca_fn(backoff + 1):
        nb = state.nb + 1
        if nb > state.max_backoffs:
            return ChannelAccessFailure()
        return Deferred(replace(state, nb=nb,
                                be=min(state.be + 1, state.max_be)))
    return TransmitAfter((backoff + 2) * UNIT_BACKOFF_US)


@dataclass
class GtsDescriptor:
    """A granted slot region and its inactivity countdown."""

    owner: str
    slots: tuple[int, ...]
    inactivity_countdown: int


def gts_manage(requests, descriptors: list[GtsDescriptor],
               active_owners: set[str], *, num_gts_slots: int,
               expiry_threshold: int = 4,
               num_slots: int = NUM_SUPERFRAME_SLOTS) -> list[GtsDescriptor]:
    """Per-beacon GTS bookkeeping: expire idle descriptors, grant new ones.

    Each request is an owner id asking for one slot. Slots are allocated from
    the top of the active period downward; a request that does not fit is
    denied (the node falls back to the CAP).
    """
    kept: list[GtsDescriptor] = []
    for d in descriptors:
        if d.owner in active_owners:
            d.inactivity_countdown = expiry_threshold
            kept.append(d)
        else:
            d.inactivity_countdown -= 1
            if d.inactivity_countdown > 0:
                kept.append(d)
    used = {s for d in kept for s in d.slots}
    owners = {d.owner for d in kept}
    for owner in requests:
        if owner in owners:
            continue
        if len(used) >= num_gts_slots:
            continue  # denied, not an error
        free = [s for s in range(num_slots - num_gts_slots, num_slots)
                if s not in used]
        if not free:
            continue
        slot = free[-1]
        used.add(slot)
        owners.add(owner)
        kept.append(GtsDescriptor(owner=owner, slots=(slot,),
                                  inactivity_countdown=expiry_threshold))
    return kept


class Beacon802154Mac(MacBase):
    """Device and coordinator roles of the beacon-enabled MAC."""

    def __init__(self, sim, medium, node, network, cfg):
        super().__init__(sim, medium, node, network, cfg)
        self.sf = SuperframeConfig(
            beacon_order=cfg.get("BO", 6),
            superframe_order=cfg.get("SO", 6),
            num_gts_slots=cfg.get("num_gts_slots", 2))
        self.min_be = cfg.get("macMinBE", 3)
        self.max_be = cfg.get("aMaxBE", 5)
        self.max_backoffs = cfg.get("macMaxCSMABackoffs", 4)
        self.retry_limit = cfg.get("retry_limit", 3)
        self.cca_threshold = cfg.get("cca_threshold_dbm", -85.0)
        self.guard_us = cfg.get("guard_us", 2000)
        self.gts_expiry = cfg.get("gts_expiry_superframes", 4)
        self.gts_enabled = node.node_id in cfg.get("gts_nodes", ())
        self.radio = node.add_radio(
            "data", cfg["channel"],
            initial_state="listen" if self.is_coordinator else "sleep")
        self.radio.on_frame = self._on_frame
        self.beacon_airtime = medium.airtime_ticks(BEACON_BYTES, self.radio.channel)
        # device sync state
        self._session = 0           # token invalidating stale scheduled steps
        self._synced = False
        self._cap_start: SimTime = 0
        self._cap_end: SimTime = 0
        self._next_beacon_at: SimTime = 0
        self._beacon_timeout = None
        self._ack_timer = None
        self._retries = 0
        self._nb = 0
        self._be = self.min_be
        self._my_gts: Optional[tuple[int, ...]] = None
        # coordinator state
        self.gts_requests: list[str] = []
        self.descriptors: list[GtsDescriptor] = []
        self._gts_activity: set[str] = set()
        self._gts_region_start: SimTime = 0

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        if self.is_coordinator:
            self.sim.schedule_at(0, "beacon_prep", self.target,
                                 self._coord_beacon)
        else:
            self._next_beacon_at = 0
            self.sim.schedule_at(0, "wake_beacon", self.target,
                                 self._wake_for_beacon)

    def on_death(self) -> None:
        self._session += 1  # queued frames stay put, counted in flight

    # -- coordinator --------------------------------------------------------

    def _coord_beacon(self) -> None:
        if self.node.dead:
            return
        self.descriptors = gts_manage(
            self.gts_requests, self.descriptors, self._gts_activity,
            num_gts_slots=self.sf.num_gts_slots,
            expiry_threshold=self.gts_expiry, num_slots=self.sf.num_slots)
        self.gts_requests = []
        self._gts_activity = set()
        sd_start = self.sim.now
        gts_slots_used = sorted(s for d in self.descriptors for s in d.slots)
        cap_slots = (min(gts_slots_used) if gts_slots_used
                     else self.sf.num_slots)
        cap_end = sd_start + cap_slots * self.sf.slot_ticks
        self._gts_region_start = cap_end
        info = {
            "sd_start": sd_start,
            "cap_end": cap_end,
            "gts": {d.owner: d.slots for d in self.descriptors},
        }
        beacon = Frame(FrameKind.BEACON, self.node.node_id, None, BEACON_BYTES,
                       info=info)
        self.medium.begin_tx(self.radio, beacon, self.node.tx_power_dbm)
        if self.sf.superframe_order < self.sf.beacon_order:
            self.sim.schedule_at(sd_start + self.sf.active_duration,
                                 "coord_sleep", self.target,
                                 lambda: self.radio.set_state("sleep"))
            self.sim.schedule_at(sd_start + self.sf.beacon_interval - TURNAROUND_US,
                                 "coord_wake", self.target,
                                 lambda: self.radio.set_state("listen"))
        self.sim.schedule_at(sd_start + self.sf.beacon_interval, "beacon_prep",
                             self.target, self._coord_beacon)

    def request_gts(self, owner: str) -> None:
        """Out-of-band GTS request collection, processed at the next beacon."""
        if owner not in self.gts_requests:
            self.gts_requests.append(owner)

    def _coord_on_data(self, frame: Frame) -> None:
        mpdu = frame.mpdu
        in_gts = self.sim.now >= self._gts_region_start and any(
            d.owner == frame.src for d in self.descriptors)
        self.network.handle_data_delivery(self.node, mpdu)
        if in_gts:
            self._gts_activity.add(frame.src)
        else:
            self.send_ack_after_turnaround(self.radio, frame.src, mpdu)

    # -- device -------------------------------------------------------------

    def _wake_for_beacon(self) -> None:
        if self.node.dead:
            return
        self._session += 1
        token = self._session
        self.radio.set_state("listen")
        deadline = self._next_beacon_at + self.beacon_airtime + self.guard_us
        self._beacon_timeout = self.sim.schedule_at(
            deadline, "beacon_timeout", self.target,
            lambda: self._beacon_missed(token))

    def _beacon_missed(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self._synced = False
        self._sleep_until_next_beacon()

    def _sleep_until_next_beacon(self) -> None:
        self.radio.set_state("sleep")
        self._next_beacon_at += self.sf.beacon_interval
        wake_at = max(self.sim.now, self._next_beacon_at - self.guard_us)
        self.sim.schedule_at(wake_at, "wake_beacon",
                             self.target, self._wake_for_beacon)

    def _on_beacon(self, frame: Frame) -> None:
        if self._beacon_timeout is not None:
            self.sim.cancel(self._beacon_timeout)
            self._beacon_timeout = None
        info = frame.info
        self._synced = True
        self._cap_start = self.sim.now
        self._cap_end = info["cap_end"]
        self._next_beacon_at = info["sd_start"] + self.sf.beacon_interval
        self._my_gts = info["gts"].get(self.node.node_id)
        token = self._session
        wake_at = self._next_beacon_at - self.guard_us
        self.sim.schedule_at(wake_at, "wake_beacon",
                             self.target,
                             self._wake_for_beacon)
        if self.gts_enabled:
            has_traffic = len(self.queue) or self.in_service is not None
            if self._my_gts and has_traffic:
                self._schedule_gts_tx(info["sd_start"], token)
            else:
                if has_traffic and not self._my_gts:
                    self.network.coordinator_mac.request_gts(self.node.node_id)
                self.radio.set_state("sleep")
            return
        if self.in_service is not None or len(self.queue):
            self._start_cap_service()
        else:
            self.radio.set_state("sleep")

    def _on_enqueued(self, mpdu: Mpdu) -> None:
        if self.is_coordinator:
            return  # downlink service not modelled; coordinator is the sink
        if self.gts_enabled:
            if not self._my_gts:
                self.network.coordinator_mac.request_gts(self.node.node_id)
            return
        if (self._synced and self.in_service is None
                and self.sim.now < self._cap_end):
            self.radio.set_state("listen")
            self._start_cap_service()

    # CAP service: slotted CSMA/CA with ack and retransmissions.

    def _start_cap_service(self) -> None:
        if self.in_service is None:
            if not len(self.queue):
                self._maybe_sleep()
                return
            self.in_service = self.queue.pop()
            self._retries = 0
        self._csma_begin()

    def _csma_begin(self) -> None:
        self._nb = 0
        self._be = self.min_be
        self._backoff()

    def _boundary_after(self, t: SimTime) -> SimTime:
        k = -((self._cap_start - t) // UNIT_BACKOFF_US)  # ceil division
        return self._cap_start + max(0, k) * UNIT_BACKOFF_US

    def _frame_cost(self) -> SimTime:
        airtime = self.medium.airtime_ticks(self.in_service.payload_bytes,
                                            self.radio.channel)
        return airtime + self.ack_wait_ticks(self.radio.channel)

    def _backoff(self) -> None:
        if self.node.dead or not self._synced:
            return
        token = self._session
        delay_units = self.rng.randrange(1 << self._be)
        b0 = self._boundary_after(self.sim.now) + delay_units * UNIT_BACKOFF_US
        tx_at = b0 + 2 * UNIT_BACKOFF_US
        if tx_at + self._frame_cost() > self._cap_end:
            # does not fit this CAP; hold the frame for the next superframe
            self._maybe_sleep()
            return
        self.sim.schedule_at(b0 + CCA_US, "cca", self.target,
                             lambda: self._cca_done(b0, False, token))

    def _cca_done(self, window_start: SimTime, second: bool, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        if self.medium.cca_busy(self.radio, self.cca_threshold, window_start):
            self._nb += 1
            self._be = min(self._be + 1, self.max_be)
            if self._nb > self.max_backoffs:
                self.metrics.csma_failures += 1
                self.metrics.on_dropped(self.in_service)
                self.in_service = None
                self._start_cap_service()
            else:
                self._backoff()
            return
        if not second:
            w2 = window_start + UNIT_BACKOFF_US
            self.sim.schedule_at(w2 + CCA_US, "cca", self.target,
                                 lambda: self._cca_done(w2, True, token))
        else:
            tx_at = window_start + UNIT_BACKOFF_US
            self.sim.schedule_at(tx_at, "tx_start", self.target,
                                 lambda: self._transmit(token))

    def _transmit(self, token: int) -> None:
        if token != self._session or self.node.dead or self.radio.state == "tx":
            return
        frame = Frame.data(self.in_service, self.node.node_id,
                           self.network.link_dst(self.in_service))
        self.medium.begin_tx(self.radio, frame, self.node.tx_power_dbm,
                             on_result=lambda outcome: self._await_ack(token))

    def _await_ack(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self._ack_timer = self.sim.schedule(
            self.ack_wait_ticks(self.radio.channel), "ack_timeout",
            self.target, lambda: self._ack_timeout(token))

    def _ack_timeout(self, token: int) -> None:
        if token != self._session or self.node.dead or self.in_service is None:
            return
        self._retries += 1
        if self._retries > self.retry_limit:
            self.metrics.on_dropped(self.in_service)
            self.in_service = None
            self._start_cap_service()
        else:
            self._csma_begin()

    def _on_ack(self, frame: Frame) -> None:
        if self._ack_timer is not None:
            self.sim.cancel(self._ack_timer)
            self._ack_timer = None
        self.in_service = None
        self._start_cap_service()

    def _maybe_sleep(self) -> None:
        if not self.is_coordinator and self.radio.state == "listen":
            self.radio.set_state("sleep")

    # GTS transmission: one unacknowledged frame per owned slot.

    def _schedule_gts_tx(self, sd_start: SimTime, token: int) -> None:
        self.radio.set_state("sleep")
        for slot in self._my_gts:
            slot_start = sd_start + slot * self.sf.slot_ticks
            if slot_start - TURNAROUND_US <= self.sim.now:
                continue
            self.sim.schedule_at(slot_start - TURNAROUND_US, "gts_wake",
                                 self.target,
                                 lambda: self._gts_warmup(token))
            self.sim.schedule_at(slot_start, "gts_tx",
                                 self.target,
                                 lambda: self._gts_transmit(token))

    def _gts_warmup(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self.radio.set_state("rx")

    def _gts_transmit(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        if self.in_service is None:
            if not len(self.queue):
                self.radio.set_state("sleep")
                return
            self.in_service = self.queue.pop()
        mpdu = self.in_service
        frame = Frame.data(mpdu, self.node.node_id, self.network.link_dst(mpdu))

        def _result(outcome):
            from ..channel import DeliveryOutcome
            if outcome is not DeliveryOutcome.DELIVERED:
                self.metrics.on_dropped(mpdu)
            self.in_service = None
            self.radio.set_state("sleep")

        self.medium.begin_tx(self.radio, frame, self.node.tx_power_dbm,
                             on_result=_result)

    # -- reception ----------------------------------------------------------

    def _on_frame(self, frame: Frame, tx) -> None:
        if frame.kind is FrameKind.BEACON and not self.is_coordinator:
            self._on_beacon(frame)
        elif frame.kind is FrameKind.DATA:
            if frame.link_dst == self.node.node_id:
                if self.is_coordinator:
                    self._coord_on_data(frame)
                else:
                    self.network.handle_data_delivery(self.node, frame.mpdu)
                    self.send_ack_after_turnaround(self.radio, frame.src,
                                                   frame.mpdu)
        elif frame.kind is FrameKind.ACK:
            if self.is_ack_for_me(frame, self.in_service):
                self._on_ack(frame)

"""Preamble-based TDMA: the coordinator announces the slot map each round.

A node sleeps except for the preamble and its own slots; a missed preamble
skips the whole round. Data slots are unacknowledged and collision-free by
construction when the assignment is unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from ..channel import DeliveryOutcome
from ..core import SimTime
from ..frames import Frame, FrameKind, Mpdu
from .base import TURNAROUND_US, MacBase


@dataclass(frozen=True)
class TdmaSchedule:
    """Static slot map for one round."""

    slot_ticks: SimTime
    preamble_ticks: SimTime
    assignment: dict = field(default_factory=dict)  # slot index -> node id

    def __post_init__(self):
        owners = list(self.assignment.values())
        if len(owners) != len(set(owners)):
            raise ValueError("a node may own several slots, but via distinct indices")
        if self.slot_ticks <= 0 or self.preamble_ticks <= 0:
            raise ValueError("slot and preamble durations must be positive")

    @property
    def frame_length(self) -> int:
        return (max(self.assignment) + 1) if self.assignment else 0

    @property
    def round_ticks(self) -> SimTime:
        return self.preamble_ticks + self.frame_length * self.slot_ticks

    def slot_start(self, round_start: SimTime, slot: int) -> SimTime:
        return round_start + self.preamble_ticks + slot * self.slot_ticks

    def slots_of(self, node: str) -> list[int]:
        return [s for s, n in self.assignment.items() if n == node]


def tdma_round(schedule: TdmaSchedule, pending: dict[str, list[Mpdu]]):
    """Plan one round: at most one frame per owned slot, in slot order."""
    plan = []
    taken: dict[str, int] = {}
    for slot in sorted(schedule.assignment):
        node = schedule.assignment[slot]
        idx = taken.get(node, 0)
        frames = pending.get(node, [])
        frame = frames[idx] if idx < len(frames) else None
        if frame is not None:
            taken[node] = idx + 1
        plan.append((slot, node, frame))
    return plan


class PbTdmaMac(MacBase):
    """Event-driven PB-TDMA node and coordinator."""

    def __init__(self, sim, medium, node, network, cfg):
        super().__init__(sim, medium, node, network, cfg)
        self.schedule: TdmaSchedule = cfg["schedule"]
        self.radio = node.add_radio(
            "data", cfg["channel"],
            initial_state="listen" if self.is_coordinator else "sleep")
        self.radio.on_frame = self._on_frame
        self._session = 0
        self._round_start: SimTime = 0

    def start(self) -> None:
        if self.is_coordinator:
            self.sim.schedule_at(0, "tdma_round", self.target,
                                 self._coord_round)
        else:
            self.sim.schedule_at(0, "tdma_wake", self.target,
                                 self._wake_for_preamble)

    # Coordinator: broadcast the preamble, listen for the rest of the round.

    def _coord_round(self) -> None:
        if self.node.dead:
            return
        start = self.sim.now
        preamble = Frame(FrameKind.PREAMBLE, self.node.node_id, None, 0,
                         info={"round_start": start})
        self.medium.begin_tx(self.radio, preamble, self.node.tx_power_dbm,
                             airtime=self.schedule.preamble_ticks)
        self.sim.schedule_at(start + self.schedule.round_ticks, "tdma_round",
                             self.target, self._coord_round)

    # Device: wake for the preamble; on success, serve owned slots.

    def _wake_for_preamble(self) -> None:
        if self.node.dead:
            return
        self._session += 1
        token = self._session
        self._round_start = self.sim.now
        self.radio.set_state("listen")
        deadline = self.sim.now + self.schedule.preamble_ticks + 500
        self.sim.schedule_at(deadline, "preamble_timeout",
                             self.target,
                             lambda: self._preamble_missed(token))
        self.sim.schedule_at(self._round_start + self.schedule.round_ticks,
                             "tdma_wake", self.target,
                             self._wake_for_preamble)

    def _preamble_missed(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self.radio.set_state("sleep")  # skip the whole round

    def _on_preamble(self, frame: Frame) -> None:
        self._session += 1  # cancels the pending miss timeout
        token = self._session
        round_start = frame.info["round_start"]
        self.radio.set_state("sleep")
        if not len(self.queue):
            return
        for slot in self.schedule.slots_of(self.node.node_id):
            slot_at = self.schedule.slot_start(round_start, slot)
            if slot_at < self.sim.now:
                continue
            # the rx/tx turnaround happens inside the owned slot
            self.sim.schedule_at(slot_at, "tdma_slot_wake", self.target,
                                 lambda: self._slot_warmup(token))
            self.sim.schedule_at(slot_at + TURNAROUND_US, "tdma_slot_tx",
                                 self.target,
                                 lambda: self._slot_transmit(token))

    def _slot_warmup(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self.radio.set_state("rx")

    def _slot_transmit(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        if not len(self.queue):
            self.radio.set_state("sleep")
            return
        mpdu = self.queue.pop()
        self.in_service = mpdu
        frame = Frame.data(mpdu, self.node.node_id, self.network.link_dst(mpdu))

        def _result(outcome):
            if outcome is not DeliveryOutcome.DELIVERED:
                self.metrics.on_dropped(mpdu)
            self.in_service = None
            self.radio.set_state("sleep")

        self.medium.begin_tx(self.radio, frame, self.node.tx_power_dbm,
                             on_result=_result)

    def _on_frame(self, frame: Frame, tx) -> None:
        if frame.kind is FrameKind.PREAMBLE and not self.is_coordinator:
            self._on_preamble(frame)
        elif (frame.kind is FrameKind.DATA
              and frame.link_dst == self.node.node_id):
            self.network.handle_data_delivery(self.node, frame.mpdu)

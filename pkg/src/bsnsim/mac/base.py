"""Shared MAC machinery: timing constants, priority queues, ack exchange."""

from __future__ import annotations

from typing import Optional

from ..core import SimTime, Simulator
from ..frames import ACK_BYTES, Frame, FrameKind, Mpdu
from ..traffic import priority

UNIT_BACKOFF_US = 320     # 20 symbols at 250 kb/s
CCA_US = 128              # 8 symbols
TURNAROUND_US = 192       # rx/tx switch, charged at rx power
ACK_WAIT_MARGIN_US = 200


class FrameQueue:
    """Bounded queue ordered by traffic priority, FIFO within a class."""

    def __init__(self, capacity: int = 16):
        self.capacity = capacity
        self._items: list[tuple[int, int, Mpdu]] = []
        self._seq = 0

    def push(self, mpdu: Mpdu) -> bool:
        if len(self._items) >= self.capacity:
            return False
        self._seq += 1
        self._items.append((-priority(mpdu.cls), self._seq, mpdu))
        self._items.sort(key=lambda t: (t[0], t[1]))
        return True

    def peek(self) -> Optional[Mpdu]:
        return self._items[0][2] if self._items else None

    def pop(self) -> Mpdu:
        return self._items.pop(0)[2]

    def remove(self, mpdu: Mpdu) -> None:
        self._items = [t for t in self._items if t[2] is not mpdu]

    def __len__(self) -> int:
        return len(self._items)

    def frames(self) -> list[Mpdu]:
        return [t[2] for t in self._items]


class MacBase:
    """Common plumbing every protocol shares; subclasses drive the radio."""

    def __init__(self, sim: Simulator, medium, node, network, cfg: dict):
        self.sim = sim
        self.medium = medium
        self.node = node
        self.network = network
        self.cfg = cfg
        self.rng = sim.stream(f"mac:{node.node_id}")
        self.queue = FrameQueue(capacity=cfg.get("queue_capacity", 16))
        self.target = f"node:{node.node_id}"
        self.in_service: Optional[Mpdu] = None
        node.mac = self

    @property
    def metrics(self):
        return self.network.metrics

    @property
    def is_coordinator(self) -> bool:
        return self.node.node_id == self.network.bnc_id

    def start(self) -> None:
        raise NotImplementedError

    def enqueue(self, mpdu: Mpdu) -> None:
        if self.node.dead:
            return
        if not self.queue.push(mpdu):
            self.metrics.on_dropped(mpdu)
            return
        self._on_enqueued(mpdu)

    def _on_enqueued(self, mpdu: Mpdu) -> None:
        pass

    def pending_frames(self) -> list[Mpdu]:
        out = self.queue.frames()
        if self.in_service is not None:
            out.append(self.in_service)
        return out

    def on_death(self) -> None:
        pass

    # Ack exchange ----------------------------------------------------------

    def send_ack_after_turnaround(self, radio, to: str, mpdu: Mpdu) -> None:
        """Receiver side: switch rx for the turnaround, then transmit the ack."""
        if radio.state == "tx" or self.node.dead:
            return
        radio.set_state("rx")
        ack = Frame.ack(self.node.node_id, to, mpdu.seq, mpdu.src)

        def _tx_ack():
            if self.node.dead or radio.state == "tx":
                return
            self.medium.begin_tx(radio, ack, self.node.tx_power_dbm)

        self.sim.schedule(TURNAROUND_US, "ack_tx", self.target, _tx_ack)

    def ack_wait_ticks(self, channel) -> SimTime:
        return (TURNAROUND_US + self.medium.airtime_ticks(ACK_BYTES, channel)
                + ACK_WAIT_MARGIN_US)

    def is_ack_for_me(self, frame: Frame, mpdu: Mpdu) -> bool:
        return (frame.kind is FrameKind.ACK and frame.link_dst == self.node.node_id
                and mpdu is not None and frame.info.get("seq") == mpdu.seq
                and frame.info.get("of") == mpdu.src)

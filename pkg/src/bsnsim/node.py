"""Nodes and radios: state machines, lazy energy accrual, budget death."""

from __future__ import annotations

from typing import Callable, Optional

from .channel import ChannelId, Medium, Position
from .core import Event, SimTime, Simulator
from .energy import EnergyLedger, PowerProfile


class Radio:
    """One transceiver, fixed to a channel, owned by a node.

    States: sleep, listen (idle receive), rx (turnaround / locked reception),
    tx. Energy accrues lazily at state changes; `rx_ok_since` marks the start
    of the current uninterrupted receive-capable stretch, which decides
    whether a frame that began earlier can be decoded.
    """

    __slots__ = ("sim", "medium", "node", "label", "channel", "state",
                 "rx_ok_since", "_last_change", "ledger", "dead", "current_tx",
                 "on_frame", "listening", "_mw", "chan_state", "nid", "key")

    def __init__(self, sim: Simulator, medium: Medium, node: "Node", label: str,
                 channel: ChannelId, power_mw: dict[str, float],
                 initial_state: str = "sleep"):
        self.sim = sim
        self.medium = medium
        self.node = node
        self.label = label
        self.nid = node.node_id
        self.key = f"{node.node_id}/{label}"
        self.channel = channel
        self.state = initial_state
        self.listening = initial_state in ("listen", "rx")
        self.rx_ok_since: SimTime = sim.now if self.listening else -1
        self._last_change: SimTime = sim.now
        self.ledger = EnergyLedger(node.node_id, initial_j=None, power_mw=power_mw)
        self._mw = power_mw[initial_state]
        self.dead = False
        self.current_tx = None
        self.on_frame: Optional[Callable] = None
        self.chan_state = None  # filled by Medium.register_radio
        medium.register_radio(self)

    @property
    def node_id(self) -> str:
        return self.nid

    @property
    def position(self) -> Position:
        return self.node.position

    @property
    def site(self) -> str:
        return self.node.site

    def is_listening(self) -> bool:
        return self.listening

    def flush(self, at: Optional[SimTime] = None) -> None:
        """Accrue time spent in the current state up to `at` (default now)."""
        if self.dead:
            return
        at = self.sim.now if at is None else at
        elapsed = at - self._last_change
        if elapsed > 0:
            accrued = self.ledger.account(self.state, elapsed)
            self.node.consumed_cache_j += accrued * self._mw * 1e-9
        self._last_change = at

    def _apply(self, state: str) -> None:
        self.flush()
        prev = self.state
        self.state = state
        self._mw = self.ledger.power_mw[state]
        self.listening = state in ("listen", "rx")
        if self.listening and prev not in ("listen", "rx"):
            self.rx_ok_since = self.sim.now
        elif state == "sleep":
            self.rx_ok_since = -1
        self.node.power_changed()

    def set_state(self, state: str) -> None:
        if self.dead or state == self.state:
            return
        self._apply(state)

    # Medium hooks ---------------------------------------------------------

    def enter_tx(self) -> None:
        self._apply("tx")

    def exit_tx(self) -> None:
        self.current_tx = None
        self._apply("listen")
        self.rx_ok_since = self.sim.now

    def deliver(self, frame, tx) -> None:
        if self.on_frame is not None and not self.node.dead:
            self.on_frame(frame, tx)

    def die(self) -> None:
        """Freeze the ledger at the current instant; the radio goes silent."""
        self.flush()
        self.dead = True
        self.state = "sleep"
        self.listening = False
        self.rx_ok_since = -1


class Node:
    """A BAN node: position, body site, role, radios, and an energy budget."""

    def __init__(self, sim: Simulator, medium: Medium, node_id: str, *,
                 site: str = "", kind: str = "onbody",
                 position: Position = Position(0.0, 0.0),
                 profile: PowerProfile,
                 initial_j: Optional[float] = 5.0,
                 tx_power_dbm: float = -5.0,
                 horizon_hint: Optional[SimTime] = None):
        self.sim = sim
        self.medium = medium
        self.node_id = node_id
        self.site = site
        self.kind = kind  # inbody | onbody | bnc
        self.position = position
        self.profile = profile
        self.initial_j = initial_j
        self.tx_power_dbm = tx_power_dbm
        self.horizon_hint = horizon_hint
        self.radios: dict[str, Radio] = {}
        self.consumed_cache_j = 0.0  # mirror of all ledger accruals
        self.dead = False
        self.death_time: Optional[SimTime] = None
        self._death_event: Optional[Event] = None
        self.mac = None

    @property
    def is_inbody(self) -> bool:
        return self.kind == "inbody"

    def add_radio(self, label: str, channel: ChannelId,
                  initial_state: str = "sleep") -> Radio:
        radio = Radio(self.sim, self.medium, self, label, channel,
                      self.profile.state_mw(), initial_state)
        self.radios[label] = radio
        self.power_changed()
        return radio

    def add_wakeup_receiver(self, channel: ChannelId) -> Radio:
        """Ultra-low-power always-on receiver with its own timeline."""
        power = {"sleep": 0.0, "listen": self.profile.wakeup_rx_uw / 1000.0,
                 "rx": self.profile.wakeup_rx_uw / 1000.0, "tx": 0.0}
        radio = Radio(self.sim, self.medium, self, "wakeup_rx", channel,
                      power, initial_state="listen")
        self.radios["wakeup_rx"] = radio
        self.power_changed()
        return radio

    def consumed_j(self, flush: bool = True) -> float:
        if flush:
            for radio in self.radios.values():
                radio.flush()
        return sum(r.ledger.consumed_j for r in self.radios.values())

    def remaining_j(self) -> float:
        if self.initial_j is None:
            return float("inf")
        return max(0.0, self.initial_j - self.consumed_j())

    def power_changed(self) -> None:
        """Re-aim the death event at the current total draw."""
        if self.dead or self.initial_j is None:
            return
        if self._death_event is not None:
            self.sim.cancel(self._death_event)
            self._death_event = None
        now = self.sim.now
        total_mw = 0.0
        pending_j = 0.0
        for r in self.radios.values():
            if r.dead:
                continue
            total_mw += r._mw
            pending_j += (now - r._last_change) * r._mw * 1e-9
        if total_mw <= 0.0:
            return
        remaining = self.initial_j - self.consumed_cache_j - pending_j
        if remaining < 0.0:
            remaining = 0.0
        fire_at = now + int(remaining / (total_mw * 1e-9))
        if self.horizon_hint is not None and fire_at > self.horizon_hint:
            return
        self._death_event = self.sim.schedule_at(
            fire_at, "death", f"node:{self.node_id}", self._die)

    def _die(self) -> None:
        if self.dead:
            return
        self.dead = True
        self.death_time = self.sim.now
        for radio in self.radios.values():
            if radio.current_tx is not None:
                self.medium.abort_tx(radio.current_tx)
            radio.die()
        if self.mac is not None and hasattr(self.mac, "on_death"):
            self.mac.on_death()

    def finalize(self) -> None:
        """Accrue all live radios to the current instant (end of run)."""
        if not self.dead:
            for radio in self.radios.values():
                radio.flush()

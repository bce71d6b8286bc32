"""Traffic-Based Wakeup MAC.

Normal traffic is served in table-driven periodic windows: the coordinator
derives its own minimal wakeup pattern from the table, emits a short beacon
at each window start, and the node uploads queued frames with per-frame
acks. Emergencies bypass the table entirely: the node raises a burst on the
always-on wakeup channel, the coordinator powers its data radio and grants
immediate access. On-demand requests travel the other way, either tone
addressed (only the target wakes) or broadcast (every node wakes and the
non-targets pay the price).
"""

from __future__ import annotations

from typing import Optional

from ..channel import ChannelId
from ..core import SimTime
from ..frames import BEACON_BYTES, POLL_BYTES, Frame, FrameKind, Mpdu
from ..traffic import OnDemandMode, OnDemandRequest, TrafficClass
from ..wakeup import BncPattern, TableAction, WakeupEntry, WakeupTable, \
    derive_bnc_pattern, table_update
from .base import TURNAROUND_US, MacBase

GRANT_BYTES = BEACON_BYTES
POLL_WAIT_US = 20_000
SESSION_LINGER_US = 5_000


class TbwMac(MacBase):
    """Node and coordinator roles of the traffic-based wakeup mechanism."""

    def __init__(self, sim, medium, node, network, cfg):
        super().__init__(sim, medium, node, network, cfg)
        self.guard = cfg.get("guard_us", 2_000)
        self.signal_ticks = cfg.get("wakeup_signal_us", 10_000)
        self.retry_timeout = cfg.get("wakeup_retry_us", 50_000)
        self.max_tries = cfg.get("wakeup_max_tries", 10)
        self.retry_limit = cfg.get("retry_limit", 3)
        self.always_on = cfg.get("bnc_always_on", False)
        self.wakeup_channel: ChannelId = cfg["wakeup_channel"]
        self.node_channels: dict[str, ChannelId] = cfg["node_channels"]
        self._session = 0
        if self.is_coordinator:
            self.table: WakeupTable = cfg.get("table") or WakeupTable(node.node_id)
            self.pattern: BncPattern = BncPattern()
            self.data_radios: dict[ChannelId, object] = {}
            for ch in sorted({*self.node_channels.values()},
                             key=lambda c: (c.band.value, c.phy)):
                radio = node.add_radio(f"data:{ch.band.value}:{ch.phy}", ch,
                                       initial_state="listen" if self.always_on
                                       else "sleep")
                radio.on_frame = self._on_frame
                self.data_radios[ch] = radio
            self._sessions: dict[ChannelId, int] = {ch: 0 for ch in self.data_radios}
            self._epoch = 0
        else:
            self.radio = node.add_radio("data",
                                        self.node_channels[node.node_id])
            self.radio.on_frame = self._on_frame
            self.entry_view: Optional[dict] = cfg.get("entry")  # period/offset/window
            self._window_end: SimTime = 0
            self._serving_window = False
            self._pending_emergencies: list[Mpdu] = []
            self._emg_active: Optional[Mpdu] = None
            self._emg_tries = 0
            self._od_req: Optional[dict] = None
        self.wakeup_rx = node.add_wakeup_receiver(self.wakeup_channel)
        self.wakeup_rx.on_frame = self._on_wakeup_signal
        self.wakeup_tx = node.add_radio("wakeup_tx", self.wakeup_channel)
        self._ack_timer = None
        self._retries = 0
        self._send_done = None  # callback(success) for the frame in service

    # ------------------------------------------------------------------ #
    # lifecycle                                                          #
    # ------------------------------------------------------------------ #

    def start(self) -> None:
        if self.is_coordinator:
            self._rebuild_schedule()
        else:
            if self.entry_view:
                self._schedule_next_window()

    def radio_for(self, node_id: str):
        if self.is_coordinator:
            return self.data_radios[self.node_channels[node_id]]
        return self.radio

    # ------------------------------------------------------------------ #
    # coordinator: pattern execution and window beacons                  #
    # ------------------------------------------------------------------ #

    def _rebuild_schedule(self) -> None:
        """Recompute the pattern and restart beacon/pattern chains."""
        self._epoch += 1
        epoch = self._epoch
        self.pattern = derive_bnc_pattern(self.table, self.guard)
        if not self.always_on and not self.pattern.fallback:
            for s, e in self.pattern.intervals:
                self._chain_interval(s, e, epoch)
        for entry in self.table.values():
            self._chain_beacon(entry, epoch)

    def _chain_interval(self, start: SimTime, end: SimTime, epoch: int) -> None:
        hyper = self.pattern.hyperperiod
        base = (self.sim.now // hyper) * hyper if hyper else 0

        def arm(cycle_base):
            if self._epoch != epoch or self.node.dead:
                return
            wake_at = cycle_base + start
            if wake_at < self.sim.now:
                arm(cycle_base + hyper)
                return
            self.sim.schedule_at(wake_at, "bnc_wake", self.target,
                                 lambda: on_wake(cycle_base))

        def on_wake(cycle_base):
            if self._epoch != epoch or self.node.dead:
                return
            for radio in self.data_radios.values():
                if radio.state == "sleep":
                    radio.set_state("listen")
            self.sim.schedule_at(cycle_base + end, "bnc_sleep",
                                 self.target,
                                 lambda: on_sleep(cycle_base))

        def on_sleep(cycle_base):
            if self._epoch != epoch or self.node.dead:
                return
            for ch, radio in self.data_radios.items():
                if self._sessions[ch] == 0 and radio.state == "listen":
                    radio.set_state("sleep")
            arm(cycle_base + hyper)

        arm(base)

    def _chain_beacon(self, entry: WakeupEntry, epoch: int) -> None:
        occ = entry.occurrence_after(self.sim.now - 1)

        def fire():
            if self._epoch != epoch or self.node.dead:
                return
            radio = self.radio_for(entry.node)
            if self.pattern.fallback and radio.state == "sleep":
                radio.set_state("listen")  # per-event fallback wake
            if radio.state != "tx":
                beacon = Frame(FrameKind.BEACON, self.node.node_id, entry.node,
                               BEACON_BYTES,
                               info={"window_end": self.sim.now + entry.window,
                                     "entry": {"period": entry.period,
                                               "offset": entry.offset,
                                               "window": entry.window},
                                     "revision": self.table.revision})
                self.medium.begin_tx(radio, beacon, self.node.tx_power_dbm)
            if self.pattern.fallback:
                self.sim.schedule_at(self.sim.now + entry.window + self.guard,
                                     "bnc_fallback_sleep",
                                     self.target,
                                     lambda: self._release(radio.channel, 0))
            nxt = entry.occurrence_after(self.sim.now)
            self.sim.schedule_at(nxt, "window_beacon",
                                 self.target, fire)

        self.sim.schedule_at(occ, "window_beacon", self.target,
                             fire)

    def apply_table_update(self, entry: WakeupEntry, action: TableAction,
                           caller: str = None) -> None:
        table_update(self.table, entry, action,
                     caller=caller if caller is not None else self.node.node_id)
        self._rebuild_schedule()

    # session accounting keeps data radios awake outside the pattern

    def _acquire(self, channel: ChannelId) -> None:
        self._sessions[channel] += 1
        radio = self.data_radios[channel]
        if radio.state == "sleep":
            radio.set_state("listen")

    def _release(self, channel: ChannelId, already: int = 1) -> None:
        if already:
            self._sessions[channel] = max(0, self._sessions[channel] - 1)
        if self.always_on or self._sessions[channel] > 0:
            return
        radio = self.data_radios[channel]
        if radio.state == "listen" and not self._within_pattern():
            radio.set_state("sleep")

    def _within_pattern(self) -> bool:
        if self.pattern.fallback or not self.pattern.intervals:
            return False
        hyper = self.pattern.hyperperiod
        t = self.sim.now % hyper
        for s, e in self.pattern.intervals:
            if s <= t < e or s <= t + hyper < e:
                return True
        return False

    # ------------------------------------------------------------------ #
    # node: scheduled windows                                            #
    # ------------------------------------------------------------------ #

    def _view_occurrence_after(self, now: SimTime) -> SimTime:
        v = self.entry_view
        if v["offset"] > now:
            return v["offset"]
        k = (now - v["offset"]) // v["period"] + 1
        return v["offset"] + k * v["period"]

    def _schedule_next_window(self) -> None:
        occ = self._view_occurrence_after(self.sim.now)
        token = self._session
        self.sim.schedule_at(occ, "window_wake", self.target,
                             lambda: self._window_wake(occ, token))

    def _window_wake(self, occ: SimTime, token: int) -> None:
        if self.node.dead or token != self._session or self._emg_active:
            if not self.node.dead and token == self._session:
                self._schedule_next_window()
            return
        self._session += 1
        token = self._session
        self.radio.set_state("listen")
        beacon_air = self.medium.airtime_ticks(BEACON_BYTES, self.radio.channel)
        deadline = occ + beacon_air + self.guard + 500
        self.sim.schedule_at(deadline, "beacon_timeout",
                             self.target,
                             lambda: self._window_beacon_missed(token))

    def _window_beacon_missed(self, token: int) -> None:
        if token != self._session or self.node.dead or self._serving_window:
            return
        self.radio.set_state("sleep")  # retry at the next window
        self._schedule_next_window()

    def _on_window_beacon(self, frame: Frame) -> None:
        self._session += 1
        token = self._session
        new = frame.info.get("entry")
        if new and new != self.entry_view:
            self.entry_view = dict(new)  # disseminated table change
        self._window_end = frame.info["window_end"]
        self._serving_window = True
        if not len(self.queue):
            # stay reachable until the window closes, then sleep
            self.sim.schedule_at(self._window_end, "window_close",
                                 self.target,
                                 lambda: self._window_close(token))
            return
        self._window_send_next(token)

    def _window_close(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        self._serving_window = False
        self.radio.set_state("sleep")
        self._schedule_next_window()

    def _window_send_next(self, token: int) -> None:
        if token != self._session or self.node.dead:
            return
        if not len(self.queue):
            self._window_close(token)
            return
        mpdu = self.queue.peek()
        airtime = self.medium.airtime_ticks(mpdu.payload_bytes, self.radio.channel)
        cost = airtime + self.ack_wait_ticks(self.radio.channel)
        if self.sim.now + cost > self._window_end:
            self._window_close(token)  # carry over whatever is left
            return
        self.queue.remove(mpdu)
        self.in_service = mpdu
        self._retries = 0
        self._acked_send(self.radio, mpdu, token,
                         lambda ok, reason: self._window_sent(mpdu, ok, reason, token),
                         deadline=self._window_end)

    def _window_sent(self, mpdu: Mpdu, ok: bool, reason: str, token: int) -> None:
        if token != self._session:
            return
        self.in_service = None
        if not ok:
            if reason == "deadline":
                if not self.queue.push(mpdu):  # carry over to the next window
                    self.metrics.on_dropped(mpdu)
                self._window_close(token)
                return
            self.metrics.on_dropped(mpdu)
        self._window_send_next(token)

    # ------------------------------------------------------------------ #
    # acknowledged unicast with bounded retries (node side helper)       #
    # ------------------------------------------------------------------ #

    def _acked_send(self, radio, mpdu: Mpdu, token: int, done,
                    deadline: Optional[SimTime] = None) -> None:
        self._send_done = done
        frame = Frame.data(mpdu, self.node.node_id, self.network.link_dst(mpdu))

        def attempt():
            if token != self._session or self.node.dead:
                return
            if radio.state == "tx":
                self.sim.schedule(500, "tx_retry_wait",
                                  self.target, attempt)
                return
            self.medium.begin_tx(radio, frame, self.node.tx_power_dbm,
                                 on_result=lambda _o: wait_ack())

        def wait_ack():
            if token != self._session or self.node.dead:
                return
            self._ack_timer = self.sim.schedule(
                self.ack_wait_ticks(radio.channel), "ack_timeout",
                self.target, timeout)

        def timeout():
            if token != self._session or self.node.dead or self.in_service is not mpdu:
                return
            self._retries += 1
            retry_cost = (self.medium.airtime_ticks(mpdu.payload_bytes, radio.channel)
                          + self.ack_wait_ticks(radio.channel))
            if self._retries > self.retry_limit:
                done(False, "retries")
            elif deadline is not None and self.sim.now + retry_cost > deadline:
                done(False, "deadline")
            else:
                attempt()

        attempt()

    def _on_ack_frame(self, frame: Frame) -> None:
        if self.in_service is None or not self.is_ack_for_me(frame, self.in_service):
            return
        if self._ack_timer is not None:
            self.sim.cancel(self._ack_timer)
            self._ack_timer = None
        done = self._send_done
        self._send_done = None
        if done is not None:
            done(True, "acked")

    # ------------------------------------------------------------------ #
    # emergency: wakeup burst, grant, immediate access                   #
    # ------------------------------------------------------------------ #

    def enqueue(self, mpdu: Mpdu) -> None:
        if self.node.dead:
            return
        if mpdu.cls is TrafficClass.EMERGENCY and not self.is_coordinator:
            self._pending_emergencies.append(mpdu)
            if self._emg_active is None:
                self._start_emergency()
            return
        super().enqueue(mpdu)

    def pending_frames(self) -> list[Mpdu]:
        out = super().pending_frames()
        if not self.is_coordinator:
            out.extend(self._pending_emergencies)
            if self._emg_active is not None:
                out.append(self._emg_active)
        return out

    def _requeue_in_service(self) -> None:
        if self.in_service is not None:
            if not self.queue.push(self.in_service):
                self.metrics.on_dropped(self.in_service)
            self.in_service = None

    def _start_emergency(self) -> None:
        self._session += 1  # preempt any window service
        self._serving_window = False
        self._requeue_in_service()
        self._emg_active = self._pending_emergencies.pop(0)
        self._emg_tries = 0
        self._emergency_signal()

    def _emergency_signal(self) -> None:
        if self.node.dead or self._emg_active is None:
            return
        self._emg_tries += 1
        if self._emg_tries > self.max_tries:
            self.metrics.wakeup_failures += 1
            self.metrics.on_dropped(self._emg_active)
            self._finish_emergency()
            return
        token = self._session
        signal = Frame(FrameKind.WAKEUP, self.node.node_id,
                       self.network.bnc_id, 0,
                       info={"purpose": "Emergency"})
        self.medium.begin_tx(self.wakeup_tx, signal, self.node.tx_power_dbm,
                             airtime=self.signal_ticks,
                             on_result=lambda _o: armed(_o))

        def armed(_outcome):
            if token != self._session or self.node.dead:
                return
            self.wakeup_tx.set_state("sleep")
            self.radio.set_state("listen")  # await the grant
            # jitter wider than the signal itself so coincident emergencies
            # from different nodes desynchronize within a few retries
            jitter = self.rng.randrange(3 * self.signal_ticks)
            self.sim.schedule(self.retry_timeout + jitter, "grant_timeout",
                              self.target,
                              lambda: grant_timeout())

        def grant_timeout():
            if token != self._session or self.node.dead:
                return
            if self._emg_active is not None and self.in_service is None:
                self.radio.set_state("sleep")
                self._emergency_signal()

    def _on_grant(self, frame: Frame) -> None:
        if self._emg_active is None or self.in_service is not None:
            return
        self._session += 1
        token = self._session
        mpdu = self._emg_active
        self.in_service = mpdu
        self._retries = 0
        self._acked_send(self.radio, mpdu, token,
                         lambda ok, _reason: self._emergency_done(ok, token))

    def _emergency_done(self, ok: bool, token: int) -> None:
        if token != self._session:
            return
        mpdu = self._emg_active
        self.in_service = None
        if ok:
            self._finish_emergency()
        else:
            # grant exchange failed; fall back to another wakeup signal
            self.radio.set_state("sleep")
            self._emergency_signal()

    def _finish_emergency(self) -> None:
        self._session += 1
        self._emg_active = None
        self.radio.set_state("sleep")
        if self._pending_emergencies:
            self._start_emergency()
        elif self.entry_view:
            self._schedule_next_window()

    # coordinator side of the emergency path

    def _coord_on_emergency_signal(self, frame: Frame) -> None:
        src = frame.src
        channel = self.node_channels[src]
        self._acquire(channel)
        radio = self.data_radios[channel]

        def send_grant():
            if self.node.dead:
                return
            if radio.state == "tx":
                self.sim.schedule(500, "grant_wait", self.target,
                                  send_grant)
                return
            grant = Frame(FrameKind.GRANT, self.node.node_id, src, GRANT_BYTES)
            self.medium.begin_tx(radio, grant, self.node.tx_power_dbm)
            # hold the radio until the access completes, then re-sleep
            self.sim.schedule(self.retry_timeout, "session_release",
                              self.target,
                              lambda: self._release(channel))

        radio.set_state("rx")
        self.sim.schedule(TURNAROUND_US, "grant_tx", self.target,
                          send_grant)

    # ------------------------------------------------------------------ #
    # on-demand: coordinator-initiated wakeup                            #
    # ------------------------------------------------------------------ #

    def issue_request(self, request: OnDemandRequest,
                      addressing: str = "Tone") -> None:
        """Coordinator sends a wakeup signal and polls the target."""
        if not self.is_coordinator:
            raise RuntimeError("only the coordinator issues on-demand requests")
        if request.target not in self.node_channels:
            raise ValueError(f"unknown target node: {request.target}")
        tone = request.target if addressing == "Tone" else None
        channel = self.node_channels[request.target]
        self._acquire(channel)
        signal = Frame(FrameKind.WAKEUP, self.node.node_id, None, 0,
                       info={"purpose": "OnDemand", "tone": tone,
                             "target": request.target,
                             "mode": request.mode.value,
                             "duration": request.duration,
                             "period": request.stream_period})
        radio = self.data_radios[channel]

        def send_poll():
            if self.node.dead or radio.state == "tx":
                return
            poll = Frame(FrameKind.POLL, self.node.node_id, None, POLL_BYTES,
                         info={"target": request.target,
                               "mode": request.mode.value,
                               "duration": request.duration,
                               "period": request.stream_period})
            self.medium.begin_tx(radio, poll, self.node.tx_power_dbm)
            hold = request.duration + 200_000
            self.sim.schedule(hold, "session_release",
                              self.target,
                              lambda: self._release(channel))

        def after_signal(_outcome):
            self.sim.schedule(TURNAROUND_US, "poll_tx",
                              self.target, send_poll)
            self.wakeup_tx.set_state("sleep")

        self.medium.begin_tx(self.wakeup_tx, signal, self.node.tx_power_dbm,
                             airtime=self.signal_ticks, on_result=after_signal)

    def _on_wakeup_signal(self, frame: Frame, tx) -> None:
        if frame.kind is not FrameKind.WAKEUP:
            return
        purpose = frame.info.get("purpose")
        if self.is_coordinator:
            if purpose == "Emergency":
                self._coord_on_emergency_signal(frame)
            return
        if purpose != "OnDemand":
            return
        tone = frame.info.get("tone")
        if tone is not None and tone != self.node.node_id:
            return  # tone-addressed elsewhere; the receiver filters it out
        # broadcast or our tone: power the data radio and wait for the poll
        self._session += 1
        token = self._session
        self._serving_window = False
        self._requeue_in_service()
        self.radio.set_state("listen")
        self._od_req = dict(frame.info)

        def poll_timeout():
            if token != self._session or self.node.dead:
                return
            self._od_req = None
            self.radio.set_state("sleep")
            if self.entry_view:
                self._schedule_next_window()

        self.sim.schedule(self.signal_ticks + POLL_WAIT_US, "poll_timeout",
                          self.target, poll_timeout)

    def _on_poll(self, frame: Frame) -> None:
        if self.is_coordinator or self._od_req is None:
            return
        self._session += 1
        token = self._session
        if frame.info["target"] != self.node.node_id:
            # woke for someone else's request: pay the price and go back down
            self._od_req = None
            self.radio.set_state("sleep")
            if self.entry_view:
                self._schedule_next_window()
            return
        request = OnDemandRequest(
            target=self.node.node_id,
            mode=OnDemandMode(frame.info["mode"]),
            duration=frame.info["duration"],
            stream_period=frame.info["period"])
        offsets = request.response_offsets()
        base = self.sim.now + TURNAROUND_US

        def send_kth(k: int):
            if token != self._session or self.node.dead:
                return
            if k >= len(offsets):
                self._od_req = None
                self.radio.set_state("sleep")
                if self.entry_view:
                    self._schedule_next_window()
                return
            mpdu = self.network.new_mpdu(self.node.node_id, self.network.bnc_id,
                                         request.cls)
            self.in_service = mpdu
            self._retries = 0
            self._acked_send(self.radio, mpdu, token,
                             lambda ok, _reason: next_one(k, ok, mpdu))

        def next_one(k: int, ok: bool, mpdu: Mpdu):
            self.in_service = None
            if not ok:
                self.metrics.on_dropped(mpdu)
            nxt = k + 1
            if nxt < len(offsets):
                at = max(self.sim.now, base + offsets[nxt])
                self.sim.schedule_at(at, "od_stream",
                                     self.target,
                                     lambda: send_kth(nxt))
            else:
                send_kth(nxt)

        self.sim.schedule_at(base, "od_start", self.target,
                             lambda: send_kth(0))

    # ------------------------------------------------------------------ #
    # reception                                                          #
    # ------------------------------------------------------------------ #

    def _on_frame(self, frame: Frame, tx) -> None:
        kind = frame.kind
        if kind is FrameKind.DATA:
            if frame.link_dst == self.node.node_id:
                radio = self.radio_for(frame.src) if self.is_coordinator else self.radio
                self.network.handle_data_delivery(self.node, frame.mpdu)
                self.send_ack_after_turnaround(radio, frame.src, frame.mpdu)
        elif kind is FrameKind.BEACON:
            if not self.is_coordinator and frame.link_dst == self.node.node_id:
                self._on_window_beacon(frame)
        elif kind is FrameKind.GRANT:
            if not self.is_coordinator and frame.link_dst == self.node.node_id:
                self._on_grant(frame)
        elif kind is FrameKind.ACK:
            self._on_ack_frame(frame)
        elif kind is FrameKind.POLL:
            self._on_poll(frame)

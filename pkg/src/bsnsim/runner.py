"""Network assembly and replication driver.

One run = one seeded Simulator, one Medium, one Node+MAC per scenario node,
traffic sources, and optional bridge wiring. Replications are fully
independent and may execute in parallel worker processes; results merge in
seed order either way.
"""

from __future__ import annotations

import multiprocessing
from typing import Optional

from .bridging import BridgeState, ChannelMap, Direct, ViaBridge
from .channel import DeliveryOutcome, Medium
from .core import Simulator, ticks_from_seconds
from .frames import Frame, FrameKind, Mpdu
from .mac import mac_class
from .mac.base import TURNAROUND_US
from .metrics import RunMetrics, aggregate
from .node import Node
from .scenario import Scenario, load_link_matrix
from .traffic import (OnDemandMode, OnDemandRequest, TrafficClass, TrafficSpec,
                      next_emergency, next_normal_arrival)
from .wakeup import TableAction, WakeupTable, table_update


class BridgePump:
    """Drains the bridge store onto egress radios, one frame at a time."""

    def __init__(self, network, node, state: BridgeState, radios: dict):
        self.network = network
        self.node = node
        self.state = state
        self.radios = radios  # ChannelId -> Radio
        self._current: Optional[Mpdu] = None

    def accept(self, mpdu: Mpdu, egress) -> None:
        if not self.state.accept(mpdu, egress):
            self.network.metrics.bridge_drops += 1
            self.network.metrics.on_dropped(mpdu)
            return
        self.pump()

    def pump(self) -> None:
        if self._current is not None or self.node.dead:
            return
        nxt = self.state.next_out()
        if nxt is None:
            return
        _, egress = nxt
        radio = self.radios[egress]
        if radio.state == "tx":
            return  # retried when the current transmission ends
        mpdu, egress = self.state.pop_forwarded()
        self._current = mpdu
        frame = Frame.data(mpdu, self.node.node_id, mpdu.dst)

        def done(outcome):
            self._current = None
            if outcome is not DeliveryOutcome.DELIVERED:
                self.network.metrics.on_dropped(mpdu)
            self.pump()

        self.network.sim.schedule(TURNAROUND_US, "bridge_fwd",
                                  f"node:{self.node.node_id}",
                                  lambda: self._tx(radio, frame, done))

    def _tx(self, radio, frame, done) -> None:
        if self.node.dead:
            return
        self.network.medium.begin_tx(radio, frame, self.node.tx_power_dbm,
                                     on_result=done)

    def pending(self) -> list[Mpdu]:
        out = [m for m, _ in self.state.store]
        if self._current is not None:
            out.append(self._current)
        return out


class Network:
    """Shared run context handed to every MAC."""

    def __init__(self, sim: Simulator, medium: Medium, scenario: Scenario,
                 metrics: RunMetrics):
        self.sim = sim
        self.medium = medium
        self.scenario = scenario
        self.metrics = metrics
        self.bnc_id = scenario.bnc
        self.nodes: dict[str, Node] = {}
        self.coordinator_mac = None
        self.channel_map: Optional[ChannelMap] = None
        self.bridge_pump: Optional[BridgePump] = None
        self._seqs: dict[str, int] = {}

    def new_mpdu(self, src: str, dst: str, cls: TrafficClass,
                 payload_bytes: int = 128) -> Mpdu:
        seq = self._seqs.get(src, 0)
        self._seqs[src] = seq + 1
        mpdu = Mpdu(seq=seq, src=src, dst=dst, cls=cls,
                    payload_bytes=payload_bytes, created_at=self.sim.now)
        self.metrics.on_generated(mpdu)
        return mpdu

    def link_dst(self, mpdu: Mpdu) -> str:
        """First-hop link destination for a frame leaving its source."""
        if self.channel_map is None:
            return mpdu.dst
        route = self.channel_map.lookup_route(mpdu.src, mpdu.dst)
        if isinstance(route, ViaBridge):
            return route.bridge
        if isinstance(route, Direct):
            return mpdu.dst
        raise RuntimeError(f"no route {mpdu.src} -> {mpdu.dst}")

    def handle_data_delivery(self, node: Node, mpdu: Mpdu) -> None:
        if mpdu.dst == node.node_id:
            self.metrics.on_delivered(mpdu, self.sim.now)
            return
        if (self.bridge_pump is not None
                and node.node_id == self.bridge_pump.node.node_id):
            route = self.channel_map.lookup_route(mpdu.src, mpdu.dst)
            if isinstance(route, ViaBridge):
                self.bridge_pump.accept(mpdu, route.egress)


def _tdma_schedule(scenario: Scenario, cfg: dict, medium: Medium):
    from .mac.tdma import TdmaSchedule
    slot = ticks_from_seconds(cfg.get("slot_ms", 10.0) / 1000.0)
    preamble = ticks_from_seconds(cfg.get("preamble_ms", 10.0) / 1000.0)
    others = [n.id for n in scenario.nodes if n.id != scenario.bnc]
    assignment = cfg.get("assignment") or {
        i: nid for i, nid in enumerate(sorted(others))}
    assignment = {int(k): v for k, v in assignment.items()}
    data_ch = scenario.channel_id(scenario.node(others[0]).channel)
    need = TURNAROUND_US + medium.airtime_ticks(128, data_ch)
    if slot < need:
        raise ValueError(f"TDMA slot {slot} us cannot fit a frame ({need} us)")
    return TdmaSchedule(slot_ticks=slot, preamble_ticks=preamble,
                        assignment=assignment)


def _build_mac_cfg(scenario: Scenario, protocol: str, node_spec,
                   medium: Medium) -> dict:
    cfg = dict(scenario.protocols.get(protocol, {}))
    cm = scenario.channel_model
    cfg.setdefault("queue_capacity", scenario.queue_capacity)
    cfg.setdefault("cca_threshold_dbm", cm["cca_threshold_dbm"])
    cfg["channel"] = scenario.channel_id(node_spec.channel)
    if protocol in ("smac",):
        cfg["cycle_ticks"] = ticks_from_seconds(cfg.pop("cycle_s", 1.0))
    if protocol in ("tbw", "tbw_alwayson"):
        cfg["guard_us"] = ticks_from_seconds(cfg.pop("guard_ms", 2.0) / 1000.0)
        cfg["wakeup_signal_us"] = ticks_from_seconds(
            cfg.pop("wakeup_signal_ms", 10.0) / 1000.0)
        cfg["wakeup_retry_us"] = ticks_from_seconds(
            cfg.pop("wakeup_retry_ms", 50.0) / 1000.0)
        if protocol == "tbw_alwayson":
            cfg["bnc_always_on"] = True
        wk = scenario.wakeup_channel
        if wk is None:
            raise ValueError("tbw requires a wakeup_channel in the scenario")
        cfg["wakeup_channel"] = scenario.channel_id(wk)
        cfg["node_channels"] = {
            n.id: scenario.channel_id(n.channel) for n in scenario.nodes
            if n.id != scenario.bnc}
    return cfg


def build_network(scenario: Scenario, protocol: str, seed: int, *,
                  trace: bool = False, keep_tx_log: bool = False):
    sim = Simulator(master_seed=seed, trace=trace)
    cm = scenario.channel_model
    link_matrix = load_link_matrix(scenario)
    pathloss = {scenario.channel_id(k): p for k, p in scenario.pathloss.items()}
    data_rates = {cid: scenario.channel_cfg[key]["data_rate_bps"]
                  for key, cid in scenario.channels.items()}
    medium = Medium(
        sim, mode=cm["mode"], pathloss=pathloss, link_matrix=link_matrix,
        posture=cm["posture"],
        interference_enabled=cm["interference"]["enabled"],
        interference_pass_p=cm["interference"]["pass_probability"],
        capture_margin_db=cm["capture_margin_db"],
        sensitivity_dbm=cm["sensitivity_dbm"],
        min_distance_m=cm["min_distance_m"], data_rates=data_rates,
        keep_tx_log=keep_tx_log)
    metrics = RunMetrics(seed, protocol, scenario.horizon)
    network = Network(sim, medium, scenario, metrics)

    profile_key = scenario.protocol_profiles.get(protocol, "nrf2401")
    tdma_schedule = None
    if protocol == "pbtdma":
        tdma_schedule = _tdma_schedule(
            scenario, scenario.protocols.get(protocol, {}), medium)

    # wakeup table for the coordinator
    table = None
    if protocol in ("tbw", "tbw_alwayson"):
        table = WakeupTable(owner=scenario.bnc)
        for entry in scenario.wakeup_table:
            table_update(table, entry, TableAction.INSERT, caller=scenario.bnc)

    macs = []
    coordinator_spec = scenario.node(scenario.bnc)
    ordered = [coordinator_spec] + [n for n in scenario.nodes
                                    if n.id != scenario.bnc]
    for spec in ordered:
        profile = scenario.power_profiles[spec.profile or profile_key]
        node = Node(sim, medium, spec.id, site=spec.site, kind=spec.kind,
                    position=spec.position, profile=profile,
                    initial_j=spec.initial_j, tx_power_dbm=spec.tx_power_dbm,
                    horizon_hint=scenario.horizon)
        network.nodes[spec.id] = node
        cfg = _build_mac_cfg(scenario, protocol, spec, medium)
        if tdma_schedule is not None:
            cfg["schedule"] = tdma_schedule
        if table is not None and spec.id == scenario.bnc:
            cfg["table"] = table
        if protocol in ("tbw", "tbw_alwayson") and spec.id != scenario.bnc:
            entry = next((e for e in scenario.wakeup_table
                          if e.node == spec.id), None)
            if entry is not None:
                cfg["entry"] = {"period": entry.period, "offset": entry.offset,
                                "window": entry.window}
        mac = mac_class(protocol)(sim, medium, node, network, cfg)
        macs.append(mac)
        if spec.id == scenario.bnc:
            network.coordinator_mac = mac

    # bridge wiring
    if scenario.bridge is not None:
        bnode = network.nodes[scenario.bridge["node"]]
        ifaces = [scenario.channel_id(k) for k in scenario.bridge["interfaces"]]
        state = BridgeState(bnode.node_id, ifaces,
                            capacity=scenario.bridge["store_capacity"])
        network.channel_map = ChannelMap(
            inbody_nodes={n.id for n in scenario.nodes if n.kind == "inbody"},
            bridge_nodes={bnode.node_id})
        for record in scenario.channel_map:
            network.channel_map.register(record)
        radios = {}
        for cid in ifaces:
            existing = next((r for r in bnode.radios.values()
                             if r.channel == cid and r.label != "wakeup_rx"
                             and r.label != "wakeup_tx"), None)
            if existing is None:
                key = scenario.channel_key(cid)
                existing = bnode.add_radio(f"bridge:{key}", cid,
                                           initial_state="listen")

                def _mk(node):
                    def _rx(frame, tx):
                        if (frame.kind is FrameKind.DATA
                                and frame.link_dst == node.node_id):
                            network.handle_data_delivery(node, frame.mpdu)
                    return _rx

                existing.on_frame = _mk(bnode)
            radios[cid] = existing
        network.bridge_pump = BridgePump(network, bnode, state, radios)

    for mac in macs:
        mac.start()
    _schedule_traffic(network)
    return network, macs


def _schedule_traffic(network: Network) -> None:
    sim = network.sim
    scenario = network.scenario
    horizon = scenario.horizon

    def arm(spec: TrafficSpec) -> None:
        if spec.cls is TrafficClass.EMERGENCY:
            rng = sim.stream(f"traffic:{spec.node}")
            t = next_emergency(spec.rate_per_s, rng, sim.now)
            kind = "traffic_emergency"
        else:
            t = next_normal_arrival(spec, sim.now)
            kind = "traffic_arrival"
        if t is None or t > horizon:
            return

        def fire():
            if network.nodes[spec.node].dead:
                return  # dead nodes generate nothing
            mpdu = network.new_mpdu(spec.node, spec.dst, spec.cls,
                                    spec.payload_bytes)
            network.nodes[spec.node].mac.enqueue(mpdu)
            arm(spec)

        sim.schedule_at(t, kind, f"node:{spec.node}", fire)

    for spec in scenario.traffic:
        arm(spec)

    for od in scenario.on_demand:
        at = ticks_from_seconds(od["at_s"])
        if at > horizon:
            continue
        request = OnDemandRequest(
            target=od["target"], mode=OnDemandMode(od["mode"]),
            duration=ticks_from_seconds(od["duration_s"]),
            stream_period=ticks_from_seconds(od["period_s"]))
        sim.schedule_at(
            at, "on_demand", f"node:{scenario.bnc}",
            lambda request=request, od=od: network.coordinator_mac.issue_request(
                request, od["addressing"]))


def run_one(scenario: Scenario, protocol: str, seed: int, *,
            trace: bool = False, keep_tx_log: bool = False) -> RunMetrics:
    network, macs = build_network(scenario, protocol, seed, trace=trace,
                                  keep_tx_log=keep_tx_log)
    sim = network.sim
    sim.run(scenario.horizon)
    metrics = network.metrics
    leftovers: list[Mpdu] = []
    for mac in macs:
        leftovers.extend(mac.pending_frames())
    if network.bridge_pump is not None:
        leftovers.extend(network.bridge_pump.pending())
    for node in network.nodes.values():
        node.finalize()
        metrics.node_energy_j[node.node_id] = node.consumed_j(flush=False)
        metrics.node_death_us[node.node_id] = node.death_time
    metrics.collisions = network.medium.data_collisions
    metrics.finalize(leftovers)
    if trace:
        metrics.trace_lines = list(sim.trace_lines)
    if keep_tx_log:
        metrics.tx_log = list(network.medium.tx_log)
    return metrics


def _pool_run(args):
    scenario, protocol, seed = args
    return run_one(scenario, protocol, seed)


def run_replications(scenario: Scenario, protocol: str,
                     reps: Optional[int] = None,
                     seeds: Optional[list[int]] = None,
                     workers: int = 1) -> list[RunMetrics]:
    if seeds is None:
        seeds = scenario.seeds(reps)
    jobs = [(scenario, protocol, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, len(jobs))) as pool:
            return pool.map(_pool_run, jobs)
    return [run_one(scenario, protocol, s) for s in seeds]


def compare_protocols(scenario: Scenario, protocols: list[str],
                      reps: Optional[int] = None, workers: int = 1) -> dict:
    """Paired-seed comparison; returns per-protocol runs and aggregates."""
    if len(protocols) < 2:
        raise ValueError("need >= 2 protocols to compare")
    seeds = scenario.seeds(reps)
    out = {"seeds": seeds, "runs": {}, "aggregates": {}, "ordering": []}
    jobs = [(scenario, protocol, s) for protocol in protocols for s in seeds]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, len(jobs))) as pool:
            results = pool.map(_pool_run, jobs, chunksize=1)
    else:
        results = [run_one(*job) for job in jobs]
    for i, protocol in enumerate(protocols):
        runs = results[i * len(seeds):(i + 1) * len(seeds)]
        out["runs"][protocol] = runs
        out["aggregates"][protocol] = aggregate(runs)
    shared = None
    for agg in out["aggregates"].values():
        keys = set(agg.stats)
        shared = keys if shared is None else shared & keys
    for key in sorted(shared):
        ranked = sorted(protocols,
                        key=lambda p: out["aggregates"][p].stats[key].mean,
                        reverse=True)
        line = f"{key[0]}[{key[1]}]: " + " > ".join(
            f"{p}={out['aggregates'][p].stats[key].mean:.6g}" for p in ranked)
        out["ordering"].append(line)
    return out

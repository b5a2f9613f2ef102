"""Discrete-event SDN switch simulation.

Each registered device owns an ordered flow table of concrete entries.
Packets are matched against the highest-priority entry (first-inserted wins
on ties), counters accumulate per entry, mirror-action hits produce mirror
events, and DNS answers seen on mirrored replies instantiate pending
reactive templates. Reactive entries (DNS-bound service rules, stage-3
microflows) expire on idle timeouts; MUD-derived proactive rules are
permanent.

Timestamps are integer microseconds. Counter polling happens on a minutely
cadence and yields per-flow-id deltas (entries sharing a flow id, e.g. the
per-IP instances of one reactive rule, are aggregated).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .errors import NoDeviceError, TableFullError
from .mud import (
    Action,
    Binding,
    FlowRuleTemplate,
    MatchSpec,
    PRIORITY_BLOCK,
    PRIORITY_MICROFLOW,
    RuleRole,
)

US_PER_SEC = 1_000_000
US_PER_MIN = 60 * US_PER_SEC

MISS_FLOW_ID = "_miss"


class Origin(str, Enum):
    MUD_PROACTIVE = "mud_proactive"
    MUD_REACTIVE_DNS = "mud_reactive_dns"
    STAGE3_MICROFLOW = "stage3_microflow"
    MITIGATION_BLOCK = "mitigation_block"


@dataclass(frozen=True, slots=True)
class DnsAnswer:
    domain: str
    ips: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class DhcpInfo:
    mac: str
    ip: str
    mud_url: str | None = None


@dataclass(frozen=True, slots=True)
class ArpInfo:
    sender_ip: str
    sender_mac: str
    op: int  # 1 request, 2 reply


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts: int  # microseconds
    src_mac: str
    dst_mac: str
    eth_type: int
    length: int
    src_ip: str | None = None
    dst_ip: str | None = None
    proto: int | None = None
    src_port: int | None = None
    dst_port: int | None = None
    icmp_type: int | None = None
    icmp_code: int | None = None
    payload_hint: DnsAnswer | DhcpInfo | ArpInfo | None = None

    def to_json(self) -> dict:
        d = {"ts": self.ts, "src_mac": self.src_mac, "dst_mac": self.dst_mac,
             "eth_type": self.eth_type, "length": self.length}
        for k in ("src_ip", "dst_ip", "proto", "src_port", "dst_port",
                  "icmp_type", "icmp_code"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        hint = self.payload_hint
        if isinstance(hint, DnsAnswer):
            d["payload"] = {"kind": "dns_answer", "domain": hint.domain, "ips": list(hint.ips)}
        elif isinstance(hint, DhcpInfo):
            d["payload"] = {"kind": "dhcp", "mac": hint.mac, "ip": hint.ip,
                            "mud_url": hint.mud_url}
        elif isinstance(hint, ArpInfo):
            d["payload"] = {"kind": "arp", "sender_ip": hint.sender_ip,
                            "sender_mac": hint.sender_mac, "op": hint.op}
        return d

    @staticmethod
    def from_json(d: dict) -> "PacketRecord":
        hint = None
        payload = d.get("payload")
        if payload:
            kind = payload["kind"]
            if kind == "dns_answer":
                hint = DnsAnswer(payload["domain"], tuple(payload["ips"]))
            elif kind == "dhcp":
                hint = DhcpInfo(payload["mac"], payload["ip"], payload.get("mud_url"))
            elif kind == "arp":
                hint = ArpInfo(payload["sender_ip"], payload["sender_mac"], payload["op"])
        return PacketRecord(
            ts=d["ts"], src_mac=d["src_mac"], dst_mac=d["dst_mac"],
            eth_type=d["eth_type"], length=d["length"],
            src_ip=d.get("src_ip"), dst_ip=d.get("dst_ip"), proto=d.get("proto"),
            src_port=d.get("src_port"), dst_port=d.get("dst_port"),
            icmp_type=d.get("icmp_type"), icmp_code=d.get("icmp_code"),
            payload_hint=hint)


@dataclass(frozen=True, slots=True)
class FiveTuple:
    src_ip: str
    dst_ip: str
    proto: int
    src_port: int | None
    dst_port: int | None

    def __str__(self) -> str:
        sp = "" if self.src_port is None else self.src_port
        dp = "" if self.dst_port is None else self.dst_port
        return f"{self.src_ip}:{sp}>{self.dst_ip}:{dp}/{self.proto}"

    @staticmethod
    def of(pkt: PacketRecord) -> "FiveTuple":
        return FiveTuple(pkt.src_ip or "?", pkt.dst_ip or "?", pkt.proto or 0,
                         pkt.src_port, pkt.dst_port)


@dataclass(slots=True)
class FlowEntry:
    flow_id: str
    match: MatchSpec
    priority: int
    action: Action
    origin: Origin
    idle_timeout_sec: int | None = None
    packet_count: int = 0
    byte_count: int = 0
    last_hit: int = 0  # microseconds
    inserted_at: int = 0
    seq: int = 0
    # Polling bookkeeping
    polled_packets: int = 0
    polled_bytes: int = 0

    def expired(self, now: int) -> bool:
        return (self.idle_timeout_sec is not None
                and now - self.last_hit > self.idle_timeout_sec * US_PER_SEC)


@dataclass(frozen=True, slots=True)
class FlowCounterRecord:
    ts_min: int
    device_id: str
    flow_id: str
    packets: int
    bytes: int


@dataclass(frozen=True, slots=True)
class MatchResult:
    device_id: str
    flow_id: str
    action: Action


@dataclass(frozen=True, slots=True)
class Disposition:
    matches: tuple[MatchResult, ...]
    forwarded: bool
    mirrored: bool

    @property
    def matched_flow_id(self) -> str | None:
        return self.matches[0].flow_id if self.matches else None


class _DeviceTable:
    """Flow table plus reactive-template registry for one device."""

    def __init__(self, device_id: str, mac: str, tcam_capacity: int):
        self.device_id = device_id
        self.mac = mac
        self.tcam_capacity = tcam_capacity
        self.entries: list[FlowEntry] = []  # kept sorted: (-priority, seq)
        self.reactive_templates: list[FlowRuleTemplate] = []
        self.microflow_index: dict[tuple[str, FiveTuple], FlowEntry] = {}
        self.miss_packets = 0
        self.miss_bytes = 0
        self._miss_polled = (0, 0)
        # Un-polled deltas of entries removed between polls, so counter
        # conservation survives expiry and microflow teardown.
        self.residual: dict[str, tuple[int, int]] = {}
        self._seq = 0

    def bank_residual(self, entry: FlowEntry) -> None:
        dp = entry.packet_count - entry.polled_packets
        db = entry.byte_count - entry.polled_bytes
        if dp or db:
            p, b = self.residual.get(entry.flow_id, (0, 0))
            self.residual[entry.flow_id] = (p + dp, b + db)

    def add_entry(self, entry: FlowEntry) -> None:
        entry.seq = self._seq
        self._seq += 1
        self.entries.append(entry)
        self.entries.sort(key=lambda e: (-e.priority, e.seq))

    def reactive_count(self) -> int:
        return sum(1 for e in self.entries
                   if e.origin in (Origin.STAGE3_MICROFLOW, Origin.MUD_REACTIVE_DNS))

    def lookup(self, pkt: PacketRecord) -> FlowEntry | None:
        for entry in self.entries:
            if entry.match.matches(pkt):
                return entry
        return None


class SwitchSim:
    """Per-device match-action flow tables with mirroring and telemetry.

    ``on_mirror`` callbacks receive ``(device_id, flow_id, pkt)`` for every
    mirrored packet; ``on_dhcp`` receives DHCP payload hints regardless of
    rule actions (identity snooping happens on the bootstrap path, before
    and independent of MUD rules).
    """

    def __init__(self, tcam_capacity: int = 1024,
                 reactive_idle_sec: int = 120,
                 microflow_idle_sec: int = 60):
        self.tcam_capacity = tcam_capacity
        self.reactive_idle_sec = reactive_idle_sec
        self.microflow_idle_sec = microflow_idle_sec
        self.tables: dict[str, _DeviceTable] = {}
        self.mac_to_device: dict[str, str] = {}
        self.dns_cache: dict[str, set[str]] = {}
        self.on_mirror: list[Callable[[str, str, PacketRecord], None]] = []
        self.on_dhcp: list[Callable[[DhcpInfo, PacketRecord], None]] = []
        self.dropped_packets = 0
        self.total_packets = 0
        self.mirrored_packets = 0

    # -- setup ------------------------------------------------------------

    def register_device(self, device_id: str, mac: str,
                        templates: Iterable[FlowRuleTemplate]) -> None:
        mac = mac.lower()
        table = _DeviceTable(device_id, mac, self.tcam_capacity)
        for tpl in templates:
            if tpl.binding is Binding.REACTIVE_DNS:
                table.reactive_templates.append(tpl)
            else:
                table.add_entry(FlowEntry(
                    flow_id=tpl.flow_id, match=tpl.match, priority=tpl.priority,
                    action=tpl.action, origin=Origin.MUD_PROACTIVE))
        self.tables[device_id] = table
        self.mac_to_device[mac] = device_id

    def device_for_mac(self, mac: str) -> str | None:
        return self.mac_to_device.get(mac)

    # -- packet path ------------------------------------------------------

    def process_packet(self, pkt: PacketRecord, now: int | None = None) -> Disposition:
        now = pkt.ts if now is None else now
        self.total_packets += 1

        if isinstance(pkt.payload_hint, DhcpInfo):
            for cb in self.on_dhcp:
                cb(pkt.payload_hint, pkt)

        device_ids = []
        src_dev = self.mac_to_device.get(pkt.src_mac)
        dst_dev = self.mac_to_device.get(pkt.dst_mac)
        if src_dev is not None:
            device_ids.append(src_dev)
        if dst_dev is not None and dst_dev != src_dev:
            device_ids.append(dst_dev)
        if not device_ids:
            self.dropped_packets += 1
            raise NoDeviceError(f"no registered device for {pkt.src_mac}->{pkt.dst_mac}")

        matches = []
        forwarded = True
        mirrored = False
        for device_id in device_ids:
            table = self.tables[device_id]
            entry = table.lookup(pkt)
            if entry is None:
                table.miss_packets += 1
                table.miss_bytes += pkt.length
                matches.append(MatchResult(device_id, MISS_FLOW_ID, Action.FORWARD))
                continue
            entry.packet_count += 1
            entry.byte_count += pkt.length
            entry.last_hit = now
            matches.append(MatchResult(device_id, entry.flow_id, entry.action))
            if entry.action is Action.BLOCK:
                forwarded = False
            elif entry.action is Action.FORWARD_AND_MIRROR:
                mirrored = True
                self.mirrored_packets += 1
                for cb in self.on_mirror:
                    cb(device_id, entry.flow_id, pkt)

        if mirrored and isinstance(pkt.payload_hint, DnsAnswer):
            self.handle_dns_answer(pkt.payload_hint.domain, pkt.payload_hint.ips, now)

        return Disposition(tuple(matches), forwarded, mirrored)

    # -- reactive insertion -----------------------------------------------

    def handle_dns_answer(self, domain: str, ips: Iterable[str], now: int) -> list[FlowEntry]:
        """Instantiate matching reactive templates, one entry per resolved IP.

        Idempotent: an already-live (flow_id, ip) instance is refreshed, not
        duplicated. Unknown domains only update the cache.
        """
        ips = list(ips)
        self.dns_cache.setdefault(domain, set()).update(ips)
        inserted: list[FlowEntry] = []
        for table in self.tables.values():
            for tpl in table.reactive_templates:
                tpl_domain = tpl.match.src_domain or tpl.match.dst_domain
                if tpl_domain != domain:
                    continue
                for ip in ips:
                    if tpl.match.src_domain:
                        concrete = MatchSpec(**{**tpl.match.__dict__,
                                                "src_ip": ip, "src_domain": None})
                    else:
                        concrete = MatchSpec(**{**tpl.match.__dict__,
                                                "dst_ip": ip, "dst_domain": None})
                    live = next((e for e in table.entries
                                 if e.flow_id == tpl.flow_id and e.match == concrete), None)
                    if live is not None:
                        live.last_hit = now
                        continue
                    entry = FlowEntry(
                        flow_id=tpl.flow_id, match=concrete, priority=tpl.priority,
                        action=tpl.action, origin=Origin.MUD_REACTIVE_DNS,
                        idle_timeout_sec=self.reactive_idle_sec,
                        last_hit=now, inserted_at=now)
                    table.add_entry(entry)
                    inserted.append(entry)
        return inserted

    def insert_microflow(self, device_id: str, five_tuple: FiveTuple,
                         parent_flow_id: str, now: int) -> FlowEntry:
        """Install a highest-priority 5-tuple entry to stop per-packet mirroring.

        Raises TableFullError once the reactive entry count reaches capacity;
        sustained insertion pressure is itself a distributed-attack signal.
        """
        table = self.tables[device_id]
        key = (parent_flow_id, five_tuple)
        live = table.microflow_index.get(key)
        if live is not None:
            live.last_hit = now
            return live
        if table.reactive_count() >= table.tcam_capacity:
            raise TableFullError(
                f"{device_id}: reactive capacity {table.tcam_capacity} reached")
        match = MatchSpec(
            eth_type=0x0800, src_ip=five_tuple.src_ip, dst_ip=five_tuple.dst_ip,
            proto=five_tuple.proto, src_port=five_tuple.src_port,
            dst_port=five_tuple.dst_port)
        entry = FlowEntry(
            flow_id=f"{parent_flow_id}~{five_tuple}", match=match,
            priority=PRIORITY_MICROFLOW, action=Action.FORWARD,
            origin=Origin.STAGE3_MICROFLOW,
            idle_timeout_sec=self.microflow_idle_sec,
            last_hit=now, inserted_at=now)
        table.add_entry(entry)
        table.microflow_index[key] = entry
        return entry

    def insert_block(self, device_id: str, match: MatchSpec, label: str,
                     now: int) -> FlowEntry:
        table = self.tables[device_id]
        entry = FlowEntry(
            flow_id=f"block:{label}", match=match, priority=PRIORITY_BLOCK,
            action=Action.BLOCK, origin=Origin.MITIGATION_BLOCK,
            last_hit=now, inserted_at=now)
        table.add_entry(entry)
        return entry

    def remove_microflows(self, device_id: str, parent_flow_ids: set[str] | None = None
                          ) -> list[str]:
        """Drop stage-3 microflow entries (all, or those under given parents)."""
        table = self.tables[device_id]
        removed = []
        kept = []
        for entry in table.entries:
            if entry.origin is Origin.STAGE3_MICROFLOW:
                parent = entry.flow_id.split("~", 1)[0]
                if parent_flow_ids is None or parent in parent_flow_ids:
                    removed.append(entry.flow_id)
                    table.bank_residual(entry)
                    continue
            kept.append(entry)
        table.entries = kept
        table.microflow_index = {k: v for k, v in table.microflow_index.items()
                                 if v in kept}
        return removed

    def set_flow_action(self, device_id: str, flow_ids: Iterable[str],
                        action: Action) -> None:
        flow_ids = set(flow_ids)
        for entry in self.tables[device_id].entries:
            if entry.flow_id in flow_ids:
                entry.action = action
        for tpl_list in (self.tables[device_id].reactive_templates,):
            for i, tpl in enumerate(tpl_list):
                if tpl.flow_id in flow_ids:
                    tpl_list[i] = FlowRuleTemplate(
                        tpl.flow_id, tpl.match, tpl.priority, action,
                        tpl.binding, tpl.role, tpl.group, tpl.scope)

    # -- maintenance ------------------------------------------------------

    def expire_idle(self, now: int) -> list[tuple[str, str]]:
        """Remove idle-timed-out entries; returns (device_id, flow_id) pairs."""
        removed = []
        for device_id, table in self.tables.items():
            live = []
            for entry in table.entries:
                if entry.expired(now):
                    removed.append((device_id, entry.flow_id))
                    table.bank_residual(entry)
                else:
                    live.append(entry)
            if len(live) != len(table.entries):
                table.entries = live
                table.microflow_index = {k: v for k, v in table.microflow_index.items()
                                         if not v.expired(now)}
        return removed

    def poll_counters(self, ts_min: int) -> list[FlowCounterRecord]:
        """Per-flow-id counter deltas since the previous poll.

        Every known flow id is reported each poll (zero deltas included);
        entries sharing one flow id are aggregated.
        """
        records: list[FlowCounterRecord] = []
        for device_id, table in self.tables.items():
            per_flow: dict[str, tuple[int, int]] = {}
            for entry in table.entries:
                dp = entry.packet_count - entry.polled_packets
                db = entry.byte_count - entry.polled_bytes
                entry.polled_packets = entry.packet_count
                entry.polled_bytes = entry.byte_count
                p, b = per_flow.get(entry.flow_id, (0, 0))
                per_flow[entry.flow_id] = (p + dp, b + db)
            for flow_id, (rp, rb) in table.residual.items():
                p, b = per_flow.get(flow_id, (0, 0))
                per_flow[flow_id] = (p + rp, b + rb)
            table.residual = {}
            # Reactive rules awaiting DNS bindings still report zero deltas.
            for tpl in table.reactive_templates:
                per_flow.setdefault(tpl.flow_id, (0, 0))
            for flow_id, (p, b) in per_flow.items():
                records.append(FlowCounterRecord(ts_min, device_id, flow_id, p, b))
            mp, mb = table._miss_polled
            dmp, dmb = table.miss_packets - mp, table.miss_bytes - mb
            table._miss_polled = (table.miss_packets, table.miss_bytes)
            if dmp:
                records.append(FlowCounterRecord(ts_min, device_id, MISS_FLOW_ID, dmp, dmb))
        return records

    def entry_count(self, device_id: str) -> int:
        return len(self.tables[device_id].entries)

    def flow_ids(self, device_id: str) -> list[str]:
        return [e.flow_id for e in self.tables[device_id].entries]

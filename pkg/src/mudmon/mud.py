"""MUD profile parsing and translation into prioritized switch flow rules.

A profile is the RFC 8520 JSON subset: an ``ietf-mud:mud`` envelope whose
from-device / to-device policies reference named ACLs under
``ietf-access-control-list:acls``. Supported matches: ipv4 protocol,
dns-name endpoints, ipv4 network literals, tcp/udp single ports, icmp
type/code, the ``controller`` (gateway) and ``local-networks`` node
abstractions, and eth ethertype (ARP / EAPOL).

Translation emits one bidirectional template pair per distinct service plus
a fixed baseline: EAPOL, DHCP, DNS (reply mirrored), the two Internet
default mirror rules, the ARP pair, and the local default mirror rule.
Flow-ids follow a deterministic convention: the baseline roles own the
reserved letters c/d/f/g/h/k, and ACE-derived pairs take the remaining
letters in order (Internet services first, then gateway services, then
local services). ``<letter>.1`` is the inbound direction for Internet,
gateway and ARP groups and the outbound direction for DHCP, DNS and local
groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterator

from .errors import ParseError, SchemaError

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_EAPOL = 0x888E

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"

# Priority tiers. Reactive DNS-bound entries sit just above the Internet
# default mirrors; stage-3 microflows outrank everything MUD-derived.
PRIORITY_MICROFLOW = 30
PRIORITY_BLOCK = 31
PRIORITY_REACTIVE = 20
PRIORITY_NAMED_SERVICE = 11
PRIORITY_DEFAULT_INTERNET = 10
PRIORITY_ARP = 7
PRIORITY_PORT_EXPOSED = 6
PRIORITY_DEFAULT_LOCAL = 5

GATEWAY_CONTROLLER_URN = "urn:ietf:params:mud:gateway"

_RESERVED_LETTERS = frozenset("cdfghk")


class Scope(str, Enum):
    LOCAL = "local"
    INTERNET = "internet"


class EndpointKind(str, Enum):
    DOMAIN = "domain-name"
    IP_LITERAL = "ip-literal"
    GATEWAY = "gateway"
    ANY_LOCAL = "any-local"


class Direction(str, Enum):
    FROM_DEVICE = "from-device"
    TO_DEVICE = "to-device"


class Action(str, Enum):
    FORWARD = "forward"
    FORWARD_AND_MIRROR = "forward_and_mirror"
    BLOCK = "block"


class Binding(str, Enum):
    PROACTIVE = "proactive"
    REACTIVE_DNS = "reactive_dns"


class RuleRole(str, Enum):
    """What a rule is for; downstream logic keys on this, not on letters."""

    SERVICE = "service"
    EAPOL = "eapol"
    DHCP = "dhcp"
    DNS = "dns"
    ARP = "arp"
    DEFAULT_INTERNET = "default_internet"
    DEFAULT_LOCAL = "default_local"


@dataclass(frozen=True)
class Ace:
    """One access control entry, normalized from the profile JSON."""

    direction: Direction
    scope: Scope
    endpoint_kind: EndpointKind
    endpoint_value: str | None  # domain or CIDR/IP; None for gateway/any-local
    protocol: int | str | None  # 1/6/17, "arp", "eapol", or None for any
    src_port: int | None = None
    dst_port: int | None = None
    icmp_type: int | None = None
    icmp_code: int | None = None


@dataclass(frozen=True)
class MudProfile:
    device_type_id: str
    valid_until: str | None
    aces_from_device: tuple[Ace, ...]
    aces_to_device: tuple[Ace, ...]

    @property
    def aces(self) -> tuple[Ace, ...]:
        return self.aces_from_device + self.aces_to_device


@dataclass(frozen=True)
class MatchSpec:
    """Concrete match fields; None means wildcard.

    ``src_domain``/``dst_domain`` are unresolved placeholders carried only
    by reactive templates; concrete entries always have them as None.
    """

    src_mac: str | None = None
    dst_mac: str | None = None
    eth_type: int | None = None
    src_ip: str | None = None
    dst_ip: str | None = None
    src_domain: str | None = None
    dst_domain: str | None = None
    proto: int | None = None
    src_port: int | None = None
    dst_port: int | None = None
    icmp_type: int | None = None
    icmp_code: int | None = None

    def matches(self, pkt) -> bool:
        """Whether a packet record satisfies every non-wildcard field."""
        if self.src_mac is not None and pkt.src_mac != self.src_mac:
            return False
        if self.dst_mac is not None and pkt.dst_mac != self.dst_mac:
            return False
        if self.eth_type is not None and pkt.eth_type != self.eth_type:
            return False
        if self.src_ip is not None and pkt.src_ip != self.src_ip:
            return False
        if self.dst_ip is not None and pkt.dst_ip != self.dst_ip:
            return False
        if self.proto is not None and pkt.proto != self.proto:
            return False
        if self.src_port is not None and pkt.src_port != self.src_port:
            return False
        if self.dst_port is not None and pkt.dst_port != self.dst_port:
            return False
        if self.icmp_type is not None and pkt.icmp_type != self.icmp_type:
            return False
        if self.icmp_code is not None and pkt.icmp_code != self.icmp_code:
            return False
        return True

    def wildcarded_headers(self) -> tuple[str, ...]:
        """IP/transport header fields left dynamic by this rule.

        Port fields only apply to TCP/UDP, type/code only to ICMP.
        """
        out = []
        if self.src_ip is None and self.src_domain is None:
            out.append("src_ip")
        if self.dst_ip is None and self.dst_domain is None:
            out.append("dst_ip")
        if self.proto in (PROTO_TCP, PROTO_UDP):
            if self.src_port is None:
                out.append("src_port")
            if self.dst_port is None:
                out.append("dst_port")
        elif self.proto == PROTO_ICMP:
            if self.icmp_type is None:
                out.append("icmp_type")
            if self.icmp_code is None:
                out.append("icmp_code")
        return tuple(out)

    def to_json(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if v is not None}
        return d


@dataclass(frozen=True)
class FlowRuleTemplate:
    flow_id: str
    match: MatchSpec
    priority: int
    action: Action
    binding: Binding
    role: RuleRole
    # Letter grouping shared by the two directions of a pair ("a" for a.1/a.2).
    group: str = ""
    scope: Scope | None = None

    def to_json(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "match": self.match.to_json(),
            "priority": self.priority,
            "action": self.action.value,
            "binding": self.binding.value,
            "role": self.role.value,
            "group": self.group,
            "scope": self.scope.value if self.scope else None,
        }


# ---------------------------------------------------------------------------
# Parsing


def _ace_error(index: int, direction: str, msg: str) -> SchemaError:
    return SchemaError(f"ACE #{index} ({direction}): {msg}")


def _parse_port(node: Any, index: int, direction: str) -> int | None:
    if node is None:
        return None
    if isinstance(node, dict):
        op = node.get("operator", "eq")
        if op != "eq":
            raise _ace_error(index, direction, f"unsupported port operator {op!r}")
        port = node.get("port")
    else:
        port = node
    if not isinstance(port, int) or not 0 < port < 65536:
        raise _ace_error(index, direction, f"bad port value {port!r}")
    return port


def _parse_one_ace(raw: dict, direction: Direction, index: int) -> Ace:
    dirname = direction.value
    matches = raw.get("matches")
    if not isinstance(matches, dict):
        raise _ace_error(index, dirname, "missing matches")

    ipv4 = matches.get("ipv4", {})
    eth = matches.get("eth", {})
    mud_nodes = matches.get("ietf-mud:mud", {})

    protocol: int | str | None = None
    if "ethertype" in eth:
        ethertype = eth["ethertype"]
        if isinstance(ethertype, str):
            ethertype = int(ethertype, 16) if ethertype.startswith("0x") else int(ethertype)
        if ethertype == ETH_ARP:
            protocol = "arp"
        elif ethertype == ETH_EAPOL:
            protocol = "eapol"
        else:
            raise _ace_error(index, dirname, f"unsupported ethertype {ethertype:#x}")
    elif "protocol" in ipv4:
        protocol = ipv4["protocol"]
        if protocol not in (PROTO_ICMP, PROTO_TCP, PROTO_UDP):
            raise _ace_error(index, dirname, f"unsupported ip protocol {protocol!r}")
    elif "tcp" in matches:
        protocol = PROTO_TCP
    elif "udp" in matches:
        protocol = PROTO_UDP
    elif "icmp" in matches:
        protocol = PROTO_ICMP

    if protocol is None:
        raise _ace_error(index, dirname, "no protocol specified")

    src_port = dst_port = None
    for proto_key, proto_num in (("tcp", PROTO_TCP), ("udp", PROTO_UDP)):
        node = matches.get(proto_key)
        if node is None:
            continue
        if protocol != proto_num:
            raise _ace_error(index, dirname, f"{proto_key} ports with protocol {protocol}")
        src_port = _parse_port(node.get("source-port"), index, dirname)
        dst_port = _parse_port(node.get("destination-port"), index, dirname)

    icmp_type = icmp_code = None
    icmp = matches.get("icmp")
    if icmp is not None:
        if protocol != PROTO_ICMP:
            raise _ace_error(index, dirname, "icmp fields with non-icmp protocol")
        icmp_type = icmp.get("type")
        icmp_code = icmp.get("code")

    if protocol not in (PROTO_TCP, PROTO_UDP) and (src_port or dst_port):
        raise _ace_error(index, dirname, "ports only valid for tcp/udp")
    if protocol != PROTO_ICMP and (icmp_type is not None or icmp_code is not None):
        raise _ace_error(index, dirname, "icmp type/code only valid for icmp")

    # Endpoint + scope
    domain = ipv4.get("ietf-acldns:src-dnsname") or ipv4.get("ietf-acldns:dst-dnsname")
    network = ipv4.get("source-ipv4-network") or ipv4.get("destination-ipv4-network")
    controller = mud_nodes.get("controller")
    local_networks = "local-networks" in mud_nodes

    if domain is not None:
        if local_networks:
            raise _ace_error(index, dirname, "domain endpoints are Internet scope only")
        return Ace(direction, Scope.INTERNET, EndpointKind.DOMAIN, domain, protocol,
                   src_port, dst_port, icmp_type, icmp_code)
    if controller is not None:
        if controller != GATEWAY_CONTROLLER_URN:
            raise _ace_error(index, dirname, f"unsupported controller {controller!r}")
        return Ace(direction, Scope.LOCAL, EndpointKind.GATEWAY, None, protocol,
                   src_port, dst_port, icmp_type, icmp_code)
    if network is not None:
        ip = str(network).split("/")[0]
        scope = Scope.LOCAL if local_networks else Scope.INTERNET
        return Ace(direction, scope, EndpointKind.IP_LITERAL, ip, protocol,
                   src_port, dst_port, icmp_type, icmp_code)
    if local_networks or protocol in ("arp", "eapol"):
        return Ace(direction, Scope.LOCAL, EndpointKind.ANY_LOCAL, None, protocol,
                   src_port, dst_port, icmp_type, icmp_code)
    raise _ace_error(index, dirname, "no endpoint (dnsname/controller/local-networks/network)")


def parse_profile(json_text: str) -> MudProfile:
    """Parse a MUD profile document.

    Raises ParseError for malformed JSON and SchemaError (naming the ACE
    index) for entries that violate the supported subset.
    """
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top-level document must be an object")

    mud = doc.get("ietf-mud:mud")
    if not isinstance(mud, dict):
        raise SchemaError("missing ietf-mud:mud envelope")

    acls: dict[str, list] = {}
    acl_root = doc.get("ietf-access-control-list:acls", {})
    for acl in acl_root.get("acl", []):
        name = acl.get("name")
        if not name:
            raise SchemaError("ACL without a name")
        acls[name] = acl.get("aces", {}).get("ace", [])

    def collect(policy_key: str, direction: Direction) -> list[Ace]:
        out: list[Ace] = []
        policy = mud.get(policy_key, {})
        refs = policy.get("access-lists", {}).get("access-list", [])
        for ref in refs:
            acl_name = ref.get("name")
            if acl_name not in acls:
                raise SchemaError(f"{policy_key} references unknown ACL {acl_name!r}")
            for i, raw in enumerate(acls[acl_name]):
                out.append(_parse_one_ace(raw, direction, i))
        return out

    return MudProfile(
        device_type_id=mud.get("systeminfo", mud.get("mud-url", "unknown-device")),
        valid_until=mud.get("last-update"),
        aces_from_device=tuple(collect("from-device-policy", Direction.FROM_DEVICE)),
        aces_to_device=tuple(collect("to-device-policy", Direction.TO_DEVICE)),
    )


# ---------------------------------------------------------------------------
# Translation


@dataclass(frozen=True)
class _ServiceKey:
    """Direction-independent identity of a service: used to pair ACEs."""

    scope: Scope
    endpoint_kind: EndpointKind
    endpoint_value: str | None
    protocol: int | str
    remote_port: int | None
    device_port: int | None
    icmp_type: int | None
    icmp_code: int | None


def _service_key(ace: Ace) -> _ServiceKey:
    if ace.direction is Direction.FROM_DEVICE:
        device_port, remote_port = ace.src_port, ace.dst_port
    else:
        device_port, remote_port = ace.dst_port, ace.src_port
    return _ServiceKey(ace.scope, ace.endpoint_kind, ace.endpoint_value, ace.protocol,
                       remote_port, device_port, ace.icmp_type, ace.icmp_code)


def _letter_sequence() -> Iterator[str]:
    for i in range(1000):
        letter = chr(ord("a") + i % 26) + ("" if i < 26 else str(i // 26 + 1))
        if letter not in _RESERVED_LETTERS:
            yield letter


def translate(
    profile: MudProfile,
    device_mac: str,
    gateway_mac: str,
    gateway_ip: str,
) -> list[FlowRuleTemplate]:
    """Translate a profile into the full per-device rule template list.

    Output is deterministic for a given profile and addressing, and contains
    the service pairs derived from ACEs plus the always-on baseline (EAPOL,
    DHCP, DNS, Internet default mirrors, ARP, local default mirror).
    """
    if device_mac == gateway_mac:
        raise SchemaError("device and gateway MAC must differ")
    device_mac = device_mac.lower()
    gateway_mac = gateway_mac.lower()

    # Pair from/to ACEs describing the same service; keep first-seen order.
    services: dict[_ServiceKey, Ace] = {}
    for ace in profile.aces:
        key = _service_key(ace)
        services.setdefault(key, ace)

    internet: list[_ServiceKey] = []
    gateway: list[_ServiceKey] = []
    local: list[_ServiceKey] = []
    for key in services:
        if key.protocol in ("arp", "eapol"):
            continue  # baseline roles cover these
        if key.scope is Scope.INTERNET:
            internet.append(key)
        elif key.endpoint_kind is EndpointKind.GATEWAY:
            if key.protocol == PROTO_UDP and key.remote_port == 53:
                continue  # folds into the reserved DNS pair
            gateway.append(key)
        else:
            local.append(key)

    rules: list[FlowRuleTemplate] = []
    letters = _letter_sequence()

    def emit(flow_id: str, group: str, match: MatchSpec, priority: int, action: Action,
             binding: Binding, role: RuleRole, scope: Scope | None) -> None:
        rules.append(FlowRuleTemplate(flow_id, match, priority, action, binding,
                                      role, group, scope))

    def emit_internet(key: _ServiceKey, letter: str) -> None:
        reactive = key.endpoint_kind is EndpointKind.DOMAIN
        binding = Binding.REACTIVE_DNS if reactive else Binding.PROACTIVE
        domain = key.endpoint_value if reactive else None
        ip = key.endpoint_value if not reactive else None
        common = dict(eth_type=ETH_IPV4, proto=key.protocol if isinstance(key.protocol, int) else None,
                      icmp_type=key.icmp_type, icmp_code=key.icmp_code)
        emit(f"{letter}.1", letter,
             MatchSpec(src_mac=gateway_mac, dst_mac=device_mac,
                       src_ip=ip, src_domain=domain,
                       src_port=key.remote_port, dst_port=key.device_port, **common),
             PRIORITY_REACTIVE, Action.FORWARD, binding, RuleRole.SERVICE, Scope.INTERNET)
        emit(f"{letter}.2", letter,
             MatchSpec(src_mac=device_mac, dst_mac=gateway_mac,
                       dst_ip=ip, dst_domain=domain,
                       src_port=key.device_port, dst_port=key.remote_port, **common),
             PRIORITY_REACTIVE, Action.FORWARD, binding, RuleRole.SERVICE, Scope.INTERNET)

    def emit_gateway(key: _ServiceKey, letter: str) -> None:
        common = dict(eth_type=ETH_IPV4, proto=key.protocol if isinstance(key.protocol, int) else None,
                      icmp_type=key.icmp_type, icmp_code=key.icmp_code)
        emit(f"{letter}.1", letter,
             MatchSpec(src_mac=gateway_mac, dst_mac=device_mac, src_ip=gateway_ip,
                       src_port=key.remote_port, dst_port=key.device_port, **common),
             PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
             RuleRole.SERVICE, Scope.LOCAL)
        emit(f"{letter}.2", letter,
             MatchSpec(src_mac=device_mac, dst_mac=gateway_mac, dst_ip=gateway_ip,
                       src_port=key.device_port, dst_port=key.remote_port, **common),
             PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
             RuleRole.SERVICE, Scope.LOCAL)

    def emit_local(key: _ServiceKey, letter: str) -> None:
        common = dict(eth_type=ETH_IPV4, proto=key.protocol if isinstance(key.protocol, int) else None,
                      icmp_type=key.icmp_type, icmp_code=key.icmp_code)
        emit(f"{letter}.1", letter,
             MatchSpec(src_mac=device_mac, dst_mac=None,
                       src_port=key.device_port, dst_port=key.remote_port, **common),
             PRIORITY_PORT_EXPOSED, Action.FORWARD, Binding.PROACTIVE,
             RuleRole.SERVICE, Scope.LOCAL)
        emit(f"{letter}.2", letter,
             MatchSpec(src_mac=None, dst_mac=device_mac,
                       src_port=key.remote_port, dst_port=key.device_port, **common),
             PRIORITY_PORT_EXPOSED, Action.FORWARD, Binding.PROACTIVE,
             RuleRole.SERVICE, Scope.LOCAL)

    for key in internet:
        emit_internet(key, next(letters))

    # EAPOL (c) and DHCP (d) always present: device discovery and the binding
    # table depend on them.
    emit("c", "c", MatchSpec(src_mac=device_mac, eth_type=ETH_EAPOL),
         PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
         RuleRole.EAPOL, Scope.LOCAL)
    emit("d.1", "d", MatchSpec(src_mac=device_mac, dst_mac=BROADCAST_MAC,
                               eth_type=ETH_IPV4, proto=PROTO_UDP, dst_port=67),
         PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
         RuleRole.DHCP, Scope.LOCAL)
    emit("d.2", "d", MatchSpec(src_mac=gateway_mac, dst_mac=device_mac,
                               eth_type=ETH_IPV4, proto=PROTO_UDP, src_port=67),
         PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
         RuleRole.DHCP, Scope.LOCAL)

    for key in gateway:
        emit_gateway(key, next(letters))

    # DNS with the local gateway: replies are mirrored to drive reactive
    # bindings, so the pair exists whether or not the profile lists it.
    emit("f.1", "f", MatchSpec(src_mac=device_mac, dst_mac=gateway_mac,
                               eth_type=ETH_IPV4, dst_ip=gateway_ip,
                               proto=PROTO_UDP, dst_port=53),
         PRIORITY_NAMED_SERVICE, Action.FORWARD, Binding.PROACTIVE,
         RuleRole.DNS, Scope.LOCAL)
    emit("f.2", "f", MatchSpec(src_mac=gateway_mac, dst_mac=device_mac,
                               eth_type=ETH_IPV4, src_ip=gateway_ip,
                               proto=PROTO_UDP, src_port=53),
         PRIORITY_NAMED_SERVICE, Action.FORWARD_AND_MIRROR, Binding.PROACTIVE,
         RuleRole.DNS, Scope.LOCAL)

    emit("g.1", "g", MatchSpec(src_mac=device_mac, dst_mac=gateway_mac, eth_type=ETH_IPV4),
         PRIORITY_DEFAULT_INTERNET, Action.FORWARD_AND_MIRROR, Binding.PROACTIVE,
         RuleRole.DEFAULT_INTERNET, None)
    emit("g.2", "g", MatchSpec(src_mac=gateway_mac, dst_mac=device_mac, eth_type=ETH_IPV4),
         PRIORITY_DEFAULT_INTERNET, Action.FORWARD_AND_MIRROR, Binding.PROACTIVE,
         RuleRole.DEFAULT_INTERNET, None)

    emit("h.1", "h", MatchSpec(dst_mac=device_mac, eth_type=ETH_ARP),
         PRIORITY_ARP, Action.FORWARD, Binding.PROACTIVE, RuleRole.ARP, Scope.LOCAL)
    emit("h.2", "h", MatchSpec(src_mac=device_mac, eth_type=ETH_ARP),
         PRIORITY_ARP, Action.FORWARD, Binding.PROACTIVE, RuleRole.ARP, Scope.LOCAL)

    for key in local:
        emit_local(key, next(letters))

    # Local default: only the to-device direction, mirrored.
    emit("k", "k", MatchSpec(dst_mac=device_mac, eth_type=ETH_IPV4),
         PRIORITY_DEFAULT_LOCAL, Action.FORWARD_AND_MIRROR, Binding.PROACTIVE,
         RuleRole.DEFAULT_LOCAL, None)

    return rules


def feature_rules(rules: list[FlowRuleTemplate]) -> list[FlowRuleTemplate]:
    """Rules monitored by anomaly workers: everything except the defaults."""
    return [r for r in rules
            if r.role not in (RuleRole.DEFAULT_INTERNET, RuleRole.DEFAULT_LOCAL)]


def service_groups(rules: list[FlowRuleTemplate]) -> dict[str, list[FlowRuleTemplate]]:
    """Feature-bearing rules grouped by letter, insertion order preserved."""
    groups: dict[str, list[FlowRuleTemplate]] = {}
    for rule in feature_rules(rules):
        groups.setdefault(rule.group, []).append(rule)
    return groups


def rules_to_json(rules: list[FlowRuleTemplate]) -> str:
    return json.dumps([r.to_json() for r in rules], indent=2)

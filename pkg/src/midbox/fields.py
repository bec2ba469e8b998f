"""Symbolic packet field registry.

Every field the rule language can name maps to a FieldDescriptor telling the
engine how to locate it in a packet: a fixed bit span relative to the L3 or L4
header, a single TCP flag bit, a TCP option (by kind), or the L3/UDP payload.
"""

from dataclasses import dataclass

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

PROTO_NAMES = {PROTO_ICMP: "icmp", PROTO_TCP: "tcp", PROTO_UDP: "udp"}
PROTO_NUMBERS = {v: k for k, v in PROTO_NAMES.items()}

# locator kinds
FIXED = 0
FLAG = 1
OPT = 2
PAYLOAD = 3

# anchor bases for FIXED locators
L3 = 0
L4 = 1

# TCP option kinds the language names directly
TCP_OPT_KINDS = {
    "mss": 2,
    "wscale": 3,
    "sackp": 4,
    "sack": 5,
    "timestamp": 8,
    "mptcp": 30,
    "fastopen": 34,
}
TCP_OPT_NAMES = {v: k for k, v in TCP_OPT_KINDS.items()}

# bit index within the TCP flags byte (LSB = FIN)
TCP_FLAG_BITS = {"fin": 0, "syn": 1, "rst": 2, "psh": 3, "ack": 4, "urg": 5}


@dataclass(frozen=True)
class FieldDescriptor:
    """Where a named field lives in a packet.

    For FIXED locators the field occupies `width` bits ending `shift` bits
    above the LSB of a big-endian span of ceil((shift+width)/8) bytes at
    `base`+`offset`. For FLAG it is one bit of the TCP flags byte; for OPT
    the payload of the TCP option with kind `opt_kind`; for PAYLOAD the bytes
    following the IPv4 or UDP header.
    """

    name: str
    kind: int
    base: int = L3
    offset: int = 0
    width: int = 0
    shift: int = 0
    flag_bit: int = 0
    opt_kind: int = 0
    payload_base: str = ""
    proto: int | None = None  # protocol this field implies, if any
    is_addr: bool = False
    span_bytes: int = 0  # derived: byte length of the covered span

    def __post_init__(self):
        object.__setattr__(self, "span_bytes",
                           (self.shift + self.width + 7) // 8)

    def __str__(self):
        return self.name


def _ip(name, offset, width, shift=0, is_addr=False):
    return FieldDescriptor(name, FIXED, L3, offset, width, shift, is_addr=is_addr)


def _tcp(name, offset, width):
    return FieldDescriptor(name, FIXED, L4, offset, width, proto=PROTO_TCP)


def _udp(name, offset, width):
    return FieldDescriptor(name, FIXED, L4, offset, width, proto=PROTO_UDP)


def _icmp(name, offset, width):
    return FieldDescriptor(name, FIXED, L4, offset, width, proto=PROTO_ICMP)


def _flag(name, bit):
    return FieldDescriptor(name, FLAG, flag_bit=bit, proto=PROTO_TCP)


def tcp_option_field(kind):
    """Descriptor for a TCP option field, by kind number."""
    name = TCP_OPT_NAMES.get(kind)
    name = f"tcp-opt-{name}" if name else f"tcp-opt {kind}"
    return FieldDescriptor(name, OPT, opt_kind=kind, proto=PROTO_TCP)


REGISTRY = {
    f.name: f
    for f in [
        _ip("ip-saddr", 12, 32, is_addr=True),
        _ip("ip-daddr", 16, 32, is_addr=True),
        _ip("ip-proto", 9, 8),
        _ip("ip-ttl", 8, 8),
        _ip("ip-dscp", 1, 6, shift=2),
        _ip("ip-ecn", 1, 2),
        _ip("ip-len", 2, 16),
        _ip("ip-id", 4, 16),
        FieldDescriptor("ip4-payload", PAYLOAD, payload_base="ip4"),
        _tcp("tcp-sport", 0, 16),
        _tcp("tcp-dport", 2, 16),
        _tcp("tcp-seq", 4, 32),
        _tcp("tcp-ack-num", 8, 32),
        _tcp("tcp-win", 14, 16),
        _tcp("tcp-flags", 13, 8),
        _flag("tcp-syn", TCP_FLAG_BITS["syn"]),
        _flag("tcp-ack", TCP_FLAG_BITS["ack"]),
        _flag("tcp-fin", TCP_FLAG_BITS["fin"]),
        _flag("tcp-rst", TCP_FLAG_BITS["rst"]),
        _flag("tcp-psh", TCP_FLAG_BITS["psh"]),
        _flag("tcp-urg", TCP_FLAG_BITS["urg"]),
        _udp("udp-sport", 0, 16),
        _udp("udp-dport", 2, 16),
        _udp("udp-len", 4, 16),
        FieldDescriptor("udp-payload", PAYLOAD, payload_base="udp", proto=PROTO_UDP),
        _icmp("icmp-type", 0, 8),
        _icmp("icmp-code", 1, 8),
    ]
}

for _name, _kind in TCP_OPT_KINDS.items():
    REGISTRY[f"tcp-opt-{_name}"] = tcp_option_field(_kind)


def lookup(name):
    """Registry lookup; returns None for unknown names."""
    return REGISTRY.get(name)

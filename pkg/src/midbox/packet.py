"""IPv4 packet model: parsing, field access, TCP options, checksums.

PacketBuffer holds the raw bytes of one packet (optionally prefixed by an
Ethernet header that is carried through untouched) plus the parsed header
offsets. All field reads/writes go through FieldDescriptors so the matching
and rewrite stages never hardcode wire offsets.
"""

import array
import sys

from .errors import BadChecksum, MalformedOption, NotIPv4, TruncatedPacket
from .fields import FIXED, FLAG, L4, OPT, PAYLOAD, PROTO_ICMP, PROTO_TCP, PROTO_UDP

RAW_IP = 101  # pcap LINKTYPE_RAW
ETHERNET = 1  # pcap LINKTYPE_EN10MB

ETHERTYPE_IPV4 = 0x0800

TCP_OPT_EOL = 0
TCP_OPT_NOP = 1

# sentinel for "field not present in this packet"
class _Absent:
    __slots__ = ()

    def __repr__(self):
        return "ABSENT"

    def __bool__(self):
        return False


ABSENT = _Absent()

_NATIVE_LE = sys.byteorder == "little"
_ZEROS80 = bytes(80)


def checksum16(data, csum=0):
    """Ones'-complement sum of 16-bit big-endian words, folded to 16 bits."""
    if len(data) & 1:
        data = bytes(data) + b"\x00"
    s = csum + sum(array.array("H", bytes(data)))
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    if _NATIVE_LE:
        # the word sum was done little-endian; swapping at the end is
        # equivalent to summing big-endian words
        s = ((s & 0xFF) << 8) | (s >> 8)
    return (~s) & 0xFFFF


class TcpOptionView:
    """One TCP option: kind, total wire length, and offset of its payload."""

    __slots__ = ("kind", "length", "value_offset")

    def __init__(self, kind, length, value_offset):
        self.kind = kind
        self.length = length
        self.value_offset = value_offset

    def __repr__(self):
        return f"TcpOptionView(kind={self.kind}, length={self.length})"


class PacketBuffer:
    """One packet flowing through the pipeline.

    `data` covers the link prefix (if any) plus exactly the IPv4 datagram;
    any capture/Ethernet trailer past the IP total length is kept aside and
    re-attached verbatim on serialization.
    """

    __slots__ = (
        "data",
        "trailer",
        "l3_offset",
        "l4_offset",
        "ihl",
        "ip_proto",
        "is_fragment",
        "trace_id",
        "ts",
        "_win80",
        "_opts",
        "_opts_bad",
    )

    def __init__(self, data, l3_offset, l4_offset, ihl, ip_proto, is_fragment=False,
                 trailer=b"", trace_id=None, ts=0.0):
        self.data = data
        self.trailer = trailer
        self.l3_offset = l3_offset
        self.l4_offset = l4_offset
        self.ihl = ihl
        self.ip_proto = ip_proto
        self.is_fragment = is_fragment
        self.trace_id = trace_id
        self.ts = ts
        self._win80 = None
        self._opts = None
        self._opts_bad = False

    @property
    def l4_kind(self):
        if self.is_fragment:
            return "OTHER"
        return {PROTO_TCP: "TCP", PROTO_UDP: "UDP", PROTO_ICMP: "ICMP"}.get(
            self.ip_proto, "OTHER")

    @property
    def total_length(self):
        l3 = self.l3_offset
        return (self.data[l3 + 2] << 8) | self.data[l3 + 3]

    @property
    def tcp_data_offset(self):
        return self.data[self.l4_offset + 12] >> 4

    @property
    def tcp_flags(self):
        return self.data[self.l4_offset + 13]

    @property
    def payload_offset(self):
        """Start of the transport payload (after L4 header for TCP/UDP)."""
        if self.is_fragment:
            return self.l4_offset
        if self.ip_proto == PROTO_TCP:
            return self.l4_offset + 4 * self.tcp_data_offset
        if self.ip_proto == PROTO_UDP:
            return self.l4_offset + 8
        return self.l4_offset

    def window80(self):
        """The first 80 bytes from the L3 anchor as one big-endian integer,
        zero-extended when the packet is shorter."""
        w = self._win80
        if w is None:
            raw = bytes(self.data[self.l3_offset:self.l3_offset + 80])
            if len(raw) < 80:
                raw += _ZEROS80[len(raw):]
            w = int.from_bytes(raw, "big")
            self._win80 = w
        return w

    def invalidate(self):
        """Drop cached derived views after a mutation."""
        self._win80 = None
        self._opts = None
        self._opts_bad = False

    def five_tuple(self):
        """(src_addr, dst_addr, src_port, dst_port, proto); ports are 0 for
        protocols without them."""
        d = self.data
        l3 = self.l3_offset
        saddr = int.from_bytes(d[l3 + 12:l3 + 16], "big")
        daddr = int.from_bytes(d[l3 + 16:l3 + 20], "big")
        sport = dport = 0
        if not self.is_fragment and self.ip_proto in (PROTO_TCP, PROTO_UDP):
            l4 = self.l4_offset
            sport = (d[l4] << 8) | d[l4 + 1]
            dport = (d[l4 + 2] << 8) | d[l4 + 3]
        return (saddr, daddr, sport, dport, self.ip_proto)

    def to_bytes(self):
        return bytes(self.data) + self.trailer

    def copy(self):
        return PacketBuffer(bytearray(self.data), self.l3_offset, self.l4_offset,
                            self.ihl, self.ip_proto, self.is_fragment,
                            self.trailer, self.trace_id, self.ts)

    def __repr__(self):
        return (f"PacketBuffer(id={self.trace_id}, proto={self.l4_kind}, "
                f"len={len(self.data)})")


def parse_packet(data, link_type=RAW_IP, trace_id=None, ts=0.0):
    """Parse raw capture bytes into a PacketBuffer.

    Raises NotIPv4 / TruncatedPacket / BadChecksum; callers turn these into
    drop or bypass dispositions instead of passing bad packets downstream.
    """
    if not data:
        raise TruncatedPacket("empty packet")
    if link_type == ETHERNET:
        if len(data) < 14:
            raise TruncatedPacket("short ethernet header")
        ethertype = (data[12] << 8) | data[13]
        if ethertype != ETHERTYPE_IPV4:
            raise NotIPv4(f"ethertype 0x{ethertype:04x}")
        l3 = 14
    elif link_type == RAW_IP:
        l3 = 0
    else:
        raise ValueError(f"unsupported link type {link_type}")

    if len(data) < l3 + 20:
        raise TruncatedPacket("short IPv4 header")
    vh = data[l3]
    if vh >> 4 != 4:
        raise NotIPv4(f"version {vh >> 4}")
    ihl = vh & 0x0F
    if ihl < 5:
        raise TruncatedPacket(f"IHL {ihl} below minimum")
    hdr_len = 4 * ihl
    total_len = (data[l3 + 2] << 8) | data[l3 + 3]
    if total_len < hdr_len:
        raise TruncatedPacket("total length below header length")
    if len(data) < l3 + total_len:
        raise TruncatedPacket("packet shorter than IPv4 total length")
    if len(data) < l3 + hdr_len:
        raise TruncatedPacket("packet shorter than IPv4 header length")
    if checksum16(data[l3:l3 + hdr_len]) != 0:
        raise BadChecksum("IPv4 header checksum")

    buf = bytearray(data[:l3 + total_len])
    trailer = bytes(data[l3 + total_len:])
    proto = data[l3 + 9]
    l4 = l3 + hdr_len

    frag_field = ((data[l3 + 6] << 8) | data[l3 + 7]) & 0x3FFF  # MF + offset
    is_fragment = frag_field != 0

    if not is_fragment:
        l4_len = total_len - hdr_len
        if proto == PROTO_TCP:
            if l4_len < 20:
                raise TruncatedPacket("short TCP header")
            doff = data[l4 + 12] >> 4
            if doff < 5:
                raise TruncatedPacket(f"TCP data offset {doff} below minimum")
            if l4_len < 4 * doff:
                raise TruncatedPacket("TCP header overruns packet")
        elif proto == PROTO_UDP:
            if l4_len < 8:
                raise TruncatedPacket("short UDP header")
        elif proto == PROTO_ICMP:
            if l4_len < 8:
                raise TruncatedPacket("short ICMP header")

    return PacketBuffer(buf, l3, l4, ihl, proto, is_fragment, trailer, trace_id, ts)


def serialize(pkt):
    """Wire bytes for a packet, link prefix and trailer included."""
    return pkt.to_bytes()


def parse_tcp_options(pkt):
    """TCP options in wire order. Iteration stops at EOL or end of header.

    Raises MalformedOption when a length byte is 0/1 or overruns the header.
    """
    l4 = pkt.l4_offset
    doff = pkt.tcp_data_offset
    end = l4 + 4 * doff
    out = []
    i = l4 + 20
    d = pkt.data
    while i < end:
        kind = d[i]
        if kind == TCP_OPT_EOL:
            break
        if kind == TCP_OPT_NOP:
            out.append(TcpOptionView(kind, 1, i + 1))
            i += 1
            continue
        if i + 1 >= end:
            raise MalformedOption(f"option kind {kind} missing length byte")
        length = d[i + 1]
        if length < 2 or i + length > end:
            raise MalformedOption(f"option kind {kind} length {length} overruns header")
        out.append(TcpOptionView(kind, length, i + 2))
        i += length
    return out


def _options_map(pkt):
    """kind -> payload bytes for the packet's TCP options (cached).

    A malformed option area yields an empty map and sets pkt._opts_bad.
    """
    opts = pkt._opts
    if opts is None:
        opts = {}
        if pkt.ip_proto == PROTO_TCP and not pkt.is_fragment:
            try:
                for v in parse_tcp_options(pkt):
                    if v.kind != TCP_OPT_NOP and v.kind not in opts:
                        opts[v.kind] = bytes(pkt.data[v.value_offset:
                                                      v.value_offset + v.length - 2])
            except MalformedOption:
                opts = {}
                pkt._opts_bad = True
        pkt._opts = opts
    return opts


def read_field(pkt, fd):
    """Value of a field in a packet, or ABSENT.

    Multi-byte integers are read big-endian; OPT returns the option payload
    bytes; FLAG returns 0/1; PAYLOAD returns the payload bytes. A protocol
    mismatch (e.g. tcp-dport on a UDP packet) reads as ABSENT.
    """
    if fd.proto is not None and (pkt.ip_proto != fd.proto or pkt.is_fragment):
        return ABSENT
    kind = fd.kind
    d = pkt.data
    if kind == FIXED:
        base = pkt.l4_offset if fd.base == L4 else pkt.l3_offset
        start = base + fd.offset
        stop = start + fd.span_bytes
        if stop > len(d):
            return ABSENT
        v = int.from_bytes(d[start:stop], "big")
        return (v >> fd.shift) & ((1 << fd.width) - 1)
    if kind == FLAG:
        return (d[pkt.l4_offset + 13] >> fd.flag_bit) & 1
    if kind == OPT:
        v = _options_map(pkt).get(fd.opt_kind)
        return ABSENT if v is None else v
    if kind == PAYLOAD:
        if fd.payload_base == "udp":
            start = pkt.l4_offset + 8
        else:
            start = pkt.payload_offset
        return bytes(d[start:])
    raise ValueError(f"unknown locator kind {kind}")


def write_field(pkt, fd, value):
    """Write a field in place. Returns True when a write happened; False when
    the packet cannot hold the value (callers count these skips)."""
    if fd.proto is not None and (pkt.ip_proto != fd.proto or pkt.is_fragment):
        return False
    kind = fd.kind
    d = pkt.data
    if kind == FIXED:
        base = pkt.l4_offset if fd.base == L4 else pkt.l3_offset
        start = base + fd.offset
        stop = start + fd.span_bytes
        if stop > len(d):
            return False
        mask = ((1 << fd.width) - 1) << fd.shift
        old = int.from_bytes(d[start:stop], "big")
        new = (old & ~mask) | ((value << fd.shift) & mask)
        d[start:stop] = new.to_bytes(fd.span_bytes, "big")
        pkt.invalidate()
        return True
    if kind == FLAG:
        i = pkt.l4_offset + 13
        if value:
            d[i] |= 1 << fd.flag_bit
        else:
            d[i] &= ~(1 << fd.flag_bit) & 0xFF
        pkt.invalidate()
        return True
    if kind == OPT:
        payload = _options_map(pkt).get(fd.opt_kind)
        if payload is None:
            return False
        if isinstance(value, int):
            try:
                value = value.to_bytes(len(payload), "big")
            except OverflowError:
                return False
        elif len(value) != len(payload):
            return False
        for v in parse_tcp_options(pkt):
            if v.kind == fd.opt_kind:
                d[v.value_offset:v.value_offset + len(value)] = value
                break
        pkt.invalidate()
        return True
    if kind == PAYLOAD:
        start = pkt.l4_offset + 8 if fd.payload_base == "udp" else pkt.payload_offset
        if not isinstance(value, (bytes, bytearray)):
            return False
        if start + len(value) > len(d):
            return False
        d[start:start + len(value)] = value
        pkt.invalidate()
        return True
    raise ValueError(f"unknown locator kind {kind}")


def fix_checksums(pkt):
    """Recompute the IPv4 header checksum and, for TCP/UDP, the transport
    checksum over the pseudo-header. Idempotent."""
    d = pkt.data
    l3 = pkt.l3_offset
    hdr_len = 4 * pkt.ihl
    d[l3 + 10:l3 + 12] = b"\x00\x00"
    d[l3 + 10:l3 + 12] = checksum16(d[l3:l3 + hdr_len]).to_bytes(2, "big")

    if pkt.is_fragment:
        pkt.invalidate()
        return pkt
    l4 = pkt.l4_offset
    seg_len = pkt.total_length - hdr_len
    if pkt.ip_proto == PROTO_TCP and seg_len >= 20:
        csum_at = l4 + 16
    elif pkt.ip_proto == PROTO_UDP and seg_len >= 8:
        csum_at = l4 + 6
    else:
        pkt.invalidate()
        return pkt
    d[csum_at:csum_at + 2] = b"\x00\x00"
    pseudo = bytes(d[l3 + 12:l3 + 20]) + bytes([0, pkt.ip_proto]) + seg_len.to_bytes(2, "big")
    c = checksum16(pseudo + bytes(d[l4:l4 + seg_len]))
    if pkt.ip_proto == PROTO_UDP and c == 0:
        c = 0xFFFF
    d[csum_at:csum_at + 2] = c.to_bytes(2, "big")
    pkt.invalidate()
    return pkt


def verify_checksums(pkt):
    """True when the IPv4 header and TCP/UDP checksums are valid as stored."""
    d = pkt.data
    l3 = pkt.l3_offset
    hdr_len = 4 * pkt.ihl
    if checksum16(d[l3:l3 + hdr_len]) != 0:
        return False
    if pkt.is_fragment:
        return True
    l4 = pkt.l4_offset
    seg_len = pkt.total_length - hdr_len
    if pkt.ip_proto == PROTO_TCP and seg_len >= 20:
        pass
    elif pkt.ip_proto == PROTO_UDP and seg_len >= 8:
        if d[l4 + 6] == 0 and d[l4 + 7] == 0:
            return True  # UDP checksum not in use
    else:
        return True
    pseudo = bytes(d[l3 + 12:l3 + 20]) + bytes([0, pkt.ip_proto]) + seg_len.to_bytes(2, "big")
    return checksum16(pseudo + bytes(d[l4:l4 + seg_len])) == 0

"""Independent reference packet builder and field reader.

Deliberately built on struct only, from the RFC wire layouts, with no
imports from the package under test: this is the oracle the packet model is
checked against. The checksum here is the textbook RFC 1071 word loop.
"""

import struct

TCP = 6
UDP = 17
ICMP = 1

FIN, SYN, RST, PSH, ACK, URG = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20


def rfc1071_checksum(data):
    """Plain ones'-complement 16-bit word sum, big-endian, word loop."""
    total = 0
    for i in range(0, len(data) - 1, 2):
        total += (data[i] << 8) | data[i + 1]
    if len(data) % 2:
        total += data[-1] << 8
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def ipv4_header(saddr, daddr, proto, payload_len, ihl=5, tos=0, ident=0,
                ttl=64, flags_frag=0, options=b""):
    assert len(options) == 4 * (ihl - 5)
    total = 4 * ihl + payload_len
    hdr = struct.pack(">BBHHHBBH4s4s", (4 << 4) | ihl, tos, total, ident,
                      flags_frag, ttl, proto, 0,
                      saddr.to_bytes(4, "big"), daddr.to_bytes(4, "big"))
    hdr += options
    csum = rfc1071_checksum(hdr)
    return hdr[:10] + struct.pack(">H", csum) + hdr[12:]


def pseudo_checksum(saddr, daddr, proto, segment):
    pseudo = saddr.to_bytes(4, "big") + daddr.to_bytes(4, "big") + \
        struct.pack(">BBH", 0, proto, len(segment))
    return rfc1071_checksum(pseudo + segment)


def tcp_segment(saddr, daddr, sport, dport, seq=0, ack=0, flags=ACK,
                window=8192, urgptr=0, options=b"", payload=b""):
    assert len(options) % 4 == 0
    doff = 5 + len(options) // 4
    seg = struct.pack(">HHIIBBHHH", sport, dport, seq, ack, doff << 4,
                      flags, window, 0, urgptr) + options + payload
    csum = pseudo_checksum(saddr, daddr, TCP, seg)
    return seg[:16] + struct.pack(">H", csum) + seg[18:]


def udp_segment(saddr, daddr, sport, dport, payload=b""):
    length = 8 + len(payload)
    seg = struct.pack(">HHHH", sport, dport, length, 0) + payload
    csum = pseudo_checksum(saddr, daddr, UDP, seg)
    if csum == 0:
        csum = 0xFFFF
    return seg[:6] + struct.pack(">H", csum) + seg[8:]


def icmp_segment(icmp_type=8, code=0, rest=0, payload=b""):
    seg = struct.pack(">BBHI", icmp_type, code, 0, rest) + payload
    csum = rfc1071_checksum(seg)
    return seg[:2] + struct.pack(">H", csum) + seg[4:]


def tcp_packet(saddr=0x0A000001, daddr=0x0A000002, sport=1234, dport=80,
               seq=0, ack=0, flags=ACK, window=8192, options=b"",
               payload=b"", ihl=5, ip_options=b"", ttl=64, ident=0, tos=0):
    seg = tcp_segment(saddr, daddr, sport, dport, seq, ack, flags, window,
                      options=options, payload=payload)
    return ipv4_header(saddr, daddr, TCP, len(seg), ihl=ihl, tos=tos,
                       ident=ident, ttl=ttl, options=ip_options) + seg


def udp_packet(saddr=0x0A000001, daddr=0x0A000002, sport=1234, dport=53,
               payload=b"", ihl=5, ip_options=b"", ttl=64, ident=0, tos=0):
    seg = udp_segment(saddr, daddr, sport, dport, payload)
    return ipv4_header(saddr, daddr, UDP, len(seg), ihl=ihl, tos=tos,
                       ident=ident, ttl=ttl, options=ip_options) + seg


def icmp_packet(saddr=0x0A000001, daddr=0x0A000002, icmp_type=8, code=0,
                payload=b"", ihl=5, ip_options=b"", ttl=64, ident=0):
    seg = icmp_segment(icmp_type, code, payload=payload)
    return ipv4_header(saddr, daddr, ICMP, len(seg), ihl=ihl, ident=ident,
                       ttl=ttl, options=ip_options) + seg


def make_options(*opts):
    """Encode TCP options given as (kind,) for NOP/EOL-free singles or
    (kind, payload_bytes); pads with zeros to a 4-byte multiple."""
    out = b""
    for o in opts:
        if o[0] == 1:  # NOP
            out += b"\x01"
        elif o[0] == 0:  # EOL
            out += b"\x00"
        else:
            kind, payload = o
            out += bytes((kind, 2 + len(payload))) + payload
    return out + bytes((-len(out)) % 4)


def verify_packet_checksums(data, l3=0):
    """Independent validity check of the IP header and TCP/UDP checksums."""
    ihl = data[l3] & 0x0F
    if rfc1071_checksum(data[l3:l3 + 4 * ihl]) != 0:
        return False
    proto = data[l3 + 9]
    total = (data[l3 + 2] << 8) | data[l3 + 3]
    frag = ((data[l3 + 6] << 8) | data[l3 + 7]) & 0x3FFF
    if frag:
        return True
    l4 = l3 + 4 * ihl
    seg = data[l4:l3 + total]
    saddr = int.from_bytes(data[l3 + 12:l3 + 16], "big")
    daddr = int.from_bytes(data[l3 + 16:l3 + 20], "big")
    if proto in (TCP, UDP):
        if proto == UDP and seg[6] == 0 and seg[7] == 0:
            return True
        return pseudo_checksum(saddr, daddr, proto, bytes(seg)) == 0
    return True


# -------------------------------------------------- reference field reading

def ref_read(data, name, l3=0):
    """Read a named field straight off the wire layout; None when absent."""
    ihl = data[l3] & 0x0F
    proto = data[l3 + 9]
    frag = ((data[l3 + 6] << 8) | data[l3 + 7]) & 0x3FFF
    l4 = l3 + 4 * ihl
    total = (data[l3 + 2] << 8) | data[l3 + 3]

    ip_fields = {
        "ip-saddr": int.from_bytes(data[l3 + 12:l3 + 16], "big"),
        "ip-daddr": int.from_bytes(data[l3 + 16:l3 + 20], "big"),
        "ip-proto": proto,
        "ip-ttl": data[l3 + 8],
        "ip-dscp": data[l3 + 1] >> 2,
        "ip-ecn": data[l3 + 1] & 3,
        "ip-len": total,
        "ip-id": int.from_bytes(data[l3 + 4:l3 + 6], "big"),
    }
    if name in ip_fields:
        return ip_fields[name]
    if name == "ip4-payload":
        if frag:
            return bytes(data[l4:l3 + total])
        if proto == TCP:
            doff = data[l4 + 12] >> 4
            return bytes(data[l4 + 4 * doff:l3 + total])
        if proto == UDP:
            return bytes(data[l4 + 8:l3 + total])
        return bytes(data[l4:l3 + total])
    if frag:
        return None
    if name.startswith("tcp"):
        if proto != TCP:
            return None
        flags = data[l4 + 13]
        tcp_fields = {
            "tcp-sport": int.from_bytes(data[l4:l4 + 2], "big"),
            "tcp-dport": int.from_bytes(data[l4 + 2:l4 + 4], "big"),
            "tcp-seq": int.from_bytes(data[l4 + 4:l4 + 8], "big"),
            "tcp-ack-num": int.from_bytes(data[l4 + 8:l4 + 12], "big"),
            "tcp-win": int.from_bytes(data[l4 + 14:l4 + 16], "big"),
            "tcp-flags": flags,
            "tcp-fin": flags & 1,
            "tcp-syn": (flags >> 1) & 1,
            "tcp-rst": (flags >> 2) & 1,
            "tcp-psh": (flags >> 3) & 1,
            "tcp-ack": (flags >> 4) & 1,
            "tcp-urg": (flags >> 5) & 1,
        }
        if name in tcp_fields:
            return tcp_fields[name]
        if name.startswith("tcp-opt"):
            kind = ref_opt_kind(name)
            opts = ref_walk_options(data, l3)
            if opts is None:
                return None
            for k, payload in opts:
                if k == kind:
                    return payload
            return None
    if name.startswith("udp"):
        if proto != UDP:
            return None
        if name == "udp-sport":
            return int.from_bytes(data[l4:l4 + 2], "big")
        if name == "udp-dport":
            return int.from_bytes(data[l4 + 2:l4 + 4], "big")
        if name == "udp-len":
            return int.from_bytes(data[l4 + 4:l4 + 6], "big")
        if name == "udp-payload":
            return bytes(data[l4 + 8:l3 + total])
    if name.startswith("icmp"):
        if proto != ICMP:
            return None
        if name == "icmp-type":
            return data[l4]
        if name == "icmp-code":
            return data[l4 + 1]
    return None


_OPT_NAMES = {"mss": 2, "wscale": 3, "sackp": 4, "sack": 5, "timestamp": 8,
              "mptcp": 30, "fastopen": 34}


def ref_opt_kind(name):
    if name.startswith("tcp-opt-"):
        return _OPT_NAMES[name[len("tcp-opt-"):]]
    return int(name.split()[1])


def ref_walk_options(data, l3=0):
    """[(kind, payload)] excluding NOP/EOL; None when malformed."""
    ihl = data[l3] & 0x0F
    l4 = l3 + 4 * ihl
    doff = data[l4 + 12] >> 4
    end = l4 + 4 * doff
    i = l4 + 20
    out = []
    while i < end:
        kind = data[i]
        if kind == 0:
            break
        if kind == 1:
            i += 1
            continue
        if i + 1 >= end:
            return None
        length = data[i + 1]
        if length < 2 or i + length > end:
            return None
        out.append((kind, bytes(data[i + 2:i + length])))
        i += length
    return out


def random_valid_packet(rng, allow_frag=True, allow_ipopts=True):
    """One structurally valid random packet covering the protocol space."""
    saddr = rng.randrange(1, 1 << 32)
    daddr = rng.randrange(1, 1 << 32)
    kind = rng.randrange(10)
    ihl = 5
    ip_options = b""
    if allow_ipopts and rng.random() < 0.08:
        extra = rng.randint(1, 4)
        ihl = 5 + extra
        ip_options = bytes([1] * (4 * extra))  # NOP-padded IP options
    ident = rng.randrange(1 << 16)
    ttl = rng.randint(1, 255)
    tos = rng.randrange(256)
    if kind < 5:  # TCP
        options = b""
        if rng.random() < 0.5:
            picks = rng.sample(
                [(2, 2), (3, 1), (4, 0), (8, 8), (30, 4), (34, 4), (6, 4)],
                rng.randint(0, 4))
            opts = []
            for k, plen in picks:
                opts.append((k, rng.randbytes(plen)))
            if rng.random() < 0.3:
                opts.insert(rng.randrange(len(opts) + 1), (1,))
            options = make_options(*opts)
        return tcp_packet(saddr, daddr, rng.randint(0, 65535),
                          rng.randint(0, 65535), rng.randrange(1 << 32),
                          rng.randrange(1 << 32),
                          rng.randrange(64) | (SYN if rng.random() < 0.3 else 0),
                          rng.randrange(1 << 16), options,
                          rng.randbytes(rng.randrange(64)), ihl, ip_options,
                          ttl, ident, tos)
    if kind < 8:  # UDP
        return udp_packet(saddr, daddr, rng.randint(0, 65535),
                          rng.randint(0, 65535),
                          rng.randbytes(rng.randrange(64)), ihl, ip_options,
                          ttl, ident, tos)
    if kind < 9:  # ICMP
        return icmp_packet(saddr, daddr, rng.choice((0, 3, 8, 11)),
                           rng.randrange(4), rng.randbytes(rng.randrange(32)),
                           ihl, ip_options, ttl, ident)
    # fragment or odd protocol
    if allow_frag and rng.random() < 0.5:
        seg = udp_segment(saddr, daddr, 53, 53, b"x" * 16)
        hdr = ipv4_header(saddr, daddr, UDP, len(seg), ihl=ihl, ident=ident,
                          ttl=ttl, flags_frag=0x2000 | rng.randrange(64),
                          options=ip_options)
        return hdr + seg
    payload = rng.randbytes(rng.randrange(40))
    return ipv4_header(saddr, daddr, rng.choice((47, 50, 89, 132)),
                       len(payload), ihl=ihl, ident=ident, ttl=ttl,
                       options=ip_options) + payload

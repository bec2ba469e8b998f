"""Target application: static mask/key rewrite, TCP option edits, dynamic
per-connection values.

Static rewrites compile to a keep-mask and a key over the affected byte span
so the hot path is (packet & mask) | key. Fields the match does not guarantee
to exist (e.g. a tcp-* target on a rule that can match UDP) fall back to
checked per-field writes. Option strips/adds rebuild the option area and keep
the data offset and IP total length coherent.
"""

from .errors import MalformedOption
from .fields import FLAG, L4, OPT, PAYLOAD, PROTO_TCP
from .packet import fix_checksums, parse_tcp_options, write_field
from .rules import ADD_OPT, MOD, SHUFFLE, STRIP, STRIP_EXCEPT

_WINDOW = 80
_MAX_OPT_AREA = 40


def _encode_opt_value(value):
    if value is None:
        return b""
    if isinstance(value, int):
        return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    return bytes(value)


class TargetProgram:
    """Compiled targets of one rule."""

    __slots__ = ("span_lo", "span_hi", "keep_mask_int", "key_int",
                 "folded_fields", "cond_fields", "payload_mods",
                 "opt_strip", "opt_strip_except", "opt_adds", "opt_mods",
                 "dynamic", "needs_conn")

    def __init__(self):
        self.span_lo = None
        self.span_hi = None
        self.keep_mask_int = 0
        self.key_int = 0
        self.folded_fields = []   # (fd, value) mirrored by the mask/key span
        self.cond_fields = []     # (fd, value) needing per-packet checks
        self.payload_mods = []    # (fd, bytes)
        self.opt_strip = frozenset()
        self.opt_strip_except = None  # frozenset whitelist, or None
        self.opt_adds = []        # (kind, payload bytes)
        self.opt_mods = []        # (kind, value)
        self.dynamic = []         # fds of shuffle targets
        self.needs_conn = False

    @property
    def has_option_edits(self):
        return bool(self.opt_strip or self.opt_strip_except is not None
                    or self.opt_adds or self.opt_mods)

    @property
    def is_empty(self):
        return (self.span_lo is None and not self.cond_fields
                and not self.payload_mods and not self.has_option_edits
                and not self.dynamic)


def compile_targets(rule):
    """Build the rewrite program for a validated rule. Drop rules compile to
    an empty program (the drop happens during classification)."""
    tp = TargetProgram()
    mask = bytearray(b"\xff" * _WINDOW)
    key = bytearray(_WINDOW)
    folded_any = False

    for t in rule.targets:
        if t.kind == MOD:
            fd = t.field
            if fd.kind == OPT:
                tp.opt_mods.append((fd.opt_kind, t.value))
                continue
            if fd.kind == PAYLOAD:
                tp.payload_mods.append((fd, bytes(t.value)))
                continue
            # guaranteed-present fields fold into the mask/key; others get
            # checked writes so a mismatched packet passes untouched
            guaranteed = fd.proto is None or fd.proto == rule.proto_req
            if not guaranteed:
                tp.cond_fields.append((fd, t.value))
                continue
            if fd.kind == FLAG:
                start, n = 20 + 13, 1
                bits = 1 << fd.flag_bit
                val = bits if t.value else 0
            else:
                start = (20 if fd.base == L4 else 0) + fd.offset
                n = fd.span_bytes
                bits = ((1 << fd.width) - 1) << fd.shift
                val = (t.value << fd.shift) & bits
            om = int.from_bytes(mask[start:start + n], "big")
            ok = int.from_bytes(key[start:start + n], "big")
            mask[start:start + n] = (om & ~bits).to_bytes(n, "big")
            key[start:start + n] = ((ok & ~bits) | val).to_bytes(n, "big")
            tp.folded_fields.append((fd, t.value))
            folded_any = True
        elif t.kind == STRIP:
            tp.opt_strip = t.opt_kinds
        elif t.kind == STRIP_EXCEPT:
            tp.opt_strip_except = t.opt_kinds
        elif t.kind == ADD_OPT:
            tp.opt_adds.append((t.field.opt_kind, _encode_opt_value(t.value)))
        elif t.kind == SHUFFLE:
            tp.dynamic.append(t.field)

    if folded_any:
        cleared = [i for i in range(_WINDOW) if mask[i] != 0xFF or key[i] != 0]
        tp.span_lo, tp.span_hi = cleared[0], cleared[-1] + 1
        tp.keep_mask_int = int.from_bytes(mask[tp.span_lo:tp.span_hi], "big")
        tp.key_int = int.from_bytes(key[tp.span_lo:tp.span_hi], "big")
    tp.needs_conn = bool(tp.dynamic) or rule.stateful
    return tp


def apply_static(pkt, tp, counters=None):
    """Fixed-field rewrites. Eq-style masked write when the packet has the
    compiled layout (IHL=5); per-field writes otherwise."""
    modified = False
    if tp.span_lo is not None:
        if pkt.ihl == 5:
            d = pkt.data
            lo = pkt.l3_offset + tp.span_lo
            hi = pkt.l3_offset + tp.span_hi
            old = int.from_bytes(d[lo:hi], "big")
            new = (old & tp.keep_mask_int) | tp.key_int
            if new != old:
                d[lo:hi] = new.to_bytes(hi - lo, "big")
                pkt.invalidate()
                modified = True
        else:
            for fd, value in tp.folded_fields:
                modified |= write_field(pkt, fd, value)
    for fd, value in tp.cond_fields:
        if write_field(pkt, fd, value):
            modified = True
        elif counters is not None:
            counters["rewrite_skipped"] = counters.get("rewrite_skipped", 0) + 1
    for fd, value in tp.payload_mods:
        if write_field(pkt, fd, value):
            modified = True
        elif counters is not None:
            counters["rewrite_skipped"] = counters.get("rewrite_skipped", 0) + 1
    return modified


def apply_option_edits(pkt, tp, counters=None):
    """Strip/whitelist/modify/append TCP options, repack, and keep the data
    offset and IP total length coherent. A no-op edit leaves bytes alone."""
    if pkt.ip_proto != PROTO_TCP or pkt.is_fragment:
        return False
    try:
        views = parse_tcp_options(pkt)
    except MalformedOption:
        if counters is not None:
            counters["malformed_options"] = counters.get("malformed_options", 0) + 1
        return False

    d = pkt.data
    orig = [(v.kind, bytes(d[v.value_offset:v.value_offset + v.length - 2]))
            for v in views if v.kind != 1]
    opts = list(orig)
    if tp.opt_strip_except is not None:
        opts = [o for o in opts if o[0] in tp.opt_strip_except]
    elif tp.opt_strip:
        opts = [o for o in opts if o[0] not in tp.opt_strip]

    mod_changed = False
    if tp.opt_mods:
        out = []
        for kind, payload in opts:
            for mk, mv in tp.opt_mods:
                if mk != kind:
                    continue
                if isinstance(mv, int):
                    try:
                        enc = mv.to_bytes(len(payload), "big")
                    except OverflowError:
                        enc = None
                else:
                    enc = bytes(mv) if len(mv) == len(payload) else None
                if enc is None:
                    if counters is not None:
                        counters["rewrite_skipped"] = counters.get("rewrite_skipped", 0) + 1
                elif enc != payload:
                    payload = enc
                    mod_changed = True
            out.append((kind, payload))
        opts = out

    added = False
    if tp.opt_adds:
        need = sum(2 + len(p) for _, p in opts) + sum(2 + len(p) for _, p in tp.opt_adds)
        if need > _MAX_OPT_AREA:
            if counters is not None:
                counters["opt_add_skipped"] = counters.get("opt_add_skipped", 0) + 1
        else:
            opts = opts + tp.opt_adds
            added = True

    if opts == orig and not mod_changed and not added:
        return False

    area = b"".join(bytes((k, 2 + len(p))) + p for k, p in opts)
    pad = (-len(area)) % 4
    area += bytes(pad)

    l4 = pkt.l4_offset
    old_doff = pkt.tcp_data_offset
    old_end = l4 + 4 * old_doff
    new_doff = 5 + len(area) // 4
    d[l4 + 20:old_end] = area
    d[l4 + 12] = (new_doff << 4) | (d[l4 + 12] & 0x0F)
    delta = len(area) - (old_end - l4 - 20)
    if delta:
        l3 = pkt.l3_offset
        total = ((d[l3 + 2] << 8) | d[l3 + 3]) + delta
        d[l3 + 2:l3 + 4] = total.to_bytes(2, "big")
    pkt.invalidate()
    return True


_MIRROR = {
    "ip-saddr": "ip-daddr", "ip-daddr": "ip-saddr",
    "tcp-sport": "tcp-dport", "tcp-dport": "tcp-sport",
    "udp-sport": "udp-dport", "udp-dport": "udp-sport",
}


def mirror_field(fd):
    """The opposite-direction counterpart of a tuple field (sport <-> dport,
    saddr <-> daddr); fields without a mirror map to themselves."""
    from . import fields
    return fields.REGISTRY.get(_MIRROR.get(fd.name, fd.name), fd)


def apply_dynamic(pkt, entry, direction):
    """Per-connection translation: forward packets get the bound rewritten
    values; reverse packets get the originals written into mirrored fields."""
    modified = False
    if direction == "fwd":
        for b in entry.bindings:
            modified |= write_field(pkt, b.field, b.rewritten)
    else:
        for b in entry.bindings:
            modified |= write_field(pkt, mirror_field(b.field), b.original)
    return modified


def rewrite_packet(pkt, programs, entry=None, direction=None, counters=None):
    """Apply matched rules' programs in rule order, then the connection
    translation, then one checksum fixup. Returns True when bytes changed."""
    modified = False
    for tp in programs:
        if apply_static(pkt, tp, counters):
            modified = True
        if tp.has_option_edits and apply_option_edits(pkt, tp, counters):
            modified = True
        if tp.dynamic and entry is None and counters is not None:
            counters["missing_binding"] = counters.get("missing_binding", 0) + 1
    if entry is not None and entry.bindings and direction is not None:
        if apply_dynamic(pkt, entry, direction):
            modified = True
    if modified:
        fix_checksums(pkt)
    return modified

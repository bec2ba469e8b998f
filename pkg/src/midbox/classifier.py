"""Mask-based hash classification.

Fast-path matches compile into per-mask tables: the packet window is AND-ed
with the table mask and the result looked up by hash; a hit means
(packet & mask) XOR key == 0 for that entry's key. Whatever cannot live in a
mask (complex conditions, negated matches, TCP options, payload bytes)
remains as a per-rule residue evaluated only on mask survivors, or as a
linear slow path for rules with no mask at all.

Masks are anchored at the L3 header and cover 16-byte chunks, at most five
(80 bytes); leading all-zero chunks are skipped. Transport fields assume a
20-byte IPv4 header; packets with IP options take the linear path.
"""

from . import fields as fields_mod
from .fields import FLAG, L4, OPT, PAYLOAD, PROTO_TCP
from .packet import ABSENT, read_field
from .rewrite import compile_targets
from .rules import (EQ, GT, LEQ, LT, NEQ, PRESENT, DROP as T_DROP,
                    MatchExpr, _match_is_foldable, _prefix_mask)

WINDOW = 80
CHUNK = 16

# verdict kinds
DROP = "drop"
MISS = "miss"
MATCH = "match"

_IP_PROTO_FD = fields_mod.REGISTRY["ip-proto"]


class MaskKey:
    """One compiled (mask, key) window: `chunks` 16-byte chunks starting
    `skip` chunks after the L3 anchor."""

    __slots__ = ("mask", "key", "skip", "chunks", "mask_ints", "key_ints", "shifts")

    def __init__(self, mask, key, skip, chunks):
        self.mask = mask
        self.key = key
        self.skip = skip
        self.chunks = chunks
        # per-chunk integers and their bit offsets within the 80-byte window
        self.mask_ints = []
        self.key_ints = []
        self.shifts = []
        for i in range(chunks):
            self.mask_ints.append(int.from_bytes(mask[i * CHUNK:(i + 1) * CHUNK], "big"))
            self.key_ints.append(int.from_bytes(key[i * CHUNK:(i + 1) * CHUNK], "big"))
            self.shifts.append(8 * (WINDOW - CHUNK * (skip + i + 1)))

    def __repr__(self):
        return f"MaskKey(skip={self.skip}, chunks={self.chunks}, mask={self.mask.hex()})"


def match_chunks(pkt, mk):
    """Chunked matching: per active chunk, (pkt & mask) XOR key, OR-folded;
    a packet matches when the folded result is all-zero. Packets shorter
    than the window read as zero-extended."""
    w = pkt.window80()
    res = ((w >> mk.shifts[0]) & mk.mask_ints[0]) ^ mk.key_ints[0]
    for i in range(1, mk.chunks):
        res |= ((w >> mk.shifts[i]) & mk.mask_ints[i]) ^ mk.key_ints[i]
    return res == 0


def eval_match(pkt, m):
    """Evaluate one match expression against a packet.

    An ABSENT field satisfies only a negated presence check; every other
    condition fails on ABSENT regardless of negation.
    """
    v = read_field(pkt, m.field)
    if v is ABSENT:
        return m.negated and m.cond == PRESENT
    c = m.cond
    if c == PRESENT:
        if m.field.kind == FLAG:
            ok = v == 1
        elif m.field.kind == PAYLOAD:
            ok = len(v) > 0
        else:
            ok = True
    else:
        val = m.value
        if type(val) is tuple:  # (addr, prefix_len)
            addr, plen = val
            same = plen == 0 or ((v ^ addr) >> (32 - plen)) == 0
            ok = same if c == EQ else not same
        elif isinstance(val, (bytes, bytearray)):
            got = v[:len(val)] if m.field.kind == PAYLOAD else v
            ok = (got == val) if c == EQ else (got != val)
        else:
            if isinstance(v, (bytes, bytearray)):
                v = int.from_bytes(v, "big")  # option payload as integer
            if c == EQ:
                ok = v == val
            elif c == NEQ:
                ok = v != val
            elif c == LT:
                ok = v < val
            elif c == GT:
                ok = v > val
            elif c == LEQ:
                ok = v <= val
            else:
                ok = v >= val
    return ok != m.negated


def evaluate_residue(pkt, exprs):
    """Conjunction of complex-condition expressions."""
    for e in exprs:
        if not eval_match(pkt, e):
            return False
    return True


def match_options(pkt, exprs):
    """Conjunction of TCP-option expressions; false for non-TCP packets."""
    if pkt.ip_proto != PROTO_TCP or pkt.is_fragment:
        return False
    for e in exprs:
        if not eval_match(pkt, e):
            return False
    return True


def compile_rule(rule):
    """Fold the rule's foldable matches into a MaskKey; everything else
    becomes residue, prefixed by an implied `ip-proto ==` check when the
    rule uses transport fields without folding the protocol byte itself.

    Returns (MaskKey | None, residue). A None mask means the rule can only
    be matched by the linear slow path.
    """
    mk, residue, implied, _never = _compile_rule_parts(rule)
    if implied is not None:
        residue = [MatchExpr(_IP_PROTO_FD, EQ, implied)] + residue
    return mk, residue


def _compile_rule_parts(rule):
    """(mask_key, residue, implied_proto, never).

    `never` marks a rule whose folded equalities contradict each other; it
    can match nothing and is excluded from table and slow paths alike.
    """
    mask = bytearray(WINDOW)
    key = bytearray(WINDOW)
    residue = []
    folded_proto = False
    never = False
    for m in rule.matches:
        if not _match_is_foldable(m):
            residue.append(m)
            continue
        fd = m.field
        if fd.kind == FLAG:
            pos = 20 + 13
            bit = 1 << fd.flag_bit
            mask[pos] |= bit
            key[pos] |= bit
            continue
        base = 20 if fd.base == L4 else 0
        start = base + fd.offset
        n = fd.span_bytes
        if start + n > WINDOW:
            # field not reachable by the fast path: whole rule goes slow
            return None, list(rule.matches), None, False
        if type(m.value) is tuple:
            addr, plen = m.value
            bits = _prefix_mask(plen)
            val = addr & bits
        else:
            bits = ((1 << fd.width) - 1) << fd.shift
            val = (m.value << fd.shift) & bits
        om = int.from_bytes(mask[start:start + n], "big")
        ok = int.from_bytes(key[start:start + n], "big")
        overlap = om & bits
        if overlap and (ok & overlap) != (val & overlap):
            never = True  # two equalities on the same bits disagree
        mask[start:start + n] = (om | bits).to_bytes(n, "big")
        key[start:start + n] = (ok | val).to_bytes(n, "big")
        if fd.name == "ip-proto":
            folded_proto = True

    implied = rule.proto_req if (rule.proto_req is not None and not folded_proto) else None

    if not any(mask):
        return None, residue, implied, never

    nz = [i for i in range(WINDOW // CHUNK) if any(mask[i * CHUNK:(i + 1) * CHUNK])]
    skip, last = nz[0], nz[-1]
    chunks = last - skip + 1
    mk = MaskKey(bytes(mask[skip * CHUNK:(last + 1) * CHUNK]),
                 bytes(key[skip * CHUNK:(last + 1) * CHUNK]), skip, chunks)
    return mk, residue, implied, never


class CompiledRule:
    """One rule prepared for execution: mask/key, split residues, program."""

    __slots__ = ("rule", "mask_key", "proto", "complex_exprs", "opt_exprs",
                 "program", "drop", "never")

    def __init__(self, rule):
        self.rule = rule
        self.mask_key, residue, self.proto, self.never = _compile_rule_parts(rule)
        self.complex_exprs = []
        self.opt_exprs = []
        for m in residue:
            # negated presence checks are satisfiable by absence, so they
            # evaluate with the complex residue rather than the option walk
            if m.field.kind == OPT and not (m.negated and m.cond == PRESENT):
                self.opt_exprs.append(m)
            else:
                self.complex_exprs.append(m)
        self.drop = any(t.kind == T_DROP for t in rule.targets)
        self.program = compile_targets(rule)

    def residue_ok(self, pkt):
        """Slow-path checks for a packet that already hit this rule's mask."""
        if self.proto is not None and (pkt.ip_proto != self.proto or pkt.is_fragment):
            return False
        for m in self.complex_exprs:
            if not eval_match(pkt, m):
                return False
        if self.opt_exprs:
            if pkt.ip_proto != PROTO_TCP or pkt.is_fragment:
                return False
            for m in self.opt_exprs:
                if not eval_match(pkt, m):
                    return False
        return True

    def matches_linear(self, pkt):
        """Full evaluation of every match, independent of masks. Used for
        packets outside the fast path and for maskless rules."""
        if self.never:
            return False
        if self.rule.proto_req is not None and (
                pkt.ip_proto != self.rule.proto_req or pkt.is_fragment):
            return False
        for m in self.rule.matches:
            if not eval_match(pkt, m):
                return False
        return True


class SessionEntry:
    """Rules behind one (mask, key) pair, in insertion order."""

    __slots__ = ("rules", "needs_complex", "needs_opts", "verdict_hint")

    def __init__(self):
        self.rules = []
        self.needs_complex = False
        self.needs_opts = False
        self.verdict_hint = "rewrite"

    def add(self, cr):
        self.rules.append(cr)
        self.needs_complex = self.needs_complex or bool(cr.complex_exprs) \
            or cr.proto is not None
        self.needs_opts = self.needs_opts or bool(cr.opt_exprs)
        if cr.drop:
            self.verdict_hint = "drop"
        elif cr.rule.stateful and self.verdict_hint != "drop":
            self.verdict_hint = "stateful"


class ClassifierTable:
    """One hash table per distinct mask shape."""

    __slots__ = ("mask", "skip", "chunks", "mask_int", "shift", "entries")

    def __init__(self, mask, skip, chunks):
        self.mask = mask
        self.skip = skip
        self.chunks = chunks
        self.mask_int = int.from_bytes(mask, "big")
        self.shift = 8 * (WINDOW - CHUNK * (skip + chunks))
        self.entries = {}

    def probe(self, w80):
        return self.entries.get((w80 >> self.shift) & self.mask_int)

    def __repr__(self):
        return (f"ClassifierTable(skip={self.skip}, chunks={self.chunks}, "
                f"keys={len(self.entries)})")


class RuleSetSnapshot:
    """Immutable compiled view of the rule set; one snapshot serves a whole
    packet vector, so rule changes land between vectors."""

    __slots__ = ("tables", "slow", "by_id", "ordered", "version")

    def __init__(self, rules, version=0):
        self.version = version
        self.tables = []
        self.slow = []
        self.by_id = {}
        self.ordered = []
        table_index = {}
        for rule in rules:
            cr = CompiledRule(rule)
            self.by_id[rule.id] = cr
            self.ordered.append(cr)
            if cr.never:
                continue
            mk = cr.mask_key
            if mk is None:
                self.slow.append(cr)
                continue
            tkey = (mk.mask, mk.skip, mk.chunks)
            table = table_index.get(tkey)
            if table is None:
                table = ClassifierTable(mk.mask, mk.skip, mk.chunks)
                table_index[tkey] = table
                self.tables.append(table)
            key_int = int.from_bytes(mk.key, "big")
            entry = table.entries.get(key_int)
            if entry is None:
                entry = SessionEntry()
                table.entries[key_int] = entry
            entry.add(cr)

    def stats_lines(self):
        out = [f"{len(self.tables)} tables, {len(self.slow)} maskless rules"]
        for i, t in enumerate(self.tables):
            nrules = sum(len(e.rules) for e in t.entries.values())
            out.append(f"table {i}: skip={t.skip} chunks={t.chunks} "
                       f"keys={len(t.entries)} rules={nrules} mask={t.mask.hex()}")
        return out


class Verdict:
    __slots__ = ("kind", "rule_ids", "entry", "direction")

    def __init__(self, kind, rule_ids=(), entry=None, direction=None):
        self.kind = kind
        self.rule_ids = rule_ids
        self.entry = entry
        self.direction = direction

    def __repr__(self):
        return f"Verdict({self.kind}, rules={list(self.rule_ids)})"


def classify(pkt, snap, conn=None, now=0.0):
    """Drop/miss/match verdict for one packet.

    Probes every table (survivors get their residues evaluated), then the
    maskless rules, then the connection table. A tracked reverse/forward
    packet yields MATCH even without a rule hit; any matched drop rule
    dominates everything else.
    """
    matched = []
    if pkt.ihl == 5 and not pkt.is_fragment:
        w = pkt.window80()
        for t in snap.tables:
            e = t.entries.get((w >> t.shift) & t.mask_int)
            if e is not None:
                for cr in e.rules:
                    if cr.residue_ok(pkt):
                        matched.append(cr)
        for cr in snap.slow:
            if cr.matches_linear(pkt):
                matched.append(cr)
    else:
        for cr in snap.ordered:
            if cr.matches_linear(pkt):
                matched.append(cr)

    entry = direction = None
    if conn is not None:
        entry, direction = conn.lookup(pkt, now)
        if entry is not None and pkt.ip_proto == PROTO_TCP and not pkt.is_fragment:
            conn.update_state(entry, pkt.tcp_flags, direction, now)

    if matched:
        drop = False
        stateful_rule = None
        for cr in matched:
            cr.rule.hits += 1
            if cr.drop:
                drop = True
            if stateful_rule is None and cr.rule.stateful:
                stateful_rule = cr.rule
        if stateful_rule is not None and entry is None and conn is not None:
            entry = conn.insert(pkt, stateful_rule, now)
            direction = "fwd" if entry is not None else None
        if drop:
            return Verdict(DROP, tuple(sorted(cr.rule.id for cr in matched)),
                           entry, direction)
        return Verdict(MATCH, tuple(sorted(cr.rule.id for cr in matched)),
                       entry, direction)
    if entry is not None:
        return Verdict(MATCH, (), entry, direction)
    return Verdict(MISS)

"""Bidirectional 5-tuple connection table.

Entries are keyed by the normalized tuple (lexicographically smaller
endpoint first) so both directions of a flow hash to the same entry. Flows
whose stateful rule translates tuple fields are additionally indexed under
the translated tuple, which is what returning packets carry. Expiry is lazy:
stale entries die on lookup or during the budgeted sweep run between packet
vectors; there are no timers.
"""

import random
from dataclasses import dataclass
from typing import NamedTuple

from .fields import PROTO_TCP, PROTO_UDP
from .packet import ABSENT, read_field
from .rules import MOD, SHUFFLE, TUPLE_FIELDS

FWD = "fwd"
REV = "rev"

# TCP states
NEW = "NEW"
ESTABLISHED = "ESTABLISHED"
FIN_WAIT = "FIN_WAIT"
CLOSED = "CLOSED"
ACTIVE = "ACTIVE"  # UDP

FIN = 0x01
SYN = 0x02
RST = 0x04
ACK = 0x10

_TUPLE_POS = {"ip-saddr": 0, "ip-daddr": 1,
              "tcp-sport": 2, "udp-sport": 2,
              "tcp-dport": 3, "udp-dport": 3}


@dataclass
class TimeoutPolicy:
    tcp_new: float = 30.0
    tcp_established: float = 240.0
    tcp_fin_wait: float = 15.0
    tcp_closed: float = 15.0
    udp: float = 60.0


class DynamicBinding(NamedTuple):
    field: object
    original: int
    rewritten: int


def normalize(t5):
    """Direction-independent key: smaller (addr, port) endpoint first."""
    a = (t5[0], t5[2])
    b = (t5[1], t5[3])
    if a <= b:
        return (a, b, t5[4])
    return (b, a, t5[4])


def reverse_tuple(t5):
    return (t5[1], t5[0], t5[3], t5[2], t5[4])


class ConnEntry:
    __slots__ = ("key", "trans_key", "fwd_pre", "fwd_post", "rev_expect",
                 "proto", "state", "fin_dir", "flags_seen", "created",
                 "last_seen", "rule_id", "bindings", "pkts", "octets")

    def __init__(self, t5, trans_t5, rule_id, now):
        self.key = normalize(t5)
        self.trans_key = normalize(trans_t5)
        self.fwd_pre = t5
        self.fwd_post = trans_t5
        self.rev_expect = reverse_tuple(trans_t5)
        self.proto = t5[4]
        self.state = NEW if t5[4] == PROTO_TCP else ACTIVE
        self.fin_dir = None
        self.flags_seen = {FWD: 0, REV: 0}
        self.created = now
        self.last_seen = now
        self.rule_id = rule_id
        self.bindings = []
        self.pkts = [0, 0]
        self.octets = [0, 0]

    def describe(self, now):
        sa, da, sp, dp, proto = self.fwd_pre
        name = {PROTO_TCP: "tcp", PROTO_UDP: "udp"}.get(proto, str(proto))
        def q(a):
            return ".".join(str((a >> s) & 0xFF) for s in (24, 16, 8, 0))
        return (f"{name} {q(sa)}:{sp} -> {q(da)}:{dp} state={self.state} "
                f"age={now - self.created:.1f}s pkts={self.pkts[0]}/{self.pkts[1]} "
                f"bytes={self.octets[0]}/{self.octets[1]} rule={self.rule_id}")


class _ShuffleAlloc:
    """Collision-free value picks: seeded PRNG with linear re-probe."""

    def __init__(self, seed, lo, hi):
        self.rng = random.Random(seed)
        self.lo = lo
        self.hi = hi
        self.in_use = set()

    def allocate(self):
        if len(self.in_use) > self.hi - self.lo:
            return None
        v = self.rng.randint(self.lo, self.hi)
        while v in self.in_use:
            v = self.lo if v >= self.hi else v + 1
        self.in_use.add(v)
        return v

    def release(self, v):
        self.in_use.discard(v)


class ConnTable:
    """One shard of the connection table; a worker owns it exclusively."""

    def __init__(self, timeouts=None, capacity=2 ** 20, shuffle_seed=0,
                 shuffle_range=(1024, 65535)):
        self.timeouts = timeouts or TimeoutPolicy()
        self.capacity = capacity
        self.shuffle_seed = shuffle_seed
        self.shuffle_range = shuffle_range
        self._entries = {}
        self._alias = {}
        self._allocs = {}
        self._scan = []
        self._scan_i = 0
        self.full_drops = 0

    def __len__(self):
        return len(self._entries)

    def timeout_for(self, entry):
        t = self.timeouts
        if entry.proto != PROTO_TCP:
            return t.udp
        return {NEW: t.tcp_new, ESTABLISHED: t.tcp_established,
                FIN_WAIT: t.tcp_fin_wait, CLOSED: t.tcp_closed}[entry.state]

    def lookup(self, pkt, now):
        """(entry, direction) for a tracked packet, else (None, None).
        Expired entries are removed on the spot; hits refresh last_seen and
        the per-direction counters."""
        if not self._entries:
            return None, None
        if pkt.is_fragment or pkt.ip_proto not in (PROTO_TCP, PROTO_UDP):
            return None, None
        t5 = pkt.five_tuple()
        k = normalize(t5)
        e = self._entries.get(k)
        if e is None:
            e = self._alias.get(k)
        if e is None:
            return None, None
        if now - e.last_seen > self.timeout_for(e):
            self._remove(e)
            return None, None
        if t5 == e.fwd_pre or t5 == e.fwd_post:
            direction = FWD
        elif t5 == e.rev_expect or t5 == reverse_tuple(e.fwd_pre):
            direction = REV
        else:
            return None, None
        if now > e.last_seen:
            e.last_seen = now
        i = 0 if direction == FWD else 1
        e.pkts[i] += 1
        e.octets[i] += len(pkt.data) - pkt.l3_offset
        return e, direction

    def insert(self, pkt, rule, now):
        """Track a new flow for a stateful rule match; allocates dynamic
        bindings. Idempotent for an already-tracked tuple; returns None when
        the table is full (the packet is then processed statelessly)."""
        if pkt.is_fragment or pkt.ip_proto not in (PROTO_TCP, PROTO_UDP):
            return None
        t5 = pkt.five_tuple()
        k = normalize(t5)
        existing = self._entries.get(k) or self._alias.get(k)
        if existing is not None:
            return existing
        if len(self._entries) >= self.capacity:
            self.full_drops += 1
            return None

        bindings = []
        for t in rule.targets:
            if t.kind == SHUFFLE:
                orig = read_field(pkt, t.field)
                if orig is ABSENT:
                    continue
                alloc = self._alloc_for(rule.id, t.field)
                v = alloc.allocate()
                if v is None:
                    continue
                bindings.append(DynamicBinding(t.field, orig, v))
            elif t.kind == MOD and t.field is not None and t.field.name in TUPLE_FIELDS:
                orig = read_field(pkt, t.field)
                if orig is ABSENT:
                    continue
                bindings.append(DynamicBinding(t.field, orig, t.value))

        trans = list(t5)
        for b in bindings:
            pos = _TUPLE_POS.get(b.field.name)
            if pos is not None:
                trans[pos] = b.rewritten
        entry = ConnEntry(t5, tuple(trans), rule.id, now)
        entry.bindings = bindings
        if pkt.ip_proto == PROTO_TCP:
            entry.flags_seen[FWD] = pkt.tcp_flags
        entry.pkts[0] = 1
        entry.octets[0] = len(pkt.data) - pkt.l3_offset
        self._entries[entry.key] = entry
        if entry.trans_key != entry.key:
            self._alias[entry.trans_key] = entry
        return entry

    def update_state(self, entry, flags, direction, now=None):
        """Simplified TCP machine: RST closes; a first FIN enters FIN_WAIT;
        FIN+ACK from the other side closes; an ACK without SYN establishes.
        No transition leaves CLOSED."""
        if entry.proto != PROTO_TCP:
            return entry
        entry.flags_seen[direction] |= flags
        s = entry.state
        if s == CLOSED:
            return entry
        if flags & RST:
            entry.state = CLOSED
            return entry
        if flags & FIN:
            if s == FIN_WAIT:
                if direction != entry.fin_dir and flags & ACK:
                    entry.state = CLOSED
            else:
                entry.state = FIN_WAIT
                entry.fin_dir = direction
            return entry
        if s == NEW and flags & ACK and not flags & SYN:
            entry.state = ESTABLISHED
        return entry

    def purge(self, now, budget=64):
        """Incremental expiry sweep: examines at most `budget` entries per
        call, resuming where the previous call stopped."""
        removed = 0
        scanned = 0
        while scanned < budget:
            if self._scan_i >= len(self._scan):
                self._scan = list(self._entries.keys())
                self._scan_i = 0
                if not self._scan:
                    break
            key = self._scan[self._scan_i]
            self._scan_i += 1
            scanned += 1
            e = self._entries.get(key)
            if e is not None and now - e.last_seen > self.timeout_for(e):
                self._remove(e)
                removed += 1
        return removed

    def _alloc_for(self, rule_id, fd):
        key = (rule_id, fd.name)
        alloc = self._allocs.get(key)
        if alloc is None:
            lo, hi = self.shuffle_range
            hi = min(hi, (1 << fd.width) - 1) if fd.width else hi
            alloc = _ShuffleAlloc(f"{self.shuffle_seed}:{rule_id}:{fd.name}", lo, hi)
            self._allocs[key] = alloc
        return alloc

    def _remove(self, entry):
        self._entries.pop(entry.key, None)
        if entry.trans_key != entry.key:
            self._alias.pop(entry.trans_key, None)
        for b in entry.bindings:
            alloc = self._allocs.get((entry.rule_id, b.field.name))
            if alloc is not None:
                alloc.release(b.rewritten)

    def entries(self):
        return list(self._entries.values())

    def list_lines(self, now):
        return [e.describe(now) for e in self._entries.values()]

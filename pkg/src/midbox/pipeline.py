"""Vector pipeline and engine.

Packets flow in vectors (up to 256 by default) through a small node graph:
input (parse/validate) -> classify -> {error-drop | rewrite -> output |
output}. Rule changes build a new immutable snapshot published between
vectors, so one vector never sees two rule sets. Worker shards own their
connection tables; packets are steered to workers by the normalized 5-tuple
hash.
"""

import time
from dataclasses import dataclass, field

from .classifier import DROP as V_DROP, MATCH as V_MATCH, RuleSetSnapshot, classify
from .conntrack import ConnTable, TimeoutPolicy
from .errors import CommandError, MidboxError, NoSuchRule, NotIPv4, PacketError
from .packet import ETHERNET, RAW_IP, PacketBuffer, parse_packet
from .rewrite import rewrite_packet
from .rules import format_rule, parse_command

# per-packet dispositions
DISP_DROP = "drop"
DISP_FORWARD = "forward"
DISP_REWRITTEN = "rewritten"

NODE_NAMES = ("input", "classify", "rewrite", "drop", "output")


class NodeStats:
    __slots__ = ("name", "vectors", "packets", "ns")

    def __init__(self, name):
        self.name = name
        self.vectors = 0
        self.packets = 0
        self.ns = 0

    def observe(self, packets, ns):
        self.vectors += 1
        self.packets += packets
        self.ns += ns

    @property
    def ns_per_packet(self):
        return self.ns / self.packets if self.packets else 0.0


@dataclass
class EngineConfig:
    vector_size: int = 256
    workers: int = 1
    link_type: int = RAW_IP
    shuffle_seed: int = 0
    shuffle_range: tuple = (1024, 65535)
    conn_capacity: int = 2 ** 20
    purge_budget: int = 64
    timeouts: TimeoutPolicy = field(default_factory=TimeoutPolicy)


class Worker:
    """One logical pipeline worker: owns a connection-table shard."""

    __slots__ = ("wid", "conn")

    def __init__(self, wid, config):
        self.wid = wid
        self.conn = ConnTable(config.timeouts, config.conn_capacity,
                              config.shuffle_seed + wid, config.shuffle_range)


class RunReport:
    """Counts and per-node costs of one stream run."""

    def __init__(self, packets_in, forwarded, dropped, rewritten, duration_ns,
                 node_stats, counters):
        self.packets_in = packets_in
        self.forwarded = forwarded
        self.dropped = dropped
        self.rewritten = rewritten
        self.duration_ns = duration_ns
        self.node_stats = node_stats
        self.counters = counters

    @property
    def pps(self):
        secs = self.duration_ns / 1e9
        return self.packets_in / secs if secs > 0 else 0.0

    @property
    def engine_ns_per_packet(self):
        """classify+rewrite cost per classified packet."""
        c = self.node_stats["classify"]
        r = self.node_stats["rewrite"]
        return (c.ns + r.ns) / c.packets if c.packets else 0.0

    def to_text(self):
        lines = [
            f"packets in={self.packets_in} forwarded={self.forwarded} "
            f"dropped={self.dropped} rewritten={self.rewritten} "
            f"pps={self.pps:.0f}",
            f"{'node':<10} {'vectors':>9} {'packets':>10} {'ns/packet':>10}",
        ]
        for name in NODE_NAMES:
            s = self.node_stats[name]
            lines.append(f"{name:<10} {s.vectors:>9} {s.packets:>10} "
                         f"{s.ns_per_packet:>10.1f}")
        for k in sorted(self.counters):
            lines.append(f"counter {k}={self.counters[k]}")
        return "\n".join(lines)

    def to_json_dict(self):
        return {
            "totals": {
                "packets_in": self.packets_in,
                "forwarded": self.forwarded,
                "dropped": self.dropped,
                "rewritten": self.rewritten,
                "duration_ns": self.duration_ns,
                "pps": self.pps,
            },
            "nodes": [
                {
                    "name": name,
                    "vectors": self.node_stats[name].vectors,
                    "packets": self.node_stats[name].packets,
                    "ns_per_packet": self.node_stats[name].ns_per_packet,
                }
                for name in NODE_NAMES
            ],
            "counters": dict(self.counters),
        }


class Engine:
    """Rule store, compiled snapshot, workers, and the vector loop."""

    def __init__(self, config=None):
        self.config = config or EngineConfig()
        self.rules = {}
        self._next_id = 1
        self.enabled = True
        self._version = 0
        self.snapshot = RuleSetSnapshot([], 0)
        self.workers = [Worker(i, self.config) for i in range(self.config.workers)]
        self.reset_stats()

    # ------------------------------------------------------------- rules

    def install(self, rule, rebuild=True):
        """Assign an id (never reused) and publish a new snapshot."""
        rule.id = self._next_id
        self._next_id += 1
        self.rules[rule.id] = rule
        if rebuild:
            self._rebuild()
        return rule.id

    def remove(self, rule_id):
        if rule_id not in self.rules:
            raise NoSuchRule(f"no such rule {rule_id}")
        del self.rules[rule_id]
        self._rebuild()

    def flush(self):
        n = len(self.rules)
        self.rules.clear()
        self._rebuild()
        return n

    def add_commands(self, lines):
        """Install `mmb add ...` lines in bulk: one snapshot rebuild at the
        end, so large rule sets load in linear time. Returns assigned ids."""
        ids = []
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cmd = parse_command(line)
            if cmd.verb not in ("add", "add-stateful"):
                raise CommandError(f"expected an add command, got {cmd.verb!r}")
            ids.append(self.install(cmd.rule, rebuild=False))
        self._rebuild()
        return ids

    def _rebuild(self):
        self._version += 1
        self.snapshot = RuleSetSnapshot(
            [self.rules[k] for k in sorted(self.rules)], self._version)

    # ------------------------------------------------------------ command

    def apply_command(self, cmd):
        if cmd.verb in ("add", "add-stateful"):
            rid = self.install(cmd.rule)
            return f"added rule {rid}"
        if cmd.verb == "del":
            self.remove(cmd.rule_id)
            return f"deleted rule {cmd.rule_id}"
        if cmd.verb == "list":
            return self.list_rules_text()
        if cmd.verb == "flush":
            return f"flushed {self.flush()} rules"
        if cmd.verb == "enable":
            self.enabled = True
            return "classification enabled"
        if cmd.verb == "disable":
            self.enabled = False
            return "classification disabled"
        raise CommandError(f"unhandled verb {cmd.verb!r}")

    def execute_line(self, line):
        """One REPL line -> output text. Errors never raise out of here."""
        line = line.strip()
        if not line:
            return ""
        if line == "list connections":
            return self.list_connections_text()
        if line == "list tables":
            return self.list_tables_text()
        try:
            return self.apply_command(parse_command(line))
        except MidboxError as e:
            return f"error: {e}"

    def list_rules_text(self):
        if not self.rules:
            return "no rules"
        lines = []
        for rid in sorted(self.rules):
            r = self.rules[rid]
            verb = "add-stateful" if r.stateful else "add"
            tag = " [fast-path]" if r.fast_path_eligible else ""
            lines.append(f"{rid}: mmb {verb} {format_rule(r)}{tag} hits={r.hits}")
        return "\n".join(lines)

    def list_tables_text(self):
        return "\n".join(self.snapshot.stats_lines())

    def list_connections_text(self):
        now = time.monotonic()
        lines = []
        for w in self.workers:
            lines.extend(w.conn.list_lines(now))
        return "\n".join(lines) if lines else "no connections"

    # ------------------------------------------------------------- packets

    def steer(self, pkt):
        if len(self.workers) == 1:
            return 0
        t5 = pkt.five_tuple()
        a = (t5[0], t5[2])
        b = (t5[1], t5[3])
        key = (a, b, t5[4]) if a <= b else (b, a, t5[4])
        return hash(key) % len(self.workers)

    def run_vector(self, pkts, worker=None, now=None):
        """Process one vector; returns [(pkt, disposition)] in input order."""
        if worker is None:
            worker = self.workers[0]
        if now is None:
            now = time.monotonic()
        stats = self.node_stats
        snap = self.snapshot
        counters = self.counters

        if not self.enabled:
            return [(p, DISP_FORWARD) for p in pkts]

        t0 = time.perf_counter_ns()
        verdicts = [classify(p, snap, worker.conn, now) for p in pkts]
        worker.conn.purge(now, self.config.purge_budget)
        t1 = time.perf_counter_ns()
        stats["classify"].observe(len(pkts), t1 - t0)
        counters["table_probes"] += len(snap.tables) * len(pkts)

        to_rewrite = [(p, v) for p, v in zip(pkts, verdicts) if v.kind == V_MATCH]
        t2 = time.perf_counter_ns()
        by_id = snap.by_id
        for p, v in to_rewrite:
            programs = [by_id[rid].program for rid in v.rule_ids
                        if not by_id[rid].program.is_empty]
            rewrite_packet(p, programs, v.entry, v.direction, counters)
            if p._opts_bad:
                counters["malformed_options"] += 1
        t3 = time.perf_counter_ns()
        if to_rewrite:
            stats["rewrite"].observe(len(to_rewrite), t3 - t2)

        out = []
        ndrop = 0
        for p, v in zip(pkts, verdicts):
            if v.kind == V_DROP:
                out.append((p, DISP_DROP))
                ndrop += 1
            elif v.kind == V_MATCH:
                out.append((p, DISP_REWRITTEN))
            else:
                out.append((p, DISP_FORWARD))
        if ndrop:
            t4 = time.perf_counter_ns()
            stats["drop"].observe(ndrop, time.perf_counter_ns() - t4)
            counters["verdict_drops"] += ndrop
        return out

    def run_stream(self, source, sink=None, reset=True):
        """Drain a packet source in vectors; returns a RunReport.

        Source items may be PacketBuffers or (bytes, ts_sec, ts_usec)
        records. `sink` receives forwarded packets: a list collects raw
        bytes, a callable gets the PacketBuffer.
        """
        if reset:
            self.reset_stats()
        stats = self.node_stats
        counters = self.counters
        V = self.config.vector_size
        nworkers = len(self.workers)
        bufs = [[] for _ in range(nworkers)]
        packets_in = forwarded = dropped = rewritten = 0

        t_start = time.perf_counter_ns()

        def emit(pkt):
            nonlocal forwarded
            forwarded += 1
            t0 = time.perf_counter_ns()
            if sink is not None:
                if isinstance(sink, list):
                    sink.append(pkt.to_bytes())
                else:
                    sink(pkt)
            stats["output"].observe(1, time.perf_counter_ns() - t0)

        def flush(widx):
            nonlocal dropped, rewritten
            vec = bufs[widx]
            if not vec:
                return
            bufs[widx] = []
            for pkt, disp in self.run_vector(vec, self.workers[widx]):
                if disp == DISP_DROP:
                    dropped += 1
                else:
                    if disp == DISP_REWRITTEN:
                        rewritten += 1
                    emit(pkt)

        for item in source:
            packets_in += 1
            t0 = time.perf_counter_ns()
            if isinstance(item, PacketBuffer):
                pkt = item
            else:
                data, ts_sec, ts_usec = item
                try:
                    pkt = parse_packet(data, self.config.link_type,
                                       trace_id=packets_in - 1,
                                       ts=ts_sec + ts_usec / 1e6)
                except NotIPv4:
                    stats["input"].observe(1, time.perf_counter_ns() - t0)
                    if self.config.link_type == ETHERNET:
                        # non-IP frames never enter the engine; pass through
                        counters["bypass_non_ip"] += 1
                        forwarded += 1
                        if isinstance(sink, list):
                            sink.append(bytes(data))
                        continue
                    counters["parse_error_drops"] += 1
                    dropped += 1
                    continue
                except PacketError:
                    stats["input"].observe(1, time.perf_counter_ns() - t0)
                    counters["parse_error_drops"] += 1
                    dropped += 1
                    continue
            stats["input"].observe(1, time.perf_counter_ns() - t0)
            widx = self.steer(pkt)
            bufs[widx].append(pkt)
            if len(bufs[widx]) >= V:
                flush(widx)

        for widx in range(nworkers):
            flush(widx)

        duration = time.perf_counter_ns() - t_start
        return RunReport(packets_in, forwarded, dropped, rewritten, duration,
                         dict(self.node_stats), dict(self.counters))

    def reset_stats(self):
        self.node_stats = {n: NodeStats(n) for n in NODE_NAMES}
        self.counters = {"table_probes": 0, "verdict_drops": 0,
                         "parse_error_drops": 0}

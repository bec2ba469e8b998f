"""midbox: a userspace middlebox engine.

An interactive rule language compiles into mask-based hash classification
tables with complex-condition and TCP-option slow paths, a stateful
connection table, and a mask/key rewrite stage; packets flow in batched
vectors through a small node graph.
"""

from .classifier import (ClassifierTable, MaskKey, RuleSetSnapshot,
                         SessionEntry, Verdict, classify, compile_rule,
                         evaluate_residue, match_chunks, match_options)
from .conntrack import ConnEntry, ConnTable, DynamicBinding, TimeoutPolicy
from .errors import (BadChecksum, CommandError, CommandSyntaxError,
                     MalformedOption, MidboxError, NoSuchRule, NotIPv4,
                     PacketError, SemanticError, TruncatedPacket,
                     TypeMismatch, UnknownField)
from .fields import FieldDescriptor, REGISTRY
from .packet import (ABSENT, ETHERNET, RAW_IP, PacketBuffer, TcpOptionView,
                     fix_checksums, parse_packet, parse_tcp_options,
                     read_field, serialize, verify_checksums, write_field)
from .pipeline import Engine, EngineConfig, RunReport
from .rewrite import TargetProgram, apply_dynamic, apply_option_edits, \
    apply_static, compile_targets
from .rules import (Command, MatchExpr, Rule, TargetExpr, format_command,
                    format_rule, parse_command, validate_rule)
from .scenarios import ScenarioReport, run_scenario

__version__ = "0.1.0"

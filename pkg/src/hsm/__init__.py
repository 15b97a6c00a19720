"""Hierarchical state machine runtime.

States declare finite outcome sets; machines compose states through a
transition table and are themselves states, so behaviors nest. One shared
blackboard and one cooperative cancel token thread through a whole run.
Machines can be described declaratively (JSON), validated statically, and
watched live over a WebSocket monitor.
"""

from . import errors
from .blackboard import Blackboard, Value, check_value
from .core import (
    CANCELED,
    CancelToken,
    State,
    StateMachine,
    Status,
    ValidationIssue,
)
from .definition import (
    FsmDefinition,
    StateDef,
    build,
    export_dot,
    lint,
    parse,
    serialize,
)
from .demos import demo_definition, demo_text, list_demos
from .monitor import (
    MonitorServer,
    MonitorSnapshot,
    Registry,
    StructureDescriptor,
    decode,
    describe,
    encode,
    serve,
    snapshot,
)
from .states import (
    BlackHoleTransport,
    CallbackState,
    EchoTransport,
    PrimitiveSpec,
    RemoteCallState,
    RemoteEndpoint,
    WaitState,
    build_primitive,
    make_callback_state,
    make_remote_call_state,
    make_wait_state,
    registered_primitives,
)

__version__ = "0.1.0"

__all__ = [
    "Blackboard",
    "BlackHoleTransport",
    "CallbackState",
    "CancelToken",
    "CANCELED",
    "EchoTransport",
    "FsmDefinition",
    "MonitorServer",
    "MonitorSnapshot",
    "PrimitiveSpec",
    "Registry",
    "RemoteCallState",
    "RemoteEndpoint",
    "State",
    "StateDef",
    "StateMachine",
    "Status",
    "StructureDescriptor",
    "ValidationIssue",
    "Value",
    "WaitState",
    "build",
    "build_primitive",
    "check_value",
    "decode",
    "demo_definition",
    "demo_text",
    "describe",
    "encode",
    "errors",
    "export_dot",
    "lint",
    "list_demos",
    "make_callback_state",
    "make_remote_call_state",
    "make_wait_state",
    "parse",
    "registered_primitives",
    "serialize",
    "serve",
    "snapshot",
]

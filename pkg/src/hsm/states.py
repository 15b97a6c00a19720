"""Ready-made states: callback, timed wait, remote call, and the primitive registry.

The registry powers the definition format: a document names a primitive and
its parameters, and build_primitive() turns that into a State. Remote calls
are transport-agnostic; a Transport is any object with
call(address, request, timeout_ms) and, optionally, cancel().
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from .blackboard import Blackboard, Value, check_value
from .core import CANCELED, CancelToken, State, check_outcome_label
from .errors import BadParams, EmptyOutcomeSet, InvalidDuration, UnknownPrimitive

logger = logging.getLogger(__name__)

ABORTED = "aborted"
SUCCEEDED = "succeeded"

# Slice used when waiting on worker threads so cancellation is noticed quickly.
_REMOTE_POLL_S = 0.01


class CallbackState(State):
    """Plain state that runs one callable body(blackboard) -> outcome.

    The token is polled before the body runs; a pre-set token short-circuits
    to "canceled" without invoking the body.
    """

    def __init__(self, outcomes, body: Callable[[Blackboard], str]):
        super().__init__(outcomes)
        self._body = body

    def execute(self, blackboard: Blackboard, token: CancelToken) -> str:
        if token.is_set():
            return CANCELED
        return self._body(blackboard)


class WaitState(State):
    """Sleeps for duration_ms in poll_ms slices, checking the token each slice."""

    def __init__(self, duration_ms: int, poll_ms: int):
        if not isinstance(duration_ms, int) or isinstance(duration_ms, bool) or duration_ms < 0:
            raise InvalidDuration(f"duration_ms must be a non-negative integer, got {duration_ms!r}")
        if duration_ms > 0:
            if not isinstance(poll_ms, int) or isinstance(poll_ms, bool) or not 0 < poll_ms <= duration_ms:
                raise InvalidDuration(
                    f"poll_ms must satisfy 0 < poll_ms <= duration_ms, got {poll_ms!r}"
                )
        super().__init__({"done", CANCELED})
        self.duration_ms = duration_ms
        self.poll_ms = poll_ms

    def execute(self, blackboard: Blackboard, token: CancelToken) -> str:
        if token.is_set():
            return CANCELED
        deadline = time.monotonic() + self.duration_ms / 1000.0
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return "done"
            # Event.wait wakes immediately on cancel, so latency is bounded
            # by the poll slice even though we sleep in slices.
            if token.wait(min(self.poll_ms / 1000.0, remaining)):
                return CANCELED


class RemoteEndpoint:
    """Address + transport + timeout for a request/response call."""

    def __init__(self, transport, address: str, timeout_ms: int):
        if not isinstance(timeout_ms, int) or isinstance(timeout_ms, bool) or timeout_ms <= 0:
            raise InvalidDuration(f"timeout_ms must be a positive integer, got {timeout_ms!r}")
        self.transport = transport
        self.address = address
        self.timeout_ms = timeout_ms


class RemoteCallState(State):
    """Builds a request from the blackboard, calls the transport, maps the response.

    Transport failure or timeout becomes the outcome "aborted"; a token set
    while waiting cancels the call (if the transport supports cancel()) and
    yields "canceled". Failures are outcomes, never exceptions, so transition
    tables stay the only control-flow mechanism.
    """

    def __init__(self, endpoint: RemoteEndpoint, request_builder, response_mapper, outcomes):
        outcomes = frozenset(outcomes)
        missing = {ABORTED, CANCELED} - outcomes
        if missing:
            raise EmptyOutcomeSet(
                f"remote-call states must declare {sorted(missing)} in their outcomes"
            )
        super().__init__(outcomes)
        self.endpoint = endpoint
        self._request_builder = request_builder
        self._response_mapper = response_mapper

    def execute(self, blackboard: Blackboard, token: CancelToken) -> str:
        if token.is_set():
            return CANCELED
        request = self._request_builder(blackboard)
        check_value(request)

        box: dict = {}
        done = threading.Event()

        def worker():
            try:
                box["response"] = self.endpoint.transport.call(
                    self.endpoint.address, request, self.endpoint.timeout_ms
                )
            except Exception as exc:  # transport failures become "aborted"
                box["error"] = exc
            done.set()

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()

        deadline = time.monotonic() + self.endpoint.timeout_ms / 1000.0
        while not done.is_set():
            if token.is_set():
                self._try_cancel_transport()
                return CANCELED
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._try_cancel_transport()
                return ABORTED
            done.wait(min(_REMOTE_POLL_S, remaining))

        if "error" in box:
            logger.debug("remote call to %s failed: %s", self.endpoint.address, box["error"])
            return ABORTED
        return self._response_mapper(box["response"], blackboard)

    def _try_cancel_transport(self):
        cancel = getattr(self.endpoint.transport, "cancel", None)
        if callable(cancel):
            try:
                cancel()
            except Exception:
                logger.debug("transport cancel() raised", exc_info=True)


class EchoTransport:
    """Loopback transport: returns the request, optionally after a delay."""

    def __init__(self, latency_ms: int = 0):
        self.latency_ms = latency_ms
        self._canceled = threading.Event()

    def call(self, address: str, request: Value, timeout_ms: int) -> Value:
        if self.latency_ms:
            self._canceled.wait(self.latency_ms / 1000.0)
        return request

    def cancel(self):
        self._canceled.set()


class BlackHoleTransport:
    """Transport that never replies; calls block until cancel()."""

    def __init__(self):
        self._release = threading.Event()

    def call(self, address: str, request: Value, timeout_ms: int) -> Value:
        self._release.wait()
        raise TimeoutError(f"no response from {address}")

    def cancel(self):
        self._release.set()


# -- spec-style constructors ---------------------------------------------------

def make_callback_state(outcomes, body: Callable[[Blackboard], str]) -> CallbackState:
    return CallbackState(outcomes, body)


def make_wait_state(duration_ms: int, poll_ms: int) -> WaitState:
    return WaitState(duration_ms, poll_ms)


def make_remote_call_state(endpoint, request_builder, response_mapper, outcomes) -> RemoteCallState:
    return RemoteCallState(endpoint, request_builder, response_mapper, outcomes)


# -- primitive registry ----------------------------------------------------------

@dataclass(frozen=True)
class PrimitiveSpec:
    """A primitive name plus its parameter values, as found in definitions."""

    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Param:
    name: str
    kind: str  # "string" | "int" | "bool" | "value" | "str_map"
    required: bool = True
    default: object = None


@dataclass(frozen=True)
class _Primitive:
    name: str
    params: tuple[_Param, ...]
    outcomes: Callable[[dict], frozenset[str]]
    factory: Callable[[dict], State]


_REGISTRY: dict[str, _Primitive] = {}


def register_primitive(name, params, outcomes, factory) -> None:
    _REGISTRY[name] = _Primitive(name, tuple(params), outcomes, factory)


def registered_primitives() -> list[str]:
    return sorted(_REGISTRY)


def validate_params(name: str, params: dict) -> dict:
    """Check params against the primitive's schema; returns params with defaults filled."""
    prim = _REGISTRY.get(name)
    if prim is None:
        raise UnknownPrimitive(name)
    known = {p.name for p in prim.params}
    for key in params:
        if key not in known:
            raise BadParams(f"primitive {name!r} has no parameter {key!r}")
    normalized = {}
    for p in prim.params:
        if p.name not in params:
            if p.required:
                raise BadParams(f"primitive {name!r} requires parameter {p.name!r}")
            normalized[p.name] = p.default
            continue
        value = params[p.name]
        _check_param_kind(name, p, value)
        normalized[p.name] = value
    return normalized


def _check_param_kind(prim_name: str, p: _Param, value) -> None:
    label = f"primitive {prim_name!r} parameter {p.name!r}"
    if p.kind == "string":
        if not isinstance(value, str):
            raise BadParams(f"{label} must be a string, got {type(value).__name__}")
    elif p.kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise BadParams(f"{label} must be an integer, got {type(value).__name__}")
    elif p.kind == "bool":
        if not isinstance(value, bool):
            raise BadParams(f"{label} must be a boolean, got {type(value).__name__}")
    elif p.kind == "value":
        try:
            check_value(value, p.name)
        except Exception as exc:
            raise BadParams(f"{label}: {exc}") from None
    elif p.kind == "str_map":
        if not isinstance(value, dict) or not value:
            raise BadParams(f"{label} must be a non-empty object")
        for k, v in value.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise BadParams(f"{label} must map strings to strings")
    else:  # pragma: no cover - registry misuse
        raise BadParams(f"{label}: unknown parameter kind {p.kind!r}")


def primitive_outcomes(name: str, params: dict) -> frozenset[str]:
    """Declared outcome set of the state build_primitive would produce."""
    normalized = validate_params(name, params)
    return _REGISTRY[name].outcomes(normalized)


def build_primitive(spec: PrimitiveSpec) -> State:
    normalized = validate_params(spec.name, spec.params)
    return _REGISTRY[spec.name].factory(normalized)


def encode_case_key(value: Value) -> str:
    """Canonical string form used to match branch_on_key cases.

    Strings match as-is; everything else matches its compact JSON encoding
    (e.g. true, 3, 1.5, ["a",1]), since JSON object keys are always strings.
    """
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _set_key_factory(p):
    def body(bb: Blackboard) -> str:
        bb.set(p["key"], p["value"])
        return "done"
    return CallbackState({"done"}, body)


def _branch_factory(p):
    key, cases, default = p["key"], p["cases"], p["default"]

    def body(bb: Blackboard) -> str:
        if not bb.contains(key):
            return default
        return cases.get(encode_case_key(bb.get(key)), default)

    return CallbackState(set(cases.values()) | {default}, body)


def _counter_factory(p):
    key, limit = p["key"], p["limit"]

    def body(bb: Blackboard) -> str:
        current = bb.get(key) if bb.contains(key) else 0
        if not isinstance(current, int) or isinstance(current, bool):
            current = 0
        current += 1
        bb.set(key, current)
        return "reached" if current >= limit else "below"

    return CallbackState({"below", "reached"}, body)


def _log_factory(p):
    message = p["message"]

    def body(bb: Blackboard) -> str:
        logger.info("%s", message)
        return "done"

    return CallbackState({"done"}, body)


def _fail_n_times_factory(p):
    key, n = p["key"], p["n"]

    def body(bb: Blackboard) -> str:
        attempts = bb.get(key) if bb.contains(key) else 0
        if not isinstance(attempts, int) or isinstance(attempts, bool):
            attempts = 0
        attempts += 1
        bb.set(key, attempts)
        return "failed" if attempts <= n else SUCCEEDED

    return CallbackState({"failed", SUCCEEDED}, body)


def _wait_ms_factory(p):
    ms = p["ms"]
    poll = p["poll_ms"]
    if poll is None:
        poll = min(100, ms) if ms > 0 else 1
    return WaitState(ms, poll)


def _remote_echo_factory(p):
    endpoint = RemoteEndpoint(EchoTransport(p["latency_ms"]), "loopback", p["timeout_ms"])
    key, result_key = p["key"], p["result_key"]

    def build_request(bb: Blackboard) -> Value:
        return bb.get(key)

    def map_response(response: Value, bb: Blackboard) -> str:
        bb.set(result_key, response)
        return SUCCEEDED

    return RemoteCallState(endpoint, build_request, map_response, {SUCCEEDED, ABORTED, CANCELED})


def _branch_outcomes(p) -> frozenset[str]:
    for o in list(p["cases"].values()) + [p["default"]]:
        check_outcome_label(o)
    return frozenset(p["cases"].values()) | {p["default"]}


register_primitive(
    "set_key",
    [_Param("key", "string"), _Param("value", "value")],
    lambda p: frozenset({"done"}),
    _set_key_factory,
)
register_primitive(
    "wait_ms",
    [_Param("ms", "int"), _Param("poll_ms", "int", required=False)],
    lambda p: frozenset({"done", CANCELED}),
    _wait_ms_factory,
)
register_primitive(
    "branch_on_key",
    [_Param("key", "string"), _Param("cases", "str_map"), _Param("default", "string")],
    _branch_outcomes,
    _branch_factory,
)
register_primitive(
    "counter",
    [_Param("key", "string"), _Param("limit", "int")],
    lambda p: frozenset({"below", "reached"}),
    _counter_factory,
)
register_primitive(
    "log",
    [_Param("message", "string")],
    lambda p: frozenset({"done"}),
    _log_factory,
)
register_primitive(
    "fail_n_times",
    [_Param("key", "string"), _Param("n", "int")],
    lambda p: frozenset({"failed", SUCCEEDED}),
    _fail_n_times_factory,
)
register_primitive(
    "remote_echo",
    [
        _Param("key", "string"),
        _Param("result_key", "string"),
        _Param("timeout_ms", "int", required=False, default=1000),
        _Param("latency_ms", "int", required=False, default=0),
    ],
    lambda p: frozenset({SUCCEEDED, ABORTED, CANCELED}),
    _remote_echo_factory,
)

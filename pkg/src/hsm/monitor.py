"""Live monitoring: structure snapshots, the wire codec, and the publisher server.

Every message is self-contained (full structure plus live status), so viewers
can join or reconnect at any time with no handshake state. The server carries
one JSON object per WebSocket text frame at ws://host:port/ws, answers
GET /fsms with the registered ids, and serves viewer assets at GET /.
"""

from __future__ import annotations

import asyncio
import json
import logging
import mimetypes
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from aiohttp import WSMsgType, web

from .core import StateMachine, Status
from .errors import BindFailure, DecodeError, DuplicateId

logger = logging.getLogger(__name__)

WIRE_VERSION = 1

_STATUS_VALUES = {s.value for s in Status}


@dataclass(frozen=True)
class StateDescriptor:
    name: str
    outcomes: tuple[str, ...]
    transitions: tuple[tuple[str, str], ...]  # (outcome, target), sorted
    child: "StructureDescriptor | None"


@dataclass(frozen=True)
class StructureDescriptor:
    name: str
    outcomes: tuple[str, ...]
    initial: str
    states: tuple[StateDescriptor, ...]

    def state(self, name: str) -> StateDescriptor | None:
        for s in self.states:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class MonitorSnapshot:
    fsm_id: str
    seq: int
    timestamp_ms: int
    structure: StructureDescriptor
    status: str  # idle | running | finished | canceled
    current_path: tuple[str, ...]
    final_outcome: str | None


def describe(machine: StateMachine) -> StructureDescriptor:
    """Static structure of a machine, with states and outcomes in sorted order."""
    states = []
    for name in sorted(machine.states):
        child = machine.states[name]
        states.append(StateDescriptor(
            name=name,
            outcomes=tuple(sorted(child.outcomes)),
            transitions=tuple(sorted(machine.transition_map(name).items())),
            child=describe(child) if isinstance(child, StateMachine) else None,
        ))
    return StructureDescriptor(
        name=machine.name,
        outcomes=tuple(sorted(machine.machine_outcomes)),
        initial=machine.initial or "",
        states=tuple(states),
    )


def snapshot(machine: StateMachine, fsm_id: str, seq: int,
             timestamp_ms: int | None = None) -> MonitorSnapshot:
    """Point-in-time snapshot; status and path are captured consistently."""
    status, path, final = machine.status_snapshot()
    return MonitorSnapshot(
        fsm_id=fsm_id,
        seq=seq,
        timestamp_ms=int(time.time() * 1000) if timestamp_ms is None else timestamp_ms,
        structure=describe(machine),
        status=status.value,
        current_path=tuple(path),
        final_outcome=final,
    )


# -- wire codec ----------------------------------------------------------------

def _structure_to_obj(s: StructureDescriptor) -> dict:
    return {
        "name": s.name,
        "outcomes": list(s.outcomes),
        "initial": s.initial,
        "states": [
            {
                "name": st.name,
                "outcomes": list(st.outcomes),
                "transitions": dict(st.transitions),
                "child": _structure_to_obj(st.child) if st.child is not None else None,
            }
            for st in s.states
        ],
    }


def encode(s: MonitorSnapshot) -> str:
    """One wire message: compact JSON with lexicographically sorted keys."""
    obj = {
        "version": WIRE_VERSION,
        "seq": s.seq,
        "timestamp_ms": s.timestamp_ms,
        "fsm_id": s.fsm_id,
        "structure": _structure_to_obj(s.structure),
        "status": s.status,
        "current_path": list(s.current_path),
        "final_outcome": s.final_outcome,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _expect(obj: dict, key: str, types, path: str):
    if key not in obj:
        raise DecodeError(path, f"missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool) and types is int:
        raise DecodeError(f"{path}.{key}" if path else key, "wrong type")
    return value


def _decode_structure(obj, path: str) -> StructureDescriptor:
    if not isinstance(obj, dict):
        raise DecodeError(path, "structure must be an object")
    name = _expect(obj, "name", str, path)
    initial = _expect(obj, "initial", str, path)
    outcomes = _expect(obj, "outcomes", list, path)
    if not all(isinstance(o, str) for o in outcomes):
        raise DecodeError(f"{path}.outcomes", "outcomes must be strings")
    states_obj = _expect(obj, "states", list, path)
    states = []
    for i, st in enumerate(states_obj):
        st_path = f"{path}.states[{i}]"
        if not isinstance(st, dict):
            raise DecodeError(st_path, "state descriptor must be an object")
        st_name = _expect(st, "name", str, st_path)
        st_outcomes = _expect(st, "outcomes", list, st_path)
        if not all(isinstance(o, str) for o in st_outcomes):
            raise DecodeError(f"{st_path}.outcomes", "outcomes must be strings")
        transitions = _expect(st, "transitions", dict, st_path)
        for k, v in transitions.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise DecodeError(f"{st_path}.transitions", "entries must map strings to strings")
        child_obj = st.get("child")
        child = None
        if child_obj is not None:
            child = _decode_structure(child_obj, f"{st_path}.child")
        states.append(StateDescriptor(
            name=st_name,
            outcomes=tuple(st_outcomes),
            transitions=tuple(sorted(transitions.items())),
            child=child,
        ))
    return StructureDescriptor(
        name=name, outcomes=tuple(outcomes), initial=initial, states=tuple(states)
    )


def decode(text: str) -> MonitorSnapshot:
    """Parse and validate one wire message; raises DecodeError on any violation."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError("$", f"not valid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise DecodeError("$", "message must be a JSON object")

    version = _expect(obj, "version", int, "")
    if version != WIRE_VERSION:
        raise DecodeError("version", f"unsupported version {version}")
    seq = _expect(obj, "seq", int, "")
    if isinstance(seq, bool) or seq < 0:
        raise DecodeError("seq", "must be a non-negative integer")
    timestamp_ms = _expect(obj, "timestamp_ms", int, "")
    fsm_id = _expect(obj, "fsm_id", str, "")
    status = _expect(obj, "status", str, "")
    if status not in _STATUS_VALUES:
        raise DecodeError("status", f"unknown status {status!r}")
    structure = _decode_structure(_expect(obj, "structure", dict, ""), "structure")

    path_obj = _expect(obj, "current_path", list, "")
    if not all(isinstance(p, str) for p in path_obj):
        raise DecodeError("current_path", "entries must be strings")
    if (len(path_obj) > 0) != (status == "running"):
        raise DecodeError("current_path", "must be non-empty exactly when status is running")

    if "final_outcome" not in obj:
        raise DecodeError("", "missing field 'final_outcome'")
    final = obj["final_outcome"]
    if final is not None and not isinstance(final, str):
        raise DecodeError("final_outcome", "must be a string or null")
    if (final is not None) != (status == "finished"):
        raise DecodeError("final_outcome", "must be present exactly when status is finished")

    level: StructureDescriptor | None = structure
    for depth, name in enumerate(path_obj):
        if level is None:
            raise DecodeError("current_path", f"path descends below structure at depth {depth}")
        entry = level.state(name)
        if entry is None:
            raise DecodeError("current_path", f"{name!r} is not a state at depth {depth}")
        level = entry.child

    return MonitorSnapshot(
        fsm_id=fsm_id,
        seq=seq,
        timestamp_ms=timestamp_ms,
        structure=structure,
        status=status,
        current_path=tuple(path_obj),
        final_outcome=final,
    )


# -- registry -----------------------------------------------------------------

class Registry:
    """Machines monitored by one server, keyed by unique non-empty ids."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, StateMachine] = {}

    def register(self, fsm_id: str, machine: StateMachine) -> None:
        if not isinstance(fsm_id, str) or fsm_id == "":
            raise DuplicateId("fsm ids must be non-empty strings")
        with self._lock:
            if fsm_id in self._entries:
                raise DuplicateId(f"fsm id {fsm_id!r} is already registered")
            self._entries[fsm_id] = machine

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._entries)

    def items(self) -> list[tuple[str, StateMachine]]:
        with self._lock:
            return sorted(self._entries.items())


def register(registry: Registry, fsm_id: str, machine: StateMachine) -> None:
    registry.register(fsm_id, machine)


# -- server ---------------------------------------------------------------------

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>hsm monitor</title></head>
<body><p>hsm monitor is running. Connect a viewer to <code>/ws</code>;
registered machines are listed at <a href="/fsms">/fsms</a>.</p></body></html>
"""

_QUEUE_LIMIT = 256


class MonitorServer:
    """Publishes snapshots of every registered machine at a fixed rate.

    Runs an asyncio loop on a dedicated thread. Each client gets its own
    bounded queue; overflow drops the oldest frames for that client only, so
    one bad client never stalls the publisher or its peers.
    """

    def __init__(self, registry: Registry, host: str, port: int, rate_hz: float,
                 static_dir: str | Path | None = None):
        if rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        self._registry = registry
        self._host = host
        self._port = port
        self._period = 1.0 / rate_hz
        self._static_dir = Path(static_dir).resolve() if static_dir else None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._stop: asyncio.Event | None = None
        self._seqs: dict[str, int] = {}
        self._last: dict[str, tuple[int, str]] = {}  # fsm_id -> (seq, encoded)
        self._clients: set[asyncio.Queue] = set()
        self._started: "threading.Event" = threading.Event()
        self._start_error: BaseException | None = None
        self._bound_port: int | None = None

    # -- lifecycle (called from any thread) --

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="hsm-monitor", daemon=True)
        self._thread.start()
        self._started.wait()
        if self._start_error is not None:
            self._thread.join()
            raise self._start_error

    def shutdown(self) -> None:
        """Stop publishing, close client connections, release the port."""
        loop = self._loop
        if loop is None or self._stop is None:
            return
        try:
            loop.call_soon_threadsafe(self._stop.set)
        except RuntimeError:
            pass  # loop already closed
        if self._thread is not None:
            self._thread.join(timeout=10)

    def publish_now(self) -> None:
        """Run one publish cycle immediately and wait for it to complete."""
        assert self._loop is not None
        asyncio.run_coroutine_threadsafe(self._publish_cycle(), self._loop).result(timeout=10)

    @property
    def port(self) -> int:
        assert self._bound_port is not None
        return self._bound_port

    @property
    def ws_url(self) -> str:
        return f"ws://{self._host}:{self.port}/ws"

    @property
    def http_url(self) -> str:
        return f"http://{self._host}:{self.port}"

    # -- loop thread --

    def _run(self) -> None:
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(self._main())
        finally:
            self._loop.close()

    async def _main(self) -> None:
        self._stop = asyncio.Event()
        app = web.Application()
        app.router.add_get("/ws", self._handle_ws)
        app.router.add_get("/fsms", self._handle_fsms)
        app.router.add_get("/", self._handle_index)
        app.router.add_get("/{tail:.+}", self._handle_asset)
        runner = web.AppRunner(app)
        await runner.setup()
        site = web.TCPSite(runner, self._host, self._port)
        try:
            await site.start()
        except OSError as exc:
            self._start_error = BindFailure(f"cannot bind {self._host}:{self._port}: {exc}")
            self._started.set()
            await runner.cleanup()
            return
        self._bound_port = site._server.sockets[0].getsockname()[1]
        self._started.set()
        logger.info("monitor serving on %s:%s", self._host, self._bound_port)

        try:
            while not self._stop.is_set():
                await self._publish_cycle()
                try:
                    await asyncio.wait_for(self._stop.wait(), timeout=self._period)
                except asyncio.TimeoutError:
                    pass
        finally:
            for queue in list(self._clients):
                self._offer(queue, None)  # poison pill: close your connection
            await asyncio.sleep(0)
            await runner.cleanup()

    async def _publish_cycle(self) -> None:
        for fsm_id, machine in self._registry.items():
            seq = self._seqs.get(fsm_id, 0) + 1
            self._seqs[fsm_id] = seq
            try:
                message = encode(snapshot(machine, fsm_id, seq))
            except Exception:
                logger.exception("snapshot of %r failed", fsm_id)
                continue
            self._last[fsm_id] = (seq, message)
            for queue in self._clients:
                self._offer(queue, (fsm_id, seq, message))

    @staticmethod
    def _offer(queue: asyncio.Queue, item) -> None:
        while True:
            try:
                queue.put_nowait(item)
                return
            except asyncio.QueueFull:
                try:
                    queue.get_nowait()  # drop oldest; gaps are allowed, reordering is not
                except asyncio.QueueEmpty:
                    pass

    async def _handle_ws(self, request: web.Request) -> web.WebSocketResponse:
        ws = web.WebSocketResponse()
        await ws.prepare(request)

        # No awaits between snapshotting the cache and subscribing, so no
        # frame can be both replayed and queued.
        backlog = sorted(self._last.items())
        queue: asyncio.Queue = asyncio.Queue(maxsize=_QUEUE_LIMIT)
        self._clients.add(queue)
        last_sent: dict[str, int] = {}

        async def sender():
            for fsm_id, (seq, message) in backlog:
                await ws.send_str(message)
                last_sent[fsm_id] = seq
            while True:
                item = await queue.get()
                if item is None:
                    await ws.close()
                    return
                fsm_id, seq, message = item
                if seq <= last_sent.get(fsm_id, -1):
                    continue
                await ws.send_str(message)
                last_sent[fsm_id] = seq

        sender_task = asyncio.ensure_future(sender())
        try:
            async for msg in ws:
                if msg.type in (WSMsgType.ERROR, WSMsgType.CLOSE):
                    break
        except Exception:
            logger.debug("viewer connection errored", exc_info=True)
        finally:
            self._clients.discard(queue)
            sender_task.cancel()
            try:
                await sender_task
            except (asyncio.CancelledError, Exception):
                pass
        return ws

    async def _handle_fsms(self, request: web.Request) -> web.Response:
        return web.json_response(self._registry.ids())

    async def _handle_index(self, request: web.Request) -> web.Response:
        if self._static_dir is not None:
            index = self._static_dir / "index.html"
            if index.is_file():
                return web.Response(body=index.read_bytes(), content_type="text/html")
        return web.Response(text=_PLACEHOLDER_PAGE, content_type="text/html")

    async def _handle_asset(self, request: web.Request) -> web.Response:
        if self._static_dir is None:
            raise web.HTTPNotFound()
        tail = request.match_info["tail"]
        candidate = (self._static_dir / tail).resolve()
        if not candidate.is_relative_to(self._static_dir) or not candidate.is_file():
            raise web.HTTPNotFound()
        ctype = mimetypes.guess_type(candidate.name)[0] or "application/octet-stream"
        return web.Response(body=candidate.read_bytes(), content_type=ctype)


def serve(registry: Registry, bind_address: str, rate_hz: float,
          static_dir: str | Path | None = None) -> MonitorServer:
    """Start publishing `registry` at ws://bind_address/ws; returns the handle.

    bind_address is "host:port"; port 0 binds an ephemeral port (see
    handle.port). Raises BindFailure when the address is malformed or taken.
    """
    host, sep, port_text = bind_address.rpartition(":")
    if not sep or not host:
        raise BindFailure(f"bind address must look like host:port, got {bind_address!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise BindFailure(f"invalid port in bind address {bind_address!r}") from None
    server = MonitorServer(registry, host, port, rate_hz, static_dir=static_dir)
    server.start()
    return server

"""Declarative machine definitions: JSON parsing, static linting, building, DOT export.

The document format (strict JSON, unknown fields rejected):

    {
      "name": "M",
      "outcomes": ["succeeded"],
      "initial": "A",
      "states": {
        "A": {
          "primitive": {"type": "set_key", "params": {"key": "x", "value": 1}},
          "transitions": {"done": "succeeded"}
        }
      }
    }

A state carries exactly one of "primitive" or "machine" (a nested definition,
always inline) plus "transitions". The reserved outcome "canceled" may appear
as a transition key; when unmapped it auto-routes to the machine outcome
"canceled".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .core import (
    CANCELED,
    NO_INITIAL,
    NO_PATH_TO_OUTCOME,
    UNKNOWN_TARGET,
    UNMAPPED_OUTCOME,
    UNREACHABLE_STATE,
    StateMachine,
    ValidationIssue,
)
from .errors import (
    BadParams,
    DefinitionSyntaxError,
    DuplicateKey,
    LintFailed,
    SchemaError,
    UnknownPrimitive,
)
from .states import PrimitiveSpec, build_primitive, primitive_outcomes


@dataclass
class FsmDefinition:
    name: str
    outcomes: list[str]
    initial: str
    states: dict[str, StateDef] = field(default_factory=dict)


@dataclass
class StateDef:
    """Exactly one of primitive/machine is set; transitions map outcome -> target."""

    primitive: PrimitiveSpec | None = None
    machine: FsmDefinition | None = None
    transitions: dict[str, str] = field(default_factory=dict)


def _child(path: str, key: str) -> str:
    return key if path == "$" else f"{path}.{key}"


# -- parsing -------------------------------------------------------------------

class _Pairs(list):
    """Marker wrapper so duplicate keys survive json decoding for later checks."""


def parse(text: str) -> FsmDefinition:
    """Parse a definition document; strict about syntax, schema, and duplicates."""
    try:
        raw = json.loads(text, object_pairs_hook=_Pairs)
    except json.JSONDecodeError as exc:
        raise DefinitionSyntaxError(exc.lineno, exc.colno, exc.msg) from None
    obj = _dedup(raw, "$")
    return _parse_definition(obj, "$")


def _dedup(node, path: str):
    """Convert _Pairs trees into dicts, raising DuplicateKey with a precise path."""
    if isinstance(node, _Pairs):
        out = {}
        for key, value in node:
            if key in out:
                raise DuplicateKey(path, key)
            out[key] = _dedup(value, _child(path, key))
        return out
    if isinstance(node, list):
        return [_dedup(item, f"{path}[{i}]") for i, item in enumerate(node)]
    return node


def _require_object(node, path: str, allowed: set[str], required: set[str]) -> dict:
    if not isinstance(node, dict):
        raise SchemaError(path, f"expected an object, got {type(node).__name__}")
    for key in node:
        if key not in allowed:
            raise SchemaError(_child(path, key), "unknown field")
    for key in sorted(required):
        if key not in node:
            raise SchemaError(path, f"missing required field {key!r}")
    return node


def _require_string(node, path: str) -> str:
    if not isinstance(node, str) or node == "":
        raise SchemaError(path, "expected a non-empty string")
    return node


def _parse_definition(node, path: str) -> FsmDefinition:
    fields = {"name", "outcomes", "initial", "states"}
    _require_object(node, path, allowed=fields, required=fields)
    name = _require_string(node["name"], _child(path, "name"))

    outcomes_node = node["outcomes"]
    outcomes_path = _child(path, "outcomes")
    if not isinstance(outcomes_node, list) or not outcomes_node:
        raise SchemaError(outcomes_path, "expected a non-empty array of outcome labels")
    outcomes: list[str] = []
    for i, item in enumerate(outcomes_node):
        label = _require_string(item, f"{outcomes_path}[{i}]")
        if label.strip() == "":
            raise SchemaError(f"{outcomes_path}[{i}]", "outcome labels must not be blank")
        if label in outcomes:
            raise SchemaError(f"{outcomes_path}[{i}]", f"duplicate outcome {label!r}")
        outcomes.append(label)

    initial = _require_string(node["initial"], _child(path, "initial"))

    states_node = node["states"]
    states_path = _child(path, "states")
    if not isinstance(states_node, dict):
        raise SchemaError(states_path, "expected an object of state definitions")
    states: dict[str, StateDef] = {}
    for state_name, state_node in states_node.items():
        if state_name == "":
            raise SchemaError(states_path, "state names must be non-empty")
        states[state_name] = _parse_state(state_node, f"{states_path}.{state_name}")

    return FsmDefinition(name=name, outcomes=outcomes, initial=initial, states=states)


def _parse_state(node, path: str) -> StateDef:
    _require_object(
        node, path,
        allowed={"primitive", "machine", "transitions"},
        required={"transitions"},
    )
    has_primitive = "primitive" in node
    has_machine = "machine" in node
    if has_primitive == has_machine:
        raise SchemaError(path, "a state needs exactly one of 'primitive' or 'machine'")

    transitions_node = node["transitions"]
    transitions_path = _child(path, "transitions")
    if not isinstance(transitions_node, dict):
        raise SchemaError(transitions_path, "expected an object of outcome -> target")
    transitions: dict[str, str] = {}
    for outcome, target in transitions_node.items():
        if outcome.strip() == "":
            raise SchemaError(transitions_path, "transition keys must not be blank")
        transitions[outcome] = _require_string(target, f"{transitions_path}.{outcome}")

    if has_primitive:
        spec = _parse_primitive(node["primitive"], _child(path, "primitive"))
        return StateDef(primitive=spec, transitions=transitions)
    machine = _parse_definition(node["machine"], _child(path, "machine"))
    return StateDef(machine=machine, transitions=transitions)


def _parse_primitive(node, path: str) -> PrimitiveSpec:
    _require_object(node, path, allowed={"type", "params"}, required={"type"})
    ptype = _require_string(node["type"], _child(path, "type"))
    params = node.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(_child(path, "params"), "expected an object")
    try:
        primitive_outcomes(ptype, params)
    except UnknownPrimitive:
        raise SchemaError(_child(path, "type"), f"unknown primitive {ptype!r}") from None
    except BadParams as exc:
        raise SchemaError(_child(path, "params"), str(exc)) from None
    return PrimitiveSpec(name=ptype, params=dict(params))


# -- serialization -----------------------------------------------------------------

def to_json_obj(definition: FsmDefinition) -> dict:
    states = {}
    for name, sd in definition.states.items():
        entry: dict = {}
        if sd.primitive is not None:
            entry["primitive"] = {"type": sd.primitive.name, "params": dict(sd.primitive.params)}
        else:
            entry["machine"] = to_json_obj(sd.machine)
        entry["transitions"] = dict(sd.transitions)
        states[name] = entry
    return {
        "name": definition.name,
        "outcomes": list(definition.outcomes),
        "initial": definition.initial,
        "states": states,
    }


def serialize(definition: FsmDefinition) -> str:
    """Document text that parses back to a structurally equal definition."""
    return json.dumps(to_json_obj(definition), indent=2) + "\n"


# -- linting ------------------------------------------------------------------------

def lint(definition: FsmDefinition) -> list[ValidationIssue]:
    """Static issues, computed from the document alone; same codes as validate()."""
    issues: list[ValidationIssue] = []
    _lint_into(definition, issues, "")
    return issues


def _declared_outcomes(sd: StateDef) -> frozenset[str]:
    if sd.primitive is not None:
        return primitive_outcomes(sd.primitive.name, sd.primitive.params)
    return frozenset(sd.machine.outcomes)


def _lint_into(definition: FsmDefinition, issues: list[ValidationIssue], prefix: str) -> None:
    states = definition.states
    outcomes = set(definition.outcomes)

    if definition.initial not in states:
        issues.append(ValidationIssue(
            NO_INITIAL, f"{prefix}initial",
            f"initial {definition.initial!r} is not a state of machine {definition.name!r}",
        ))

    for state_name in sorted(states):
        sd = states[state_name]
        declared = _declared_outcomes(sd)
        for outcome in sorted(sd.transitions):
            target = sd.transitions[outcome]
            if outcome not in declared and outcome != CANCELED:
                issues.append(ValidationIssue(
                    UNKNOWN_TARGET,
                    f"{prefix}states.{state_name}.transitions.{outcome}",
                    f"state {state_name!r} does not declare outcome {outcome!r}",
                ))
            elif target not in states and target not in outcomes and target != CANCELED:
                issues.append(ValidationIssue(
                    UNKNOWN_TARGET,
                    f"{prefix}states.{state_name}.transitions.{outcome}",
                    f"target {target!r} is neither a state nor an outcome "
                    f"of machine {definition.name!r}",
                ))
        for outcome in sorted(declared):
            if outcome != CANCELED and outcome not in sd.transitions:
                issues.append(ValidationIssue(
                    UNMAPPED_OUTCOME,
                    f"{prefix}states.{state_name}.transitions.{outcome}",
                    f"outcome {outcome!r} of state {state_name!r} has no transition",
                ))

    _lint_reachability(definition, issues, prefix)

    for state_name in sorted(states):
        sd = states[state_name]
        if sd.machine is not None:
            _lint_into(sd.machine, issues, f"{prefix}states.{state_name}.machine.")


def _lint_reachability(definition: FsmDefinition, issues: list[ValidationIssue], prefix: str) -> None:
    states = definition.states
    if definition.initial not in states:
        return
    outcomes = set(definition.outcomes)
    seen_states = {definition.initial}
    seen_outcomes: set[str] = set()
    frontier = [definition.initial]
    while frontier:
        name = frontier.pop()
        sd = states[name]
        # Walk every written edge, even ones with an undeclared key: the bad
        # entry is already reported as UnknownTarget, and cascading
        # unreachability noise would bury the actual defect.
        for target in sd.transitions.values():
            if target in states:
                if target not in seen_states:
                    seen_states.add(target)
                    frontier.append(target)
            elif target in outcomes or target == CANCELED:
                seen_outcomes.add(target)
    for state_name in sorted(states):
        if state_name not in seen_states:
            issues.append(ValidationIssue(
                UNREACHABLE_STATE, f"{prefix}states.{state_name}",
                f"state {state_name!r} is not reachable from initial {definition.initial!r}",
            ))
    for outcome in sorted(definition.outcomes):
        if outcome != CANCELED and outcome not in seen_outcomes:
            issues.append(ValidationIssue(
                NO_PATH_TO_OUTCOME, f"{prefix}outcomes.{outcome}",
                f"no transition path from initial {definition.initial!r} "
                f"produces machine outcome {outcome!r}",
            ))


# -- building -------------------------------------------------------------------------

def build(definition: FsmDefinition) -> StateMachine:
    """Construct the executable machine; requires a clean lint."""
    issues = lint(definition)
    if issues:
        raise LintFailed(issues)
    return _build(definition)


def _build(definition: FsmDefinition) -> StateMachine:
    machine = StateMachine(definition.name, definition.outcomes)
    for state_name, sd in definition.states.items():
        if sd.primitive is not None:
            state = build_primitive(sd.primitive)
        else:
            state = _build(sd.machine)
        machine.add_state(state_name, state, sd.transitions)
    machine.set_initial(definition.initial)
    return machine


# -- DOT export ------------------------------------------------------------------------

def export_dot(definition: FsmDefinition) -> str:
    """Graphviz DOT text: one cluster per machine (nested for nested machines),
    box nodes for states (initial drawn bold), double-circled terminal nodes
    for machine outcomes, one labeled edge per transition. Edges leaving a
    nested machine start at that machine's outcome node; edges entering one
    are clipped at its cluster border. Byte-stable: states and outcomes are
    emitted in sorted order."""
    emitter = _DotEmitter()
    emitter.emit(definition)
    return emitter.text()


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _DotEmitter:
    def __init__(self):
        self._lines: list[str] = []
        self._edges: list[str] = []
        self._cluster_count = 0
        self._cluster_index: dict[str, int] = {}

    def text(self) -> str:
        return "\n".join(self._lines) + "\n"

    def emit(self, definition: FsmDefinition) -> None:
        self._lines.append(f"digraph {_quote(definition.name)} {{")
        self._lines.append("  compound=true;")
        self._lines.append('  node [fontname="Helvetica"];')
        self._emit_machine(definition, definition.name, indent="  ", extra_canceled=False)
        self._lines.extend(self._edges)
        self._lines.append("}")

    def _emit_machine(self, definition: FsmDefinition, path: str, indent: str,
                      extra_canceled: bool) -> None:
        cluster = self._cluster_count
        self._cluster_count += 1
        self._cluster_index[path] = cluster
        self._lines.append(f"{indent}subgraph cluster_{cluster} {{")
        inner = indent + "  "
        self._lines.append(f"{inner}label={_quote(definition.name)};")

        for state_name in sorted(definition.states):
            sd = definition.states[state_name]
            node_path = f"{path}/{state_name}"
            if sd.machine is not None:
                self._emit_machine(sd.machine, node_path, inner,
                                   extra_canceled=CANCELED in sd.transitions)
            else:
                attrs = [f"label={_quote(state_name)}", "shape=box"]
                if state_name == definition.initial:
                    attrs.append("penwidth=2")
                self._lines.append(f"{inner}{_quote(node_path)} [{', '.join(attrs)}];")

        terminal_outcomes = set(definition.outcomes)
        if extra_canceled or any(
            target == CANCELED
            for sd in definition.states.values()
            for target in sd.transitions.values()
        ):
            terminal_outcomes.add(CANCELED)
        for outcome in sorted(terminal_outcomes):
            node = f"{path}/__outcome__/{outcome}"
            self._lines.append(
                f"{inner}{_quote(node)} [label={_quote(outcome)}, shape=doublecircle];"
            )

        self._lines.append(f"{indent}}}")
        self._collect_edges(definition, path)

    def _collect_edges(self, definition: FsmDefinition, path: str) -> None:
        for state_name in sorted(definition.states):
            sd = definition.states[state_name]
            for outcome in sorted(sd.transitions):
                target = sd.transitions[outcome]
                if sd.machine is not None:
                    tail = f"{path}/{state_name}/__outcome__/{outcome}"
                else:
                    tail = f"{path}/{state_name}"
                head, lhead = self._entry_node(definition, target, path)
                attrs = [f"label={_quote(outcome)}"]
                if lhead is not None:
                    attrs.append(f"lhead={lhead}")
                self._edges.append(f"  {_quote(tail)} -> {_quote(head)} [{', '.join(attrs)}];")

    def _entry_node(self, definition: FsmDefinition, target: str, path: str):
        """Node an edge should point at, plus the cluster name for lhead if any."""
        if target in definition.states:
            sd = definition.states[target]
            node_path = f"{path}/{target}"
            if sd.machine is None:
                return node_path, None
            cluster_idx = self._cluster_index.get(node_path)
            cluster = f"cluster_{cluster_idx}" if cluster_idx is not None else None
            inner, _ = self._entry_node(sd.machine, sd.machine.initial, node_path)
            return inner, cluster
        return f"{path}/__outcome__/{target}", None

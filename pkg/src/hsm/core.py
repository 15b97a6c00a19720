"""Execution engine: state contract, machine composition, validation, hierarchy.

A State declares a finite outcome set and implements execute(blackboard, token)
returning one of those outcomes. A StateMachine is itself a State whose declared
outcomes are its machine-level outcomes, so machines nest arbitrarily. The
reserved outcome "canceled" is implicitly available on every machine: any state
may return it, transition tables do not have to map it, and an unmapped
"canceled" routes straight to the machine outcome "canceled".
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Callable

from .blackboard import Blackboard
from .errors import (
    DuplicateStateName,
    EmptyName,
    EmptyOutcomeSet,
    InvalidOutcomeLabel,
    MachineRunning,
    NameShadowsOutcome,
    StateContractViolation,
    UndeclaredOutcomeInMap,
    UnknownState,
    ValidationFailed,
)

CANCELED = "canceled"

# Validation issue codes.
NO_INITIAL = "NoInitial"
UNKNOWN_TARGET = "UnknownTarget"
UNMAPPED_OUTCOME = "UnmappedOutcome"
UNREACHABLE_STATE = "UnreachableState"
NO_PATH_TO_OUTCOME = "NoPathToOutcome"


def check_outcome_label(label) -> str:
    """Return `label` if it is a usable outcome label, else raise."""
    if not isinstance(label, str) or label.strip() == "":
        raise InvalidOutcomeLabel(f"outcome labels must be non-empty strings, got {label!r}")
    return label


class CancelToken:
    """Set-once cancellation flag, observable from any thread.

    Cancellation is cooperative: running states poll the token and wind down
    when it is set. The flag never resets; create a new token per run if the
    previous one was canceled.
    """

    def __init__(self):
        self._event = threading.Event()

    def cancel(self) -> None:
        """Request cancellation. Idempotent."""
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until canceled (or timeout); returns whether the flag is set."""
        return self._event.wait(timeout)

    def __repr__(self) -> str:
        return f"CancelToken(set={self.is_set()})"


class Status(Enum):
    IDLE = "idle"
    RUNNING = "running"
    FINISHED = "finished"
    CANCELED = "canceled"


@dataclass(frozen=True, order=True)
class ValidationIssue:
    """One static defect found in a machine or definition.

    `location` is a dotted path into the structure, e.g.
    "states.NAVIGATE.transitions.ok"; nested machines are prefixed with
    "states.<wrapper>.machine.".
    """

    code: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} {self.location}: {self.message}"


class State:
    """An executable unit with a declared, immutable outcome set.

    Subclasses implement execute(). Returning an outcome outside the declared
    set (other than the reserved "canceled") is a contract violation that
    aborts the run.
    """

    def __init__(self, outcomes):
        labels = frozenset(check_outcome_label(o) for o in outcomes)
        if not labels:
            raise EmptyOutcomeSet("a state needs at least one outcome")
        self._outcomes = labels

    @property
    def outcomes(self) -> frozenset[str]:
        return self._outcomes

    @property
    def kind(self) -> str:
        return "plain"

    def execute(self, blackboard: Blackboard, token: CancelToken) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(outcomes={sorted(self._outcomes)})"


class StateMachine(State):
    """Named states plus a transition table, composable as a state.

    Construction: add_state() registers a state with its transition map;
    the first state added becomes the initial state unless set_initial()
    overrides it. validate() reports static defects; execute() refuses to
    run unless validation is clean.

    Thread contract: execute() runs on one thread at a time (guarded);
    cancel via the token and current_path()/status reads are safe from
    other threads during a run.
    """

    def __init__(self, name: str, outcomes):
        if not isinstance(name, str) or name == "":
            raise EmptyName("machine name must be a non-empty string")
        super().__init__(outcomes)
        self.name = name
        self._states: dict[str, State] = {}
        self._transitions: dict[tuple[str, str], str] = {}
        self._initial: str | None = None
        self._lock = threading.Lock()
        self._status = Status.IDLE
        self._current: str | None = None
        self._final_outcome: str | None = None

    # -- structure ----------------------------------------------------------

    @property
    def kind(self) -> str:
        return "machine"

    @property
    def machine_outcomes(self) -> frozenset[str]:
        return self._outcomes

    @property
    def initial(self) -> str | None:
        return self._initial

    @property
    def states(self):
        return MappingProxyType(self._states)

    def transition_map(self, state_name: str) -> dict[str, str]:
        """The outcome -> target entries registered for one state."""
        if state_name not in self._states:
            raise UnknownState(f"machine {self.name!r} has no state {state_name!r}")
        return {o: t for (s, o), t in self._transitions.items() if s == state_name}

    def add_state(self, name: str, state: State, transitions: dict[str, str] | None = None) -> None:
        """Register `state` under `name` with its outcome -> target map.

        Targets may name states that have not been added yet; totality and
        target resolution are checked by validate(), not here.
        """
        self._guard_not_running()
        if not isinstance(name, str) or name == "":
            raise EmptyName("state name must be a non-empty string")
        if name in self._states:
            raise DuplicateStateName(f"machine {self.name!r} already has a state {name!r}")
        if name in self._outcomes or name == CANCELED:
            raise NameShadowsOutcome(
                f"state name {name!r} collides with a machine outcome of {self.name!r}"
            )
        transitions = dict(transitions or {})
        for outcome, target in transitions.items():
            check_outcome_label(outcome)
            if outcome not in state.outcomes and outcome != CANCELED:
                raise UndeclaredOutcomeInMap(
                    f"state {name!r} does not declare outcome {outcome!r}"
                )
            if not isinstance(target, str) or target == "":
                raise EmptyName(f"transition target for ({name!r}, {outcome!r}) must be a name")
        self._states[name] = state
        for outcome, target in transitions.items():
            self._transitions[(name, outcome)] = target
        if self._initial is None:
            self._initial = name

    def set_initial(self, name: str) -> None:
        self._guard_not_running()
        if name not in self._states:
            raise UnknownState(f"machine {self.name!r} has no state {name!r}")
        self._initial = name

    def _guard_not_running(self):
        with self._lock:
            if self._status is Status.RUNNING:
                raise MachineRunning(f"machine {self.name!r} is running")

    # -- validation -----------------------------------------------------------

    def validate(self) -> list[ValidationIssue]:
        """All static defects, recursing into nested machines. Empty == runnable."""
        issues: list[ValidationIssue] = []
        self._validate_into(issues, prefix="")
        return issues

    def _validate_into(self, issues: list[ValidationIssue], prefix: str) -> None:
        if self._initial is None or self._initial not in self._states:
            issues.append(ValidationIssue(
                NO_INITIAL, f"{prefix}initial",
                f"machine {self.name!r} has no initial state"
                if self._initial is None else
                f"initial {self._initial!r} is not a state of machine {self.name!r}",
            ))

        for state_name in sorted(self._states):
            state = self._states[state_name]
            mapped = self.transition_map(state_name)
            for outcome in sorted(mapped):
                target = mapped[outcome]
                if target not in self._states and target not in self._outcomes and target != CANCELED:
                    issues.append(ValidationIssue(
                        UNKNOWN_TARGET,
                        f"{prefix}states.{state_name}.transitions.{outcome}",
                        f"target {target!r} is neither a state nor an outcome of machine {self.name!r}",
                    ))
            for outcome in sorted(state.outcomes):
                if outcome != CANCELED and outcome not in mapped:
                    issues.append(ValidationIssue(
                        UNMAPPED_OUTCOME,
                        f"{prefix}states.{state_name}.transitions.{outcome}",
                        f"outcome {outcome!r} of state {state_name!r} has no transition",
                    ))

        self._check_reachability(issues, prefix)

        for state_name in sorted(self._states):
            child = self._states[state_name]
            if isinstance(child, StateMachine):
                child._validate_into(issues, f"{prefix}states.{state_name}.machine.")

    def _check_reachability(self, issues: list[ValidationIssue], prefix: str) -> None:
        if self._initial is None or self._initial not in self._states:
            return
        seen_states = {self._initial}
        seen_outcomes: set[str] = set()
        frontier = [self._initial]
        while frontier:
            name = frontier.pop()
            for target in self.transition_map(name).values():
                if target in self._states:
                    if target not in seen_states:
                        seen_states.add(target)
                        frontier.append(target)
                elif target in self._outcomes or target == CANCELED:
                    seen_outcomes.add(target)
        for state_name in sorted(self._states):
            if state_name not in seen_states:
                issues.append(ValidationIssue(
                    UNREACHABLE_STATE, f"{prefix}states.{state_name}",
                    f"state {state_name!r} is not reachable from initial {self._initial!r}",
                ))
        for outcome in sorted(self._outcomes):
            # Cancellation can always produce "canceled", so it is exempt.
            if outcome != CANCELED and outcome not in seen_outcomes:
                issues.append(ValidationIssue(
                    NO_PATH_TO_OUTCOME, f"{prefix}outcomes.{outcome}",
                    f"no transition path from initial {self._initial!r} "
                    f"produces machine outcome {outcome!r}",
                ))

    # -- status ---------------------------------------------------------------

    @property
    def status(self) -> Status:
        with self._lock:
            return self._status

    @property
    def final_outcome(self) -> str | None:
        """Outcome of the last finished run; None while idle/running/canceled."""
        with self._lock:
            return self._final_outcome

    def current_path(self) -> list[str]:
        """Active state names outermost-first while running, else [].

        The walk holds each machine's lock while descending, so the result is
        a consistent snapshot, never a torn mid-transition path.
        """
        return self.status_snapshot()[1]

    def status_snapshot(self) -> tuple[Status, list[str], str | None]:
        """(status, active path, final outcome) captured as one consistent view.

        Holds this machine's lock while descending into the active child, so
        the path can never mix two different configurations. Lock order is
        always outer before inner, for every thread, so this cannot deadlock
        against the executing thread.
        """
        with self._lock:
            status = self._status
            final = self._final_outcome
            if status is not Status.RUNNING or self._current is None:
                return status, [], final
            path = [self._current]
            child = self._states.get(self._current)
            if isinstance(child, StateMachine):
                path.extend(child.current_path())
        return status, path, final

    # -- execution ---------------------------------------------------------------

    def execute(
        self,
        blackboard: Blackboard,
        token: CancelToken | None = None,
        on_state_start: Callable[[tuple[str, ...]], None] | None = None,
    ) -> str:
        """Run from the initial state until a machine outcome is produced.

        All states and nested machines see the same blackboard and token.
        The token is polled before each state starts; once set, the run winds
        down and returns "canceled". `on_state_start`, when given, is invoked
        with the full state path just before each leaf state executes.
        """
        issues = self.validate()
        if issues:
            raise ValidationFailed(issues)
        token = token if token is not None else CancelToken()

        with self._lock:
            if self._status is Status.RUNNING:
                raise MachineRunning(f"machine {self.name!r} is already executing")
            self._status = Status.RUNNING
            self._current = self._initial
            self._final_outcome = None

        try:
            return self._run(blackboard, token, on_state_start)
        except BaseException:
            with self._lock:
                self._status = Status.IDLE
                self._current = None
            raise

    def _run(self, blackboard, token, on_state_start) -> str:
        current: str = self._initial  # type: ignore[assignment]
        while True:
            if token.is_set():
                return self._conclude(Status.CANCELED, CANCELED)

            state = self._states[current]
            if isinstance(state, StateMachine):
                prefixed = None
                if on_state_start is not None:
                    def prefixed(path, _outer=current, _notify=on_state_start):
                        _notify((_outer, *path))
                outcome = state.execute(blackboard, token, on_state_start=prefixed)
            else:
                if on_state_start is not None:
                    on_state_start((current,))
                outcome = state.execute(blackboard, token)

            if not isinstance(outcome, str) or (
                outcome not in state.outcomes and outcome != CANCELED
            ):
                raise StateContractViolation(current, outcome, state.outcomes)

            target = self._transitions.get((current, outcome))
            if target is None:
                # Only reachable for the reserved outcome; validate guarantees
                # totality for declared outcomes.
                assert outcome == CANCELED, f"unmapped ({current}, {outcome}) after validation"
                return self._conclude(Status.CANCELED, CANCELED)

            if target in self._states:
                with self._lock:
                    self._current = target
                current = target
                continue

            if target == CANCELED:
                return self._conclude(Status.CANCELED, CANCELED)
            return self._conclude(Status.FINISHED, target)

    def _conclude(self, status: Status, outcome: str) -> str:
        with self._lock:
            self._status = status
            self._current = None
            self._final_outcome = outcome if status is Status.FINISHED else None
        return outcome

    def __repr__(self) -> str:
        return (
            f"StateMachine({self.name!r}, outcomes={sorted(self._outcomes)}, "
            f"states={sorted(self._states)}, status={self.status.value})"
        )

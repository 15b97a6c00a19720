"""Engine behavior: construction, validation, execution, hierarchy, cancellation."""

import random
import threading
import time

import pytest

from hsm import Blackboard, CancelToken, CallbackState, StateMachine, Status
from hsm.definition import build
from hsm.errors import (
    DuplicateStateName,
    EmptyName,
    EmptyOutcomeSet,
    MachineRunning,
    NameShadowsOutcome,
    StateContractViolation,
    UndeclaredOutcomeInMap,
    UnknownState,
    ValidationFailed,
)

from oracles import Gate, flatten, random_definition, reference_interpret


def const_state(outcome, outcomes=None):
    return CallbackState(outcomes or {outcome}, lambda bb: outcome)


def two_state_chain():
    m = StateMachine("M", {"succeeded"})
    m.add_state("A", const_state("ok"), {"ok": "B"})
    m.add_state("B", const_state("ok"), {"ok": "succeeded"})
    return m


class TestConstruction:
    def test_minimal_constructor(self):
        m = StateMachine("M", {"succeeded"})
        assert m.name == "M"
        assert len(m.states) == 0
        assert m.status is Status.IDLE
        assert m.initial is None

    def test_navigation_outcomes(self):
        m = StateMachine("NAVIGATION", {"succeeded", "aborted", "canceled"})
        assert m.machine_outcomes == {"succeeded", "aborted", "canceled"}

    def test_empty_outcome_set_rejected(self):
        with pytest.raises(EmptyOutcomeSet):
            StateMachine("M", set())

    def test_empty_name_rejected(self):
        with pytest.raises(EmptyName):
            StateMachine("", {"succeeded"})


class TestAddState:
    def test_first_state_becomes_initial(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("CHECK_WP", const_state("done"), {"done": "succeeded"})
        assert m.initial == "CHECK_WP"

    def test_duplicate_name_rejected(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("ok"), {"ok": "succeeded"})
        with pytest.raises(DuplicateStateName):
            m.add_state("A", const_state("ok"), {"ok": "succeeded"})

    def test_name_shadowing_outcome_rejected(self):
        m = StateMachine("M", {"succeeded"})
        with pytest.raises(NameShadowsOutcome):
            m.add_state("succeeded", const_state("ok"), {})
        with pytest.raises(NameShadowsOutcome):
            m.add_state("canceled", const_state("ok"), {})

    def test_undeclared_outcome_in_map_rejected(self):
        m = StateMachine("M", {"aborted"})
        with pytest.raises(UndeclaredOutcomeInMap):
            m.add_state("A", const_state("ok"), {"fail": "aborted"})

    def test_canceled_key_allowed_without_declaration(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("ok"), {"ok": "succeeded", "canceled": "canceled"})
        assert m.validate() == []

    def test_mutation_rejected_while_running(self):
        gate = Gate()
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", gate.state(), {"done": "succeeded"})
        thread = threading.Thread(target=lambda: m.execute(Blackboard(), CancelToken()))
        thread.start()
        assert gate.entered.wait(5)
        with pytest.raises(MachineRunning):
            m.add_state("B", const_state("ok"), {"ok": "succeeded"})
        with pytest.raises(MachineRunning):
            m.set_initial("A")
        gate.release.set()
        thread.join()


class TestSetInitial:
    def test_set_initial(self):
        m = two_state_chain()
        m.set_initial("B")
        assert m.initial == "B"

    def test_unknown_state(self):
        m = two_state_chain()
        with pytest.raises(UnknownState):
            m.set_initial("Z")


class TestValidate:
    def test_clean_chain(self):
        assert two_state_chain().validate() == []

    def test_unknown_target(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("ok", {"ok", "fail"}),
                    {"ok": "NEXXT", "fail": "succeeded"})
        issues = m.validate()
        assert [(i.code, i.location) for i in issues] == [
            ("UnknownTarget", "states.A.transitions.ok")
        ]

    def test_unmapped_outcome(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("ok", {"ok", "fail"}), {"ok": "succeeded"})
        issues = m.validate()
        assert [(i.code, i.location) for i in issues] == [
            ("UnmappedOutcome", "states.A.transitions.fail")
        ]

    def test_unreachable_state_matches_bfs_oracle(self):
        m = two_state_chain()
        m.add_state("C", const_state("ok"), {"ok": "succeeded"})  # nobody targets C
        issues = m.validate()
        assert [(i.code, i.location) for i in issues] == [("UnreachableState", "states.C")]
        # independent BFS over the transition maps
        reached = {m.initial}
        queue = [m.initial]
        while queue:
            for target in m.transition_map(queue.pop()).values():
                if target in m.states and target not in reached:
                    reached.add(target)
                    queue.append(target)
        assert set(m.states) - reached == {"C"}

    def test_no_initial(self):
        m = StateMachine("M", {"succeeded"})
        issues = m.validate()
        assert [i.code for i in issues] == ["NoInitial"]

    def test_no_path_to_outcome(self):
        m = StateMachine("M", {"succeeded", "aborted"})
        m.add_state("A", const_state("ok"), {"ok": "succeeded"})
        issues = m.validate()
        assert [(i.code, i.location) for i in issues] == [
            ("NoPathToOutcome", "outcomes.aborted")
        ]

    def test_nested_issue_gets_path_prefix(self):
        inner = StateMachine("INNER", {"done"})
        inner.add_state("X", const_state("ok"), {"ok": "MISSING"})
        outer = StateMachine("OUTER", {"succeeded"})
        outer.add_state("WRAP", inner, {"done": "succeeded"})
        locations = {i.location for i in outer.validate()}
        assert "states.WRAP.machine.states.X.transitions.ok" in locations


class TestExecute:
    def test_single_state(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("done"), {"done": "succeeded"})
        assert m.execute(Blackboard(), CancelToken()) == "succeeded"
        assert m.status is Status.FINISHED
        assert m.final_outcome == "succeeded"

    def test_chain_visits_in_order(self):
        m = two_state_chain()
        visited = []
        assert m.execute(Blackboard(), CancelToken(), on_state_start=visited.append) == "succeeded"
        assert visited == [("A",), ("B",)]

    def test_execute_requires_clean_validation(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", const_state("ok"), {"ok": "NEXXT"})
        with pytest.raises(ValidationFailed) as err:
            m.execute(Blackboard(), CancelToken())
        assert err.value.issues

    def test_contract_violation_reverts_to_idle(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", CallbackState({"ok"}, lambda bb: "oops"), {"ok": "succeeded"})
        with pytest.raises(StateContractViolation) as err:
            m.execute(Blackboard(), CancelToken())
        assert err.value.state_name == "A"
        assert err.value.outcome == "oops"
        assert m.status is Status.IDLE

    def test_matches_reference_interpreter_on_random_machines(self):
        rng = random.Random(20260810)
        for _ in range(50):
            defn = random_definition(rng)
            machine = build(defn)
            bb = Blackboard()
            visited = []
            outcome = machine.execute(bb, CancelToken(), on_state_start=visited.append)
            ref_bb: dict = {}
            ref_outcome, ref_visited = reference_interpret(defn, ref_bb)
            assert outcome == ref_outcome
            assert visited == ref_visited
            assert {k: bb.get(k) for k in bb.keys()} == ref_bb

    def test_reexecution_is_deterministic(self):
        rng = random.Random(7)
        defn = random_definition(rng, force_nested=True)
        machine = build(defn)
        runs = []
        for _ in range(2):
            visited = []
            outcome = machine.execute(Blackboard(), CancelToken(), on_state_start=visited.append)
            runs.append((outcome, visited))
        assert runs[0] == runs[1]

    def test_second_concurrent_execute_rejected(self):
        gate = Gate()
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", gate.state(), {"done": "succeeded"})
        thread = threading.Thread(target=lambda: m.execute(Blackboard(), CancelToken()))
        thread.start()
        assert gate.entered.wait(5)
        with pytest.raises(MachineRunning):
            m.execute(Blackboard(), CancelToken())
        gate.release.set()
        thread.join()


class TestHierarchy:
    def make_nested(self):
        inner = StateMachine("INNER", {"done"})
        inner.add_state("R1", const_state("ok"), {"ok": "R2"})
        inner.add_state("R2", const_state("ok"), {"ok": "done"})
        outer = StateMachine("OUTER", {"succeeded"})
        outer.add_state("WRAP", inner, {"done": "LAST"})
        outer.add_state("LAST", const_state("ok"), {"ok": "succeeded"})
        return outer

    def test_machine_usable_as_state(self):
        outer = self.make_nested()
        visited = []
        assert outer.execute(Blackboard(), CancelToken(), on_state_start=visited.append) == "succeeded"
        assert visited == [("WRAP", "R1"), ("WRAP", "R2"), ("LAST",)]

    def test_blackboard_shared_across_depths(self):
        inner = StateMachine("INNER", {"done"})
        inner.add_state(
            "WRITE", CallbackState({"ok"}, lambda bb: (bb.set("wp_ok", True), "ok")[1]),
            {"ok": "done"},
        )
        outer = StateMachine("OUTER", {"succeeded", "aborted"})
        outer.add_state("NEST", inner, {"done": "READ"})
        outer.add_state(
            "READ",
            CallbackState({"yes", "no"}, lambda bb: "yes" if bb.get("wp_ok") else "no"),
            {"yes": "succeeded", "no": "aborted"},
        )
        assert outer.execute(Blackboard(), CancelToken()) == "succeeded"

    def test_flattening_equivalence_small(self):
        rng = random.Random(99)
        for _ in range(25):
            defn = random_definition(rng, force_nested=True)
            nested = build(defn)
            flat = flatten(nested)
            assert flat.validate() == []
            nested_visits, flat_visits = [], []
            nested_outcome = nested.execute(
                Blackboard(), CancelToken(),
                on_state_start=lambda p: nested_visits.append(".".join(p)),
            )
            flat_outcome = flat.execute(
                Blackboard(), CancelToken(),
                on_state_start=lambda p: flat_visits.append(".".join(p)),
            )
            assert nested_outcome == flat_outcome
            assert nested_visits == flat_visits


class TestCancellation:
    def test_cancel_is_idempotent(self):
        token = CancelToken()
        token.cancel()
        token.cancel()
        assert token.is_set()

    def test_preset_token_cancels_before_first_state(self):
        calls = []
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", CallbackState({"ok"}, lambda bb: calls.append(1) or "ok"),
                    {"ok": "succeeded"})
        token = CancelToken()
        token.cancel()
        assert m.execute(Blackboard(), token) == "canceled"
        assert m.status is Status.CANCELED
        assert m.final_outcome is None
        assert calls == []

    def test_cancel_during_wait_state(self):
        from hsm import make_wait_state

        m = StateMachine("M", {"succeeded"})
        m.add_state("W", make_wait_state(10_000, 50), {"done": "succeeded"})
        token = CancelToken()
        timer = threading.Timer(0.15, token.cancel)
        timer.start()
        started = time.monotonic()
        outcome = m.execute(Blackboard(), token)
        elapsed = time.monotonic() - started
        timer.cancel()
        assert outcome == "canceled"
        assert elapsed < 1.0

    def test_nested_innermost_state_observes_cancel(self):
        observations = []

        def polling_body(bb):
            for _ in range(100):
                observations.append(token.is_set())
                if token.is_set():
                    return "canceled"
                time.sleep(0.01)
            return "ok"

        inner = StateMachine("INNER", {"done"})
        inner.add_state("POLL", CallbackState({"ok"}, polling_body), {"ok": "done"})
        outer = StateMachine("OUTER", {"succeeded"})
        outer.add_state("NEST", inner, {"done": "succeeded"})

        token = CancelToken()
        timer = threading.Timer(0.1, token.cancel)
        timer.start()
        assert outer.execute(Blackboard(), token) == "canceled"
        assert observations[-1] is True
        assert outer.status is Status.CANCELED
        assert inner.status is Status.CANCELED

    def test_spontaneous_canceled_outcome_auto_routes(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", CallbackState({"ok"}, lambda bb: "canceled"), {"ok": "succeeded"})
        assert m.execute(Blackboard(), CancelToken()) == "canceled"
        assert m.status is Status.CANCELED

    def test_mapped_canceled_outcome_follows_map(self):
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", CallbackState({"ok"}, lambda bb: "canceled"),
                    {"ok": "succeeded", "canceled": "B"})
        m.add_state("B", const_state("ok"), {"ok": "succeeded"})
        assert m.execute(Blackboard(), CancelToken()) == "succeeded"


class TestCurrentPath:
    def test_idle_and_finished_are_empty(self):
        m = two_state_chain()
        assert m.current_path() == []
        m.execute(Blackboard(), CancelToken())
        assert m.current_path() == []

    def test_nested_path_outermost_first(self):
        gate = Gate()
        inner = StateMachine("INNER_M", {"done"})
        inner.add_state("ROTATE", gate.state(), {"done": "done"})
        outer = StateMachine("OUTER_M", {"succeeded"})
        outer.add_state("MOVE", inner, {"done": "succeeded"})

        thread = threading.Thread(target=lambda: outer.execute(Blackboard(), CancelToken()))
        thread.start()
        assert gate.entered.wait(5)
        assert outer.current_path() == ["MOVE", "ROTATE"]
        assert outer.status is Status.RUNNING
        gate.release.set()
        thread.join()
        assert outer.current_path() == []

    def test_status_lifecycle_order(self):
        gate = Gate()
        m = StateMachine("M", {"succeeded"})
        m.add_state("A", gate.state(), {"done": "succeeded"})
        seen = [m.status]
        thread = threading.Thread(target=lambda: m.execute(Blackboard(), CancelToken()))
        thread.start()
        assert gate.entered.wait(5)
        seen.append(m.status)
        gate.release.set()
        thread.join()
        seen.append(m.status)
        assert seen == [Status.IDLE, Status.RUNNING, Status.FINISHED]


class TestOutcomeSoundness:
    def test_outcomes_stay_in_declared_union_canceled(self):
        rng = random.Random(4242)
        for _ in range(40):
            defn = random_definition(rng)
            machine = build(defn)
            outcome = machine.execute(Blackboard(), CancelToken())
            assert outcome in set(defn.outcomes) | {"canceled"}

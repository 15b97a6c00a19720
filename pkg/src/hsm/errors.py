"""Exception taxonomy for the hsm package.

Everything raised on purpose derives from HsmError so callers can catch
one base. Validation issues are *not* exceptions (see core.ValidationIssue);
only contract violations and unusable inputs raise.
"""

from __future__ import annotations


class HsmError(Exception):
    """Base class for all errors raised by this package."""


# --- construction-time errors ---------------------------------------------

class EmptyName(HsmError, ValueError):
    """A machine or state name was empty."""


class EmptyOutcomeSet(HsmError, ValueError):
    """A state or machine was declared with no outcomes."""


class InvalidOutcomeLabel(HsmError, ValueError):
    """An outcome label was empty or whitespace-only."""


class DuplicateStateName(HsmError):
    """A state name was already registered on the machine."""


class NameShadowsOutcome(HsmError):
    """A state name collides with a machine-level outcome."""


class UndeclaredOutcomeInMap(HsmError):
    """A transition map keys an outcome the state does not declare."""


class UnknownState(HsmError):
    """A referenced state name does not exist on the machine."""


class MachineRunning(HsmError):
    """The machine is currently executing and cannot be mutated or re-entered."""


# --- execution-time errors -------------------------------------------------

class ValidationFailed(HsmError):
    """execute() was called on a machine that does not validate cleanly."""

    def __init__(self, issues):
        self.issues = list(issues)
        lines = "; ".join(str(i) for i in self.issues)
        super().__init__(f"machine failed validation: {lines}")


class StateContractViolation(HsmError):
    """A state returned an outcome outside its declared set."""

    def __init__(self, state_name: str, outcome: str, declared):
        self.state_name = state_name
        self.outcome = outcome
        self.declared = frozenset(declared)
        super().__init__(
            f"state {state_name!r} returned undeclared outcome {outcome!r} "
            f"(declared: {sorted(self.declared)})"
        )


# --- blackboard errors ------------------------------------------------------

class EmptyKey(HsmError, ValueError):
    """Blackboard keys must be non-empty strings."""


class KeyNotFound(HsmError, KeyError):
    """Blackboard lookup for a key with no stored value."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(key)

    def __str__(self) -> str:
        return f"no blackboard value for key {self.key!r}"


class InvalidValue(HsmError, TypeError):
    """A value is outside the supported taxonomy (bool/int/float/str/list/dict)."""


# --- standard-state errors ---------------------------------------------------

class InvalidDuration(HsmError, ValueError):
    """Wait duration or poll interval out of range."""


class UnknownPrimitive(HsmError):
    """A primitive spec names a primitive that is not registered."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown primitive {name!r}")


class BadParams(HsmError, ValueError):
    """Primitive parameters do not validate against the primitive's schema."""


# --- definition-format errors -------------------------------------------------

class DefinitionError(HsmError):
    """Base class for definition-document problems."""


class DefinitionSyntaxError(DefinitionError):
    """The document is not well-formed JSON."""

    def __init__(self, line: int, col: int, reason: str):
        self.line = line
        self.col = col
        self.reason = reason
        super().__init__(f"syntax error at line {line}, column {col}: {reason}")


class SchemaError(DefinitionError):
    """The document is valid JSON but violates the definition schema."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"schema error at {path}: {reason}")


class DuplicateKey(DefinitionError):
    """An object in the document repeats a key."""

    def __init__(self, path: str, key: str):
        self.path = path
        self.key = key
        super().__init__(f"duplicate key {key!r} at {path}")


class LintFailed(DefinitionError):
    """build() was called on a definition with outstanding lint issues."""

    def __init__(self, issues):
        self.issues = list(issues)
        lines = "; ".join(str(i) for i in self.issues)
        super().__init__(f"definition failed lint: {lines}")


# --- monitor errors -------------------------------------------------------------

class DuplicateId(HsmError):
    """A machine id is already registered with the monitor registry."""


class DecodeError(HsmError):
    """A wire message could not be decoded into a snapshot."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"decode error at {path}: {reason}")


class BindFailure(HsmError):
    """The monitor server could not bind its address."""

from __future__ import annotations


class CompileError(Exception):
    """Base for user-facing compilation failures (CLI exit code 1)."""


class ParseError(CompileError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


class EvalError(Exception):
    """Runtime error in the reference evaluator (bad arity, overflow, ...)."""


class RaceError(CompileError):
    """A leaf acquired parallel updates (or update/read) on one variable."""

    def __init__(self, var: str, leaf_id: int | None = None):
        where = f" (leaf {leaf_id})" if leaf_id is not None else ""
        super().__init__(f"conflicting parallel access to state variable '{var}'{where}")
        self.var = var
        self.leaf_id = leaf_id


class UnsupportedCompositionError(CompileError):
    def __init__(self, var: str, why: str):
        super().__init__(f"cannot compose pending update to '{var}': {why}")
        self.var = var


class InfeasibleError(Exception):
    """No placement/routing satisfies the constraints (CLI exit code 2)."""

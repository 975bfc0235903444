"""Labels and label stacks.

A stack is a plain tuple of ints.  The bottom label is the sentinel ``BOTTOM``
(rendered ``B``); every real label is a non-negative int, so the sentinel never
collides with one.
"""
from __future__ import annotations

from typing import Iterable, Tuple

Label = int
Stack = Tuple[int, ...]

BOTTOM: Label = -1
ROOT: Label = 0
EMPTY: Stack = ()

MAX_DEPTH = 16


class StackError(ValueError):
    pass


def concat(a: Stack, b: Stack) -> Stack:
    return tuple(a) + tuple(b)


def common_prefix_len(a: Stack, b: Stack) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def extends(a: Stack, b: Stack) -> bool:
    """True when ``b`` is ``a`` followed by zero or more labels."""
    return len(a) <= len(b) and tuple(b[: len(a)]) == tuple(a)


def strictly_extends(a: Stack, b: Stack) -> bool:
    return len(a) < len(b) and tuple(b[: len(a)]) == tuple(a)


def join(a: Stack, b: Stack) -> Stack:
    """Longest common prefix: the innermost area holding both stacks."""
    return tuple(a[: common_prefix_len(a, b)])


def project(a: Stack, b: Stack) -> Stack:
    """Outermost area around ``a`` that excludes ``b`` (``a`` itself if ``b`` is inside it)."""
    if not a or not b:
        return EMPTY
    return tuple(a[: min(common_prefix_len(a, b) + 1, len(a))])


def in_area(vertex_stack: Stack, area: Stack) -> bool:
    return extends(area, vertex_stack)


def strip_last(stack: Stack) -> Stack:
    return tuple(stack[:-1])


def is_atomic_scope(stack: Stack) -> bool:
    return bool(stack) and stack[-1] == BOTTOM


def sort_key(stack: Stack) -> Tuple[float, ...]:
    """Lexicographic order with the bottom label sorted after every real label."""
    return tuple(float("inf") if x == BOTTOM else float(x) for x in stack)


def check_vertex_stack(stack: Stack, max_depth: int = MAX_DEPTH) -> Stack:
    stack = tuple(stack)
    if not stack:
        raise StackError("vertex stack is empty")
    if stack[0] != ROOT:
        raise StackError(f"vertex stack {format_stack(stack)} does not start with the root label")
    if BOTTOM in stack:
        raise StackError(f"vertex stack {format_stack(stack)} contains the bottom label")
    if any(x < 0 for x in stack):
        raise StackError(f"negative label in {format_stack(stack)}")
    if len(stack) > max_depth:
        raise StackError(f"stack deeper than {max_depth}: {format_stack(stack)}")
    return stack


def format_label(label: Label) -> str:
    return "B" if label == BOTTOM else str(label)


def format_stack(stack: Iterable[Label]) -> str:
    return "(" + " ".join(format_label(x) for x in stack) + ")"


def parse_stack(text: str) -> Stack:
    body = text.strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise StackError(f"stack must be parenthesized: {text!r}")
    out = []
    for tok in body[1:-1].split():
        if tok in ("B", "⊥"):
            out.append(BOTTOM)
        elif tok.isdigit():
            out.append(int(tok))
        else:
            raise StackError(f"bad label {tok!r} in {text!r}")
    return tuple(out)

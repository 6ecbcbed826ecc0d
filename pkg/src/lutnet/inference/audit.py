"""Static audit of the integer engine: no multiplications, divisions or float constructs."""

from __future__ import annotations

import ast
from pathlib import Path
from typing import Optional

FORBIDDEN_OPS = (ast.Mult, ast.Div, ast.FloorDiv, ast.Pow, ast.MatMult, ast.Mod)
FORBIDDEN_NAMES = {"float", "complex"}
FORBIDDEN_ATTRS = {"dot", "matmul", "multiply", "divide", "true_divide", "prod", "einsum"}


def audit_source(path: Optional[str | Path] = None) -> list[str]:
    """Offending constructs in ``path`` (default: the engine module), one string each."""
    if path is None:
        from . import engine
        path = engine.__file__
    tree = ast.parse(Path(path).read_text())
    offences = []
    for node in ast.walk(tree):
        if isinstance(node, (ast.BinOp, ast.AugAssign)) and isinstance(node.op, FORBIDDEN_OPS):
            offences.append(f"line {node.lineno}: {type(node.op).__name__}")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (float, complex)):
            offences.append(f"line {node.lineno}: float literal {node.value!r}")
        elif isinstance(node, ast.Name) and node.id in FORBIDDEN_NAMES:
            offences.append(f"line {node.lineno}: {node.id}")
        elif isinstance(node, ast.Attribute) and ("float" in node.attr or node.attr in FORBIDDEN_ATTRS):
            offences.append(f"line {node.lineno}: .{node.attr}")
    return offences

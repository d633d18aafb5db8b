"""Multi-relation program graphs: AST, def-use, and control-flow edges.

Nodes are the function's AST nodes plus one head node per basic block.
Def-use edges are lifted onto the AST nodes covering the involved
instructions; control-flow edges connect block heads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .ir import (
    AstKind,
    IrFunction,
    Opcode,
    OperandKind,
    Violation,
    validate_function,
)
from . import autodiff as ad


class EdgeKind(Enum):
    AST = "Ast"
    DATA = "Data"
    CTRL = "Ctrl"


class ScopeKind(Enum):
    STATE = "State"
    LOCAL = "Local"
    TEMPORARY = "Temporary"
    NONE = "None"


BLOCK_HEAD = "BlockHead"

# Fixed index maps for feature-table lookups.
NODE_KIND_NAMES = tuple(k.value for k in AstKind) + (BLOCK_HEAD,)
NODE_KIND_INDEX = {name: i for i, name in enumerate(NODE_KIND_NAMES)}
OP_KIND_INDEX = {op: i + 1 for i, op in enumerate(Opcode)}  # 0 is the NONE row
SCOPE_KIND_INDEX = {
    ScopeKind.NONE: 0,
    ScopeKind.STATE: 1,
    ScopeKind.LOCAL: 2,
    ScopeKind.TEMPORARY: 3,
}

NUM_NODE_KINDS = len(NODE_KIND_NAMES)
NUM_OP_KINDS = len(Opcode) + 1
NUM_SCOPE_KINDS = len(SCOPE_KIND_INDEX)

_VARIABLE_KINDS = {
    OperandKind.STATE_VAR: ScopeKind.STATE,
    OperandKind.LOCAL_VAR: ScopeKind.LOCAL,
    OperandKind.TEMP_VAR: ScopeKind.TEMPORARY,
    OperandKind.REF_VAR: ScopeKind.TEMPORARY,
    OperandKind.TUPLE_VAR: ScopeKind.TEMPORARY,
}


class InvalidFunction(Exception):
    def __init__(self, violations: list[Violation]):
        super().__init__(f"{len(violations)} violations: {violations[:3]}")
        self.violations = violations


class EmptyGraph(Exception):
    pass


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class GraphNode:
    id: int
    node_kind: str
    op_kind: Optional[Opcode]
    scope_kind: ScopeKind


@dataclass(frozen=True)
class IrGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int, EdgeKind], ...]
    function_ref: tuple[str, str]


ENTRY_DEF = -1


def derive_def_use_edges(f: IrFunction) -> list[tuple[int, int, str]]:
    """Most-recent-definition def-use pairs by instruction index.

    A state variable read before any write links to the synthetic entry
    definition ENTRY_DEF.
    """
    last_def: dict[str, int] = {}
    state_names = f.state_var_names()
    edges: list[tuple[int, int, str]] = []
    for ins in sorted(f.instructions, key=lambda x: x.index):
        for op in ins.operands:
            if op.kind not in _VARIABLE_KINDS:
                continue
            if op.text in last_def:
                edges.append((last_def[op.text], ins.index, op.text))
            elif op.text in state_names:
                edges.append((ENTRY_DEF, ins.index, op.text))
                last_def[op.text] = ENTRY_DEF
        if ins.lhs is not None and ins.lhs.kind in _VARIABLE_KINDS:
            last_def[ins.lhs.text] = ins.index
    return edges


def _instruction_scope(ins) -> ScopeKind:
    if ins.lhs is not None and ins.lhs.kind in _VARIABLE_KINDS:
        return _VARIABLE_KINDS[ins.lhs.kind]
    for op in ins.operands:
        if op.kind in _VARIABLE_KINDS:
            return _VARIABLE_KINDS[op.kind]
    return ScopeKind.NONE


def build_graph(f: IrFunction) -> IrGraph:
    """Nodes for AST entries and block heads; Ast, Data, and Ctrl edges."""
    violations = validate_function(f)
    if violations:
        raise InvalidFunction(violations)

    by_index = {ins.index: ins for ins in f.instructions}
    nodes: list[GraphNode] = []
    ast_pos: dict[int, int] = {}
    root_pos = 0
    for node in f.ast:
        pos = len(nodes)
        ast_pos[node.id] = pos
        if node.parent is None:
            root_pos = pos
        op_kind = None
        scope = ScopeKind.NONE
        if node.instr_index is not None:
            ins = by_index[node.instr_index]
            op_kind = ins.opcode
            scope = _instruction_scope(ins)
        nodes.append(GraphNode(pos, node.kind.value, op_kind, scope))

    block_pos: dict[int, int] = {}
    for block in sorted(f.blocks, key=lambda b: b.id):
        pos = len(nodes)
        block_pos[block.id] = pos
        nodes.append(GraphNode(pos, BLOCK_HEAD, None, ScopeKind.NONE))

    # First AST node covering each instruction; block head as fallback.
    covering: dict[int, int] = {}
    for node in f.ast:
        if node.instr_index is not None and node.instr_index not in covering:
            covering[node.instr_index] = ast_pos[node.id]
    for block in f.blocks:
        for idx in block.instr_indices:
            covering.setdefault(idx, block_pos[block.id])

    edges: set[tuple[int, int, EdgeKind]] = set()
    for node in f.ast:
        if node.parent is not None:
            edges.add((ast_pos[node.parent], ast_pos[node.id], EdgeKind.AST))
    for def_idx, use_idx, _var in derive_def_use_edges(f):
        src = root_pos if def_idx == ENTRY_DEF else covering[def_idx]
        dst = covering[use_idx]
        if src != dst:
            edges.add((src, dst, EdgeKind.DATA))
    for block in f.blocks:
        for succ in block.successors:
            edges.add((block_pos[block.id], block_pos[succ], EdgeKind.CTRL))

    ordered = tuple(sorted(edges, key=lambda e: (e[0], e[1], e[2].value)))
    return IrGraph(tuple(nodes), ordered, (f.contract_id, f.name))


def node_feature_indices(g: IrGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Table row indices (node kind, op kind, scope kind) per node."""
    if not g.nodes:
        raise EmptyGraph(str(g.function_ref))
    node_idx = np.array([NODE_KIND_INDEX[n.node_kind] for n in g.nodes], dtype=np.int64)
    op_idx = np.array(
        [0 if n.op_kind is None else OP_KIND_INDEX[n.op_kind] for n in g.nodes],
        dtype=np.int64,
    )
    scope_idx = np.array([SCOPE_KIND_INDEX[n.scope_kind] for n in g.nodes], dtype=np.int64)
    return node_idx, op_idx, scope_idx


def init_node_features(g: IrGraph, tables: dict, d_hie: int):
    """Concatenate per-node embeddings from the three tables; rows are d_hie wide.

    Tables may be numpy arrays or autodiff tensors; the result matches.
    """
    widths = [tables[k].shape[1] for k in ("node_kind", "op_kind", "scope_kind")]
    if sum(widths) != d_hie:
        raise DimensionMismatch(f"table widths {widths} do not sum to {d_hie}")
    node_idx, op_idx, scope_idx = node_feature_indices(g)
    parts = [
        (tables["node_kind"], node_idx),
        (tables["op_kind"], op_idx),
        (tables["scope_kind"], scope_idx),
    ]
    if any(isinstance(t, ad.Tensor) for t, _ in parts):
        return ad.concat([ad.take(t, idx) for t, idx in parts], axis=1)
    return np.concatenate([np.asarray(t)[idx] for t, idx in parts], axis=1)


def to_dot(g: IrGraph) -> str:
    """DOT text with the edge kind as an attribute, for debugging."""
    lines = ["digraph ir {"]
    for n in g.nodes:
        label = n.node_kind
        if n.op_kind is not None:
            label += f"\\n{n.op_kind.value}"
        lines.append(f'  n{n.id} [label="{label}"];')
    for src, dst, kind in g.edges:
        lines.append(f'  n{src} -> n{dst} [kind="{kind.value}"];')
    lines.append("}")
    return "\n".join(lines)

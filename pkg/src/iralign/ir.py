"""IR data model: typed instructions, blocks, AST nodes, and the JSONL dump parser.

One contract dump line per function. Parsing groups lines into Contract
objects and enforces the schema strictly; deeper structural invariants are
reported by validate_function as Violation values rather than exceptions.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class Language(Enum):
    A = "A"
    B = "B"


class Label(Enum):
    SAFE = "safe"
    RE = "re"
    WR = "wr"
    UT = "ut"


class Opcode(Enum):
    ASSIGN = "ASSIGN"
    BINARY = "BINARY"
    CONDITION = "CONDITION"
    INTERNAL_CALL = "INTERNAL_CALL"
    HIGH_LEVEL_CALL = "HIGH_LEVEL_CALL"
    LOW_LEVEL_CALL = "LOW_LEVEL_CALL"
    MODIFIER_CALL = "MODIFIER_CALL"
    EVENT_EMIT = "EVENT_EMIT"
    TRANSFER = "TRANSFER"
    REQUIRE = "REQUIRE"
    RETURN = "RETURN"
    INDEX_REF = "INDEX_REF"
    NEW_VAR = "NEW_VAR"
    UNARY = "UNARY"
    PUSH = "PUSH"


# Opcodes whose first operand names the callee rather than a value.
CALL_OPCODES = frozenset(
    {
        Opcode.INTERNAL_CALL,
        Opcode.HIGH_LEVEL_CALL,
        Opcode.LOW_LEVEL_CALL,
        Opcode.MODIFIER_CALL,
        Opcode.EVENT_EMIT,
    }
)


class OperandKind(Enum):
    STATE_VAR = "StateVar"
    LOCAL_VAR = "LocalVar"
    TEMP_VAR = "TempVar"
    REF_VAR = "RefVar"
    TUPLE_VAR = "TupleVar"
    CONSTANT = "Constant"
    STRING_LIT = "StringLit"
    TYPE_NAME = "TypeName"
    FUNCTION_NAME = "FunctionName"


class AstKind(Enum):
    FUNCTION = "Function"
    BLOCK = "Block"
    IF = "If"
    LOOP = "Loop"
    EXPR_STMT = "ExprStmt"
    CALL = "Call"
    VAR_DECL = "VarDecl"
    BINARY_EXPR = "BinaryExpr"
    UNARY_EXPR = "UnaryExpr"
    LITERAL = "Literal"
    IDENTIFIER = "Identifier"


_TMP_RE = re.compile(r"^TMP_\d+$")
_REF_RE = re.compile(r"^REF_\d+$")
_TUP_RE = re.compile(r"^TUP_\d+$")
_INT_RE = re.compile(r"^-?\d+$")
_ADDR_RE = re.compile(r"^0x[0-9a-fA-F]+$")
_NAME_TYPE_RE = re.compile(r"^([^()\s]+)\(([^()]*)\)$")

# Bare type spellings that classify an operand as a type reference.
TYPE_SPELLINGS = frozenset(
    {
        "uint256",
        "uint128",
        "uint8",
        "int256",
        "address",
        "bool",
        "bytes32",
        "bytes",
        "string",
        "mapping",
    }
)


class IrError(Exception):
    """Base class for dump parsing failures."""


class MalformedLine(IrError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownOpcode(IrError):
    def __init__(self, text: str):
        super().__init__(f"unknown opcode {text!r}")
        self.text = text


class DanglingReference(IrError):
    def __init__(self, kind: str, ref_id: object):
        super().__init__(f"dangling {kind} reference: {ref_id!r}")
        self.kind = kind
        self.ref_id = ref_id


@dataclass(frozen=True)
class IrOperand:
    kind: OperandKind
    text: str
    decl_type: Optional[str] = None

    def spelling(self) -> str:
        """Dump-format spelling, inverse of parse_operand."""
        if self.decl_type is not None:
            return f"{self.text}({self.decl_type})"
        return self.text


@dataclass(frozen=True)
class IrInstruction:
    index: int
    opcode: Opcode
    lhs: Optional[IrOperand]
    operands: tuple[IrOperand, ...]
    raw: str


@dataclass(frozen=True)
class BasicBlock:
    id: int
    instr_indices: tuple[int, ...]
    successors: tuple[int, ...]


@dataclass(frozen=True)
class AstNode:
    id: int
    kind: AstKind
    parent: Optional[int]
    instr_index: Optional[int]


@dataclass(frozen=True)
class IrFunction:
    contract_id: str
    language: Language
    name: str
    instructions: tuple[IrInstruction, ...]
    blocks: tuple[BasicBlock, ...]
    ast: tuple[AstNode, ...]
    state_vars: tuple[tuple[str, str], ...]

    def state_var_names(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.state_vars)


@dataclass
class Contract:
    contract_id: str
    language: Language
    functions: list[IrFunction] = field(default_factory=list)
    label: Optional[Label] = None


@dataclass(frozen=True)
class Violation:
    invariant: str
    offender: object
    detail: str = ""


def parse_operand(
    text: str,
    state_names: frozenset[str],
    opcode: Opcode,
    position: int,
) -> IrOperand:
    """Classify one operand string per the dump grammar.

    position is -1 for the lhs slot, else the 0-based operand index; the
    first operand of a call opcode names the callee.
    """
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return IrOperand(OperandKind.STRING_LIT, text)
    m = _NAME_TYPE_RE.match(text)
    decl_type = None
    name = text
    if m is not None:
        name, decl_type = m.group(1), m.group(2)
    if decl_type is None and (
        _INT_RE.match(name) or _ADDR_RE.match(name) or name in ("true", "false")
    ):
        return IrOperand(OperandKind.CONSTANT, name)
    if _TMP_RE.match(name):
        return IrOperand(OperandKind.TEMP_VAR, name, decl_type)
    if _REF_RE.match(name):
        return IrOperand(OperandKind.REF_VAR, name, decl_type)
    if _TUP_RE.match(name):
        return IrOperand(OperandKind.TUPLE_VAR, name, decl_type)
    if position == 0 and opcode in CALL_OPCODES:
        return IrOperand(OperandKind.FUNCTION_NAME, name, decl_type)
    if decl_type is None and name in TYPE_SPELLINGS:
        return IrOperand(OperandKind.TYPE_NAME, name)
    if name in state_names:
        return IrOperand(OperandKind.STATE_VAR, name, decl_type)
    return IrOperand(OperandKind.LOCAL_VAR, name, decl_type)


_FUNCTION_KEYS = {
    "contract_id",
    "language",
    "function",
    "instructions",
    "blocks",
    "ast",
    "state_vars",
    "label",
}
_INSTR_KEYS = {"i", "op", "lhs", "operands", "raw"}
_BLOCK_KEYS = {"id", "instrs", "succ"}
_AST_KEYS = {"id", "kind", "parent", "instr"}


def _require_keys(obj: dict, keys: set[str], line_no: int, what: str) -> None:
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, f"{what} must be an object")
    got = set(obj.keys())
    if got != keys:
        extra = sorted(got - keys)
        missing = sorted(keys - got)
        raise MalformedLine(
            line_no, f"{what} keys mismatch: extra={extra} missing={missing}"
        )


def _parse_function_obj(obj: dict, line_no: int) -> IrFunction:
    _require_keys(obj, _FUNCTION_KEYS, line_no, "function object")
    try:
        language = Language(obj["language"])
    except ValueError:
        raise MalformedLine(line_no, f"bad language {obj['language']!r}")
    if not isinstance(obj["contract_id"], str) or not isinstance(obj["function"], str):
        raise MalformedLine(line_no, "contract_id and function must be strings")
    if not isinstance(obj["state_vars"], list):
        raise MalformedLine(line_no, "state_vars must be a list")
    state_vars = []
    for sv in obj["state_vars"]:
        if not isinstance(sv, list) or len(sv) != 2:
            raise MalformedLine(line_no, f"state_vars entry {sv!r} must be [name, type]")
        state_vars.append((str(sv[0]), str(sv[1])))
    state_names = frozenset(name for name, _ in state_vars)

    if not isinstance(obj["instructions"], list) or not obj["instructions"]:
        raise MalformedLine(line_no, "instructions must be a non-empty list")
    instructions = []
    for entry in obj["instructions"]:
        _require_keys(entry, _INSTR_KEYS, line_no, "instruction")
        try:
            opcode = Opcode(entry["op"])
        except ValueError:
            raise UnknownOpcode(str(entry["op"]))
        if not isinstance(entry["i"], int):
            raise MalformedLine(line_no, "instruction index must be an integer")
        lhs = None
        if entry["lhs"] is not None:
            if not isinstance(entry["lhs"], str):
                raise MalformedLine(line_no, "lhs must be a string or null")
            lhs = parse_operand(entry["lhs"], state_names, opcode, -1)
        if not isinstance(entry["operands"], list):
            raise MalformedLine(line_no, "operands must be a list")
        operands = tuple(
            parse_operand(str(op), state_names, opcode, pos)
            for pos, op in enumerate(entry["operands"])
        )
        instructions.append(
            IrInstruction(entry["i"], opcode, lhs, operands, str(entry["raw"]))
        )
    instructions.sort(key=lambda ins: ins.index)
    indices = [ins.index for ins in instructions]
    if indices != list(range(len(instructions))):
        raise MalformedLine(line_no, f"instruction indices not contiguous: {indices}")
    index_set = set(indices)

    if not isinstance(obj["blocks"], list) or not obj["blocks"]:
        raise MalformedLine(line_no, "blocks must be a non-empty list")
    blocks = []
    covered: set[int] = set()
    block_ids: set[int] = set()
    for entry in obj["blocks"]:
        _require_keys(entry, _BLOCK_KEYS, line_no, "block")
        bid = entry["id"]
        if not isinstance(bid, int) or bid in block_ids:
            raise MalformedLine(line_no, f"bad or duplicate block id {bid!r}")
        block_ids.add(bid)
        instrs = tuple(int(i) for i in entry["instrs"])
        for idx in instrs:
            if idx not in index_set:
                raise DanglingReference("instruction", idx)
            if idx in covered:
                raise MalformedLine(line_no, f"instruction {idx} in two blocks")
            covered.add(idx)
        blocks.append(BasicBlock(bid, instrs, tuple(int(s) for s in entry["succ"])))
    if covered != index_set:
        raise DanglingReference("instruction", sorted(index_set - covered)[0])
    for blk in blocks:
        for succ in blk.successors:
            if succ not in block_ids:
                raise DanglingReference("block", succ)

    if not isinstance(obj["ast"], list) or not obj["ast"]:
        raise MalformedLine(line_no, "ast must be a non-empty list")
    ast = []
    ast_ids: set[int] = set()
    for entry in obj["ast"]:
        _require_keys(entry, _AST_KEYS, line_no, "ast node")
        nid = entry["id"]
        if not isinstance(nid, int) or nid in ast_ids:
            raise MalformedLine(line_no, f"bad or duplicate ast id {nid!r}")
        ast_ids.add(nid)
        try:
            kind = AstKind(entry["kind"])
        except ValueError:
            raise MalformedLine(line_no, f"bad ast kind {entry['kind']!r}")
        parent = entry["parent"]
        if parent is not None and not isinstance(parent, int):
            raise MalformedLine(line_no, "ast parent must be an id or null")
        instr = entry["instr"]
        if instr is not None:
            if not isinstance(instr, int):
                raise MalformedLine(line_no, "ast instr must be an index or null")
            if instr not in index_set:
                raise DanglingReference("instruction", instr)
        ast.append(AstNode(nid, kind, parent, instr))
    for node in ast:
        if node.parent is not None and node.parent not in ast_ids:
            raise DanglingReference("ast", node.parent)

    return IrFunction(
        contract_id=obj["contract_id"],
        language=language,
        name=obj["function"],
        instructions=tuple(instructions),
        blocks=tuple(blocks),
        ast=tuple(ast),
        state_vars=tuple(state_vars),
    )


def parse_ir_dump(stream: Iterable[str] | str) -> list[Contract]:
    """Parse a JSONL dump into contracts, grouped by contract_id.

    Input order is preserved: contracts appear in order of first mention and
    functions keep their line order within each contract.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    contracts: dict[str, Contract] = {}
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedLine(line_no, f"invalid JSON: {e}") from e
        func = _parse_function_obj(obj, line_no)
        label_text = obj["label"]
        label = None
        if label_text is not None:
            try:
                label = Label(label_text)
            except ValueError:
                raise MalformedLine(line_no, f"bad label {label_text!r}")
        contract = contracts.get(func.contract_id)
        if contract is None:
            contract = Contract(func.contract_id, func.language, [], label)
            contracts[func.contract_id] = contract
        else:
            if contract.language is not func.language:
                raise MalformedLine(
                    line_no, f"contract {func.contract_id} mixes languages"
                )
            if contract.label is not label:
                raise MalformedLine(
                    line_no, f"contract {func.contract_id} has conflicting labels"
                )
        contract.functions.append(func)
    return list(contracts.values())


def function_to_json_obj(f: IrFunction, label: Optional[Label]) -> dict:
    """Dump-schema object for one function; inverse of _parse_function_obj."""
    return {
        "contract_id": f.contract_id,
        "language": f.language.value,
        "function": f.name,
        "instructions": [
            {
                "i": ins.index,
                "op": ins.opcode.value,
                "lhs": ins.lhs.spelling() if ins.lhs is not None else None,
                "operands": [op.spelling() for op in ins.operands],
                "raw": ins.raw,
            }
            for ins in f.instructions
        ],
        "blocks": [
            {"id": b.id, "instrs": list(b.instr_indices), "succ": list(b.successors)}
            for b in f.blocks
        ],
        "ast": [
            {"id": n.id, "kind": n.kind.value, "parent": n.parent, "instr": n.instr_index}
            for n in f.ast
        ],
        "state_vars": [[name, typ] for name, typ in f.state_vars],
        "label": label.value if label is not None else None,
    }


def serialize_contracts(contracts: Iterable[Contract]) -> str:
    """JSONL text for a corpus; parse_ir_dump round-trips it."""
    lines = []
    for contract in contracts:
        for func in contract.functions:
            obj = function_to_json_obj(func, contract.label)
            lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n" if lines else ""


def _ast_depths(f: IrFunction) -> dict[int, int]:
    """Depth of each AST node from the root; unreachable or cyclic nodes get -1."""
    children: dict[Optional[int], list[int]] = {}
    for node in f.ast:
        children.setdefault(node.parent, []).append(node.id)
    depths = {node.id: -1 for node in f.ast}
    roots = children.get(None, [])
    stack = [(r, 0) for r in roots]
    while stack:
        nid, depth = stack.pop()
        if depths.get(nid, 0) != -1:
            continue
        depths[nid] = depth
        for child in children.get(nid, []):
            stack.append((child, depth + 1))
    return depths


def max_ast_depth(f: IrFunction) -> int:
    depths = _ast_depths(f)
    return max(depths.values(), default=0)


def validate_function(f: IrFunction) -> list[Violation]:
    """Check every structural invariant; an empty list means well-formed."""
    out: list[Violation] = []
    if not f.instructions:
        out.append(Violation("NonEmptyInstructions", f.name, "no instructions"))
    indices = [ins.index for ins in f.instructions]
    if indices != list(range(len(indices))):
        out.append(Violation("ContiguousIndices", f.name, f"indices {indices}"))
    for ins in f.instructions:
        if ins.opcode in (Opcode.CONDITION, Opcode.REQUIRE) and ins.lhs is not None:
            out.append(Violation("NoLhsOpcode", ins.index, ins.opcode.value))
        if ins.opcode is Opcode.ASSIGN and ins.lhs is None:
            out.append(Violation("AssignNeedsLhs", ins.index, ""))

    index_set = set(indices)
    covered: dict[int, int] = {}
    block_ids = {b.id for b in f.blocks}
    for blk in f.blocks:
        for idx in blk.instr_indices:
            if idx not in index_set:
                out.append(Violation("DanglingInstruction", idx, f"block {blk.id}"))
            elif idx in covered:
                out.append(
                    Violation(
                        "DuplicateCoverage", idx, f"blocks {covered[idx]} and {blk.id}"
                    )
                )
            else:
                covered[idx] = blk.id
        for succ in blk.successors:
            if succ not in block_ids:
                out.append(Violation("DanglingSuccessor", succ, f"block {blk.id}"))
    uncovered = index_set - set(covered)
    for idx in sorted(uncovered):
        out.append(Violation("UncoveredInstruction", idx, "in no block"))

    roots = [n for n in f.ast if n.parent is None]
    if len(roots) == 0:
        out.append(Violation("NoRoot", f.name, "every ast node has a parent"))
    elif len(roots) > 1:
        out.append(Violation("MultipleRoots", tuple(n.id for n in roots), ""))
    elif roots[0].kind is not AstKind.FUNCTION:
        out.append(Violation("RootKind", roots[0].id, roots[0].kind.value))
    ast_ids = {n.id for n in f.ast}
    for node in f.ast:
        if node.parent is not None and node.parent not in ast_ids:
            out.append(Violation("DanglingParent", node.id, f"parent {node.parent}"))
        if node.instr_index is not None and node.instr_index not in index_set:
            out.append(Violation("DanglingInstrLink", node.id, f"instr {node.instr_index}"))
    depths = _ast_depths(f)
    cyclic = [nid for nid, d in depths.items() if d < 0]
    for nid in sorted(cyclic):
        node = next(n for n in f.ast if n.id == nid)
        if node.parent in ast_ids or node.parent is None:
            out.append(Violation("UnreachableAstNode", nid, "cycle or orphan subtree"))
    return out

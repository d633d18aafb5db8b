"""Synthetic paired-dialect corpus generator with vulnerability injection.

Each contract is built once as a dialect-neutral template and rendered into
both dialects: dialect A uses MODIFIER_CALL guards, TMP_n temporaries, and
its own identifier spellings; dialect B inlines guards into compare+require
pairs, prefixes state variables, respells a configured opcode subset, and
uses different local/callee names. The two renderings stay semantically
paired, so the generator can emit a ground-truth function equivalence map
alongside the corpora.

Vulnerability injection edits a rendered function in place-preserving index
order: RE inserts an external call immediately before a state write, WR
rewrites a branch condition to read a block-entropy state variable, UT
inserts a value transfer whose result is never read.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ir import (
    AstKind,
    AstNode,
    BasicBlock,
    Contract,
    IrFunction,
    IrInstruction,
    Label,
    Opcode,
    OperandKind,
    parse_ir_dump,
    parse_operand,
    serialize_contracts,
    validate_function,
)


class InvalidSpec(Exception):
    pass


class NoInjectionSite(Exception):
    pass


TEMPLATE_CATEGORIES = (
    "balance update",
    "authorization check",
    "external call",
    "array push",
    "reentrancy pattern",
    "randomness condition",
)

CORE_CATEGORIES = ("reentrancy pattern", "balance update", "randomness condition")

TASKS = ("re", "wr", "ut")

# Identifier spellings. Locals and callees are shared between the dialects
# the way ported code keeps its semantic names; the divergence that has to
# be aligned away lives in state-variable prefixes, opcode respellings,
# guard style, temp numbering, and assertion messages.
_STATE_TABLE = {
    "bal": ("balances", "mapping"),
    "owner": ("owner", "address"),
    "entropy": ("block_timestamp", "uint256"),
    "ledger": ("ledger", "bytes32"),
    "total": ("total_supply", "uint256"),
}
_LOCALS = {
    "amount": "amount", "recipient": "recipient", "caller": "msg_sender",
    "fee": "fee", "i": "idx", "payload": "payload", "ack": "ack",
}
_CALLEES = {
    "send": "send_funds", "notify": "notify_receiver", "guard": "only_owner",
    "log_update": "log_update", "log_owner": "log_owner",
}
_MESSAGES = {"insufficient": "insufficient balance", "failed": "transfer failed"}
_INJECT_CALLEE = "reenter_hook"


def _default_mix() -> dict[str, float]:
    return {cat: 1.0 for cat in TEMPLATE_CATEGORIES}


def _default_rates() -> dict[str, float]:
    return {"re": 0.2, "wr": 0.2, "ut": 0.2}


def _default_respelling() -> dict[str, str]:
    return {"TRANSFER": "LOW_LEVEL_CALL", "EVENT_EMIT": "INTERNAL_CALL"}


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 7
    contracts_per_dialect: int = 120
    functions_per_contract: tuple[int, int] = (2, 4)
    template_mix: dict[str, float] = field(default_factory=_default_mix)
    injection_rates: dict[str, float] = field(default_factory=_default_rates)
    opcode_respelling: dict[str, str] = field(default_factory=_default_respelling)
    inline_modifiers: bool = True
    temp_style: str = "offset"
    state_prefix: str = "self_"
    long_core_rate: float = 0.5

    def __post_init__(self):
        if self.contracts_per_dialect < 1:
            raise InvalidSpec("need at least one contract per dialect")
        lo, hi = self.functions_per_contract
        if lo < 1 or hi < lo:
            raise InvalidSpec(f"bad functions-per-contract range ({lo}, {hi})")
        if set(self.injection_rates) - set(TASKS):
            raise InvalidSpec(f"unknown task in rates: {self.injection_rates}")
        rates = [self.injection_rates.get(t, 0.0) for t in TASKS]
        if any(not 0.0 <= r <= 1.0 for r in rates) or sum(rates) > 1.0:
            raise InvalidSpec(f"injection rates must lie in [0,1] and sum <= 1")
        if set(self.template_mix) - set(TEMPLATE_CATEGORIES):
            raise InvalidSpec(f"unknown template category in mix")
        if any(w < 0 for w in self.template_mix.values()):
            raise InvalidSpec("template weights must be nonnegative")
        if not any(self.template_mix.get(c, 0.0) > 0 for c in TEMPLATE_CATEGORIES):
            raise InvalidSpec("template mix has no positive weight")
        if self.temp_style not in ("plain", "offset", "word"):
            raise InvalidSpec(f"unknown temp style {self.temp_style!r}")
        valid_ops = {op.value for op in Opcode}
        for src, dst in self.opcode_respelling.items():
            if src not in valid_ops or dst not in valid_ops:
                raise InvalidSpec(f"bad respelling {src!r} -> {dst!r}")
        if not 0.0 <= self.long_core_rate <= 1.0:
            raise InvalidSpec("long_core_rate must lie in [0, 1]")


@dataclass(frozen=True)
class EquivalencePair:
    fn_a: str
    fn_b: str
    category: str


# Neutral template operands: ("state", key) | ("local", key) | ("tmp", j) |
# ("const", text) | ("fn", key) | ("opr", symbol) | ("str", key).


def _filler_steps(rng: np.random.Generator, n_pairs: int) -> list:
    """Arithmetic padding on locals; pushes later steps past the sequence
    window without touching any state."""
    steps = []
    cycle = ("fee", "amount", "i", "payload")
    t = 100  # neutral temp ids; renderer renumbers in stream order
    for j in range(n_pairs):
        src = cycle[j % len(cycle)]
        dst = cycle[(j + 1) % len(cycle)]
        op = ("+", "*", "-")[int(rng.integers(0, 3))]
        k = str(int(rng.integers(2, 60)))
        steps.append(("BINARY", ("tmp", t + j),
                      [("local", src), ("opr", op), ("const", k)]))
        steps.append(("ASSIGN", ("local", dst), [("tmp", t + j)]))
    return steps


def _const(rng: np.random.Generator) -> tuple[str, str]:
    """Per-contract constant; keeps otherwise-identical template instances
    from rendering to duplicate token streams."""
    return ("const", str(int(rng.integers(2, 60))))


def _core_withdraw(rng: np.random.Generator, long_core: bool) -> tuple[str, str, list]:
    segments = [("guard",)]
    if long_core:
        segments.append(("seq", _filler_steps(rng, int(rng.integers(13, 18)))))
    segments.append(("seq", [
        ("BINARY", ("tmp", 0),
         [("state", "bal"), ("opr", ">="), ("local", "amount")]),
        ("REQUIRE", None, [("tmp", 0), ("str", "insufficient")]),
    ]))
    then_steps = [
        ("BINARY", ("tmp", 1),
         [("state", "bal"), ("opr", "-"), ("local", "amount")]),
        ("ASSIGN", ("state", "bal"), [("tmp", 1)]),
        ("HIGH_LEVEL_CALL", ("tmp", 2),
         [("fn", "send"), ("local", "recipient"), ("local", "amount")]),
        ("ASSIGN", ("local", "payload"), [("tmp", 2)]),
    ]
    if rng.random() < 0.5:
        then_steps += [
            ("HIGH_LEVEL_CALL", ("tmp", 3),
             [("fn", "notify"), ("local", "recipient"), ("local", "amount")]),
            ("ASSIGN", ("local", "ack"), [("tmp", 3)]),
        ]
    segments.append(("if",
                     ("CONDITION", None,
                      [("local", "amount"), ("opr", ">"), _const(rng)]),
                     then_steps, []))
    segments.append(("seq", [
        ("EVENT_EMIT", None, [("fn", "log_update"), ("local", "payload")]),
        ("RETURN", None, [("local", "amount")]),
    ]))
    return "withdraw", "reentrancy pattern", segments


def _core_deposit(rng: np.random.Generator, long_core: bool) -> tuple[str, str, list]:
    segments = [("guard",)]
    if long_core:
        segments.append(("seq", _filler_steps(rng, int(rng.integers(13, 18)))))
    steps = [
        ("BINARY", ("tmp", 0),
         [("local", "amount"), ("opr", "-"), _const(rng)]),
        ("ASSIGN", ("local", "fee"), [("tmp", 0)]),
        ("BINARY", ("tmp", 1),
         [("state", "total"), ("opr", "+"), ("local", "fee")]),
        ("ASSIGN", ("state", "total"), [("tmp", 1)]),
        ("BINARY", ("tmp", 2),
         [("state", "bal"), ("opr", "+"), ("local", "fee")]),
        ("ASSIGN", ("state", "bal"), [("tmp", 2)]),
    ]
    if rng.random() < 0.5:
        steps += [
            ("TRANSFER", ("tmp", 3), [("local", "recipient"), ("local", "fee")]),
            ("ASSIGN", ("local", "ack"), [("tmp", 3)]),
        ]
    steps += [
        ("EVENT_EMIT", None, [("fn", "log_update"), ("local", "amount")]),
        ("RETURN", None, []),
    ]
    segments.append(("seq", steps))
    return "deposit", "balance update", segments


def _core_random(rng: np.random.Generator, long_core: bool) -> tuple[str, str, list]:
    segments = [("guard",)]
    if long_core:
        segments.append(("seq", _filler_steps(rng, int(rng.integers(13, 18)))))
    segments.append(("seq", [
        ("BINARY", ("tmp", 0),
         [("local", "amount"), ("opr", "*"), _const(rng)]),
        ("ASSIGN", ("local", "fee"), [("tmp", 0)]),
    ]))
    segments.append(("if",
                     ("CONDITION", None,
                      [("local", "fee"), ("opr", ">"), _const(rng)]),
                     [
                         ("TRANSFER", ("tmp", 1),
                          [("local", "recipient"), ("local", "fee")]),
                         ("ASSIGN", ("local", "ack"), [("tmp", 1)]),
                     ],
                     [
                         ("EVENT_EMIT", None,
                          [("fn", "log_update"), ("local", "fee")]),
                     ]))
    segments.append(("seq", [("RETURN", None, [("local", "fee")])]))
    return "lottery", "randomness condition", segments


def _filler_auth(rng) -> tuple[str, str, list]:
    return "set_owner", "authorization check", [
        ("guard",),
        ("seq", [
            ("ASSIGN", ("local", "i"), [_const(rng)]),
            ("ASSIGN", ("state", "owner"), [("local", "recipient")]),
            ("EVENT_EMIT", None, [("fn", "log_owner"), ("local", "recipient")]),
            ("RETURN", None, [("local", "i")]),
        ]),
    ]


def _filler_extcall(rng) -> tuple[str, str, list]:
    # The state read keeps the pair one token apart across dialects; a pair
    # that rendered identically would leave no alignment gap to close.
    return "notify_peer", "external call", [
        ("guard",),
        ("seq", [
            ("HIGH_LEVEL_CALL", ("tmp", 0),
             [("fn", "notify"), ("local", "recipient"), ("state", "ledger"),
              _const(rng)]),
            ("ASSIGN", ("local", "payload"), [("tmp", 0)]),
            ("RETURN", None, [("local", "payload")]),
        ]),
    ]


def _filler_push(rng) -> tuple[str, str, list]:
    if rng.random() < 0.5:
        return "append_entry", "array push", [
            ("guard",),
            ("seq", [
                ("PUSH", None, [("state", "ledger"), ("local", "payload")]),
                ("BINARY", ("tmp", 0),
                 [("state", "total"), ("opr", "+"), _const(rng)]),
                ("ASSIGN", ("state", "total"), [("tmp", 0)]),
                ("EVENT_EMIT", None, [("fn", "log_update"), ("local", "payload")]),
                ("RETURN", None, []),
            ]),
        ]
    return "fill_entries", "array push", [
        ("guard",),
        ("seq", [("ASSIGN", ("local", "i"), [_const(rng)])]),
        ("loop",
         ("CONDITION", None, [("local", "i"), ("opr", "<"), ("local", "amount")]),
         [
             ("PUSH", None, [("state", "ledger"), ("local", "i")]),
             ("BINARY", ("tmp", 0), [("local", "i"), ("opr", "+"), _const(rng)]),
             ("ASSIGN", ("local", "i"), [("tmp", 0)]),
         ]),
        ("seq", [("RETURN", None, [])]),
    ]


def _filler_balance(rng) -> tuple[str, str, list]:
    return "quote_fee", "balance update", [
        ("seq", [
            ("BINARY", ("tmp", 0),
             [("state", "bal"), ("opr", "-"), ("local", "fee")]),
            ("BINARY", ("tmp", 1), [("tmp", 0), ("opr", "*"), _const(rng)]),
            ("ASSIGN", ("local", "amount"), [("tmp", 1)]),
            ("RETURN", None, [("local", "amount")]),
        ]),
    ]


def _filler_random(rng) -> tuple[str, str, list]:
    # Benign entropy read in a call payload: the entropy token appears in a
    # non-condition position so its mere presence cannot mark WR.
    return "maybe_log", "randomness condition", [
        ("if",
         ("CONDITION", None, [("local", "i"), ("opr", ">"), _const(rng)]),
         [("EVENT_EMIT", None, [("fn", "log_update"), ("state", "entropy")])],
         []),
        ("seq", [("RETURN", None, [])]),
    ]


def _filler_reent(rng) -> tuple[str, str, list]:
    return "transfer_state", "reentrancy pattern", [
        ("guard",),
        ("seq", [
            ("BINARY", ("tmp", 0),
             [("state", "bal"), ("opr", "-"), ("local", "amount")]),
            ("ASSIGN", ("state", "bal"), [("tmp", 0)]),
            ("HIGH_LEVEL_CALL", ("tmp", 1),
             [("fn", "send"), ("local", "recipient"), ("local", "amount")]),
            ("ASSIGN", ("local", "ack"), [("tmp", 1)]),
            ("RETURN", None, [("local", "ack")]),
        ]),
    ]


_CORE_BUILDERS = {
    "reentrancy pattern": _core_withdraw,
    "balance update": _core_deposit,
    "randomness condition": _core_random,
}
_FILLER_BUILDERS = {
    "balance update": _filler_balance,
    "authorization check": _filler_auth,
    "external call": _filler_extcall,
    "array push": _filler_push,
    "reentrancy pattern": _filler_reent,
    "randomness condition": _filler_random,
}


class _Renderer:
    """Lowers one neutral template into a dump-schema function object."""

    def __init__(self, dialect: str, spec: SynthSpec):
        self.dialect = dialect
        self.spec = spec
        self.temp_map: dict[int, int] = {}
        self.next_temp = 0
        self.declared: set[str] = set()
        self.instrs: list[dict] = []
        self.blocks: list[dict] = []
        self.ast: list[dict] = [
            {"id": 0, "kind": "Function", "parent": None, "instr": None}
        ]
        self.next_ast = 1
        self._open_block()

    def _open_block(self) -> int:
        self.blocks.append({"id": len(self.blocks), "instrs": [], "succ": []})
        return len(self.blocks) - 1

    def state_name(self, key: str) -> str:
        base = _STATE_TABLE[key][0]
        return base if self.dialect == "A" else self.spec.state_prefix + base

    def _temp_name(self, j: int) -> str:
        if j not in self.temp_map:
            self.temp_map[j] = self.next_temp
            self.next_temp += 1
        n = self.temp_map[j]
        if self.dialect == "A" or self.spec.temp_style == "plain":
            return f"TMP_{n}"
        if self.spec.temp_style == "offset":
            return f"TMP_{n + 40}"
        return f"t_{n}"

    def _spell(self, sym, as_lhs: bool = False) -> Optional[str]:
        tag, value = sym
        if tag == "state":
            return self.state_name(value)
        if tag == "local":
            name = _LOCALS[value]
            if as_lhs and name not in self.declared:
                self.declared.add(name)
                return f"{name}(uint256)"
            return name
        if tag == "tmp":
            return self._temp_name(value)
        if tag == "const":
            return value
        if tag == "fn":
            return _CALLEES[value]
        if tag == "opr":
            return value
        if tag == "str":
            if self.dialect == "B":
                return None  # assert-style: no message operand
            return '"' + _MESSAGES[value] + '"'
        raise ValueError(f"unknown operand tag {tag!r}")

    def _respell(self, op: str) -> str:
        if self.dialect == "B":
            return self.spec.opcode_respelling.get(op, op)
        return op

    def _emit(self, op: str, lhs, operands, parent: int) -> int:
        idx = len(self.instrs)
        lhs_text = self._spell(lhs, as_lhs=True) if lhs is not None else None
        op_texts = [t for t in (self._spell(s) for s in operands) if t is not None]
        op = self._respell(op)
        raw = (f"{lhs_text} = " if lhs_text else "") + op + " " + " ".join(op_texts)
        self.instrs.append(
            {"i": idx, "op": op, "lhs": lhs_text, "operands": op_texts,
             "raw": raw.strip()}
        )
        self.blocks[-1]["instrs"].append(idx)
        kind = "Call" if op in (
            "INTERNAL_CALL", "HIGH_LEVEL_CALL", "LOW_LEVEL_CALL",
            "MODIFIER_CALL", "EVENT_EMIT",
        ) else ("VarDecl" if (lhs_text and "(" in lhs_text) else "ExprStmt")
        self._ast_node(kind, parent, idx)
        return idx

    def _ast_node(self, kind: str, parent: Optional[int], instr: Optional[int]) -> int:
        node_id = self.next_ast
        self.next_ast += 1
        self.ast.append({"id": node_id, "kind": kind, "parent": parent,
                         "instr": instr})
        return node_id

    def _emit_guard(self, parent: int) -> None:
        if self.dialect == "A" or not self.spec.inline_modifiers:
            self._emit("MODIFIER_CALL", None, [("fn", "guard")], parent)
            return
        tmp = ("tmp", -1000 - self.next_temp)  # render-time temp
        self._emit("BINARY", tmp,
                   [("state", "owner"), ("opr", "=="), ("local", "caller")],
                   parent)
        self._emit("REQUIRE", None, [tmp], parent)

    def render(self, segments, meta: dict) -> dict:
        root = 0
        for seg in segments:
            if seg[0] == "guard":
                self._emit_guard(root)
            elif seg[0] == "seq":
                for op, lhs, operands in seg[1]:
                    self._emit(op, lhs, operands, root)
            elif seg[0] == "if":
                _, cond, then_steps, else_steps = seg
                if_node = self._ast_node("If", root, None)
                self._emit(cond[0], cond[1], cond[2], if_node)
                entry = len(self.blocks) - 1
                then_block = self._open_block()
                then_node = self._ast_node("Block", if_node, None)
                for op, lhs, operands in then_steps:
                    self._emit(op, lhs, operands, then_node)
                else_block = None
                if else_steps:
                    else_block = self._open_block()
                    else_node = self._ast_node("Block", if_node, None)
                    for op, lhs, operands in else_steps:
                        self._emit(op, lhs, operands, else_node)
                join = self._open_block()
                self.blocks[entry]["succ"] = [
                    then_block, else_block if else_block is not None else join
                ]
                self.blocks[then_block]["succ"] = [join]
                if else_block is not None:
                    self.blocks[else_block]["succ"] = [join]
            elif seg[0] == "loop":
                _, cond, body_steps = seg
                loop_node = self._ast_node("Loop", root, None)
                entry = len(self.blocks) - 1
                header = self._open_block()
                self._emit(cond[0], cond[1], cond[2], loop_node)
                body = self._open_block()
                body_node = self._ast_node("Block", loop_node, None)
                for op, lhs, operands in body_steps:
                    self._emit(op, lhs, operands, body_node)
                exit_block = self._open_block()
                self.blocks[entry]["succ"] = [header]
                self.blocks[header]["succ"] = [body, exit_block]
                self.blocks[body]["succ"] = [header]
            else:
                raise ValueError(f"unknown segment {seg[0]!r}")
        state_vars = [
            [self.state_name(key), _STATE_TABLE[key][1]] for key in _STATE_TABLE
        ]
        return {
            **meta,
            "instructions": self.instrs,
            "blocks": self.blocks,
            "ast": self.ast,
            "state_vars": state_vars,
        }


def _draw_label(rng: np.random.Generator, rates: dict[str, float]) -> str:
    u = float(rng.random())
    acc = 0.0
    for task in TASKS:
        acc += rates.get(task, 0.0)
        if u < acc:
            return task
    return "safe"


def _weighted_choice(rng, items: Sequence[str], weights: dict[str, float]) -> str:
    ws = np.array([weights.get(it, 0.0) for it in items], dtype=np.float64)
    if ws.sum() <= 0:
        ws = np.ones(len(items))
    return items[int(rng.choice(len(items), p=ws / ws.sum()))]


def _render_contract(cid: str, label: str, fns, dialect: str, spec: SynthSpec):
    lines = []
    for name, _cat, segments in fns:
        r = _Renderer(dialect, spec)
        obj = r.render(segments, {
            "contract_id": cid,
            "language": dialect,
            "function": name,
            "label": label,
        })
        lines.append(obj)
    return lines


def generate_corpus(
    spec: SynthSpec,
) -> tuple[list[Contract], list[Contract], list[EquivalencePair], dict[str, str]]:
    """Paired corpora plus the function equivalence map and label table."""
    lines_a: list[str] = []
    lines_b: list[str] = []
    pairs: list[EquivalencePair] = []
    labels: dict[str, str] = {}
    injections: list[tuple[str, str, int]] = []
    lo, hi = spec.functions_per_contract
    for k in range(spec.contracts_per_dialect):
        rng = np.random.default_rng([spec.seed, k])
        cid = f"c{k:04d}"
        label = _draw_label(rng, spec.injection_rates)
        n_fns = int(rng.integers(lo, hi + 1))
        long_core = bool(rng.random() < spec.long_core_rate)
        if label == "safe":
            core_cat = _weighted_choice(rng, CORE_CATEGORIES, spec.template_mix)
        else:
            core_cat = {"re": "reentrancy pattern", "ut": "balance update",
                        "wr": "randomness condition"}[label]
        fns = [_CORE_BUILDERS[core_cat](rng, long_core)]
        seen_names = {fns[0][0]}
        for _ in range(n_fns - 1):
            cat = _weighted_choice(rng, TEMPLATE_CATEGORIES, spec.template_mix)
            name, fcat, segments = _FILLER_BUILDERS[cat](rng)
            while name in seen_names:
                name = name + "_2"
            seen_names.add(name)
            fns.append((name, fcat, segments))
        labels[cid] = label
        if label != "safe":
            injections.append((cid, label, int(rng.integers(0, 2**31))))
        for name, cat, _segments in fns:
            pairs.append(EquivalencePair(
                fn_a=f"A:{cid}::{name}", fn_b=f"B:{cid}::{name}", category=cat,
            ))
        for obj in _render_contract(cid, label, fns, "A", spec):
            lines_a.append(json.dumps(obj))
        for obj in _render_contract(cid, label, fns, "B", spec):
            lines_b.append(json.dumps(obj))

    corpus_a = parse_ir_dump("\n".join(lines_a) + "\n")
    corpus_b = parse_ir_dump("\n".join(lines_b) + "\n")
    by_id_a = {c.contract_id: c for c in corpus_a}
    by_id_b = {c.contract_id: c for c in corpus_b}
    for cid, task, seed in injections:
        for corpus_contract, respell in (
            (by_id_a[cid], None),
            (by_id_b[cid], spec.opcode_respelling),
        ):
            injected = inject_vulnerability(
                corpus_contract.functions[0], task, seed, respell=respell
            )
            problems = validate_function(injected)
            if problems:
                raise RuntimeError(f"injection broke {cid}: {problems[0]}")
            corpus_contract.functions[0] = injected
    return corpus_a, corpus_b, pairs, labels


def _state_write_indices(f: IrFunction) -> list[int]:
    return [
        ins.index
        for ins in f.instructions
        if ins.opcode is Opcode.ASSIGN
        and ins.lhs is not None
        and ins.lhs.kind is OperandKind.STATE_VAR
    ]


def _fresh_temp_name(f: IrFunction) -> str:
    top = -1
    for ins in f.instructions:
        for op in list(ins.operands) + ([ins.lhs] if ins.lhs else []):
            m = re.match(r"^TMP_(\d+)$", op.text)
            if m:
                top = max(top, int(m.group(1)))
    return f"TMP_{top + 1}"


def _insert_instruction(
    f: IrFunction, anchor: int, after: bool, opcode: Opcode,
    lhs_text: Optional[str], operand_texts: Sequence[str],
) -> IrFunction:
    """New function with one instruction spliced in just before (or after)
    the anchor instruction. Later indices shift by one, the new statement
    joins the anchor's basic block at the matching slot, and its AST node
    becomes a sibling of the anchor's node."""
    at = anchor + 1 if after else anchor
    state_names = f.state_var_names()
    lhs = (
        parse_operand(lhs_text, state_names, opcode, -1)
        if lhs_text is not None else None
    )
    operands = tuple(
        parse_operand(t, state_names, opcode, i)
        for i, t in enumerate(operand_texts)
    )
    raw = (f"{lhs_text} = " if lhs_text else "") + opcode.value + " " + \
        " ".join(operand_texts)
    new_ins = IrInstruction(at, opcode, lhs, operands, raw.strip())

    instructions = tuple(
        replace(ins, index=ins.index + 1) if ins.index >= at else ins
        for ins in f.instructions
    )
    instructions = instructions[:at] + (new_ins,) + instructions[at:]

    blocks = []
    for b in f.blocks:
        idxs = [i + 1 if i >= at else i for i in b.instr_indices]
        if anchor in b.instr_indices:
            slot = list(b.instr_indices).index(anchor)
            idxs.insert(slot + 1 if after else slot, at)
        blocks.append(BasicBlock(b.id, tuple(idxs), b.successors))

    parent = 0
    for node in f.ast:
        if node.instr_index == anchor:
            parent = node.parent if node.parent is not None else node.id
            break
    ast = [
        replace(n, instr_index=n.instr_index + 1)
        if n.instr_index is not None and n.instr_index >= at else n
        for n in f.ast
    ]
    new_id = max(n.id for n in f.ast) + 1
    ast.append(AstNode(new_id, AstKind.EXPR_STMT, parent, at))
    return replace(
        f, instructions=instructions, blocks=tuple(blocks), ast=tuple(ast)
    )


def inject_vulnerability(
    f: IrFunction,
    task,
    seed: int,
    respell: Optional[dict[str, str]] = None,
) -> IrFunction:
    """Plant one vulnerability of the given kind into a safe function.

    RE: external call (result checked later) immediately before a state
    write. WR: a branch condition rewritten to read a block-entropy state
    variable. UT: a transfer that drains a balance state variable and whose
    result is never read, appended inside the entry block. `respell` maps
    inserted opcode names the way the surrounding dialect does.
    """
    task = task.value if isinstance(task, Label) else str(task)
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng([seed])
    respell = respell or {}

    def spelled(op: Opcode) -> Opcode:
        return Opcode(respell.get(op.value, op.value))

    if task == "re":
        writes = _state_write_indices(f)
        if not writes:
            raise NoInjectionSite("re: no state-variable write")
        write = int(writes[int(rng.integers(0, len(writes)))])
        tmp = _fresh_temp_name(f)
        callee = _INJECT_CALLEE
        state_read = f.instructions[write].lhs.text
        out = _insert_instruction(
            f, write, False, spelled(Opcode.HIGH_LEVEL_CALL), tmp,
            [callee, state_read],
        )
        return _insert_instruction(
            out, write + 1, True, Opcode.REQUIRE, None, [tmp]
        )

    if task == "wr":
        conds = [i for i in f.instructions if i.opcode is Opcode.CONDITION]
        if not conds:
            raise NoInjectionSite("wr: no branch condition to rewrite")
        target = conds[int(rng.integers(0, len(conds)))]
        entropy = next(
            (n for n in f.state_var_names() if "block" in n or "timestamp" in n),
            None,
        )
        state_vars = f.state_vars
        if entropy is None:
            entropy = "block_timestamp"
            state_vars = state_vars + ((entropy, "uint256"),)
        names = frozenset(n for n, _ in state_vars)
        texts = (entropy, ">", "500")
        new_ops = tuple(
            parse_operand(t, names, Opcode.CONDITION, i)
            for i, t in enumerate(texts)
        )
        rewritten = replace(
            target, operands=new_ops, raw="CONDITION " + " ".join(texts)
        )
        instructions = tuple(
            rewritten if ins.index == target.index else ins
            for ins in f.instructions
        )
        return replace(f, instructions=instructions, state_vars=state_vars)

    # ut
    if not f.blocks or not f.blocks[0].instr_indices:
        raise NoInjectionSite("ut: empty entry block")
    entry = f.blocks[0]
    last = entry.instr_indices[-1]
    tail = f.instructions[last].opcode in (
        Opcode.CONDITION, Opcode.RETURN, Opcode.REQUIRE
    )
    tmp = _fresh_temp_name(f)
    names = sorted(f.state_var_names())
    amount = next((n for n in names if "balance" in n), names[0] if names else "1")
    return _insert_instruction(
        f, last, not tail, spelled(Opcode.TRANSFER), tmp, ["recipient", amount]
    )


def sidecar_json(
    spec: SynthSpec, pairs: Sequence[EquivalencePair], labels: dict[str, str]
) -> dict:
    obj = asdict(spec)
    obj["functions_per_contract"] = list(spec.functions_per_contract)
    return {
        "pairs": [[p.fn_a, p.fn_b] for p in pairs],
        "labels": dict(sorted(labels.items())),
        "spec": obj,
        "categories": {
            p.fn_a.split(":", 1)[1]: p.category for p in pairs
        },
    }


def write_corpus(spec: SynthSpec, out_dir) -> dict[str, str]:
    """Emit corpus_a.jsonl / corpus_b.jsonl / pairs.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_a, corpus_b, pairs, labels = generate_corpus(spec)
    paths = {
        "corpus_a": str(out / "corpus_a.jsonl"),
        "corpus_b": str(out / "corpus_b.jsonl"),
        "pairs": str(out / "pairs.json"),
    }
    Path(paths["corpus_a"]).write_text(serialize_contracts(corpus_a))
    Path(paths["corpus_b"]).write_text(serialize_contracts(corpus_b))
    Path(paths["pairs"]).write_text(
        json.dumps(sidecar_json(spec, pairs, labels), indent=2, sort_keys=True)
        + "\n"
    )
    return paths


def probe_pairs(
    corpus_a: Sequence[Contract],
    corpus_b: Sequence[Contract],
    pairs: Sequence[EquivalencePair],
) -> list[tuple[IrFunction, IrFunction, str]]:
    """Resolve the equivalence map to function objects for the G1 probe."""
    fn_a = {f"A:{c.contract_id}::{f.name}": f for c in corpus_a for f in c.functions}
    fn_b = {f"B:{c.contract_id}::{f.name}": f for c in corpus_b for f in c.functions}
    return [(fn_a[p.fn_a], fn_b[p.fn_b], p.category) for p in pairs]

import json

import pytest

from iralign import ir


def make_func_obj(**overrides):
    obj = {
        "contract_id": "c0",
        "language": "A",
        "function": "f0",
        "instructions": [
            {
                "i": 0,
                "op": "ASSIGN",
                "lhs": "TMP_0(bool)",
                "operands": ["amount", ">", "0"],
                "raw": "TMP_0(bool) = amount > 0",
            },
            {
                "i": 1,
                "op": "REQUIRE",
                "lhs": None,
                "operands": ["TMP_0", '"Amount > 0"'],
                "raw": 'require(TMP_0, "Amount > 0")',
            },
            {"i": 2, "op": "RETURN", "lhs": None, "operands": [], "raw": "return"},
        ],
        "blocks": [{"id": 0, "instrs": [0, 1, 2], "succ": []}],
        "ast": [
            {"id": 0, "kind": "Function", "parent": None, "instr": None},
            {"id": 1, "kind": "ExprStmt", "parent": 0, "instr": 0},
            {"id": 2, "kind": "Call", "parent": 0, "instr": 1},
            {"id": 3, "kind": "ExprStmt", "parent": 0, "instr": 2},
        ],
        "state_vars": [["balances", "mapping"]],
        "label": None,
    }
    obj.update(overrides)
    return obj


def dump_line(obj):
    return json.dumps(obj) + "\n"


def test_parse_worked_example():
    contracts = ir.parse_ir_dump(dump_line(make_func_obj()))
    assert len(contracts) == 1
    f = contracts[0].functions[0]
    ins = f.instructions[0]
    assert ins.opcode is ir.Opcode.ASSIGN
    assert ins.lhs.kind is ir.OperandKind.TEMP_VAR
    assert ins.lhs.text == "TMP_0"
    assert ins.lhs.decl_type == "bool"
    assert [op.text for op in ins.operands] == ["amount", ">", "0"]
    assert ins.operands[2].kind is ir.OperandKind.CONSTANT


def test_empty_stream():
    assert ir.parse_ir_dump("") == []


def test_block_omits_instruction():
    obj = make_func_obj(blocks=[{"id": 0, "instrs": [0, 1], "succ": []}])
    with pytest.raises(ir.DanglingReference):
        ir.parse_ir_dump(dump_line(obj))


def test_extra_field_rejected():
    obj = make_func_obj()
    obj["surprise"] = 1
    with pytest.raises(ir.MalformedLine):
        ir.parse_ir_dump(dump_line(obj))


def test_missing_field_rejected():
    obj = make_func_obj()
    del obj["blocks"]
    with pytest.raises(ir.MalformedLine):
        ir.parse_ir_dump(dump_line(obj))


def test_unknown_opcode():
    obj = make_func_obj()
    obj["instructions"][0]["op"] = "FROBNICATE"
    with pytest.raises(ir.UnknownOpcode):
        ir.parse_ir_dump(dump_line(obj))


def test_bad_json_line():
    with pytest.raises(ir.MalformedLine):
        ir.parse_ir_dump("{not json\n")


def test_dangling_ast_parent():
    obj = make_func_obj()
    obj["ast"][1]["parent"] = 99
    with pytest.raises(ir.DanglingReference):
        ir.parse_ir_dump(dump_line(obj))


def test_dangling_block_successor():
    obj = make_func_obj(blocks=[{"id": 0, "instrs": [0, 1, 2], "succ": [7]}])
    with pytest.raises(ir.DanglingReference):
        ir.parse_ir_dump(dump_line(obj))


def test_operand_classification():
    contracts = ir.parse_ir_dump(
        dump_line(
            make_func_obj(
                instructions=[
                    {
                        "i": 0,
                        "op": "HIGH_LEVEL_CALL",
                        "lhs": "TMP_1(bool)",
                        "operands": ["withdraw", "balances", "local_x", "0x1f", "true"],
                        "raw": "call",
                    },
                    {
                        "i": 1,
                        "op": "NEW_VAR",
                        "lhs": "fresh(uint256)",
                        "operands": ["uint256"],
                        "raw": "new var",
                    },
                    {
                        "i": 2,
                        "op": "ASSIGN",
                        "lhs": "REF_3(uint256)",
                        "operands": ["TUP_2", '"text"'],
                        "raw": "x",
                    },
                ],
                blocks=[{"id": 0, "instrs": [0, 1, 2], "succ": []}],
            )
        )
    )
    f = contracts[0].functions[0]
    kinds = [op.kind for op in f.instructions[0].operands]
    assert kinds == [
        ir.OperandKind.FUNCTION_NAME,
        ir.OperandKind.STATE_VAR,
        ir.OperandKind.LOCAL_VAR,
        ir.OperandKind.CONSTANT,
        ir.OperandKind.CONSTANT,
    ]
    assert f.instructions[1].operands[0].kind is ir.OperandKind.TYPE_NAME
    assert f.instructions[2].lhs.kind is ir.OperandKind.REF_VAR
    assert f.instructions[2].operands[0].kind is ir.OperandKind.TUPLE_VAR
    assert f.instructions[2].operands[1].kind is ir.OperandKind.STRING_LIT


def test_grouping_and_order():
    text = (
        dump_line(make_func_obj(contract_id="c0", function="f0"))
        + dump_line(make_func_obj(contract_id="c1", function="g0", language="B"))
        + dump_line(make_func_obj(contract_id="c0", function="f1"))
    )
    contracts = ir.parse_ir_dump(text)
    assert [c.contract_id for c in contracts] == ["c0", "c1"]
    assert [f.name for f in contracts[0].functions] == ["f0", "f1"]
    assert contracts[1].language is ir.Language.B


def test_conflicting_labels_rejected():
    text = dump_line(make_func_obj(label="re")) + dump_line(
        make_func_obj(function="f1", label="safe")
    )
    with pytest.raises(ir.MalformedLine):
        ir.parse_ir_dump(text)


def test_label_parsed():
    contracts = ir.parse_ir_dump(dump_line(make_func_obj(label="wr")))
    assert contracts[0].label is ir.Label.WR


def test_round_trip():
    text = dump_line(make_func_obj(label="ut")) + dump_line(
        make_func_obj(contract_id="c1", function="g0")
    )
    contracts = ir.parse_ir_dump(text)
    again = ir.parse_ir_dump(ir.serialize_contracts(contracts))
    assert again == contracts


def test_validate_ok():
    contracts = ir.parse_ir_dump(dump_line(make_func_obj()))
    assert ir.validate_function(contracts[0].functions[0]) == []


def build_function(**overrides):
    contracts = ir.parse_ir_dump(dump_line(make_func_obj()))
    f = contracts[0].functions[0]
    return ir.IrFunction(
        contract_id=f.contract_id,
        language=f.language,
        name=f.name,
        instructions=overrides.get("instructions", f.instructions),
        blocks=overrides.get("blocks", f.blocks),
        ast=overrides.get("ast", f.ast),
        state_vars=f.state_vars,
    )


def test_validate_multiple_roots():
    f = build_function(
        ast=(
            ir.AstNode(0, ir.AstKind.FUNCTION, None, None),
            ir.AstNode(1, ir.AstKind.FUNCTION, None, None),
        )
    )
    names = [v.invariant for v in ir.validate_function(f)]
    assert "MultipleRoots" in names


def test_validate_dangling_successor():
    f = build_function(blocks=(ir.BasicBlock(0, (0, 1, 2), (99,)),))
    violations = ir.validate_function(f)
    assert any(
        v.invariant == "DanglingSuccessor" and v.offender == 99 for v in violations
    )


def test_validate_uncovered_instruction():
    f = build_function(blocks=(ir.BasicBlock(0, (0, 2), ()),))
    names = [v.invariant for v in ir.validate_function(f)]
    assert "UncoveredInstruction" in names


def test_validate_ast_cycle():
    f = build_function(
        ast=(
            ir.AstNode(0, ir.AstKind.FUNCTION, None, None),
            ir.AstNode(1, ir.AstKind.BLOCK, 2, None),
            ir.AstNode(2, ir.AstKind.BLOCK, 1, None),
        )
    )
    names = [v.invariant for v in ir.validate_function(f)]
    assert "UnreachableAstNode" in names


def test_validate_lhs_rules():
    f = build_function(
        instructions=(
            ir.IrInstruction(
                0,
                ir.Opcode.CONDITION,
                ir.IrOperand(ir.OperandKind.TEMP_VAR, "TMP_0"),
                (),
                "c",
            ),
            ir.IrInstruction(1, ir.Opcode.ASSIGN, None, (), "a"),
            ir.IrInstruction(2, ir.Opcode.RETURN, None, (), "r"),
        )
    )
    names = [v.invariant for v in ir.validate_function(f)]
    assert "NoLhsOpcode" in names
    assert "AssignNeedsLhs" in names


def test_max_ast_depth():
    contracts = ir.parse_ir_dump(dump_line(make_func_obj()))
    assert ir.max_ast_depth(contracts[0].functions[0]) == 1

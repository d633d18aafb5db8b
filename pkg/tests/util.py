"""Shared builders for hand-written IR fixtures."""

import json

from iralign import ir


def make_instr(i, op, lhs, operands, raw="raw"):
    return {"i": i, "op": op, "lhs": lhs, "operands": operands, "raw": raw}


def make_function_obj(
    instrs,
    blocks=None,
    ast=None,
    contract_id="c0",
    language="A",
    name="f0",
    state_vars=None,
    label=None,
):
    if blocks is None:
        blocks = [{"id": 0, "instrs": [e["i"] for e in instrs], "succ": []}]
    if ast is None:
        ast = [{"id": 0, "kind": "Function", "parent": None, "instr": None}]
        ast += [
            {"id": k + 1, "kind": "ExprStmt", "parent": 0, "instr": e["i"]}
            for k, e in enumerate(instrs)
        ]
    return {
        "contract_id": contract_id,
        "language": language,
        "function": name,
        "instructions": instrs,
        "blocks": blocks,
        "ast": ast,
        "state_vars": state_vars or [],
        "label": label,
    }


def make_function(*args, **kwargs):
    obj = make_function_obj(*args, **kwargs)
    contracts = ir.parse_ir_dump(json.dumps(obj) + "\n")
    return contracts[0].functions[0]


def safe_instrs(lang):
    log_op = "EVENT_EMIT" if lang == "A" else "INTERNAL_CALL"
    state = "balances" if lang == "A" else "self_balances"
    amt = "amt_1" if lang == "A" else "value_1"
    return [
        make_instr(0, "ASSIGN", f"{amt}(uint256)", ["0"]),
        make_instr(1, "BINARY", "TMP_0", [state, "+", amt]),
        make_instr(2, "ASSIGN", state, ["TMP_0"]),
        make_instr(3, log_op, None, ["log_update", amt]),
        make_instr(4, "RETURN", None, [amt]),
    ]


def vuln_instrs(lang):
    call_op = "TRANSFER" if lang == "A" else "LOW_LEVEL_CALL"
    state = "balances" if lang == "A" else "self_balances"
    return [
        make_instr(0, "HIGH_LEVEL_CALL", "TMP_0", ["send_funds", "caller"]),
        make_instr(1, call_op, None, ["caller", "TMP_0"]),
        make_instr(2, "ASSIGN", state, ["0"]),
        make_instr(3, "RETURN", None, []),
    ]


def make_training_corpus(lang, n, vuln_every=3):
    """Tiny two-function contracts; every vuln_every-th is labeled "re"."""
    state = "balances" if lang == "A" else "self_balances"
    lines = []
    for k in range(n):
        cid = f"{lang.lower()}{k}"
        vuln = k % vuln_every == 0
        label = "re" if vuln else "safe"
        instrs = vuln_instrs(lang) if vuln else safe_instrs(lang)
        for name, body in (("deposit", safe_instrs(lang)), ("main", instrs)):
            lines.append(
                json.dumps(
                    make_function_obj(
                        body,
                        contract_id=cid,
                        language=lang,
                        name=name,
                        state_vars=[[state, "mapping"], ["owner", "address"]],
                        label=label,
                    )
                )
            )
    return ir.parse_ir_dump("\n".join(lines) + "\n")

import json

import pytest

from iralign import ir, preprocess as pp


def make_instr(i, op, lhs, operands, raw="raw"):
    return {"i": i, "op": op, "lhs": lhs, "operands": operands, "raw": raw}


def make_function(instrs, blocks=None, contract_id="c0", name="f0", state_vars=None):
    if blocks is None:
        blocks = [{"id": 0, "instrs": [e["i"] for e in instrs], "succ": []}]
    ast = [{"id": 0, "kind": "Function", "parent": None, "instr": None}]
    ast += [
        {"id": k + 1, "kind": "ExprStmt", "parent": 0, "instr": e["i"]}
        for k, e in enumerate(instrs)
    ]
    obj = {
        "contract_id": contract_id,
        "language": "A",
        "function": name,
        "instructions": instrs,
        "blocks": blocks,
        "ast": ast,
        "state_vars": state_vars or [],
        "label": None,
    }
    contracts = ir.parse_ir_dump(json.dumps(obj) + "\n")
    return contracts[0].functions[0]


def texts(tokens):
    return [t.text for t in tokens]


def test_tokenize_assign_with_type():
    f = make_function([make_instr(0, "ASSIGN", "TMP_0(bool)", ["amount", ">", "0"])])
    toks = pp.tokenize_instruction(f.instructions[0])
    assert texts(toks) == ["ASSIGN", "TMP_0", "bool", "amount", ">", "0", "<SEP>"]
    assert toks[0].klass is pp.TokenKlass.OPERATION
    assert toks[1].klass is pp.TokenKlass.VARIABLE
    assert toks[2].klass is pp.TokenKlass.TYPE_ANNO
    assert toks[5].klass is pp.TokenKlass.LITERAL
    assert toks[6].klass is pp.TokenKlass.MARKER


def test_tokenize_require_keeps_string():
    f = make_function([make_instr(0, "REQUIRE", None, ["TMP_0", '"Error msg"'])])
    toks = pp.tokenize_instruction(f.instructions[0])
    assert texts(toks) == ["REQUIRE", "TMP_0", '"Error msg"', "<SEP>"]


def test_tokenize_return_minimal():
    f = make_function([make_instr(0, "RETURN", None, [])])
    toks = pp.tokenize_instruction(f.instructions[0])
    assert texts(toks) == ["RETURN", "<SEP>"]


def test_tokenize_function_markers():
    f = make_function(
        [
            make_instr(0, "CONDITION", None, ["flag"]),
            make_instr(1, "RETURN", None, []),
            make_instr(2, "RETURN", None, []),
        ],
        blocks=[
            {"id": 0, "instrs": [0], "succ": [1, 2]},
            {"id": 1, "instrs": [1], "succ": []},
            {"id": 2, "instrs": [2], "succ": []},
        ],
    )
    seq = pp.tokenize_function(f)
    assert texts(seq.tokens) == [
        "<FN>",
        "CONDITION",
        "flag",
        "<SEP>",
        "<BR>",
        "RETURN",
        "<SEP>",
        "<BR>",
        "RETURN",
        "<SEP>",
    ]
    assert seq.function_ref == ("c0", "f0")


def norm_texts(token_texts, op_klasses=None):
    """Normalize a hand-written token list; klass inferred per position."""
    toks = []
    for text in token_texts:
        if text.startswith("<") and text.endswith(">"):
            klass = pp.TokenKlass.MARKER
        elif text.startswith('"') or text.lstrip("-").isdigit():
            klass = pp.TokenKlass.LITERAL
        elif text.isupper() and "_" not in text or text in (
            "ASSIGN",
            "REQUIRE",
            "BINARY",
        ):
            klass = pp.TokenKlass.OPERATION
        else:
            klass = pp.TokenKlass.VARIABLE
        toks.append(pp.Token(text, klass))
    seq = pp.TokenSequence(tuple(toks), ("c", "f"))
    return texts(pp.normalize_tokens(seq).tokens)


def test_normalize_require_message_removed():
    assert norm_texts(["REQUIRE", "TMP_0", '"Amount > 0"', "<SEP>"]) == [
        "REQUIRE",
        "<TMP>",
        "<SEP>",
    ]


def test_normalize_suffix_strip():
    assert norm_texts(["ASSIGN", "TMP_1", "amount_1", "*", "rate_2", "<SEP>"]) == [
        "ASSIGN",
        "<TMP>",
        "amount",
        "*",
        "rate",
        "<SEP>",
    ]


def test_normalize_ref_tup_markers():
    assert norm_texts(["ASSIGN", "REF_3", "TUP_2", "<SEP>"]) == [
        "ASSIGN",
        "<REF>",
        "<TUP>",
        "<SEP>",
    ]


def test_normalize_string_outside_require():
    assert norm_texts(["ASSIGN", "TMP_0", '"hello"', "<SEP>"]) == [
        "ASSIGN",
        "<TMP>",
        "<STR>",
        "<SEP>",
    ]


def test_normalize_idempotent():
    seq = pp.TokenSequence(
        (
            pp.Token("REQUIRE", pp.TokenKlass.OPERATION),
            pp.Token("TMP_0", pp.TokenKlass.VARIABLE),
            pp.Token('"m"', pp.TokenKlass.LITERAL),
            pp.Token("<SEP>", pp.TokenKlass.MARKER),
            pp.Token("ASSIGN", pp.TokenKlass.OPERATION),
            pp.Token("bal_7_2", pp.TokenKlass.VARIABLE),
            pp.Token('"s"', pp.TokenKlass.LITERAL),
            pp.Token("<SEP>", pp.TokenKlass.MARKER),
        ),
        ("c", "f"),
    )
    once = pp.normalize_tokens(seq)
    twice = pp.normalize_tokens(once)
    assert once == twice
    assert texts(once.tokens) == [
        "REQUIRE",
        "<TMP>",
        "<SEP>",
        "ASSIGN",
        "bal",
        "<STR>",
        "<SEP>",
    ]


def test_normalize_preserves_count_outside_require():
    seq = pp.TokenSequence(
        (
            pp.Token("ASSIGN", pp.TokenKlass.OPERATION),
            pp.Token("TMP_9", pp.TokenKlass.VARIABLE),
            pp.Token("x_1", pp.TokenKlass.VARIABLE),
            pp.Token('"lit"', pp.TokenKlass.LITERAL),
            pp.Token("<SEP>", pp.TokenKlass.MARKER),
        ),
        ("c", "f"),
    )
    assert len(pp.normalize_tokens(seq).tokens) == len(seq.tokens)


def seq_of(*texts_and_klasses):
    toks = tuple(pp.Token(t, k) for t, k in texts_and_klasses)
    return pp.TokenSequence(toks, ("c", "f"))


def test_vocabulary_order_and_reserved():
    corpus = [
        seq_of(
            ("ASSIGN", pp.TokenKlass.OPERATION),
            ("<TMP>", pp.TokenKlass.MARKER),
            ("<SEP>", pp.TokenKlass.MARKER),
        )
    ]
    vocab = pp.build_vocabulary(corpus)
    assert vocab.tokens[:9] == (
        "<PAD>",
        "<UNK>",
        "<TMP>",
        "<REF>",
        "<TUP>",
        "<STR>",
        "<SEP>",
        "<FN>",
        "<BR>",
    )
    assert "ASSIGN" in vocab.tokens
    assert vocab.id_of("<PAD>") == pp.PAD_ID
    assert vocab.id_of("<UNK>") == pp.UNK_ID


def test_vocabulary_frequency_then_lex():
    corpus = [
        seq_of(
            ("bbb", pp.TokenKlass.VARIABLE),
            ("bbb", pp.TokenKlass.VARIABLE),
            ("aaa", pp.TokenKlass.VARIABLE),
            ("ccc", pp.TokenKlass.VARIABLE),
            ("aaa", pp.TokenKlass.VARIABLE),
        )
    ]
    vocab = pp.build_vocabulary(corpus)
    content = vocab.tokens[9:]
    assert content == ("aaa", "bbb", "ccc")


def test_vocabulary_min_freq():
    corpus = [
        seq_of(
            ("hot", pp.TokenKlass.VARIABLE),
            ("hot", pp.TokenKlass.VARIABLE),
            ("cold", pp.TokenKlass.VARIABLE),
        )
    ]
    vocab = pp.build_vocabulary(corpus, min_freq=2)
    assert "hot" in vocab.tokens
    assert "cold" not in vocab.tokens


def test_vocabulary_deterministic_hash():
    corpus = [seq_of(("x", pp.TokenKlass.VARIABLE))]
    a = pp.build_vocabulary(corpus)
    b = pp.build_vocabulary(corpus)
    assert a.content_hash == b.content_hash


def test_vocabulary_empty_corpus():
    with pytest.raises(pp.EmptyCorpus):
        pp.build_vocabulary([])


def test_vocabulary_json_round_trip():
    vocab = pp.build_vocabulary([seq_of(("x", pp.TokenKlass.VARIABLE))])
    again = pp.Vocabulary.from_json(vocab.to_json())
    assert again.tokens == vocab.tokens
    assert again.content_hash == vocab.content_hash


def test_normalized_vocab_smaller():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "TMP_0(uint256)", ["amount_1"]),
            make_instr(1, "ASSIGN", "TMP_1(uint256)", ["amount_2"]),
        ]
    )
    raw = pp.tokenize_function(f)
    norm = pp.normalize_tokens(raw)
    raw_vocab = pp.build_vocabulary([raw])
    norm_vocab = pp.build_vocabulary([norm])
    assert norm_vocab.size < raw_vocab.size


def test_encode_pad_unk_truncate():
    vocab = pp.build_vocabulary([seq_of(("x", pp.TokenKlass.VARIABLE))])
    short = seq_of(
        ("x", pp.TokenKlass.VARIABLE),
        ("y", pp.TokenKlass.VARIABLE),
    )
    enc = pp.encode_sequence(short, vocab, 5)
    assert enc.ids == (vocab.id_of("x"), pp.UNK_ID, 0, 0, 0)
    assert enc.length == 2
    assert not enc.truncated

    long = seq_of(*[("x", pp.TokenKlass.VARIABLE)] * 9)
    enc2 = pp.encode_sequence(long, vocab, 4)
    assert len(enc2.ids) == 4
    assert enc2.truncated
    assert enc2.length == 4


def make_contract(contract_id, n_instrs, ops=("ASSIGN",)):
    instrs = [
        make_instr(i, ops[i % len(ops)], "TMP_0(bool)" if ops[i % len(ops)] == "ASSIGN" else None, [])
        for i in range(n_instrs)
    ]
    f = make_function(instrs, contract_id=contract_id)
    return ir.Contract(contract_id, ir.Language.A, [f], None)


def test_complexity_identical_contracts_zero():
    corpus = [make_contract(f"c{i}", 4) for i in range(5)]
    scores = pp.complexity_scores(corpus)
    assert all(abs(s) < 1e-12 for s in scores)


def test_complexity_monotone():
    small = make_contract("small", 3, ops=("ASSIGN",))
    big = make_contract("big", 9, ops=("ASSIGN", "RETURN", "CONDITION"))
    scores = pp.complexity_scores([small, big])
    assert scores[1] > scores[0]


def test_complexity_hand_value():
    a = make_contract("a", 2)
    b = make_contract("b", 6)
    scorer = pp.ComplexityScorer([a, b])
    # Depth and opcode measures tie, so only the instruction count
    # contributes: z = (6 - 4) / 2 = 1 for b, mean over three parts = 1/3.
    assert abs(scorer.score(b) - 1.0 / 3.0) < 1e-12
    assert abs(scorer.score(a) + 1.0 / 3.0) < 1e-12

import numpy as np
import pytest

from iralign import graphs, ir
from iralign import autodiff as ad

from util import make_function, make_instr


def test_def_use_simple_chain():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "ASSIGN", "y(uint256)", ["x"]),
        ]
    )
    assert graphs.derive_def_use_edges(f) == [(0, 1, "x")]


def test_def_use_no_shared_vars():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "ASSIGN", "y(uint256)", ["2"]),
        ]
    )
    assert graphs.derive_def_use_edges(f) == []


def test_def_use_most_recent_definition():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "ASSIGN", "z(uint256)", ["2"]),
            make_instr(2, "ASSIGN", "x(uint256)", ["3"]),
            make_instr(3, "ASSIGN", "y(uint256)", ["x"]),
        ]
    )
    assert graphs.derive_def_use_edges(f) == [(2, 3, "x")]


def test_def_use_state_var_entry_definition():
    f = make_function(
        [make_instr(0, "ASSIGN", "y(uint256)", ["bal"])],
        state_vars=[["bal", "uint256"]],
    )
    assert graphs.derive_def_use_edges(f) == [(graphs.ENTRY_DEF, 0, "bal")]


def test_def_use_ignores_self_use_same_instruction():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "BINARY", "x(uint256)", ["x", "+", "1"]),
            make_instr(2, "ASSIGN", "y(uint256)", ["x"]),
        ]
    )
    assert graphs.derive_def_use_edges(f) == [(0, 1, "x"), (1, 2, "x")]


def test_build_graph_straight_line():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "RETURN", None, []),
        ],
        ast=[
            {"id": 0, "kind": "Function", "parent": None, "instr": None},
            {"id": 1, "kind": "ExprStmt", "parent": 0, "instr": 0},
            {"id": 2, "kind": "ExprStmt", "parent": 0, "instr": 1},
        ],
    )
    g = graphs.build_graph(f)
    ast_edges = [e for e in g.edges if e[2] is graphs.EdgeKind.AST]
    ctrl_edges = [e for e in g.edges if e[2] is graphs.EdgeKind.CTRL]
    assert len(ast_edges) == 2
    assert len(ctrl_edges) == 0
    assert len(g.nodes) == 4  # 3 ast nodes + 1 block head


def test_build_graph_branching_ctrl_edges():
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
    g = graphs.build_graph(f)
    ctrl_edges = [e for e in g.edges if e[2] is graphs.EdgeKind.CTRL]
    assert len(ctrl_edges) == 2


def test_build_graph_rejects_invalid():
    f = make_function([make_instr(0, "ASSIGN", "x(uint256)", ["1"])])
    broken = ir.IrFunction(
        contract_id=f.contract_id,
        language=f.language,
        name=f.name,
        instructions=f.instructions,
        blocks=(ir.BasicBlock(0, (0,), (42,)),),
        ast=f.ast,
        state_vars=f.state_vars,
    )
    with pytest.raises(graphs.InvalidFunction):
        graphs.build_graph(broken)


def test_build_graph_deterministic():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["bal"]),
            make_instr(1, "ASSIGN", "y(uint256)", ["x"]),
        ],
        state_vars=[["bal", "uint256"]],
    )
    assert graphs.build_graph(f) == graphs.build_graph(f)


def test_build_graph_data_edges_lifted():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["bal"]),
            make_instr(1, "ASSIGN", "y(uint256)", ["x"]),
        ],
        state_vars=[["bal", "uint256"]],
    )
    g = graphs.build_graph(f)
    data_edges = [e for e in g.edges if e[2] is graphs.EdgeKind.DATA]
    # bal entry-def edge from the root plus the x chain between statements.
    assert (0, 1, graphs.EdgeKind.DATA) in data_edges
    assert (1, 2, graphs.EdgeKind.DATA) in data_edges
    assert len(data_edges) == 2


def test_ast_edges_form_tree():
    f = make_function(
        [make_instr(0, "ASSIGN", "x(uint256)", ["1"])],
        ast=[
            {"id": 0, "kind": "Function", "parent": None, "instr": None},
            {"id": 1, "kind": "Block", "parent": 0, "instr": None},
            {"id": 2, "kind": "ExprStmt", "parent": 1, "instr": 0},
            {"id": 3, "kind": "Identifier", "parent": 2, "instr": None},
        ],
    )
    g = graphs.build_graph(f)
    ast_edges = [e for e in g.edges if e[2] is graphs.EdgeKind.AST]
    n_ast_nodes = sum(1 for n in g.nodes if n.node_kind != graphs.BLOCK_HEAD)
    assert len(ast_edges) == n_ast_nodes - 1


def test_node_kinds_and_scopes():
    f = make_function(
        [make_instr(0, "ASSIGN", "TMP_0(uint256)", ["bal"])],
        state_vars=[["bal", "uint256"]],
    )
    g = graphs.build_graph(f)
    stmt = g.nodes[1]
    assert stmt.op_kind is ir.Opcode.ASSIGN
    assert stmt.scope_kind is graphs.ScopeKind.TEMPORARY
    head = g.nodes[-1]
    assert head.node_kind == graphs.BLOCK_HEAD
    assert head.op_kind is None


def test_init_node_features_shapes():
    f = make_function([make_instr(0, "ASSIGN", "x(uint256)", ["1"])])
    g = graphs.build_graph(f)
    rng = np.random.default_rng(0)
    tables = {
        "node_kind": rng.normal(size=(graphs.NUM_NODE_KINDS, 4)),
        "op_kind": rng.normal(size=(graphs.NUM_OP_KINDS, 2)),
        "scope_kind": rng.normal(size=(graphs.NUM_SCOPE_KINDS, 2)),
    }
    feats = graphs.init_node_features(g, tables, 8)
    assert feats.shape == (len(g.nodes), 8)


def test_init_node_features_identical_rows():
    f = make_function(
        [
            make_instr(0, "ASSIGN", "x(uint256)", ["1"]),
            make_instr(1, "ASSIGN", "y(uint256)", ["2"]),
        ]
    )
    g = graphs.build_graph(f)
    rng = np.random.default_rng(1)
    tables = {
        "node_kind": rng.normal(size=(graphs.NUM_NODE_KINDS, 4)),
        "op_kind": rng.normal(size=(graphs.NUM_OP_KINDS, 2)),
        "scope_kind": rng.normal(size=(graphs.NUM_SCOPE_KINDS, 2)),
    }
    feats = graphs.init_node_features(g, tables, 8)
    np.testing.assert_array_equal(feats[1], feats[2])


def test_init_node_features_dimension_mismatch():
    f = make_function([make_instr(0, "ASSIGN", "x(uint256)", ["1"])])
    g = graphs.build_graph(f)
    tables = {
        "node_kind": np.zeros((graphs.NUM_NODE_KINDS, 4)),
        "op_kind": np.zeros((graphs.NUM_OP_KINDS, 2)),
        "scope_kind": np.zeros((graphs.NUM_SCOPE_KINDS, 1)),
    }
    with pytest.raises(graphs.DimensionMismatch):
        graphs.init_node_features(g, tables, 8)


def test_init_node_features_tensor_path():
    f = make_function([make_instr(0, "ASSIGN", "x(uint256)", ["1"])])
    g = graphs.build_graph(f)
    rng = np.random.default_rng(2)
    np_tables = {
        "node_kind": rng.normal(size=(graphs.NUM_NODE_KINDS, 4)),
        "op_kind": rng.normal(size=(graphs.NUM_OP_KINDS, 2)),
        "scope_kind": rng.normal(size=(graphs.NUM_SCOPE_KINDS, 2)),
    }
    t_tables = {k: ad.Tensor(v) for k, v in np_tables.items()}
    expect = graphs.init_node_features(g, np_tables, 8)
    got = graphs.init_node_features(g, t_tables, 8)
    np.testing.assert_allclose(got.data, expect)


def test_to_dot_mentions_kinds():
    f = make_function([make_instr(0, "ASSIGN", "x(uint256)", ["1"])])
    g = graphs.build_graph(f)
    dot = graphs.to_dot(g)
    assert "digraph" in dot
    assert 'kind="Ast"' in dot

"""Tokenization, normalization, shared vocabulary, and complexity scoring.

Instruction streams become flat token sequences with <SEP> instruction
delimiters, a leading <FN> marker, and <BR> markers at basic-block breaks.
Normalization canonicalizes compiler-generated names so the two dialects
share one vocabulary.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .ir import Contract, IrFunction, IrInstruction, Opcode, OperandKind, max_ast_depth


class TokenKlass(Enum):
    OPERATION = "Operation"
    VARIABLE = "Variable"
    TYPE_ANNO = "TypeAnno"
    MARKER = "Marker"
    LITERAL = "Literal"


MARKERS = ("<TMP>", "<REF>", "<TUP>", "<STR>", "<SEP>", "<FN>", "<BR>")

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"


@dataclass(frozen=True)
class Token:
    text: str
    klass: TokenKlass


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    function_ref: tuple[str, str]


@dataclass(frozen=True)
class IdSequence:
    ids: tuple[int, ...]
    length: int
    pad_to: int
    truncated: bool


_SEP = Token("<SEP>", TokenKlass.MARKER)
_FN = Token("<FN>", TokenKlass.MARKER)
_BR = Token("<BR>", TokenKlass.MARKER)

_KLASS_BY_KIND = {
    OperandKind.STATE_VAR: TokenKlass.VARIABLE,
    OperandKind.LOCAL_VAR: TokenKlass.VARIABLE,
    OperandKind.TEMP_VAR: TokenKlass.VARIABLE,
    OperandKind.REF_VAR: TokenKlass.VARIABLE,
    OperandKind.TUPLE_VAR: TokenKlass.VARIABLE,
    OperandKind.CONSTANT: TokenKlass.LITERAL,
    OperandKind.STRING_LIT: TokenKlass.LITERAL,
    OperandKind.TYPE_NAME: TokenKlass.TYPE_ANNO,
    OperandKind.FUNCTION_NAME: TokenKlass.OPERATION,
}


def tokenize_instruction(instr: IrInstruction) -> list[Token]:
    """Opcode, then lhs and operands each with any type annotation, then <SEP>."""
    out = [Token(instr.opcode.value, TokenKlass.OPERATION)]
    slots = []
    if instr.lhs is not None:
        slots.append(instr.lhs)
    slots.extend(instr.operands)
    for op in slots:
        out.append(Token(op.text, _KLASS_BY_KIND[op.kind]))
        if op.decl_type is not None:
            out.append(Token(op.decl_type, TokenKlass.TYPE_ANNO))
    out.append(_SEP)
    return out


def tokenize_function(f: IrFunction) -> TokenSequence:
    """<FN>, then blocks in id order with <BR> between them."""
    by_index = {ins.index: ins for ins in f.instructions}
    tokens: list[Token] = [_FN]
    for pos, block in enumerate(sorted(f.blocks, key=lambda b: b.id)):
        if pos > 0:
            tokens.append(_BR)
        for idx in block.instr_indices:
            tokens.extend(tokenize_instruction(by_index[idx]))
    return TokenSequence(tuple(tokens), (f.contract_id, f.name))


_TMP_TOK = re.compile(r"^TMP_\d+$")
_REF_TOK = re.compile(r"^REF_\d+$")
_TUP_TOK = re.compile(r"^TUP_\d+$")
_SUFFIX = re.compile(r"^(.+?)(?:_\d+)+$")


def _is_string_literal(tok: Token) -> bool:
    return tok.klass is TokenKlass.LITERAL and tok.text.startswith('"')


def normalize_tokens(seq: TokenSequence) -> TokenSequence:
    """Apply the four normalization rules in order; idempotent.

    R1 temp/ref/tuple names to markers; R2 strip trailing _<digits> from
    variable names; R3 drop string messages inside REQUIRE; R4 remaining
    strings to <STR>.
    """
    out: list[Token] = []
    current_op: Optional[str] = None
    at_start = True
    for tok in seq.tokens:
        if tok.klass is TokenKlass.MARKER:
            if tok.text in ("<SEP>", "<FN>", "<BR>"):
                at_start = True
                current_op = None
            out.append(tok)
            continue
        if at_start and tok.klass is TokenKlass.OPERATION:
            current_op = tok.text
        at_start = False
        if tok.klass is TokenKlass.VARIABLE:
            if _TMP_TOK.match(tok.text):
                out.append(Token("<TMP>", TokenKlass.MARKER))
                continue
            if _REF_TOK.match(tok.text):
                out.append(Token("<REF>", TokenKlass.MARKER))
                continue
            if _TUP_TOK.match(tok.text):
                out.append(Token("<TUP>", TokenKlass.MARKER))
                continue
            m = _SUFFIX.match(tok.text)
            if m is not None:
                out.append(Token(m.group(1), TokenKlass.VARIABLE))
                continue
            out.append(tok)
            continue
        if _is_string_literal(tok):
            if current_op == Opcode.REQUIRE.value:
                continue
            out.append(Token("<STR>", TokenKlass.MARKER))
            continue
        out.append(tok)
    return TokenSequence(tuple(out), seq.function_ref)


class EmptyCorpus(Exception):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    min_freq: int
    token_to_id: dict = field(hash=False, compare=False, repr=False, default=None)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def content_hash(self) -> str:
        payload = json.dumps(
            {"tokens": list(self.tokens), "min_freq": self.min_freq}, sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def id_of(self, text: str) -> int:
        return self.token_to_id.get(text, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "tokens": list(self.tokens),
                "min_freq": self.min_freq,
                "hash": self.content_hash,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Vocabulary":
        obj = json.loads(text)
        if obj.get("version") != 1:
            raise ValueError(f"unsupported vocabulary version {obj.get('version')!r}")
        vocab = make_vocabulary(obj["tokens"], obj["min_freq"])
        if vocab.content_hash != obj["hash"]:
            raise ValueError("vocabulary hash mismatch")
        return vocab


def make_vocabulary(tokens: Iterable[str], min_freq: int) -> Vocabulary:
    token_list = tuple(tokens)
    mapping = {text: i for i, text in enumerate(token_list)}
    if len(mapping) != len(token_list):
        raise ValueError("duplicate token in vocabulary")
    return Vocabulary(token_list, min_freq, mapping)


def build_vocabulary(corpus: list[TokenSequence], min_freq: int = 1) -> Vocabulary:
    """Shared vocabulary: PAD, UNK, the markers, then content tokens.

    Content ids are assigned by descending frequency with lexicographic
    tie-break, so construction is deterministic for a fixed corpus.
    """
    if not corpus:
        raise EmptyCorpus("no token sequences")
    counts: dict[str, int] = {}
    for seq in corpus:
        for tok in seq.tokens:
            counts[tok.text] = counts.get(tok.text, 0) + 1
    reserved = [PAD_TOKEN, UNK_TOKEN, *MARKERS]
    reserved_set = set(reserved)
    content = [
        text
        for text, freq in counts.items()
        if text not in reserved_set and freq >= min_freq
    ]
    content.sort(key=lambda text: (-counts[text], text))
    return make_vocabulary(reserved + content, min_freq)


def corpus_vocabulary(contracts: list[Contract], min_freq: int = 1) -> Vocabulary:
    """Vocabulary over the normalized token streams of every function."""
    seqs = [
        normalize_tokens(tokenize_function(f))
        for c in contracts
        for f in c.functions
    ]
    return build_vocabulary(seqs, min_freq)


def encode_sequence(seq: TokenSequence, vocab: Vocabulary, pad_to: int) -> IdSequence:
    ids = [vocab.id_of(tok.text) for tok in seq.tokens]
    truncated = len(ids) > pad_to
    if truncated:
        ids = ids[:pad_to]
    length = len(ids)
    ids.extend([PAD_ID] * (pad_to - length))
    return IdSequence(tuple(ids), length, pad_to, truncated)


def _raw_measures(c: Contract) -> tuple[float, float, float]:
    depth = max((max_ast_depth(f) for f in c.functions), default=0)
    opcodes = {ins.opcode for f in c.functions for ins in f.instructions}
    total = sum(len(f.instructions) for f in c.functions)
    return float(depth), float(len(opcodes)), float(total)


class ComplexityScorer:
    """Scores contracts as the mean of corpus-z-normalized structure measures.

    Measures: max AST depth over functions, number of distinct opcodes, and
    total instruction count. A degenerate corpus dimension (zero spread)
    contributes z = 0.
    """

    def __init__(self, corpus: list[Contract]):
        if not corpus:
            raise EmptyCorpus("no contracts")
        rows = [_raw_measures(c) for c in corpus]
        n = len(rows)
        self.means = tuple(sum(r[j] for r in rows) / n for j in range(3))
        self.stds = tuple(
            (sum((r[j] - self.means[j]) ** 2 for r in rows) / n) ** 0.5
            for j in range(3)
        )

    def score(self, c: Contract) -> float:
        raw = _raw_measures(c)
        zs = [
            (raw[j] - self.means[j]) / self.stds[j] if self.stds[j] > 0 else 0.0
            for j in range(3)
        ]
        return sum(zs) / 3.0


def complexity_scores(corpus: list[Contract]) -> list[float]:
    scorer = ComplexityScorer(corpus)
    return [scorer.score(c) for c in corpus]

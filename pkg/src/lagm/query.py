"""Graph-query subset: prompt rendering, parsing, validation, execution.

Supported grammar (keywords case-insensitive, trailing semicolon optional):

    MATCH (v[:LABEL]) [-[:REL]-> (w[:LABEL]) | <-[:REL]- (w[:LABEL])]
    [WHERE pred (AND pred)*]
    RETURN v[, w] [LIMIT n]

    pred := prop = literal
          | prop IN list | prop IN $param
          | toString(prop) IN list | toString(prop) IN $param
    prop := var '.' name

Anything beyond a single relationship hop is rejected as too complex.
Execution never identifies pages by the printed page number property; an
instrumentation counter records any such read so the test suite can assert
it stays at zero.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional, Sequence, Union

from .errors import MissingParameterError, QuerySyntaxError, QueryTooComplexError, TransportError
from .graph import GraphSchema, LagmNode, NodeLabel, PropertyGraph

logger = logging.getLogger(__name__)

# Bumped on every property read that identifies a page by printed number.
PAGENUMBER_READS = 0


def reset_pagenumber_counter() -> None:
    global PAGENUMBER_READS
    PAGENUMBER_READS = 0


CONTENT_LABELS = frozenset(
    {
        NodeLabel.SECTION.value,
        NodeLabel.TABLE.value,
        NodeLabel.DIAGRAM.value,
        NodeLabel.SECTION_CHUNK.value,
        NodeLabel.TABLE_CHUNK.value,
    }
)
_NARROWING_PROPS = frozenset({"pageIdx", "parentPageIdx", "id"})
_DOC_PROPS = frozenset({"parentDocName", "docName"})


class ViolationCode(str, Enum):
    USES_PAGE_NUMBER = "USES_PAGE_NUMBER"
    UNKNOWN_RELATIONSHIP = "UNKNOWN_RELATIONSHIP"
    UNKNOWN_PROPERTY = "UNKNOWN_PROPERTY"
    GENERIC_QUERY = "GENERIC_QUERY"
    UNBOUND_VARIABLE = "UNBOUND_VARIABLE"
    TOO_COMPLEX = "TOO_COMPLEX"


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    message: str


@dataclass(frozen=True)
class Param:
    name: str


Literal = Union[str, int, float]


@dataclass(frozen=True)
class NodePattern:
    var: str
    label: Optional[str] = None


@dataclass(frozen=True)
class RelPattern:
    rel_type: Optional[str]  # None for an anonymous hop: (v)-->(w)
    direction: str = "out"  # "out": (v)-[:R]->(w); "in": (v)<-[:R]-(w)


@dataclass(frozen=True)
class Predicate:
    var: str
    prop: str
    op: str  # "=" or "IN"
    value: Union[Literal, Param, tuple]
    to_string: bool = False


@dataclass(frozen=True)
class QueryAst:
    src: NodePattern
    rel: Optional[RelPattern] = None
    dst: Optional[NodePattern] = None
    where: tuple = ()
    returns: tuple = ()
    limit: Optional[int] = None


# -- prompt --------------------------------------------------------------------


def traversal_prompt_template() -> str:
    return (
        resources.files("lagm.resources").joinpath("traversal_prompt.txt").read_text("utf-8")
    )


def render_traversal_prompt(schema_text: str, user_request: str, doc_name: str) -> str:
    """Instantiate the traversal prompt template; byte-deterministic."""
    template = traversal_prompt_template()
    return (
        template.replace("{graph_schema}", schema_text)
        .replace("{user_request}", user_request)
        .replace("{doc_name}", doc_name)
    )


# -- lexer / parser --------------------------------------------------------------


_TOKEN_PATTERNS = [
    ("STRING", r"'(?:[^'\\]|\\.)*'|\"(?:[^\"\\]|\\.)*\""),
    ("NUMBER", r"-?\d+(?:\.\d+)?"),
    ("ARROW_OUT", r"->"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PARAM", r"\$[A-Za-z_][A-Za-z0-9_]*"),
    ("SYMBOL", r"[()\[\]:,.=;<>-]"),
]
_TOKEN_RE = re.compile(
    "|".join(f"(?P<{name}>{pat})" for name, pat in _TOKEN_PATTERNS)
)


@dataclass
class _Token:
    kind: str
    value: str
    pos: int


def _lex(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r} at position {pos}", pos)
        tokens.append(_Token(kind=m.lastgroup, value=m.group(0), pos=pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex(text)
        self.i = 0

    def _peek(self) -> Optional[_Token]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _next(self) -> _Token:
        tok = self._peek()
        if tok is None:
            raise QuerySyntaxError("unexpected end of query", len(self.text))
        self.i += 1
        return tok

    def _expect(self, value: str) -> _Token:
        tok = self._next()
        if tok.value != value:
            raise QuerySyntaxError(
                f"expected {value!r} but found {tok.value!r} at position {tok.pos}", tok.pos
            )
        return tok

    def _keyword(self, word: str) -> bool:
        tok = self._peek()
        return tok is not None and tok.kind == "NAME" and tok.value.upper() == word

    def _expect_keyword(self, word: str) -> None:
        tok = self._next()
        if tok.kind != "NAME" or tok.value.upper() != word:
            raise QuerySyntaxError(
                f"expected {word} but found {tok.value!r} at position {tok.pos}", tok.pos
            )

    def parse(self) -> QueryAst:
        self._expect_keyword("MATCH")
        src = self._node_pattern()
        rel = None
        dst = None
        tok = self._peek()
        if tok is not None and tok.value in ("-", "<"):
            rel, dst = self._rel_pattern()
            nxt = self._peek()
            if nxt is not None and nxt.value in ("-", "<"):
                raise QueryTooComplexError(
                    f"multi-hop pattern at position {nxt.pos}; only one hop is supported", nxt.pos
                )
        tok = self._peek()
        if tok is not None and tok.value == ",":
            raise QueryTooComplexError(
                f"multiple patterns at position {tok.pos}; only one pattern is supported", tok.pos
            )
        where: list[Predicate] = []
        if self._keyword("WHERE"):
            self._next()
            where.append(self._predicate())
            while self._keyword("AND"):
                self._next()
                where.append(self._predicate())
        self._expect_keyword("RETURN")
        returns = [self._var_name()]
        while True:
            tok = self._peek()
            if tok is not None and tok.value == ",":
                self._next()
                returns.append(self._var_name())
            else:
                break
        limit = None
        if self._keyword("LIMIT"):
            self._next()
            tok = self._next()
            if tok.kind != "NUMBER" or "." in tok.value or tok.value.startswith("-"):
                raise QuerySyntaxError(
                    f"LIMIT expects a non-negative integer at position {tok.pos}", tok.pos
                )
            limit = int(tok.value)
        tok = self._peek()
        if tok is not None and tok.value == ";":
            self._next()
            tok = self._peek()
        if tok is not None:
            raise QuerySyntaxError(
                f"unexpected trailing input {tok.value!r} at position {tok.pos}", tok.pos
            )
        return QueryAst(
            src=src,
            rel=rel,
            dst=dst,
            where=tuple(where),
            returns=tuple(returns),
            limit=limit,
        )

    def _var_name(self) -> str:
        tok = self._next()
        if tok.kind != "NAME":
            raise QuerySyntaxError(f"expected a variable at position {tok.pos}", tok.pos)
        return tok.value

    def _node_pattern(self) -> NodePattern:
        self._expect("(")
        var = self._var_name()
        label = None
        tok = self._peek()
        if tok is not None and tok.value == ":":
            self._next()
            label = self._var_name()
        self._expect(")")
        return NodePattern(var=var, label=label)

    def _rel_pattern(self) -> tuple[RelPattern, NodePattern]:
        tok = self._next()
        if tok.value == "-":
            nxt = self._peek()
            if nxt is not None and nxt.value == "->":  # anonymous hop: -->
                self._next()
                return RelPattern(rel_type=None, direction="out"), self._node_pattern()
            self._expect("[")
            self._expect(":")
            rel_type = self._var_name()
            self._expect("]")
            tok = self._next()
            if tok.value != "->":
                raise QuerySyntaxError(
                    f"expected '->' at position {tok.pos} (undirected hops unsupported)", tok.pos
                )
            return RelPattern(rel_type=rel_type, direction="out"), self._node_pattern()
        if tok.value == "<":
            self._expect("-")
            nxt = self._peek()
            if nxt is not None and nxt.value == "-":  # anonymous hop: <--
                self._next()
                return RelPattern(rel_type=None, direction="in"), self._node_pattern()
            self._expect("[")
            self._expect(":")
            rel_type = self._var_name()
            self._expect("]")
            self._expect("-")
            return RelPattern(rel_type=rel_type, direction="in"), self._node_pattern()
        raise QuerySyntaxError(f"expected a relationship at position {tok.pos}", tok.pos)

    def _predicate(self) -> Predicate:
        to_string = False
        tok = self._peek()
        if tok is not None and tok.kind == "NAME" and tok.value == "toString":
            self._next()
            self._expect("(")
            var, prop = self._property_ref()
            self._expect(")")
            to_string = True
        else:
            var, prop = self._property_ref()
        tok = self._next()
        if tok.value == "=":
            if to_string:
                raise QuerySyntaxError(
                    f"toString comparison must use IN at position {tok.pos}", tok.pos
                )
            return Predicate(var=var, prop=prop, op="=", value=self._literal())
        if tok.kind == "NAME" and tok.value.upper() == "IN":
            nxt = self._peek()
            if nxt is not None and nxt.kind == "PARAM":
                self._next()
                return Predicate(
                    var=var, prop=prop, op="IN", value=Param(nxt.value[1:]), to_string=to_string
                )
            return Predicate(var=var, prop=prop, op="IN", value=self._list(), to_string=to_string)
        raise QuerySyntaxError(
            f"expected '=' or IN at position {tok.pos}, found {tok.value!r}", tok.pos
        )

    def _property_ref(self) -> tuple[str, str]:
        var = self._var_name()
        self._expect(".")
        prop = self._var_name()
        return var, prop

    def _literal(self) -> Literal:
        tok = self._next()
        if tok.kind == "STRING":
            raw = tok.value[1:-1]
            return raw.replace("\\'", "'").replace('\\"', '"').replace("\\\\", "\\")
        if tok.kind == "NUMBER":
            return float(tok.value) if "." in tok.value else int(tok.value)
        raise QuerySyntaxError(f"expected a literal at position {tok.pos}", tok.pos)

    def _list(self) -> tuple:
        self._expect("[")
        items = []
        tok = self._peek()
        if tok is not None and tok.value == "]":
            self._next()
            return tuple(items)
        items.append(self._literal())
        while True:
            tok = self._next()
            if tok.value == "]":
                return tuple(items)
            if tok.value != ",":
                raise QuerySyntaxError(
                    f"expected ',' or ']' at position {tok.pos}", tok.pos
                )
            items.append(self._literal())


def parse_query(text: str) -> QueryAst:
    """Parse query text into an AST; raises QuerySyntaxError with position."""
    return _Parser(text).parse()


def _print_literal(value: Literal) -> str:
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace("'", "\\'")
        return f"'{escaped}'"
    return repr(value)


def print_query(ast: QueryAst) -> str:
    """Canonical single-line rendering; parse(print_query(ast)) == ast."""
    parts = ["MATCH"]
    src = f"({ast.src.var}" + (f":{ast.src.label}" if ast.src.label else "") + ")"
    if ast.rel is not None and ast.dst is not None:
        dst = f"({ast.dst.var}" + (f":{ast.dst.label}" if ast.dst.label else "") + ")"
        if ast.rel.rel_type is None:
            arrow = "-->" if ast.rel.direction == "out" else "<--"
            parts.append(f"{src}{arrow}{dst}")
        elif ast.rel.direction == "out":
            parts.append(f"{src}-[:{ast.rel.rel_type}]->{dst}")
        else:
            parts.append(f"{src}<-[:{ast.rel.rel_type}]-{dst}")
    else:
        parts.append(src)
    if ast.where:
        preds = []
        for p in ast.where:
            ref = f"{p.var}.{p.prop}"
            if p.to_string:
                ref = f"toString({ref})"
            if p.op == "=":
                preds.append(f"{ref} = {_print_literal(p.value)}")
            elif isinstance(p.value, Param):
                preds.append(f"{ref} IN ${p.value.name}")
            else:
                preds.append(f"{ref} IN [{', '.join(_print_literal(v) for v in p.value)}]")
        parts.append("WHERE " + " AND ".join(preds))
    parts.append("RETURN " + ", ".join(ast.returns))
    if ast.limit is not None:
        parts.append(f"LIMIT {ast.limit}")
    return " ".join(parts)


# -- validation -------------------------------------------------------------------


def validate_query(
    ast: QueryAst, schema: GraphSchema, doc_name_required: bool = False
) -> list[Violation]:
    """Check an AST against the schema and the query-construction rules.

    Empty result means the query is acceptable. GENERIC_QUERY fires when a
    returned variable could enumerate content nodes (SECTION, TABLE, DIAGRAM
    or chunks) without a page- or id-level narrowing predicate on it or its
    hop partner; a document-name filter alone does not narrow enough.
    """
    violations: list[Violation] = []
    bound = {ast.src.var: ast.src.label}
    if ast.dst is not None:
        bound[ast.dst.var] = ast.dst.label

    for pred in ast.where:
        if pred.var not in bound:
            violations.append(
                Violation(ViolationCode.UNBOUND_VARIABLE, f"variable {pred.var} is not bound in MATCH")
            )
    for var in ast.returns:
        if var not in bound:
            violations.append(
                Violation(ViolationCode.UNBOUND_VARIABLE, f"returned variable {var} is not bound")
            )

    for pred in ast.where:
        if pred.prop == "pageNumber":
            violations.append(
                Violation(
                    ViolationCode.USES_PAGE_NUMBER,
                    "pageNumber must not identify pages; use pageIdx or parentPageIdx",
                )
            )

    if ast.rel is not None and ast.rel.rel_type is not None and ast.rel.rel_type not in schema.aliases():
        violations.append(
            Violation(
                ViolationCode.UNKNOWN_RELATIONSHIP,
                f"relationship {ast.rel.rel_type} is not in the schema",
            )
        )

    for pred in ast.where:
        if pred.prop == "pageNumber":
            continue
        label = bound.get(pred.var)
        known = schema.attributes(label) if label else schema.attributes()
        if known and pred.prop not in known:
            violations.append(
                Violation(
                    ViolationCode.UNKNOWN_PROPERTY,
                    f"property {pred.prop} is not in the schema"
                    + (f" for label {label}" if label else ""),
                )
            )

    narrowed = {p.var for p in ast.where if p.prop in _NARROWING_PROPS}
    hop_partner = {}
    if ast.dst is not None:
        hop_partner[ast.src.var] = ast.dst.var
        hop_partner[ast.dst.var] = ast.src.var
    for var in ast.returns:
        label = bound.get(var)
        if label is not None and label not in CONTENT_LABELS:
            continue
        if var in narrowed or hop_partner.get(var) in narrowed:
            continue
        violations.append(
            Violation(
                ViolationCode.GENERIC_QUERY,
                f"pattern could return all {label or 'matching'} nodes; "
                "narrow by pageIdx, parentPageIdx or id",
            )
        )
        break

    if doc_name_required and not any(p.prop in _DOC_PROPS for p in ast.where):
        violations.append(
            Violation(
                ViolationCode.GENERIC_QUERY,
                "query must filter by docName or parentDocName",
            )
        )

    return violations


# -- execution ---------------------------------------------------------------------


def _read_prop(node: LagmNode, prop: str):
    global PAGENUMBER_READS
    if prop == "pageNumber":
        PAGENUMBER_READS += 1
    if prop == "id":
        return node.id
    return node.props.get(prop, _ABSENT)


class _Absent:
    pass


_ABSENT = _Absent()


def _coerce_to_string(value) -> str:
    return str(value)


def _resolve_value(value, params: dict):
    if isinstance(value, Param):
        if value.name not in params:
            raise MissingParameterError(value.name)
        return params[value.name]
    return value


def _predicate_holds(pred: Predicate, env: dict[str, LagmNode], params: dict) -> bool:
    node = env[pred.var]
    raw = _read_prop(node, pred.prop)
    if isinstance(raw, _Absent):
        return False
    value = raw
    if pred.to_string:
        value = _coerce_to_string(raw)
    target = _resolve_value(pred.value, params)
    if pred.op == "=":
        return value == target
    members = list(target) if isinstance(target, (list, tuple)) else [target]
    return value in members


def execute_query(
    ast: QueryAst, graph: PropertyGraph, params: Optional[dict] = None
) -> list[dict[str, LagmNode]]:
    """Evaluate the AST; rows are dicts of returned variable bindings.

    Semantics: enumerate all bindings matching the pattern, keep those
    satisfying every predicate (a missing property fails the predicate),
    order rows by bound node ids, then apply LIMIT.
    """
    params = params or {}
    from .graph import edge_alias  # local import keeps module load order simple

    rows: list[tuple[tuple[str, ...], dict[str, LagmNode]]] = []

    def consider(env: dict[str, LagmNode]) -> None:
        if all(_predicate_holds(p, env, params) for p in ast.where):
            projected = {var: env[var] for var in ast.returns if var in env}
            key = tuple(n.id for n in env.values())
            rows.append((key, projected))

    if ast.rel is None:
        for node in graph.nodes.values():
            if ast.src.label and node.label.value != ast.src.label:
                continue
            consider({ast.src.var: node})
    else:
        for edge in graph.edges:
            if ast.rel.direction == "out":
                v, w = graph.nodes[edge.src], graph.nodes[edge.dst]
            else:
                v, w = graph.nodes[edge.dst], graph.nodes[edge.src]
            if ast.rel.rel_type is not None:
                alias = edge_alias(
                    edge.kind, graph.nodes[edge.src].label, graph.nodes[edge.dst].label
                )
                if ast.rel.rel_type not in (alias, edge.kind.value):
                    continue
            if ast.src.label and v.label.value != ast.src.label:
                continue
            if ast.dst is not None and ast.dst.label and w.label.value != ast.dst.label:
                continue
            env = {ast.src.var: v}
            if ast.dst is not None:
                env[ast.dst.var] = w
            consider(env)

    rows.sort(key=lambda r: r[0])
    out = [env for _, env in rows]
    if ast.limit is not None:
        out = out[: ast.limit]
    return out


# -- generation --------------------------------------------------------------------


def generate_query(
    llm,
    schema_text: str,
    user_request: str,
    doc_name: str,
    doc_name_required: bool = False,
    schema: Optional[GraphSchema] = None,
) -> Optional[QueryAst]:
    """Ask the LLM for a traversal query; None when nothing safe came back.

    Empty responses mean the model declined. Unparseable or invalid queries
    are logged and dropped rather than executed. Transport errors propagate
    so callers can distinguish infrastructure failure from abstention.
    """
    prompt = render_traversal_prompt(schema_text, user_request, doc_name)
    response = llm.complete(prompt)
    text = (response or "").strip()
    if not text:
        return None
    try:
        ast = parse_query(text)
    except QueryTooComplexError as exc:
        logger.warning("generated query rejected (%s): %s", ViolationCode.TOO_COMPLEX.value, exc)
        return None
    except QuerySyntaxError as exc:
        logger.warning("generated query failed to parse: %s", exc)
        return None
    if schema is not None:
        violations = validate_query(ast, schema, doc_name_required=doc_name_required)
        if violations:
            for v in violations:
                logger.warning("generated query rejected (%s): %s", v.code.value, v.message)
            return None
    return ast

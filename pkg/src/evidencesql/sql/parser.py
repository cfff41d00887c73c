"""Recursive-descent parser producing ``QueryAst`` trees.

Accepts exactly one SELECT statement. DDL/DML heads and recognizable SQL
outside the subset (joins, subqueries, set operations, ...) raise
``UnsupportedFeature`` naming the construct; everything else that fails the
grammar raises ``SqlSyntaxError`` with the offset of the first offending
token and the set of tokens that would have been legal there.
"""

from __future__ import annotations

from evidencesql.errors import SqlSyntaxError, UnsupportedFeature
from evidencesql.sql.ast import (
    AGGREGATE_FUNCTIONS,
    SCALAR_FUNCTIONS,
    AggFn,
    Between,
    Binary,
    ColumnRef,
    Expr,
    InList,
    Literal,
    OrderItem,
    Projection,
    QueryAst,
    Star,
    Unary,
    ScalarFn,
    contains_aggregate,
)
from evidencesql.sql.lexer import KEYWORDS, UNSUPPORTED_KEYWORDS, Token, TokenKind, tokenize

_COMPARISON_OPS = {"=", "!=", "<", "<=", ">", ">="}
_SCALAR_ARITY = {"SQRT": (1, 1), "ABS": (1, 1), "ROUND": (1, 2)}


def parse(text: str) -> QueryAst:
    """Parse ``text`` into a query AST.

    Raises:
        SqlSyntaxError: text does not match the grammar (position and
            expected-token set attached).
        UnsupportedFeature: recognized SQL outside the subset, named.
    """
    return _Parser(tokenize(text)).parse_statement()


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.in_aggregate = False
        self.no_aggregates_reason: str | None = None

    # -- token plumbing ---------------------------------------------------

    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind is not TokenKind.EOF:
            self.pos += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.current()
        return tok.kind is TokenKind.IDENT and tok.upper() == word

    def at_op(self, op: str) -> bool:
        tok = self.current()
        return tok.kind is TokenKind.OP and tok.value == op

    def accept_keyword(self, word: str) -> Token | None:
        if self.at_keyword(word):
            return self.advance()
        return None

    def accept_op(self, op: str) -> Token | None:
        if self.at_op(op):
            return self.advance()
        return None

    def expect_keyword(self, word: str) -> Token:
        tok = self.accept_keyword(word)
        if tok is None:
            self.fail(f"expected {word}", {word})
        return tok

    def expect_op(self, op: str) -> Token:
        tok = self.accept_op(op)
        if tok is None:
            self.fail(f"expected {op!r}", {op})
        return tok

    def fail(self, message: str, expected: set[str]) -> None:
        tok = self.current()
        self.reject_unsupported(tok)
        if tok.kind is TokenKind.DQSTRING:
            raise SqlSyntaxError(
                "string literals use single quotes", tok.offset,
                frozenset({"string literal"}), tok.text,
            )
        raise SqlSyntaxError(message, tok.offset, frozenset(expected), tok.text)

    def reject_unsupported(self, tok: Token) -> None:
        if tok.kind is TokenKind.IDENT and tok.upper() in UNSUPPORTED_KEYWORDS:
            raise UnsupportedFeature(tok.upper(), tok.offset)

    def expect_identifier(self, what: str) -> Token:
        tok = self.current()
        if tok.kind is TokenKind.IDENT and tok.upper() not in KEYWORDS:
            self.reject_unsupported(tok)
            return self.advance()
        self.fail(f"expected {what}", {"identifier"})

    # -- statement ---------------------------------------------------------

    def parse_statement(self) -> QueryAst:
        head = self.current()
        if not self.at_keyword("SELECT"):
            self.reject_unsupported(head)
            raise SqlSyntaxError(
                "expected SELECT", head.offset, frozenset({"SELECT"}), head.text,
            )
        self.advance()

        projections = self.parse_projections()
        self.expect_keyword("FROM")
        if self.at_op("("):
            raise UnsupportedFeature("subquery", self.current().offset)
        from_table = self.expect_identifier("table name").text

        where = None
        if self.accept_keyword("WHERE"):
            self.no_aggregates_reason = "WHERE clause"
            where = self.parse_expr()
            self.no_aggregates_reason = None

        group_by: tuple[Expr, ...] = ()
        if self.at_keyword("GROUP"):
            self.advance()
            self.expect_keyword("BY")
            self.no_aggregates_reason = "GROUP BY clause"
            group_by = tuple(self.parse_expr_list())
            self.no_aggregates_reason = None

        having = None
        having_tok = None
        if self.at_keyword("HAVING"):
            having_tok = self.advance()
            having = self.parse_expr()

        order_by: tuple[OrderItem, ...] = ()
        if self.at_keyword("ORDER"):
            self.advance()
            self.expect_keyword("BY")
            order_by = tuple(self.parse_order_items())

        limit = None
        if self.at_keyword("LIMIT"):
            self.advance()
            tok = self.current()
            if tok.kind is not TokenKind.NUMBER or not isinstance(tok.value, int):
                self.fail("expected nonnegative integer after LIMIT", {"integer"})
            limit = tok.value
            self.advance()

        tail = self.current()
        if tail.kind is not TokenKind.EOF:
            if tail.kind is TokenKind.OP and tail.value == ";":
                raise SqlSyntaxError(
                    "statement separator: only a single statement is allowed",
                    tail.offset, frozenset({"end of input"}), tail.text,
                )
            self.fail("unexpected trailing input", {"end of input"})

        star = any(isinstance(p.expr, Star) for p in projections)
        if having is not None and not group_by:
            all_aggregated = all(
                isinstance(p.expr, Expr) and contains_aggregate(p.expr) for p in projections
            )
            if not all_aggregated:
                raise SqlSyntaxError(
                    "HAVING requires GROUP BY or fully aggregated projections",
                    having_tok.offset, frozenset(), "HAVING",
                )
        if star and group_by:
            raise SqlSyntaxError(
                "SELECT * cannot be combined with GROUP BY", head.offset,
                frozenset(), "*",
            )
        return QueryAst(
            projections=projections,
            from_table=from_table,
            where=where,
            group_by=group_by,
            having=having,
            order_by=order_by,
            limit=limit,
        )

    def parse_projections(self) -> tuple[Projection, ...]:
        if self.at_op("*"):
            star_tok = self.advance()
            if self.accept_op(","):
                raise SqlSyntaxError(
                    "* must be the only projection", star_tok.offset,
                    frozenset({"FROM"}), "*",
                )
            return (Projection(Star(), None),)
        items = [self.parse_projection()]
        while self.accept_op(","):
            items.append(self.parse_projection())
        return tuple(items)

    def parse_projection(self) -> Projection:
        expr = self.parse_expr()
        alias = None
        if self.accept_keyword("AS"):
            alias = self.expect_identifier("alias").text
        return Projection(expr, alias)

    def parse_expr_list(self) -> list[Expr]:
        items = [self.parse_expr()]
        while self.accept_op(","):
            items.append(self.parse_expr())
        return items

    def parse_order_items(self) -> list[OrderItem]:
        items = []
        while True:
            expr = self.parse_expr()
            descending = False
            if self.accept_keyword("DESC"):
                descending = True
            else:
                self.accept_keyword("ASC")
            items.append(OrderItem(expr, descending))
            if not self.accept_op(","):
                return items

    # -- expressions ---------------------------------------------------------
    # Precedence, loosest first: OR, AND, NOT, comparison/IN/BETWEEN,
    # additive, multiplicative, unary minus, primary.

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.at_keyword("OR"):
            self.advance()
            left = Binary("OR", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.at_keyword("AND"):
            self.advance()
            left = Binary("AND", left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        if self.at_keyword("NOT"):
            self.advance()
            return Unary("NOT", self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        tok = self.current()
        if tok.kind is TokenKind.OP and tok.value in _COMPARISON_OPS:
            self.advance()
            return Binary(str(tok.value), left, self.parse_additive())
        if self.at_keyword("BETWEEN"):
            self.advance()
            return self.parse_between_tail(left)
        if self.at_keyword("IN"):
            self.advance()
            return self.parse_in_tail(left)
        if self.at_keyword("NOT"):
            # 'x NOT IN (...)' / 'x NOT BETWEEN a AND b' sugar.
            mark = self.pos
            self.advance()
            if self.at_keyword("BETWEEN"):
                self.advance()
                return Unary("NOT", self.parse_between_tail(left))
            if self.at_keyword("IN"):
                self.advance()
                return Unary("NOT", self.parse_in_tail(left))
            self.pos = mark
            self.fail("expected IN or BETWEEN after NOT", {"IN", "BETWEEN"})
        return left

    def parse_between_tail(self, operand: Expr) -> Between:
        low = self.parse_literal("lower bound")
        self.expect_keyword("AND")
        high = self.parse_literal("upper bound")
        return Between(operand, low, high)

    def parse_in_tail(self, operand: Expr) -> InList:
        self.expect_op("(")
        items = [self.parse_literal("list item")]
        while self.accept_op(","):
            items.append(self.parse_literal("list item"))
        self.expect_op(")")
        return InList(operand, tuple(items))

    def parse_literal(self, what: str) -> Literal:
        negative = False
        if self.at_op("-"):
            self.advance()
            negative = True
        tok = self.current()
        if tok.kind is TokenKind.NUMBER:
            self.advance()
            value = tok.value
            return Literal(-value if negative else value)
        if negative:
            self.fail(f"expected number for {what}", {"number"})
        if tok.kind is TokenKind.STRING:
            self.advance()
            return Literal(tok.value)
        if self.at_keyword("NULL"):
            self.advance()
            return Literal(None)
        self.fail(f"expected literal for {what}", {"number", "string", "NULL"})

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while True:
            tok = self.current()
            if tok.kind is TokenKind.OP and tok.value in ("+", "-"):
                self.advance()
                left = Binary(str(tok.value), left, self.parse_multiplicative())
            else:
                return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while True:
            tok = self.current()
            if tok.kind is TokenKind.OP and tok.value in ("*", "/"):
                self.advance()
                left = Binary(str(tok.value), left, self.parse_unary())
            else:
                return left

    def parse_unary(self) -> Expr:
        if self.at_op("-"):
            self.advance()
            operand = self.parse_unary()
            # Fold minus into numeric literals so '-3' round-trips as one node.
            if isinstance(operand, Literal) and isinstance(operand.value, (int, float)):
                return Literal(-operand.value)
            return Unary("-", operand)
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.current()
        if tok.kind is TokenKind.NUMBER:
            self.advance()
            return Literal(tok.value)
        if tok.kind is TokenKind.STRING:
            self.advance()
            return Literal(tok.value)
        if self.at_keyword("NULL"):
            self.advance()
            return Literal(None)
        if self.at_op("("):
            self.advance()
            if self.at_keyword("SELECT"):
                raise UnsupportedFeature("subquery", self.current().offset)
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if tok.kind is TokenKind.IDENT and tok.upper() not in KEYWORDS:
            self.reject_unsupported(tok)
            self.advance()
            if self.at_op("("):
                return self.parse_function_call(tok)
            return ColumnRef(tok.text)
        self.fail("expected expression", {"number", "string", "NULL", "identifier", "("})

    def parse_function_call(self, name_tok: Token) -> Expr:
        name = name_tok.upper()
        open_tok = self.expect_op("(")
        if name in AGGREGATE_FUNCTIONS:
            if self.in_aggregate or self.no_aggregates_reason is not None:
                reason = (
                    "aggregate functions cannot be nested"
                    if self.in_aggregate
                    else f"aggregate function not allowed in {self.no_aggregates_reason}"
                )
                raise SqlSyntaxError(reason, name_tok.offset, frozenset(), name_tok.text)
            distinct = bool(self.accept_keyword("DISTINCT"))
            if self.at_op("*"):
                star_tok = self.advance()
                if name != "COUNT":
                    raise SqlSyntaxError(
                        "* argument is only valid in COUNT", star_tok.offset,
                        frozenset({"expression"}), "*",
                    )
                if distinct:
                    raise SqlSyntaxError(
                        "COUNT(DISTINCT *) is not valid", star_tok.offset,
                        frozenset({"expression"}), "*",
                    )
                self.expect_op(")")
                return AggFn("COUNT", Star(), False)
            self.in_aggregate = True
            try:
                arg = self.parse_expr()
            finally:
                self.in_aggregate = False
            self.expect_op(")")
            return AggFn(name, arg, distinct)
        if name in SCALAR_FUNCTIONS:
            args = [self.parse_expr()]
            while self.accept_op(","):
                args.append(self.parse_expr())
            self.expect_op(")")
            lo, hi = _SCALAR_ARITY[name]
            if not lo <= len(args) <= hi:
                wanted = str(lo) if lo == hi else f"{lo} or {hi}"
                raise SqlSyntaxError(
                    f"{name} expects {wanted} argument(s), got {len(args)}",
                    open_tok.offset, frozenset(), name_tok.text,
                )
            return ScalarFn(name, tuple(args))
        raise UnsupportedFeature(f"function {name}", name_tok.offset)

"""Tokenizer for the SQL subset.

Comments are a hard error rather than skipped content: comment smuggling is a
known injection vector for model-generated SQL, so `--` and `/* */` never
survive past this layer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from evidencesql.errors import SqlSyntaxError


class TokenKind(enum.Enum):
    IDENT = "identifier"
    NUMBER = "number"
    STRING = "string"
    DQSTRING = "double-quoted string"
    OP = "operator"
    EOF = "end of input"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    value: object
    offset: int

    def upper(self) -> str:
        return self.text.upper()


# Words the grammar itself uses.
KEYWORDS = frozenset({
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "AND", "OR", "NOT", "IN", "BETWEEN", "AS", "ASC", "DESC", "DISTINCT",
    "NULL",
})

# Words we recognize as SQL but refuse to support; they are never candidates
# for fuzzy keyword repair.
UNSUPPORTED_KEYWORDS = frozenset({
    "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "ON", "USING",
    "UNION", "INTERSECT", "EXCEPT", "OFFSET", "LIKE", "IS", "CASE", "CAST",
    "EXISTS", "WITH", "OVER", "WINDOW", "INSERT", "UPDATE", "DELETE", "DROP",
    "ALTER", "CREATE", "ATTACH", "DETACH", "PRAGMA", "TRUNCATE", "REPLACE",
    "GRANT", "REVOKE", "VACUUM", "EXPLAIN", "SET", "INTO", "VALUES", "TABLE",
})

_TWO_CHAR_OPS = {"!=": "!=", "<>": "!=", "<=": "<=", ">=": ">="}
_ONE_CHAR_OPS = set("+-*/=<>(),;")


def tokenize(text: str) -> list[Token]:
    """Tokenize ``text``; the returned list always ends with an EOF token.

    Raises:
        SqlSyntaxError: on comment tokens, unterminated strings, malformed
            numbers, or characters outside the grammar.
    """
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if text.startswith("--", i) or text.startswith("/*", i) or text.startswith("*/", i):
            raise SqlSyntaxError("comment syntax is not allowed", i, token=text[i:i + 2])
        if ch == "'":
            token, i = _read_string(text, i)
            tokens.append(token)
            continue
        if ch == '"':
            token, i = _read_double_quoted(text, i)
            tokens.append(token)
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            token, i = _read_number(text, i)
            tokens.append(token)
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
            word = text[start:i]
            tokens.append(Token(TokenKind.IDENT, word, word, start))
            continue
        two = text[i:i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(Token(TokenKind.OP, two, _TWO_CHAR_OPS[two], i))
            i += 2
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(Token(TokenKind.OP, ch, ch, i))
            i += 1
            continue
        raise SqlSyntaxError(f"unexpected character {ch!r}", i, token=ch)
    tokens.append(Token(TokenKind.EOF, "", None, n))
    return tokens


def _read_string(text: str, start: int) -> tuple[Token, int]:
    i = start + 1
    parts: list[str] = []
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "'":
            if i + 1 < n and text[i + 1] == "'":
                parts.append("'")
                i += 2
                continue
            return Token(TokenKind.STRING, text[start:i + 1], "".join(parts), start), i + 1
        parts.append(ch)
        i += 1
    raise SqlSyntaxError("unterminated string literal", start, token=text[start:])


def _read_double_quoted(text: str, start: int) -> tuple[Token, int]:
    i = start + 1
    n = len(text)
    while i < n:
        if text[i] == '"':
            return Token(TokenKind.DQSTRING, text[start:i + 1], text[start + 1:i], start), i + 1
        i += 1
    raise SqlSyntaxError("unterminated double-quoted token", start, token=text[start:])


def _read_number(text: str, start: int) -> tuple[Token, int]:
    i = start
    n = len(text)
    while i < n and text[i].isdigit():
        i += 1
    is_real = False
    if i < n and text[i] == ".":
        is_real = True
        i += 1
        while i < n and text[i].isdigit():
            i += 1
    if i < n and text[i] in "eE":
        mark = i
        i += 1
        if i < n and text[i] in "+-":
            i += 1
        if i < n and text[i].isdigit():
            is_real = True
            while i < n and text[i].isdigit():
                i += 1
        else:
            i = mark  # 'e' belongs to a following identifier, not the number
    lexeme = text[start:i]
    value: object = float(lexeme) if is_real else int(lexeme)
    return Token(TokenKind.NUMBER, lexeme, value, start), i

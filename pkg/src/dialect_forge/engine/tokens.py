"""SQL tokenizer shared by all dialect modes."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class T(enum.Enum):
    IDENT = "ident"  # bare word, keyword or identifier
    QIDENT = "qident"  # "quoted" identifier
    BQIDENT = "bqident"  # `backquoted` identifier
    STRING = "string"  # 'literal'
    NUMBER = "number"
    OP = "op"
    EOF = "eof"


@dataclass(frozen=True)
class Token:
    type: T
    value: str
    pos: int
    end: int

    def is_kw(self, *words: str) -> bool:
        return self.type is T.IDENT and self.value.upper() in words

    def is_op(self, *ops: str) -> bool:
        return self.type is T.OP and self.value in ops


_TWO_CHAR_OPS = ("::", "<=", ">=", "<>", "!=", "||", "==")
_ONE_CHAR_OPS = "(),.*+-/%=<>;"


class TokenizeError(Exception):
    def __init__(self, message: str, pos: int):
        super().__init__(message)
        self.pos = pos


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text.startswith("--", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise TokenizeError("unterminated comment", i)
            i = j + 2
            continue
        start = i
        if c == "'":
            buf = []
            i += 1
            while True:
                if i >= n:
                    raise TokenizeError("unterminated quoted string", start)
                if text[i] == "'":
                    if i + 1 < n and text[i + 1] == "'":
                        buf.append("'")
                        i += 2
                        continue
                    i += 1
                    break
                buf.append(text[i])
                i += 1
            out.append(Token(T.STRING, "".join(buf), start, i))
            continue
        if c in '"`':
            q = c
            buf = []
            i += 1
            while True:
                if i >= n:
                    raise TokenizeError("unterminated quoted identifier", start)
                if text[i] == q:
                    if i + 1 < n and text[i + 1] == q:
                        buf.append(q)
                        i += 2
                        continue
                    i += 1
                    break
                buf.append(text[i])
                i += 1
            out.append(Token(T.QIDENT if q == '"' else T.BQIDENT, "".join(buf), start, i))
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and not text.startswith("..", j):
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            out.append(Token(T.NUMBER, text[i:j], start, j))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_$"):
                j += 1
            out.append(Token(T.IDENT, text[i:j], start, j))
            i = j
            continue
        two = text[i:i + 2]
        if two in _TWO_CHAR_OPS:
            out.append(Token(T.OP, two, start, i + 2))
            i += 2
            continue
        if c in _ONE_CHAR_OPS:
            out.append(Token(T.OP, c, start, i + 1))
            i += 1
            continue
        raise TokenizeError(f"unexpected character {c!r}", i)
    out.append(Token(T.EOF, "", n, n))
    return out

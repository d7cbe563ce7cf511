"""Boolean search strings of the form ``(a OR b ...) AND (x OR y ...)``.

Grammar (keywords case-insensitive)::

    query := group AND group
    group := "(" term (OR term)* ")"
    term  := word+ | '"' any-but-quote+ '"'

A bare term runs up to the next ``OR`` or closing parenthesis, so multiword
phrases need no quotes.  Errors report the byte offset in the UTF-8 input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

KEYWORDS = ("AND", "OR")
_WORD = re.compile(r"[^\s()\"]+")


class QueryParseError(ValueError):
    def __init__(self, message: str, offset: int, text: str):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at byte offset {offset}")


def _norm(term: str) -> str:
    return " ".join(term.split())


@dataclass(frozen=True)
class QueryAst:
    """Two OR-groups joined by AND: event-related terms and location-related terms."""

    event_terms: tuple[str, ...]
    location_terms: tuple[str, ...]

    def __post_init__(self):
        for group in (self.event_terms, self.location_terms):
            if not group:
                raise ValueError("query groups must be nonempty")
            for t in group:
                if not _norm(t) or '"' in t or "(" in t or ")" in t:
                    raise ValueError(f"invalid term {t!r}")
        object.__setattr__(self, "event_terms", tuple(_norm(t) for t in self.event_terms))
        object.__setattr__(self, "location_terms", tuple(_norm(t) for t in self.location_terms))

    @property
    def groups(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return self.event_terms, self.location_terms

    def matches(self, text: str) -> bool:
        low = text.lower()
        return all(any(t.lower() in low for t in g) for g in self.groups)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str, pos: int | None = None):
        p = self.pos if pos is None else pos
        raise QueryParseError(message, len(self.text[:p].encode("utf-8")), self.text)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek_word(self) -> tuple[str, int] | None:
        self.skip_ws()
        m = _WORD.match(self.text, self.pos)
        return (m.group(0), m.end()) if m else None

    def expect(self, ch: str, what: str) -> None:
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            found = "end of input" if self.pos >= len(self.text) else repr(self.text[self.pos])
            self.fail(f"expected {what}, found {found}")
        self.pos += 1

    def keyword(self, kw: str) -> bool:
        w = self.peek_word()
        if w and w[0].upper() == kw:
            self.pos = w[1]
            return True
        return False

    def term(self) -> str:
        self.skip_ws()
        start = self.pos
        if self.pos < len(self.text) and self.text[self.pos] == '"':
            end = self.text.find('"', self.pos + 1)
            if end < 0:
                self.fail("unterminated quoted term")
            body = self.text[self.pos + 1 : end]
            if not body.strip():
                self.fail("empty quoted term")
            if "(" in body or ")" in body:
                self.fail("parentheses are not allowed inside a term", self.pos + 1)
            self.pos = end + 1
            return body
        words = []
        while True:
            w = self.peek_word()
            if w is None or w[0].upper() == "OR":
                break
            if w[0].upper() == "AND":
                self.fail("AND is not allowed inside a group")
            words.append(w[0])
            self.pos = w[1]
        if not words:
            self.fail("expected a term", start if self.pos == start else None)
        return " ".join(words)

    def group(self) -> tuple[str, ...]:
        self.expect("(", "'('")
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == ")":
            self.fail("empty group")
        terms = [self.term()]
        while self.keyword("OR"):
            terms.append(self.term())
        self.expect(")", "'OR' or ')'")
        return tuple(terms)

    def query(self) -> QueryAst:
        first = self.group()
        if not self.keyword("AND"):
            self.skip_ws()
            self.fail("expected AND between groups")
        second = self.group()
        self.skip_ws()
        if self.pos != len(self.text):
            self.fail("unexpected text after the second group")
        return QueryAst(first, second)


def parse_query(text: str) -> QueryAst:
    return _Parser(text).query()


def _render_term(term: str) -> str:
    words = term.split()
    if any(w.upper() in KEYWORDS for w in words):
        return f'"{term}"'
    return term


def render_query(ast: QueryAst) -> str:
    def group(terms):
        return "(" + " OR ".join(_render_term(t) for t in terms) + ")"

    return f"{group(ast.event_terms)} AND {group(ast.location_terms)}"


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def match_tweets(tweets: Iterable[dict], queries: Sequence[QueryAst]) -> list[dict]:
    """Tweets matched by at least one query, one per normalised text.

    Among duplicates the tweet with the smallest id (as a string) is kept and
    the result is sorted by normalised text, so input order does not matter.
    """
    best: dict[str, dict] = {}
    for tw in tweets:
        text = str(tw.get("text", ""))
        if not any(q.matches(text) for q in queries):
            continue
        key = normalize_text(text)
        cur = best.get(key)
        if cur is None or str(tw.get("id")) < str(cur.get("id")):
            best[key] = tw
    return [best[k] for k in sorted(best)]

"""Line-oriented text format for declaring protocols.

Grammar::

    species <name> (detect|nondetect)
    reaction <A> + <B> -> <C> + <D>
    # comment (also allowed after a statement)

Blank lines are ignored. Names match ``[A-Za-z][A-Za-z0-9_]*``. The output
annotation is mandatory: a silent default would mask declaration bugs.
Symmetric rules are written once; both orders are derived on construction.
Files use UTF-8 and conventionally carry the ``.pp`` extension.
"""

from __future__ import annotations

import re
from typing import List, Tuple

from .model import Output, Protocol, ProtocolError, Reaction, Species, make_protocol

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_TOKEN_RE = re.compile(r"\S+")

_OUTPUTS = {"detect": Output.DETECT, "nondetect": Output.NONDETECT}


class ParseError(ValueError):
    """Syntax or consistency error, located at its first offending line."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class _Line:
    """Tokenized source line with position tracking for error messages."""

    def __init__(self, text: str, number: int):
        self.number = number
        self.tokens: List[Tuple[str, int]] = [
            (m.group(0), m.start() + 1) for m in _TOKEN_RE.finditer(text)
        ]
        self.pos = 0
        self.end_col = len(text) + 1

    def take(self, what: str) -> Tuple[str, int]:
        if self.pos >= len(self.tokens):
            raise ParseError(f"expected {what}, found end of line", self.number, self.end_col)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def take_literal(self, literal: str) -> None:
        tok, col = self.take(f"'{literal}'")
        if tok != literal:
            raise ParseError(f"expected '{literal}', found {tok!r}", self.number, col)

    def take_name(self) -> Tuple[str, int]:
        tok, col = self.take("a species name")
        if not _NAME_RE.match(tok):
            raise ParseError(f"invalid species name {tok!r}", self.number, col)
        return tok, col

    def expect_end(self) -> None:
        if self.pos < len(self.tokens):
            tok, col = self.tokens[self.pos]
            raise ParseError(f"unexpected trailing {tok!r}", self.number, col)


def parse(text: str) -> Protocol:
    """Parse DSL source into a validated Protocol.

    Raises ParseError with the first offending line (and column) for syntax
    errors, duplicate or undeclared species, missing output annotations, and
    inconsistent symmetric rules.
    """
    species: List[Species] = []
    by_name = {}
    reactions: List[Reaction] = []
    pair_lines = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split("#", 1)[0]
        if not stmt.strip():
            continue
        line = _Line(stmt, number)
        keyword, col = line.take("'species' or 'reaction'")
        if keyword == "species":
            name, ncol = line.take_name()
            out_tok, ocol = line.take("'detect' or 'nondetect'")
            if out_tok not in _OUTPUTS:
                raise ParseError(
                    f"expected output 'detect' or 'nondetect', found {out_tok!r}", number, ocol
                )
            line.expect_end()
            if name in by_name:
                raise ParseError(f"duplicate species {name!r}", number, ncol)
            sp = Species(len(species), name, _OUTPUTS[out_tok])
            species.append(sp)
            by_name[name] = sp
        elif keyword == "reaction":
            names = []
            for i, sep in enumerate(("+", "->", "+", None)):
                name, ncol = line.take_name()
                if name not in by_name:
                    raise ParseError(f"undeclared species {name!r}", number, ncol)
                names.append(by_name[name])
                if sep is not None:
                    line.take_literal(sep)
            line.expect_end()
            a, b, c, d = names
            key = (a.id, b.id)
            mirror = (b.id, a.id)
            checks = [(key, (c.id, d.id))]
            if key != mirror:
                checks.append((mirror, (d.id, c.id)))
            for k, v in checks:
                if k in pair_lines and pair_lines[k][0] != v:
                    raise ParseError(
                        f"rule for {a.name} + {b.name} conflicts with line {pair_lines[k][1]}",
                        number,
                    )
            for k, v in checks:
                pair_lines.setdefault(k, (v, number))
            reactions.append(Reaction((a, b), (c, d)))
        else:
            raise ParseError(f"expected 'species' or 'reaction', found {keyword!r}", number, col)

    try:
        return make_protocol(species, reactions)
    except ProtocolError as exc:  # pragma: no cover - parser pre-checks cover this
        raise ParseError(str(exc), 1) from exc


def serialize(p: Protocol) -> str:
    """Render a Protocol as canonical DSL text.

    Species are listed by id, rules once per unordered pair ordered by
    reactant ids, so equal protocols serialize identically and
    ``parse(serialize(p)) == p``. The optional level annotation has no
    surface syntax and is not preserved.
    """
    lines = [f"species {sp.name} {sp.output.value}" for sp in p.species]
    lines.extend(f"reaction {rx}" for rx in p.rules())
    return "\n".join(lines) + ("\n" if lines else "")

"""The test-scripting language: declarative configuration of an evaluation.

A script declares the simulated environment, the metrics to monitor, subject
apps and techniques (from files or repository pools), technique applications,
unit tests, and differential tests. No control flow, no variables.

Statements, one per line in canonical form; `#` starts a comment:

    environment { battery_pct = 80; net_latency_ms = 100; }
    monitor cache_hits, net_bytes
    benchmark shop = "shopping.app.json"
    technique prefetch = pool:85944171f73967e8
    apply prefetch to shop as shop_fast
    unittest "prefetch.utest.json" on prefetch
    difftest speedup { original = shop; instrumented = shop_fast; }

Alias misuse, unknown environment keys, and unknown metric names are parse
errors — a typo must never silently change what a run measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .executor import NFP_METRICS, DeviceProfile

Number = Union[int, Fraction]

ENV_INT_KEYS = DeviceProfile.INT_FIELDS + ("loop_bound", "max_paths")
ENV_RATIONAL_KEYS = DeviceProfile.RATIONAL_FIELDS + ("perf_tolerance",)
ENV_KEYS = ENV_INT_KEYS + ENV_RATIONAL_KEYS

_STATEMENT_KEYWORDS = frozenset(
    ["environment", "monitor", "benchmark", "technique", "apply", "unittest", "difftest"]
)


class ScriptError(Exception):
    """Anything wrong with a script, always with a position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Source:
    """Where a declared artifact comes from: a workspace file or a pool entry."""

    kind: str  # "file" | "pool"
    ref: str  # path text or pool entry id

    def __post_init__(self):
        if self.kind not in ("file", "pool"):
            raise ValueError(f"bad source kind {self.kind!r}")


@dataclass(frozen=True)
class EnvDecl:
    entries: tuple[tuple[str, Number], ...]  # sorted by key
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MonitorDecl:
    metrics: tuple[str, ...]  # sorted, deduplicated
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BenchmarkDecl:
    alias: str
    source: Source
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TechniqueDecl:
    alias: str
    source: Source
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ApplyStmt:
    technique: str
    benchmark: str
    alias: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class UnitTestStmt:
    source: Source
    technique: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DiffTestStmt:
    name: str
    original: str
    instrumented: str
    bound: int | None = None
    max_paths: int | None = None
    perf_tolerance: Number | None = None
    line: int = field(default=0, compare=False)


Statement = Union[
    EnvDecl, MonitorDecl, BenchmarkDecl, TechniqueDecl, ApplyStmt, UnitTestStmt, DiffTestStmt
]


@dataclass(frozen=True)
class Script:
    statements: tuple[Statement, ...]

    def environment(self) -> dict[str, Number]:
        env: dict[str, Number] = {}
        for stmt in self.statements:
            if isinstance(stmt, EnvDecl):
                env.update(stmt.entries)
        return env

    def monitored_metrics(self) -> tuple[str, ...]:
        metrics: set[str] = {"sim_time_ms"}  # always monitored
        for stmt in self.statements:
            if isinstance(stmt, MonitorDecl):
                metrics.update(stmt.metrics)
        return tuple(sorted(metrics))


# --------------------------------------------------------------------------
# Tokenizer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT | NUMBER | STRING | POOLREF | PUNCT | EOF
    text: str
    value: object
    line: int
    column: int


_PUNCT = "{}=;,"


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def error(msg: str) -> ScriptError:
        return ScriptError(msg, line, col)

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch == '"':
            i += 1
            col += 1
            out: list[str] = []
            while True:
                if i >= n or text[i] == "\n":
                    raise ScriptError("unterminated string", start_line, start_col)
                c = text[i]
                if c == '"':
                    i += 1
                    col += 1
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise ScriptError("unterminated escape", line, col)
                    esc = text[i + 1]
                    mapped = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}.get(esc)
                    if mapped is None:
                        raise ScriptError(f"unknown escape \\{esc}", line, col)
                    out.append(mapped)
                    i += 2
                    col += 2
                else:
                    out.append(c)
                    i += 1
                    col += 1
            tokens.append(_Token("STRING", "".join(out), "".join(out), start_line, start_col))
            continue
        if ch in _PUNCT:
            tokens.append(_Token("PUNCT", ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            raw = text[i:j]
            value: Number = Fraction(raw) if "." in raw else int(raw)
            tokens.append(_Token("NUMBER", raw, value, line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            # pool references are one token: entry ids may start with digits
            if word == "pool" and j < n and text[j] == ":":
                k = j + 1
                while k < n and (text[k].isalnum() or text[k] == "_"):
                    k += 1
                if k == j + 1:
                    raise ScriptError("pool: needs an entry id", line, col)
                ref = text[j + 1 : k]
                tokens.append(_Token("POOLREF", ref, ref, line, col))
                col += k - i
                i = k
                continue
            tokens.append(_Token("IDENT", word, word, line, col))
            col += j - i
            i = j
            continue
        raise error(f"unexpected character {ch!r}")
    tokens.append(_Token("EOF", "", None, line, col))
    return tokens


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        # alias → "technique" | "model" | "difftest"
        self.aliases: dict[str, str] = {}
        self.env_keys_seen: set[str] = set()

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, msg: str, tok: _Token | None = None) -> ScriptError:
        tok = tok or self.peek()
        return ScriptError(msg, tok.line, tok.column)

    def expect_punct(self, ch: str) -> _Token:
        tok = self.next()
        if tok.kind != "PUNCT" or tok.text != ch:
            raise self.error(f"expected {ch!r}, got {tok.text!r}", tok)
        return tok

    def expect_ident(self, word: str | None = None) -> _Token:
        tok = self.next()
        if tok.kind != "IDENT":
            raise self.error(f"expected an identifier, got {tok.text!r}", tok)
        if word is not None and tok.text != word:
            raise self.error(f"expected {word!r}, got {tok.text!r}", tok)
        return tok

    def expect_number(self) -> _Token:
        tok = self.next()
        if tok.kind != "NUMBER":
            raise self.error(f"expected a number, got {tok.text!r}", tok)
        return tok

    def declare(self, tok: _Token, alias: str, role: str) -> None:
        if alias in _STATEMENT_KEYWORDS:
            raise self.error(f"{alias!r} is a reserved word", tok)
        if alias in self.aliases:
            raise self.error(f"alias {alias!r} already declared", tok)
        self.aliases[alias] = role

    def use(self, tok: _Token, alias: str, role: str) -> None:
        if alias not in self.aliases:
            raise self.error(f"undeclared alias {alias!r}", tok)
        if self.aliases[alias] != role:
            raise self.error(
                f"alias {alias!r} is a {self.aliases[alias]}, expected a {role}", tok
            )

    def parse_source(self) -> Source:
        tok = self.next()
        if tok.kind == "STRING":
            return Source("file", tok.text)
        if tok.kind == "POOLREF":
            return Source("pool", tok.text)
        raise self.error(f"expected a file path or pool:<id>, got {tok.text!r}", tok)

    def parse_script(self) -> Script:
        statements: list[Statement] = []
        while self.peek().kind != "EOF":
            statements.append(self.parse_statement())
        return Script(tuple(statements))

    def parse_statement(self) -> Statement:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text not in _STATEMENT_KEYWORDS:
            raise self.error(f"expected a statement keyword, got {tok.text!r}", tok)
        return getattr(self, f"_parse_{tok.text}")(tok)

    def _parse_environment(self, kw: _Token) -> EnvDecl:
        self.expect_punct("{")
        entries: list[tuple[str, Number]] = []
        while not (self.peek().kind == "PUNCT" and self.peek().text == "}"):
            key_tok = self.expect_ident()
            key = key_tok.text
            if key not in ENV_KEYS:
                raise self.error(f"unknown environment key {key!r}", key_tok)
            if key in self.env_keys_seen:
                raise self.error(f"environment key {key!r} set twice", key_tok)
            self.env_keys_seen.add(key)
            self.expect_punct("=")
            val_tok = self.next()
            if val_tok.kind == "STRING":
                raise self.error(f"environment key {key!r} expects a number", val_tok)
            if val_tok.kind != "NUMBER":
                raise self.error(f"expected a value, got {val_tok.text!r}", val_tok)
            value = val_tok.value
            if key in ENV_INT_KEYS and not isinstance(value, int):
                raise self.error(f"environment key {key!r} expects an integer", val_tok)
            self.expect_punct(";")
            entries.append((key, value))  # type: ignore[arg-type]
        self.expect_punct("}")
        return EnvDecl(tuple(sorted(entries)), line=kw.line)

    def _parse_monitor(self, kw: _Token) -> MonitorDecl:
        metrics: list[str] = []
        while True:
            tok = self.expect_ident()
            if tok.text not in NFP_METRICS:
                raise self.error(f"unknown metric name {tok.text!r}", tok)
            metrics.append(tok.text)
            if self.peek().kind == "PUNCT" and self.peek().text == ",":
                self.next()
            else:
                break
        return MonitorDecl(tuple(sorted(set(metrics))), line=kw.line)

    def _parse_benchmark(self, kw: _Token) -> BenchmarkDecl:
        alias_tok = self.expect_ident()
        self.expect_punct("=")
        source = self.parse_source()
        self.declare(alias_tok, alias_tok.text, "model")
        return BenchmarkDecl(alias_tok.text, source, line=kw.line)

    def _parse_technique(self, kw: _Token) -> TechniqueDecl:
        alias_tok = self.expect_ident()
        self.expect_punct("=")
        source = self.parse_source()
        self.declare(alias_tok, alias_tok.text, "technique")
        return TechniqueDecl(alias_tok.text, source, line=kw.line)

    def _parse_apply(self, kw: _Token) -> ApplyStmt:
        tech_tok = self.expect_ident()
        self.use(tech_tok, tech_tok.text, "technique")
        self.expect_ident("to")
        bench_tok = self.expect_ident()
        self.use(bench_tok, bench_tok.text, "model")
        self.expect_ident("as")
        alias_tok = self.expect_ident()
        self.declare(alias_tok, alias_tok.text, "model")
        return ApplyStmt(tech_tok.text, bench_tok.text, alias_tok.text, line=kw.line)

    def _parse_unittest(self, kw: _Token) -> UnitTestStmt:
        source = self.parse_source()
        self.expect_ident("on")
        tech_tok = self.expect_ident()
        self.use(tech_tok, tech_tok.text, "technique")
        return UnitTestStmt(source, tech_tok.text, line=kw.line)

    def _parse_difftest(self, kw: _Token) -> DiffTestStmt:
        name_tok = self.expect_ident()
        self.declare(name_tok, name_tok.text, "difftest")
        self.expect_punct("{")
        self.expect_ident("original")
        self.expect_punct("=")
        orig_tok = self.expect_ident()
        self.use(orig_tok, orig_tok.text, "model")
        self.expect_punct(";")
        self.expect_ident("instrumented")
        self.expect_punct("=")
        instr_tok = self.expect_ident()
        self.use(instr_tok, instr_tok.text, "model")
        self.expect_punct(";")

        bound = max_paths = None
        perf_tolerance: Number | None = None
        for clause, needs_int in (("bound", True), ("max_paths", True), ("perf_tolerance", False)):
            if self.peek().kind == "IDENT" and self.peek().text == clause:
                self.next()
                self.expect_punct("=")
                val_tok = self.expect_number()
                if needs_int and not isinstance(val_tok.value, int):
                    raise self.error(f"{clause} expects an integer", val_tok)
                self.expect_punct(";")
                if clause == "bound":
                    bound = val_tok.value
                elif clause == "max_paths":
                    max_paths = val_tok.value
                else:
                    perf_tolerance = val_tok.value  # type: ignore[assignment]
        self.expect_punct("}")
        return DiffTestStmt(
            name_tok.text, orig_tok.text, instr_tok.text,
            bound=bound, max_paths=max_paths, perf_tolerance=perf_tolerance,
            line=kw.line,
        )


def parse_script(text: str) -> Script:
    """Parse and fully check a script: grammar, alias hygiene, environment
    keys, metric names. Anything a run would reject is rejected here."""
    return _Parser(_tokenize(text)).parse_script()


# --------------------------------------------------------------------------
# Canonical formatting
# --------------------------------------------------------------------------

def format_number(value: Number) -> str:
    """Exact decimal rendering; parsing it back yields an equal value."""
    if isinstance(value, int):
        return str(value)
    if value.denominator == 1:
        return str(value.numerator)
    sign = "-" if value < 0 else ""
    num, den = abs(value).numerator, abs(value).denominator
    twos = fives = 0
    d = den
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        raise ValueError(f"{value} has no finite decimal form")
    places = max(twos, fives)
    scaled = num * 10**places // den
    digits = str(scaled).rjust(places + 1, "0")
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def _quote(text: str) -> str:
    escaped = (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
    )
    return f'"{escaped}"'


def _format_source(source: Source) -> str:
    return _quote(source.ref) if source.kind == "file" else f"pool:{source.ref}"


def format_script(script: Script) -> str:
    """One statement per line, single spaces, environment keys sorted.
    Formatting then reparsing reproduces the AST exactly."""
    lines: list[str] = []
    for stmt in script.statements:
        if isinstance(stmt, EnvDecl):
            inner = " ".join(
                f"{k} = {format_number(v)};" for k, v in sorted(stmt.entries)
            )
            lines.append("environment { " + inner + " }" if inner else "environment { }")
        elif isinstance(stmt, MonitorDecl):
            lines.append("monitor " + ", ".join(stmt.metrics))
        elif isinstance(stmt, BenchmarkDecl):
            lines.append(f"benchmark {stmt.alias} = {_format_source(stmt.source)}")
        elif isinstance(stmt, TechniqueDecl):
            lines.append(f"technique {stmt.alias} = {_format_source(stmt.source)}")
        elif isinstance(stmt, ApplyStmt):
            lines.append(f"apply {stmt.technique} to {stmt.benchmark} as {stmt.alias}")
        elif isinstance(stmt, UnitTestStmt):
            lines.append(f"unittest {_format_source(stmt.source)} on {stmt.technique}")
        elif isinstance(stmt, DiffTestStmt):
            parts = [f"original = {stmt.original};", f"instrumented = {stmt.instrumented};"]
            if stmt.bound is not None:
                parts.append(f"bound = {stmt.bound};")
            if stmt.max_paths is not None:
                parts.append(f"max_paths = {stmt.max_paths};")
            if stmt.perf_tolerance is not None:
                parts.append(f"perf_tolerance = {format_number(stmt.perf_tolerance)};")
            lines.append(f"difftest {stmt.name} {{ " + " ".join(parts) + " }")
        else:  # pragma: no cover - statement kinds are closed
            raise TypeError(f"unknown statement {stmt!r}")
    return "".join(line + "\n" for line in lines)

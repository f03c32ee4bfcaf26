"""Compiler for ``.rootio`` persistency property files.

A ``.rootio`` file is a sequence of ``set`` directives::

    set class_name Pers01CalorHit      # scalar: key and value on one line
    set member                         # block: verbatim lines up to ".."
      @float@ EdepAbs;
    ..

``@name@`` references are expanded in a single left-to-right pass; a
replacement is never rescanned. The compiler writes a canonical descriptor
(``<class_name>.schema``) and renders user templates through the same
expansion (``<template-stem>.<class_name>.out``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import IoFailure, MalformedDirective, TemplateNotFound, UnterminatedBlock, ValidationFailed

SCALAR_KEYS = ("class_name", "collection_class", "collection_base_class", "sdet_name", "array_io_base", "catalog")
BLOCK_KEYS = ("global_declaration", "add_header_src", "member", "constructor", "method")

# @class_root@ and @make_transient@ are used but never defined in the original
# language; they are fixed here and can be overridden with defines.
PREDEFINED = {"float": "float", "make_transient": "MakeTransient"}
CLASS_ROOT_SUFFIX = "Root"

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_DIRECTIVE = re.compile(r"set(?:\s+(?P<key>\S+)(?:\s+(?P<value>.*))?)?\Z")
_MACRO = re.compile(r"@(?P<name>[A-Za-z_][A-Za-z0-9_]*)@|@@")
_FIELD = re.compile(
    r"(?P<type>\S.*?)\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*(?P<dims>(?:\[[^\]]*\]\s*)*);\s*(?://.*)?\Z"
)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    line: int
    message: str

    def format(self, source: str) -> str:
        return f"{source}:{self.line}: {self.severity}: {self.message}"


@dataclass
class SchemaDef:
    scalar_keys: dict[str, str] = field(default_factory=dict)
    block_keys: dict[str, list[str]] = field(default_factory=dict)
    source_name: str = "<input>"
    # first definition line per key and the source line of every block line
    key_lines: dict[tuple[str, str], int] = field(default_factory=dict, compare=False, repr=False)
    block_line_numbers: dict[str, list[int]] = field(default_factory=dict, compare=False, repr=False)

    @property
    def class_name(self) -> str | None:
        return self.scalar_keys.get("class_name")

    def unknown_keys(self) -> list[tuple[str, int]]:
        out = []
        for key in self.scalar_keys:
            if key not in SCALAR_KEYS:
                out.append((key, self.key_lines.get(("scalar", key), 0)))
        for key in self.block_keys:
            if key not in BLOCK_KEYS:
                out.append((key, self.key_lines.get(("block", key), 0)))
        return out


@dataclass(frozen=True)
class MemberField:
    name: str
    type: str  # as written, possibly a macro such as "@float@"
    resolved_type: str
    dims: str = ""


def parse(text: str, source_name: str = "<input>") -> SchemaDef:
    schema = SchemaDef(source_name=source_name)
    open_key: str | None = None
    open_line = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        if open_key is not None:
            if line.strip() == "..":
                open_key = None
                continue
            schema.block_keys[open_key].append(line)
            schema.block_line_numbers[open_key].append(lineno)
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _DIRECTIVE.match(stripped)
        if not m or not m.group("key"):
            raise MalformedDirective(f"expected 'set <key> [value]', got {stripped[:40]!r}", lineno)
        key = m.group("key")
        if not _IDENT.match(key):
            raise MalformedDirective(f"invalid key {key!r}", lineno)
        value = (m.group("value") or "").strip()
        if value:
            schema.scalar_keys[key] = value
            schema.key_lines.setdefault(("scalar", key), lineno)
        else:
            schema.block_keys.setdefault(key, [])
            schema.block_line_numbers.setdefault(key, [])
            schema.key_lines.setdefault(("block", key), lineno)
            open_key, open_line = key, lineno
    if open_key is not None:
        raise UnterminatedBlock(f"block {open_key!r} opened here is not closed with '..'", open_line)
    return schema


def to_rootio(schema: SchemaDef) -> str:
    """Print a schema back to ``.rootio`` text; ``parse`` of the result is equal to ``schema``."""
    out = []
    for key, value in schema.scalar_keys.items():
        if value != value.strip() or "\n" in value or not value:
            raise ValueError(f"scalar {key!r} cannot be printed faithfully")
        out.append(f"set {key} {value}")
    for key, lines in schema.block_keys.items():
        out.append(f"set {key}")
        for line in lines:
            if line.strip() == ".." or "\n" in line or "\r" in line:
                raise ValueError(f"block {key!r} holds a line that cannot be printed faithfully")
            out.append(line)
        out.append("..")
    return "\n".join(out) + "\n"


class MacroTable:
    """Macro bindings keyed by bare name (``float`` for ``@float@``)."""

    def __init__(self, bindings: Mapping[str, str] | None = None):
        self.bindings: dict[str, str] = dict(bindings or {})

    @classmethod
    def for_schema(cls, schema: SchemaDef, defines: Mapping[str, str] | None = None, *, blocks: bool = False) -> MacroTable:
        table = dict(PREDEFINED)
        if schema.class_name:
            table["class_root"] = schema.class_name + CLASS_ROOT_SUFFIX
        table.update(schema.scalar_keys)
        table.update(defines or {})
        mt = cls(table)
        if blocks:
            # block macros are for templates; their bodies are expanded against
            # the scalar table first since replacements are never rescanned
            for key, lines in schema.block_keys.items():
                mt.bindings.setdefault(key, "\n".join(mt.expand(l) for l in lines))
        return mt

    def expand(self, text: str, diagnostics: list[Diagnostic] | None = None, line: int = 0) -> str:
        return expand(text, self.bindings, diagnostics, line)

    def __contains__(self, name: str) -> bool:
        return name in self.bindings

    def __getitem__(self, name: str) -> str:
        return self.bindings[name]


def expand(text: str, macros: Mapping[str, str], diagnostics: list[Diagnostic] | None = None, line: int = 0) -> str:
    """Replace each ``@name@`` with ``macros[name]``; unknown ones stay and are reported."""

    def repl(m: re.Match) -> str:
        name = m.group("name")
        if name is None:
            if diagnostics is not None:
                diagnostics.append(Diagnostic("warning", line, "empty macro reference '@@'"))
            return m.group(0)
        if name in macros:
            return macros[name]
        if diagnostics is not None:
            diagnostics.append(Diagnostic("warning", line, f"unresolved macro @{name}@"))
        return m.group(0)

    return _MACRO.sub(repl, text)


def member_fields(schema: SchemaDef, table: MacroTable | None = None,
                  diagnostics: list[Diagnostic] | None = None) -> list[MemberField]:
    table = table or MacroTable.for_schema(schema)
    lines = schema.block_keys.get("member", [])
    numbers = schema.block_line_numbers.get("member", [0] * len(lines))
    fields = []
    for text, lineno in zip(lines, numbers):
        s = text.strip()
        if not s or s.startswith("//"):
            continue
        m = _FIELD.match(s)
        if not m:
            if diagnostics is not None:
                diagnostics.append(Diagnostic("warning", lineno, f"cannot read a member declaration from {s!r}"))
            continue
        typ = " ".join(m.group("type").split())
        dims = "".join(m.group("dims").split())
        fields.append(MemberField(m.group("name"), typ, table.expand(typ), dims))
    return fields


def validate(schema: SchemaDef, defines: Mapping[str, str] | None = None) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    first = min(schema.key_lines.values(), default=0)
    cn = schema.class_name
    if cn is None:
        diags.append(Diagnostic("error", first, "class_name missing"))
    elif not _IDENT.match(cn):
        diags.append(Diagnostic("error", schema.key_lines.get(("scalar", "class_name"), 0),
                                f"class_name {cn!r} is not a valid identifier"))
    if "collection_class" not in schema.scalar_keys:
        diags.append(Diagnostic("error", first, "collection_class missing"))
    if "member" not in schema.block_keys:
        diags.append(Diagnostic("error", first, "member block missing"))
    for key, lineno in schema.unknown_keys():
        diags.append(Diagnostic("warning", lineno, f"unknown key {key!r} kept verbatim"))
    table = MacroTable.for_schema(schema, defines)
    for key, lines in schema.block_keys.items():
        numbers = schema.block_line_numbers.get(key, [0] * len(lines))
        for text, lineno in zip(lines, numbers):
            table.expand(text, diags, lineno)
    if "member" in schema.block_keys:
        fields = member_fields(schema, table, diags)
        seen = set()
        for f in fields:
            if f.name in seen:
                diags.append(Diagnostic("error", schema.key_lines.get(("block", "member"), 0),
                                        f"member {f.name!r} declared twice"))
            seen.add(f.name)
    diags.sort(key=lambda d: (d.line, d.severity != "error"))
    return diags


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diagnostics)


def descriptor(schema: SchemaDef, defines: Mapping[str, str] | None = None) -> str:
    """Canonical, byte-stable text description of a validated schema."""
    table = MacroTable.for_schema(schema, defines)
    out = ["# gdfarm schema descriptor v1", f"source {schema.source_name}", f"class {schema.class_name}"]
    for key, value in schema.scalar_keys.items():
        out.append(f"scalar {key} {value}")
    for key, lines in schema.block_keys.items():
        out.append(f"block {key} {len(lines)}")
    for name in sorted(table.bindings):
        out.append(f"macro @{name}@ {table.bindings[name]}")
    for f in member_fields(schema, table):
        out.append(f"field {f.name} {f.type} {f.resolved_type}{f.dims}")
    return "\n".join(out) + "\n"


def render(template_text: str, schema: SchemaDef, defines: Mapping[str, str] | None = None,
           diagnostics: list[Diagnostic] | None = None) -> str:
    table = MacroTable.for_schema(schema, defines, blocks=True)
    parts = []
    for lineno, line in enumerate(template_text.splitlines(keepends=True), 1):
        parts.append(table.expand(line, diagnostics, lineno))
    return "".join(parts)


@dataclass
class CompileResult:
    schema: SchemaDef
    descriptor: str
    paths: list[Path]
    diagnostics: list[Diagnostic]
    template_diagnostics: dict[str, list[Diagnostic]] = field(default_factory=dict)


def compile_schema(
    schema_file: str | Path,
    template_files: Iterable[str | Path] = (),
    output_dir: str | Path = ".",
    defines: Mapping[str, str] | None = None,
) -> CompileResult:
    """Parse, validate and emit. Nothing is written unless validation passes."""
    schema_file = Path(schema_file)
    try:
        text = schema_file.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{schema_file}: {exc}") from exc
    schema = parse(text, schema_file.name)
    diags = validate(schema, defines)
    if has_errors(diags):
        raise ValidationFailed(f"{schema_file}: schema has errors", diags)

    templates = []
    for t in template_files:
        t = Path(t)
        if not t.is_file():
            raise TemplateNotFound(str(t))
        templates.append((t, t.read_text(encoding="utf-8")))

    out_dir = Path(output_dir)
    desc = descriptor(schema, defines)
    rendered = []
    tdiags: dict[str, list[Diagnostic]] = {}
    for t, body in templates:
        d: list[Diagnostic] = []
        rendered.append((out_dir / f"{t.stem}.{schema.class_name}.out", render(body, schema, defines, d)))
        tdiags[str(t)] = d

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        desc_path = out_dir / f"{schema.class_name}.schema"
        desc_path.write_text(desc, encoding="utf-8")
        paths = [desc_path]
        for path, content in rendered:
            path.write_text(content, encoding="utf-8")
            paths.append(path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return CompileResult(schema, desc, paths, diags, tdiags)

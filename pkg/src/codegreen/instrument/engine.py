"""Query-driven target discovery and text-splice injection of checkpoint shims.

Targets come from tree-sitter queries shipped as ``queries/<lang>/<scope>.scm``.
Injection never re-serializes the AST: the plan is a list of byte-range edits
computed from node offsets, spliced into the original text, and the result
is parsed again to make sure it is still valid.

Per-language exit handling:

* Python and Java wrap the region in ``try``/``finally``.
* C++ declares an RAII guard whose destructor emits the end event.
* C has no cleanup construct, so an end shim goes before every ``return``
  (after the return value is computed into a temporary of the declared
  return type) and at the fall-through end of the body.  ``exit``/``abort``/``longjmp`` bypass it.

Every begin shim returns the checkpoint stack depth and every end shim
unwinds to that depth, so an early exit from a nested region still closes
exactly the regions it leaves.
"""

from __future__ import annotations

import enum
import fnmatch
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template
from typing import Iterable, Mapping, Sequence

import tree_sitter as ts

from ..errors import CodeGreenError

MARKERS = {
    "python": "# codegreen-instrumented",
    "c": "/* codegreen-instrumented */",
    "cpp": "/* codegreen-instrumented */",
    "java": "/* codegreen-instrumented */",
}
EXTENSIONS = {
    ".py": "python",
    ".c": "c",
    ".cc": "cpp",
    ".cpp": "cpp",
    ".cxx": "cpp",
    ".java": "java",
}
LANGUAGES = ("python", "c", "cpp", "java")
SCOPES = ("function", "method", "class", "loop")


class InstrumentError(CodeGreenError):
    pass


class UnsupportedLanguage(InstrumentError, ValueError):
    pass


class ParseError(InstrumentError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class AlreadyInstrumented(InstrumentError):
    pass


class CrossingRanges(InstrumentError):
    pass


class ShimTemplateMissing(InstrumentError):
    pass


class OffsetOutOfRange(InstrumentError):
    pass


class ReparseFailed(InstrumentError):
    pass


class LoopMode(str, enum.Enum):
    WHOLE_LOOP = "whole_loop"
    PER_ITERATION = "per_iteration"


@dataclass(frozen=True)
class GranularityConfig:
    scopes: Mapping[str, frozenset] = field(default_factory=dict)
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    loop_mode: LoopMode = LoopMode.WHOLE_LOOP

    DEFAULT_SCOPES = frozenset({"function", "method"})

    def __post_init__(self):
        object.__setattr__(self, "loop_mode", LoopMode(self.loop_mode))
        scopes = {}
        for lang, kinds in self.scopes.items():
            kinds = frozenset(kinds)
            if lang not in LANGUAGES:
                raise UnsupportedLanguage(lang)
            if not kinds:
                raise ValueError(f"no scopes enabled for {lang}")
            bad = kinds - set(SCOPES)
            if bad:
                raise ValueError(f"unknown scope(s) {sorted(bad)}")
            scopes[lang] = kinds
        object.__setattr__(self, "scopes", scopes)

    @classmethod
    def uniform(cls, scopes: Iterable[str] = DEFAULT_SCOPES, **kwargs) -> "GranularityConfig":
        return cls({lang: frozenset(scopes) for lang in LANGUAGES}, **kwargs)

    def scopes_for(self, language: str) -> frozenset:
        return self.scopes.get(language, self.DEFAULT_SCOPES)

    def selects(self, name: str) -> bool:
        if self.include and not any(fnmatch.fnmatchcase(name, p) for p in self.include):
            return False
        return not any(fnmatch.fnmatchcase(name, p) for p in self.exclude)


@dataclass(frozen=True)
class InjectionTarget:
    language: str
    kind: str
    name: str
    node_range: tuple[int, int]
    body_range: tuple[int, int]
    exit_points: tuple[int, ...] = ()
    line: int = 0
    node: ts.Node | None = field(default=None, compare=False, repr=False, hash=False)


@dataclass(frozen=True)
class Edit:
    """Replace ``delete`` bytes at ``offset`` with ``text``.

    Insertions sharing an offset are emitted in ascending ``order``.
    """

    offset: int
    text: str
    delete: int = 0
    order: int = 0


@dataclass
class InjectionPlan:
    source_path: str | None
    language: str
    source: bytes
    edits: list[Edit]
    targets: list[InjectionTarget]
    loop_mode: LoopMode = LoopMode.WHOLE_LOOP

    # each entry into a target (call, loop, or iteration) yields one B/E pair
    pairs_per_entry: int = 1

    def expected_events(self, entries: Mapping[str, int]) -> int:
        """Checkpoint events for the given number of entries per target name."""
        names = {t.name for t in self.targets}
        return sum(2 * self.pairs_per_entry * n for name, n in entries.items() if name in names)


# -- languages, parsing ----------------------------------------------------------

@lru_cache(maxsize=None)
def get_language(language: str) -> ts.Language:
    if language == "python":
        import tree_sitter_python as mod
    elif language == "c":
        import tree_sitter_c as mod
    elif language == "cpp":
        import tree_sitter_cpp as mod
    elif language == "java":
        import tree_sitter_java as mod
    else:
        raise UnsupportedLanguage(f"unsupported language {language!r}")
    return ts.Language(mod.language())


def parse(source: bytes, language: str) -> ts.Tree:
    return ts.Parser(get_language(language)).parse(source)


def first_error(node: ts.Node) -> ts.Node | None:
    if node.is_error or node.is_missing:
        return node
    if not node.has_error:
        return None
    for child in node.children:
        found = first_error(child)
        if found is not None:
            return found
    return node


def check_syntax(tree: ts.Tree, what: str = "source"):
    bad = first_error(tree.root_node)
    if bad is not None:
        line, col = bad.start_point
        kind = "missing " + bad.type if bad.is_missing else "syntax error"
        raise ParseError(f"{what}:{line + 1}:{col + 1}: {kind}", line + 1, col + 1)


def detect_language(path: str | os.PathLike) -> str:
    ext = Path(path).suffix.lower()
    try:
        return EXTENSIONS[ext]
    except KeyError:
        raise UnsupportedLanguage(f"no instrumenter for {str(path)!r}") from None


@lru_cache(maxsize=None)
def load_query(language: str, scope: str) -> ts.Query | None:
    asset = resources.files("codegreen.instrument").joinpath("queries", language, f"{scope}.scm")
    if not asset.is_file():
        return None
    return ts.Query(get_language(language), asset.read_text())


@lru_cache(maxsize=None)
def shim_template(name: str) -> str:
    asset = resources.files("codegreen.instrument").joinpath("shims", name)
    if not asset.is_file():
        raise ShimTemplateMissing(f"missing shim template {name}")
    return asset.read_text()


def _matches(language: str, scope: str, root: ts.Node) -> list[dict[str, ts.Node]]:
    query = load_query(language, scope)
    if query is None:
        return []
    out = []
    for _, caps in ts.QueryCursor(query).matches(root):
        out.append({k: v[0] for k, v in caps.items()})
    return out


def _text(node: ts.Node) -> str:
    return node.text.decode("utf-8", "replace")


def _nid(node: ts.Node) -> tuple:
    return (node.start_byte, node.end_byte, node.type)


# -- naming ----------------------------------------------------------------------

_FUNC_TYPES = {
    "python": ("function_definition",),
    "c": ("function_definition",),
    "cpp": ("function_definition", "lambda_expression"),
    "java": ("method_declaration", "constructor_declaration", "lambda_expression"),
}
_CLASS_TYPES = {
    "python": ("class_definition",),
    "c": (),
    "cpp": ("class_specifier", "struct_specifier"),
    "java": ("class_declaration", "enum_declaration", "record_declaration", "interface_declaration"),
}
_LOOP_TYPES = {
    "for_statement": "for", "while_statement": "while", "do_statement": "do",
    "for_range_loop": "for", "enhanced_for_statement": "for",
}
_SEP = {"python": ".", "c": ".", "cpp": "::", "java": "."}


def _c_declarator_name(node: ts.Node) -> str:
    while node is not None and node.type != "function_declarator":
        inner = node.child_by_field_name("declarator")
        if inner is None:
            inner = next((c for c in node.named_children if "declarator" in c.type), None)
        node = inner
    if node is None:
        return "<anonymous>"
    return _text(node.child_by_field_name("declarator"))


def _raw_name(language: str, node: ts.Node) -> str:
    if language in ("c", "cpp") and node.type == "function_definition":
        return _c_declarator_name(node.child_by_field_name("declarator"))
    name = node.child_by_field_name("name")
    return _text(name) if name is not None else "<anonymous>"


def _enclosing(node: ts.Node, types: Sequence[str]) -> ts.Node | None:
    p = node.parent
    while p is not None and p.type not in types:
        p = p.parent
    return p


def _qualified_name(language: str, node: ts.Node) -> str:
    name = _raw_name(language, node)
    cls = _enclosing(node, _CLASS_TYPES[language])
    func = _enclosing(node, _FUNC_TYPES[language])
    # a class nested inside a function body is still the owner if it is closer
    if cls is not None and (func is None or func.start_byte < cls.start_byte):
        return f"{_raw_name(language, cls)}{_SEP[language]}{name}"
    return name


def _loop_name(language: str, node: ts.Node) -> str:
    func = _enclosing(node, _FUNC_TYPES[language])
    owner = _qualified_name(language, func) if func is not None and func.type != "lambda_expression" else "<module>"
    return f"{owner}.{_LOOP_TYPES[node.type]}@{node.start_point[0] + 1}"


def _sanitize(name: str) -> str:
    return re.sub(r"[\t\r\n#]", "_", " ".join(name.split()))


# -- analysis --------------------------------------------------------------------

def _function_exits(language: str, node: ts.Node) -> tuple[int, ...]:
    body = node.child_by_field_name("body")
    exits = []
    stack = list(body.children) if body is not None else []
    while stack:
        n = stack.pop()
        if n.type == "return_statement":
            exits.append(n.start_byte)
        if n.type in _FUNC_TYPES[language] or n.type in _CLASS_TYPES[language]:
            continue
        stack.extend(n.children)
    if body is not None:
        exits.append(body.end_byte)
    return tuple(sorted(exits))


def _make_target(language, kind, name, node, body) -> InjectionTarget:
    if kind == "loop":
        exits = (node.end_byte,)
    else:
        exits = _function_exits(language, node)
    return InjectionTarget(language, kind, _sanitize(name), (node.start_byte, node.end_byte),
                           (body.start_byte, body.end_byte), exits, node.start_point[0] + 1, node)


def _class_methods(language: str, cls: ts.Node) -> list[ts.Node]:
    out = []
    stack = list(cls.children)
    while stack:
        n = stack.pop()
        if n.type in _FUNC_TYPES[language] and n.type != "lambda_expression":
            if n.child_by_field_name("body") is not None and _enclosing(n, _CLASS_TYPES[language]) == cls:
                out.append(n)
            continue
        if n.type in _CLASS_TYPES[language]:
            continue
        stack.extend(n.children)
    return out


def _has_compound_body(language: str, node: ts.Node) -> bool:
    body = node.child_by_field_name("body")
    if body is None:
        return False
    if language in ("c", "cpp"):
        return body.type == "compound_statement"
    return True


def analyze_tree(tree: ts.Tree, language: str, config: GranularityConfig) -> list[InjectionTarget]:
    root = tree.root_node
    scopes = config.scopes_for(language)
    chosen: dict[tuple, tuple[str, ts.Node]] = {}
    method_ids = {_nid(m["target"]) for m in _matches(language, "method", root)}

    if "function" in scopes:
        for m in _matches(language, "function", root):
            node = m["target"]
            if language != "java" and _nid(node) in method_ids:
                continue
            chosen.setdefault(_nid(node), ("function", node))
    if "method" in scopes:
        for m in _matches(language, "method", root):
            chosen.setdefault(_nid(m["target"]), ("method", m["target"]))
    if "class" in scopes:
        for m in _matches(language, "class", root):
            for node in _class_methods(language, m["target"]):
                chosen.setdefault(_nid(node), ("method", node))
    if "loop" in scopes:
        for m in _matches(language, "loop", root):
            chosen.setdefault(_nid(m["target"]), ("loop", m["target"]))

    targets = []
    for kind, node in chosen.values():
        if kind == "loop":
            name = _loop_name(language, node)
        else:
            if not _has_compound_body(language, node):
                continue
            name = _qualified_name(language, node)
        if not config.selects(name):
            continue
        targets.append(_make_target(language, kind, name, node, node.child_by_field_name("body")))
    targets.sort(key=lambda t: (t.node_range[0], -t.node_range[1]))
    return targets


def _read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, str) and ("\n" in source or not source):
        return source.encode()
    return Path(source).read_bytes()


def is_instrumented(source: bytes, language: str) -> bool:
    return MARKERS[language].encode() in source


def analyze_source(source, language: str | None = None,
                   config: GranularityConfig | None = None) -> list[InjectionTarget]:
    """Find instrumentation targets without modifying anything.

    ``source`` may be a path, source text, or bytes.
    """
    if language is None:
        language = detect_language(source)
    if language not in LANGUAGES:
        raise UnsupportedLanguage(f"unsupported language {language!r}")
    config = config or GranularityConfig()
    data = _read_source(source)
    if is_instrumented(data, language):
        raise AlreadyInstrumented("source already carries the codegreen prologue marker")
    tree = parse(data, language)
    check_syntax(tree, str(source) if not isinstance(source, (bytes, str)) or "\n" not in str(source) else "source")
    return analyze_tree(tree, language, config)


# -- planning helpers -------------------------------------------------------------

def _line_start(src: bytes, offset: int) -> int:
    return src.rfind(b"\n", 0, offset) + 1


def _indent_at(src: bytes, offset: int) -> str:
    start = _line_start(src, offset)
    end = start
    while end < len(src) and src[end:end + 1] in (b" ", b"\t"):
        end += 1
    return src[start:end].decode()


def _starts_line(src: bytes, offset: int) -> bool:
    return src[_line_start(src, offset):offset].strip() == b""


def _check_nesting(targets: Sequence[InjectionTarget]):
    spans = sorted((t.node_range for t in targets), key=lambda r: (r[0], -r[1]))
    open_ = []
    for s, e in spans:
        while open_ and open_[-1][1] <= s:
            open_.pop()
        if open_ and e > open_[-1][1]:
            raise CrossingRanges(f"range {s}-{e} crosses {open_[-1][0]}-{open_[-1][1]}")
        open_.append((s, e))


def _encloses(outer: tuple[int, int], inner: tuple[int, int]) -> bool:
    return outer[0] <= inner[0] and inner[1] <= outer[1] and outer != inner


def _name_table(targets: Sequence[InjectionTarget]) -> dict[str, int]:
    table: dict[str, int] = {}
    for t in targets:
        table.setdefault(t.name, len(table))
    return table


def _c_string(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


# -- python ------------------------------------------------------------------------

def _py_statements(block: ts.Node) -> list[ts.Node]:
    return [c for c in block.named_children if c.type != "comment"]


def _py_is_docstring(stmt: ts.Node) -> bool:
    return (stmt.type == "expression_statement" and stmt.named_child_count == 1
            and stmt.named_children[0].type in ("string", "concatenated_string"))


def _py_region(target: InjectionTarget, loop_mode: LoopMode) -> tuple[int, int]:
    node = target.node
    if target.kind == "loop" and loop_mode is LoopMode.WHOLE_LOOP:
        return node.start_byte, node.end_byte
    stmts = _py_statements(node.child_by_field_name("body"))
    if target.kind != "loop" and len(stmts) > 1 and _py_is_docstring(stmts[0]):
        stmts = stmts[1:]
    return stmts[0].start_byte, stmts[-1].end_byte


def _py_prologue_offset(src: bytes, root: ts.Node) -> int:
    last = None
    for child in root.named_children:
        if child.type == "comment":
            continue
        if child.type == "future_import_statement" or (last is None and _py_is_docstring(child)):
            last = child
            continue
        break
    if last is not None:
        nl = src.find(b"\n", last.end_byte)
        return len(src) if nl < 0 else nl + 1
    off = 0
    for line in src.splitlines(keepends=True):
        if line.startswith(b"#!") or re.match(rb"^[ \t\f]*#.*coding[:=]", line):
            off += len(line)
        else:
            break
    return off


def _plan_python(src: bytes, tree: ts.Tree, targets: Sequence[InjectionTarget],
                 loop_mode: LoopMode) -> list[Edit]:
    unit = "\t" if re.search(rb"^\t", src, re.M) else "    "
    strings = []
    stack = [tree.root_node]
    while stack:
        n = stack.pop()
        if n.type == "string":
            if n.start_point[0] != n.end_point[0]:
                strings.append((n.start_byte, n.end_byte))
            continue
        stack.extend(n.children)

    def in_string(off):
        return any(s < off < e for s, e in strings)

    line_starts = [0] + [i + 1 for i in range(len(src)) if src[i:i + 1] == b"\n"]
    info = []
    for k, t in enumerate(targets):
        start, end = _py_region(t, loop_mode)
        inline = not _starts_line(src, start)
        first = _line_start(src, start)
        covered = set() if inline else {
            ls for ls in line_starts
            if first <= ls < end and not in_string(ls) and src[ls:src.find(b"\n", ls) if src.find(b"\n", ls) >= 0 else len(src)].strip()
        }
        info.append((k, t, start, end, inline, first, covered))

    edits: list[Edit] = []
    counts: dict[int, int] = {}
    for _, _, _, _, _, _, covered in info:
        for ls in covered:
            counts[ls] = counts.get(ls, 0) + 1
    for k, t, start, end, inline, first, covered in info:
        depth = sum(1 for other in targets if other is not t and _encloses(other.node_range, t.node_range))
        var = f"_cg_d{k}"
        begin = f"{var} = _cg_begin({t.name!r})"
        finish = f"_cg_end({var})"
        if inline:
            ind = _indent_at(src, start) + unit * (depth + 1)
            ws = start
            while src[ws - 1:ws] in (b" ", b"\t"):
                ws -= 1
            edits.append(Edit(ws, f"\n{ind}{begin}\n{ind}try:\n{ind}{unit}", delete=start - ws))
        else:
            ind = _indent_at(src, start) + unit * depth
            edits.append(Edit(first, f"{ind}{begin}\n{ind}try:\n", order=depth))
        edits.append(Edit(end, f"\n{ind}finally:\n{ind}{unit}{finish}", order=-depth))
    for ls, c in counts.items():
        edits.append(Edit(ls, unit * c, order=10_000))
    prologue = shim_template("python.txt")
    edits.append(Edit(_py_prologue_offset(src, tree.root_node), prologue, order=-10_000))
    return edits


# -- C / C++ -------------------------------------------------------------------------

def _c_loop_wrap_node(node: ts.Node) -> ts.Node:
    while node.parent is not None and node.parent.type == "labeled_statement":
        node = node.parent
    return node


def _loop_jumps(body: ts.Node, loop_types: Sequence[str]) -> list[ts.Node]:
    """break/continue statements that leave this loop's current iteration."""
    out = []
    stack = [(body, False)]
    while stack:
        n, in_switch = stack.pop()
        if n.type == "continue_statement" or (n.type == "break_statement" and not in_switch):
            out.append(n)
            continue
        if n.type in loop_types or n.type in ("lambda_expression", "class_body", "function_definition"):
            continue
        sw = in_switch or n.type in ("switch_statement", "switch_expression", "switch_block")
        stack.extend((c, sw) for c in n.children)
    return out


def _returns_in(node: ts.Node, language: str) -> list[ts.Node]:
    out = []
    stack = list(node.children)
    while stack:
        n = stack.pop()
        if n.type == "return_statement":
            out.append(n)
            continue
        if n.type in _FUNC_TYPES[language]:
            continue
        stack.extend(n.children)
    return out


def _c_is_void(func: ts.Node) -> bool:
    typ = func.child_by_field_name("type")
    decl = func.child_by_field_name("declarator")
    return typ is not None and _text(typ) == "void" and decl is not None and decl.type == "function_declarator"


def _c_return_type(func: ts.Node) -> str:
    """Spell the declared return type, e.g. ``const char *``."""
    parts = [_text(c) for c in func.children
             if c.type == "type_qualifier" or c == func.child_by_field_name("type")]
    decl = func.child_by_field_name("declarator")
    stars = 0
    while decl is not None and decl.type != "function_declarator":
        if decl.type == "pointer_declarator":
            stars += 1
        decl = decl.child_by_field_name("declarator")
    return " ".join(parts) + " " + "*" * stars


def _plan_c_family(src: bytes, tree: ts.Tree, targets: Sequence[InjectionTarget],
                   loop_mode: LoopMode, language: str) -> list[Edit]:
    names = _name_table(targets)
    edits: list[Edit] = []
    cpp = language == "cpp"
    loop_types = tuple(_LOOP_TYPES)
    owner_of: dict[tuple, int] = {}

    def begin_args(t):
        return f"{_c_string(t.name)}, &_cg_cnt[{names[t.name]}]"

    def open_text(k, t):
        if cpp:
            return f" _cg_guard _cg_g{k}({begin_args(t)});"
        return f" int _cg_d{k} = _cg_begin({begin_args(t)});"

    for k, t in enumerate(targets):
        node = t.node
        if t.kind != "loop":
            body = node.child_by_field_name("body")
            edits.append(Edit(body.start_byte + 1, open_text(k, t), order=1))
            if not cpp:
                edits.append(Edit(body.end_byte - 1, f" _cg_end(_cg_d{k}); ", order=-1))
            region = node
        elif loop_mode is LoopMode.WHOLE_LOOP:
            wrap = _c_loop_wrap_node(node)
            edits.append(Edit(wrap.start_byte, "{" + open_text(k, t) + " ", order=5))
            close = " }" if cpp else f" _cg_end(_cg_d{k}); }}"
            edits.append(Edit(wrap.end_byte, close, order=-5))
            region = wrap
        else:
            body = node.child_by_field_name("body")
            if body.type == "compound_statement":
                edits.append(Edit(body.start_byte + 1, open_text(k, t), order=1))
                if not cpp:
                    edits.append(Edit(body.end_byte - 1, f" _cg_end(_cg_d{k}); ", order=-1))
            else:
                edits.append(Edit(body.start_byte, "{" + open_text(k, t) + " ", order=5))
                close = " }" if cpp else f" _cg_end(_cg_d{k}); }}"
                edits.append(Edit(body.end_byte, close, order=-5))
            if not cpp:
                for jump in _loop_jumps(body, loop_types):
                    edits.append(Edit(jump.start_byte, f"{{ _cg_end(_cg_d{k}); ", order=5))
                    edits.append(Edit(jump.end_byte, " }", order=-5))
            region = node
        if not cpp:
            # returns close the outermost enclosing target of their function
            for ret in _returns_in(region, language):
                owner_of.setdefault(_nid(ret), k)

    if not cpp:
        rets = {}
        for t in targets:
            for ret in _returns_in(t.node if t.kind != "loop" else _c_loop_wrap_node(t.node), language):
                rets[_nid(ret)] = ret
        for nid, ret in rets.items():
            k = owner_of[nid]
            func = _enclosing(ret, _FUNC_TYPES[language])
            exprs = [c for c in ret.named_children if c.type != "comment"]
            if not exprs:
                text = f"{{ _cg_end(_cg_d{k}); return; }}"
            else:
                expr = src[exprs[0].start_byte:exprs[-1].end_byte].decode()
                if func is not None and _c_is_void(func):
                    text = f"{{ {expr}; _cg_end(_cg_d{k}); return; }}"
                else:
                    text = (f"{{ {_c_return_type(func)}_cg_rv{k} = ({expr}); "
                            f"_cg_end(_cg_d{k}); return _cg_rv{k}; }}")
            edits.append(Edit(ret.start_byte, text, delete=ret.end_byte - ret.start_byte))

    prologue = Template(shim_template("c.txt")).substitute(ncounters=max(len(names), 1))
    if cpp:
        prologue += "\n" + shim_template("cpp.txt")
    edits.append(Edit(0, prologue + "\n", order=-10_000))
    return edits


# -- Java ----------------------------------------------------------------------------

def _java_class_name(source_path: str | None) -> str:
    stem = Path(source_path).stem if source_path else "Source"
    return "_CgShim_" + re.sub(r"\W", "_", stem)


def _java_prologue_offset(src: bytes, root: ts.Node) -> int:
    off = 0
    for child in root.named_children:
        if child.type in ("package_declaration", "import_declaration"):
            off = child.end_byte
    if off:
        nl = src.find(b"\n", off)
        return len(src) if nl < 0 else nl + 1
    return 0


def _plan_java(src: bytes, tree: ts.Tree, targets: Sequence[InjectionTarget],
               loop_mode: LoopMode, source_path: str | None) -> list[Edit]:
    cls = _java_class_name(source_path)
    edits: list[Edit] = []
    for k, t in enumerate(targets):
        begin = f"int _cg_d{k} = {cls}.begin({_c_string(t.name)}); try {{"
        finish = f"}} finally {{ {cls}.end(_cg_d{k}); }}"
        node = t.node
        if t.kind == "loop" and loop_mode is LoopMode.WHOLE_LOOP:
            wrap = _c_loop_wrap_node(node)
            edits.append(Edit(wrap.start_byte, "{ " + begin + " ", order=5))
            edits.append(Edit(wrap.end_byte, " " + finish + " }", order=-5))
            continue
        body = node.child_by_field_name("body")
        if body.type in ("block", "constructor_body"):
            start = body.start_byte + 1
            stmts = [c for c in body.named_children if c.type not in ("line_comment", "block_comment")]
            if stmts and stmts[0].type == "explicit_constructor_invocation":
                start = stmts[0].end_byte
            edits.append(Edit(start, " " + begin, order=1))
            edits.append(Edit(body.end_byte - 1, finish + " ", order=-1))
        else:
            edits.append(Edit(body.start_byte, "{ " + begin + " ", order=5))
            edits.append(Edit(body.end_byte, " " + finish + " }", order=-5))
    prologue = Template(shim_template("java.txt")).substitute(cls=cls)
    off = _java_prologue_offset(src, tree.root_node)
    edits.append(Edit(off, ("\n" if off and src[off - 1:off] != b"\n" else "") + prologue + "\n", order=-10_000))
    return edits


# -- public planning API ------------------------------------------------------------

def plan_injections(source, targets: Sequence[InjectionTarget], language: str | None = None,
                    config: GranularityConfig | None = None,
                    source_path: str | None = None) -> InjectionPlan:
    """Compute the edits that insert begin/end shims around every target."""
    config = config or GranularityConfig()
    if source_path is None and not isinstance(source, (bytes, bytearray)) and "\n" not in str(source):
        source_path = str(source)
    src = _read_source(source)
    if language is None:
        language = targets[0].language if targets else detect_language(source_path)
    tree = parse(src, language)
    # targets may come from an earlier parse; rebind nodes to this tree
    by_range = {}
    stack = [tree.root_node]
    while stack:
        n = stack.pop()
        by_range[(n.start_byte, n.end_byte, n.type)] = n
        stack.extend(n.children)
    bound = []
    for t in targets:
        if t.language != language:
            raise InstrumentError(f"target {t.name} is {t.language}, plan is {language}")
        key = (t.node_range[0], t.node_range[1], t.node.type if t.node is not None else None)
        node = by_range.get(key)
        if node is None:
            raise OffsetOutOfRange(f"target {t.name} does not match the source")
        bound.append(InjectionTarget(t.language, t.kind, t.name, t.node_range, t.body_range,
                                     t.exit_points, t.line, node))
    _check_nesting(bound)
    if not bound:
        return InjectionPlan(source_path, language, src, [], [], config.loop_mode)
    if language == "python":
        edits = _plan_python(src, tree, bound, config.loop_mode)
    elif language in ("c", "cpp"):
        edits = _plan_c_family(src, tree, bound, config.loop_mode, language)
    elif language == "java":
        edits = _plan_java(src, tree, bound, config.loop_mode, source_path)
    else:
        raise UnsupportedLanguage(language)
    edits.sort(key=lambda e: (e.offset, e.delete == 0, e.order), reverse=True)
    return InjectionPlan(source_path, language, src, edits, bound, config.loop_mode)


def splice(source: bytes, edits: Iterable[Edit]) -> bytes:
    """Apply edits to ``source``.  Insertions at a replaced range's start go before it."""
    ordered = sorted(edits, key=lambda e: (e.offset, e.delete != 0, e.order))
    out = []
    pos = 0
    for e in ordered:
        if e.offset < pos or e.offset > len(source) or e.offset + e.delete > len(source):
            raise OffsetOutOfRange(f"edit at {e.offset} (+{e.delete}) overlaps or exceeds the source")
        out.append(source[pos:e.offset])
        out.append(e.text.encode())
        pos = e.offset + e.delete
    out.append(source[pos:])
    return b"".join(out)


def apply_injections(plan: InjectionPlan) -> str:
    """Splice the plan into its source and confirm the result still parses."""
    if not plan.edits:
        return plan.source.decode()
    result = splice(plan.source, plan.edits)
    tree = parse(result, plan.language)
    try:
        check_syntax(tree, plan.source_path or "instrumented source")
    except ParseError as exc:
        raise ReparseFailed(f"instrumented output does not parse: {exc}") from exc
    return result.decode()


def instrument_file(path: str | os.PathLike, out_dir: str | os.PathLike,
                    config: GranularityConfig | None = None,
                    root: str | os.PathLike | None = None) -> tuple[Path, InjectionPlan]:
    """Write an instrumented copy to ``<out_dir>/instrumented/<relative path>``."""
    path = Path(path)
    language = detect_language(path)
    targets = analyze_source(path, language, config)
    plan = plan_injections(path.read_bytes(), targets, language, config, source_path=str(path))
    text = apply_injections(plan)
    rel = path.resolve().relative_to(Path(root).resolve()) if root else Path(path.name)
    dest = Path(out_dir) / "instrumented" / rel
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(text)
    return dest, plan

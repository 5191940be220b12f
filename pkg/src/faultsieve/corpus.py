"""Method-level corpus extraction for Java source trees.

The recognizer is lexical: comments and string literals are masked out, then
braces are balanced while the text preceding each ``{`` is classified as a
type declaration, a method/constructor header, an initializer, or some other
block. Only methods whose enclosing scope is a named class are extracted.

``doc_id`` derivation (stable across re-extraction)::

    <file_path>:<start_line>:<class_name>.<method_name>(<param_types joined by ','>)
"""

from __future__ import annotations

import bisect
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

MODIFIERS = frozenset(
    {
        "public", "protected", "private", "static", "final", "abstract",
        "synchronized", "native", "default", "strictfp", "transient",
        "volatile", "sealed", "non-sealed",
    }
)
_STATEMENT_KEYWORDS = frozenset(
    {"if", "for", "while", "switch", "catch", "synchronized", "try", "else",
     "do", "return", "new", "throw", "assert", "finally"}
)

_TYPE_DECL = re.compile(r"(?<![\w$.])(class|interface|enum|record)\s+([A-Za-z_$][\w$]*)")
_PACKAGE = re.compile(r"^\s*package\s+([\w$.]+)\s*;", re.MULTILINE)
_METHOD_HEADER = re.compile(
    r"^(?P<prefix>[^()]*?)(?P<name>[A-Za-z_$][\w$]*)\s*\((?P<params>[^()]*)\)"
    r"\s*(?:\[\])*\s*(?:throws\s+[\w$.\s,]+)?$"
)
_TYPE_TOKEN = re.compile(r"^[A-Za-z_$][\w$.]*(?:\[\])*$")
_ANNOTATION_START = re.compile(r"@(?!interface\b)\s*[A-Za-z_$][\w$.]*")


class ExtractionError(Exception):
    """A single source file could not be segmented into methods."""


@dataclass(frozen=True)
class MethodKey:
    """Join key between source methods and coverage entries."""

    class_name: str
    method_name: str
    arity: int

    def __str__(self) -> str:
        return f"{self.class_name}#{self.method_name}({self.arity})"

    @classmethod
    def parse(cls, text: str) -> MethodKey:
        """Parse the ``Class#method(arity)`` form produced by ``str()``."""
        m = re.fullmatch(r"\s*([^#\s]+)#([^(\s]+)\((\d+)\)\s*", text)
        if not m:
            raise ValueError(f"not a method key: {text!r}")
        return cls(m.group(1), m.group(2), int(m.group(3)))


@dataclass(frozen=True)
class MethodDocument:
    doc_id: str
    file_path: str
    class_name: str
    method_name: str
    param_types: tuple[str, ...]
    arity: int
    start_line: int
    end_line: int
    body_text: str
    doc_comment: str
    index_text: str

    @property
    def key(self) -> MethodKey:
        return method_key(self)

    @property
    def signature(self) -> str:
        simple = self.class_name.rsplit(".", 1)[-1]
        return f"{simple}.{self.method_name}({', '.join(self.param_types)})"

    def to_json(self) -> dict:
        d = asdict(self)
        d["param_types"] = list(self.param_types)
        return d

    @classmethod
    def from_json(cls, d: dict) -> MethodDocument:
        return cls(**{**d, "param_types": tuple(d["param_types"])})


@dataclass(frozen=True)
class ExtractionDiagnostic:
    file_path: str
    kind: str  # "unreadable" | "unbalanced"
    message: str


def make_doc_id(
    file_path: str, class_name: str, method_name: str, param_types: Iterable[str], start_line: int
) -> str:
    return f"{file_path}:{start_line}:{class_name}.{method_name}({','.join(param_types)})"


def method_key(doc: MethodDocument) -> MethodKey:
    return MethodKey(doc.class_name, doc.method_name, doc.arity)


# --------------------------------------------------------------------------
# lexical masking


def mask_source(text: str) -> tuple[str, list[tuple[int, int]]]:
    """Blank out comments and literals, preserving offsets and newlines.

    Returns the masked text and the ``(start, end)`` spans of every comment.
    """
    out = list(text)
    comments: list[tuple[int, int]] = []
    n = len(text)
    i = 0

    def blank(a: int, b: int) -> None:
        for j in range(a, b):
            if out[j] != "\n":
                out[j] = " "

    while i < n:
        c = text[i]
        if c == "/" and text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            comments.append((i, j))
            blank(i, j)
            i = j
        elif c == "/" and text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ExtractionError(f"unterminated block comment at offset {i}")
            comments.append((i, j + 2))
            blank(i, j + 2)
            i = j + 2
        elif c == '"' and text.startswith('"""', i):
            j = i + 3
            while True:
                j = text.find('"""', j)
                if j < 0:
                    raise ExtractionError(f"unterminated text block at offset {i}")
                if text[j - 1] != "\\":
                    break
                j += 1
            blank(i, j + 3)
            i = j + 3
        elif c in "\"'":
            j = i + 1
            while j < n and text[j] != c:
                if text[j] == "\\":
                    j += 1
                elif text[j] == "\n":
                    raise ExtractionError(f"unterminated literal at offset {i}")
                j += 1
            if j >= n:
                raise ExtractionError(f"unterminated literal at offset {i}")
            blank(i, j + 1)
            i = j + 1
        else:
            i += 1
    return "".join(out), comments


def _strip_annotations(s: str) -> str:
    pieces = []
    pos = 0
    for m in _ANNOTATION_START.finditer(s):
        if m.start() < pos:
            continue
        pieces.append(s[pos : m.start()])
        j = m.end()
        k = j
        while k < len(s) and s[k].isspace():
            k += 1
        if k < len(s) and s[k] == "(":
            depth = 0
            while k < len(s):
                if s[k] == "(":
                    depth += 1
                elif s[k] == ")":
                    depth -= 1
                    if depth == 0:
                        k += 1
                        break
                k += 1
            j = k
        pieces.append(" ")
        pos = j
    pieces.append(s[pos:])
    return "".join(pieces)


def _strip_generics(s: str) -> str:
    prev = None
    while prev != s:
        prev = s
        s = re.sub(r"<[^<>]*>", "", s)
    return s


def normalize_params(params: str) -> tuple[str, ...]:
    """Reduce a parameter list to the written type names.

    Annotations, generic arguments and ``final`` are dropped; varargs become
    arrays; C-style ``int a[]`` brackets move onto the type.
    """
    params = _strip_generics(_strip_annotations(params))
    params = re.sub(r"\s*\.\.\.\s*", "[] ", params)
    params = re.sub(r"\s*\[\s*\]", "[]", params)
    types = []
    for raw in params.split(","):
        tokens = [t for t in raw.split() if t != "final"]
        if not tokens:
            continue
        if len(tokens) == 1:
            types.append(tokens[0])
            continue
        name = tokens[-1]
        ptype = "".join(tokens[:-1])
        dims = name.count("[]")
        types.append(ptype + "[]" * dims)
    return tuple(types)


# --------------------------------------------------------------------------
# scope walking


@dataclass
class _Scope:
    kind: str  # file | class | method | anon | block
    name: str = ""
    params: tuple[str, ...] = ()
    decl_start: int = 0
    owner: str = ""


@dataclass
class _Classified:
    kind: str
    name: str = ""
    params: tuple[str, ...] = ()


def _classify(header: str, parent: _Scope, package: str) -> _Classified:
    h = _strip_annotations(header).strip()
    if parent.kind == "file":
        m = _TYPE_DECL.search(h)
        if m and not re.search(r"\bnew\b", h):
            name = f"{package}.{m.group(2)}" if package else m.group(2)
            return _Classified("class", name)
        return _Classified("block")
    if re.search(r"\bnew\b", h):
        return _Classified("anon")
    m = _TYPE_DECL.search(h)
    if m:
        return _Classified("class", f"{parent.name}${m.group(2)}")
    if h == "static":
        return _Classified("method", "<clinit>")
    if h == "":
        return _Classified("method", "<init>")
    if "=" in h:
        return _Classified("block")
    flat = re.sub(r"\s*\[\s*\]", "[]", _strip_generics(h))
    m = _METHOD_HEADER.match(flat)
    if not m:
        return _Classified("anon")
    name = m.group("name")
    if name in _STATEMENT_KEYWORDS:
        return _Classified("block")
    rest = [t for t in m.group("prefix").split() if t not in MODIFIERS]
    simple = parent.name.rsplit(".", 1)[-1].rsplit("$", 1)[-1]
    if not rest and name == simple:
        return _Classified("method", name, normalize_params(_params_of(h)))
    if len(rest) == 1 and _TYPE_TOKEN.match(rest[0]):
        return _Classified("method", name, normalize_params(_params_of(h)))
    return _Classified("anon")


def _params_of(header: str) -> str:
    # parameter text taken from the annotation-free header so that generic
    # arguments survive until normalize_params drops them uniformly
    close = header.rfind(")")
    depth = 0
    for i in range(close, -1, -1):
        if header[i] == ")":
            depth += 1
        elif header[i] == "(":
            depth -= 1
            if depth == 0:
                return header[i + 1 : close]
    return ""


def _doc_comment(text: str, comments: list[tuple[int, int]], decl_start: int) -> str:
    ends = [e for _, e in comments]
    idx = bisect.bisect_right(ends, decl_start) - 1
    cursor = decl_start
    first = None
    while idx >= 0:
        start, end = comments[idx]
        if text[end:cursor].strip():
            break
        line_start = text.rfind("\n", 0, start) + 1
        if text[line_start:start].strip():
            break
        first = start
        cursor = start
        idx -= 1
    if first is None:
        return ""
    last_end = comments[bisect.bisect_right(ends, decl_start) - 1][1]
    return text[first:last_end]


def segment_source(text: str, file_path: str) -> list[MethodDocument]:
    """Extract every named-class method declared in one file's text."""
    masked, comments = mask_source(text)
    line_starts = [0] + [i + 1 for i, c in enumerate(text) if c == "\n"]
    lines = text.split("\n")
    pm = _PACKAGE.search(masked)
    package = pm.group(1) if pm else ""

    def line_of(offset: int) -> int:
        return bisect.bisect_right(line_starts, offset)

    stack = [_Scope("file")]
    docs: list[MethodDocument] = []
    header_start = 0
    paren = 0
    for i, c in enumerate(masked):
        if c == "(":
            paren += 1
        elif c == ")":
            paren = max(paren - 1, 0)
        elif paren:
            continue
        elif c == "{":
            parent = stack[-1]
            if parent.kind in ("file", "class"):
                header = masked[header_start:i]
                lead = len(header) - len(header.lstrip())
                cls = _classify(header, parent, package)
                stack.append(
                    _Scope(cls.kind, cls.name, cls.params, header_start + lead, parent.name)
                )
            else:
                stack.append(_Scope("block"))
            header_start = i + 1
        elif c == "}":
            if len(stack) == 1:
                raise ExtractionError(f"unbalanced '}}' at line {line_of(i)}")
            scope = stack.pop()
            if scope.kind == "method":
                start_line, end_line = line_of(scope.decl_start), line_of(i)
                body = "\n".join(lines[start_line - 1 : end_line])
                doc = _doc_comment(text, comments, scope.decl_start)
                docs.append(
                    MethodDocument(
                        doc_id=make_doc_id(
                            file_path, scope.owner, scope.name, scope.params, start_line
                        ),
                        file_path=file_path,
                        class_name=scope.owner,
                        method_name=scope.name,
                        param_types=scope.params,
                        arity=len(scope.params),
                        start_line=start_line,
                        end_line=end_line,
                        body_text=body,
                        doc_comment=doc,
                        index_text=f"{doc}\n{body}" if doc else body,
                    )
                )
            header_start = i + 1
        elif c == ";":
            header_start = i + 1
    if len(stack) != 1:
        raise ExtractionError(f"{len(stack) - 1} unclosed '{{' at end of file")
    docs.sort(key=lambda d: d.start_line)
    return docs


# --------------------------------------------------------------------------
# corpus level


def _read_text(path: Path) -> str:
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        text = data.decode("latin-1")
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _extract_file(args: tuple[str, str]) -> tuple[list[MethodDocument], ExtractionDiagnostic | None]:
    abs_path, rel = args
    try:
        text = _read_text(Path(abs_path))
    except OSError as e:
        return [], ExtractionDiagnostic(rel, "unreadable", str(e))
    try:
        return segment_source(text, rel), None
    except ExtractionError as e:
        return [], ExtractionDiagnostic(rel, "unbalanced", str(e))


def extract_methods(
    source_root: str | Path,
    pattern: str = "**/*.java",
    diagnostics: list[ExtractionDiagnostic] | None = None,
    workers: int = 1,
) -> list[MethodDocument]:
    """Parse every matching file under ``source_root`` into method documents.

    Files that cannot be read or segmented are skipped; a diagnostic is
    appended to ``diagnostics`` (when given) and logged.
    """
    root = Path(source_root)
    if not root.is_dir():
        raise FileNotFoundError(f"source root not found: {root}")
    jobs = sorted(
        (str(p), p.relative_to(root).as_posix()) for p in root.glob(pattern) if p.is_file()
    )
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_file, jobs, chunksize=16))
    else:
        results = [_extract_file(j) for j in jobs]
    docs: list[MethodDocument] = []
    for file_docs, diag in results:
        docs.extend(file_docs)
        if diag is not None:
            log.warning("skipping %s (%s): %s", diag.file_path, diag.kind, diag.message)
            if diagnostics is not None:
                diagnostics.append(diag)
    docs.sort(key=lambda d: (d.file_path, d.start_line, d.doc_id))
    return docs


@dataclass
class Corpus:
    """Method documents with lookups by id and by parent file."""

    documents: list[MethodDocument]
    by_id: dict[str, MethodDocument] = field(init=False, repr=False)
    by_file: dict[str, list[MethodDocument]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.by_id = {}
        self.by_file = {}
        for d in self.documents:
            if d.doc_id in self.by_id:
                raise ValueError(f"duplicate doc_id {d.doc_id}")
            self.by_id[d.doc_id] = d
            self.by_file.setdefault(d.file_path, []).append(d)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[MethodDocument]:
        return iter(self.documents)


def write_corpus(docs: Iterable[MethodDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_json(), ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[MethodDocument]:
    with open(path, encoding="utf-8") as fh:
        return [MethodDocument.from_json(json.loads(line)) for line in fh if line.strip()]

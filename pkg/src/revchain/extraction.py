"""Parsing raw completions into programs and sub-modules.

A sub-module is a top-level function: its signature line(s), docstring, and
body, sliced verbatim out of the candidate program. Extraction never
synthesizes text; every field is a substring of the program, and
``SubModule.text()`` is the contiguous source segment reused downstream for
embedding and for revision prompts.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

PARSE_OK = "ok"
PARSE_NO_CODE = "no_code_block"
PARSE_EMPTY = "empty"

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class SubModule:
    name: str
    header: str  # signature text, "def name(...):"
    docstring: str  # raw literal including quotes, "" if absent
    body: str
    source_sample_id: int
    round_index: int
    source_text: str  # verbatim function segment: header + docstring + body

    def text(self) -> str:
        return self.source_text

    def docstring_value(self) -> str:
        if not self.docstring:
            return ""
        try:
            value = ast.literal_eval(self.docstring)
        except (ValueError, SyntaxError):
            return self.docstring
        return value if isinstance(value, str) else self.docstring


@dataclass
class CandidateSolution:
    sample_id: int
    task_id: str
    round_index: int
    raw_text: str
    code: str
    parse_status: str
    submodules: list[SubModule] = field(default_factory=list)

    @property
    def parsed_ok(self) -> bool:
        return self.parse_status == PARSE_OK


def _looks_like_code(tree: ast.Module) -> bool:
    # a parseable suffix still needs at least one statement that could not be
    # plain prose ("hello" alone parses as a bare name)
    for node in tree.body:
        if not isinstance(node, ast.Expr):
            return True
        if isinstance(node.value, ast.Call):
            return True
    return False


def _longest_code_suffix(text: str) -> str | None:
    lines = text.split("\n")
    for start in range(len(lines)):
        chunk = "\n".join(lines[start:]).strip("\n")
        if not chunk.strip():
            return None
        try:
            tree = ast.parse(chunk)
        except (SyntaxError, ValueError):
            continue
        if _looks_like_code(tree):
            return chunk
    return None


def extract_solution(
    raw_text: str,
    sample_id: int = 0,
    task_id: str = "",
    round_index: int = 0,
) -> CandidateSolution:
    """Pull the final program out of a completion.

    The last fenced code block wins; with no fence, the longest suffix of the
    text that parses as a program is used. Everything else is prose.
    """

    def result(code: str, status: str) -> CandidateSolution:
        return CandidateSolution(
            sample_id=sample_id,
            task_id=task_id,
            round_index=round_index,
            raw_text=raw_text,
            code=code,
            parse_status=status,
        )

    if not raw_text.strip():
        return result("", PARSE_EMPTY)

    blocks = [b.strip("\n") for b in _FENCED_BLOCK.findall(raw_text)]
    blocks = [b for b in blocks if b.strip()]
    if blocks:
        return result(blocks[-1], PARSE_OK)

    # an odd number of fence lines means the final block was never closed;
    # recover everything after the last fence
    fence_lines = list(re.finditer(r"```[^\n]*(?:\n|\Z)", raw_text))
    if len(fence_lines) % 2 == 1:
        tail = raw_text[fence_lines[-1].end() :]
        if tail.strip():
            return result(tail.strip("\n"), PARSE_OK)

    suffix = _longest_code_suffix(raw_text)
    if suffix is not None:
        return result(suffix, PARSE_OK)
    return result("", PARSE_NO_CODE)


def _line_starts(code: str) -> list[int]:
    starts = [0]
    for i, ch in enumerate(code):
        if ch == "\n":
            starts.append(i + 1)
    return starts


def extract_submodules(
    code: str,
    source_sample_id: int = 0,
    round_index: int = 0,
) -> list[SubModule]:
    """One SubModule per top-level function, in source order.

    Nested functions belong to their parent and are not extracted. When a
    name is defined more than once, the last definition wins (that is the one
    the interpreter would run). A program that fails to parse yields no
    sub-modules but remains usable as a monolithic solution.
    """
    if not code.strip():
        return []
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError) as exc:
        log.debug("sub-module extraction skipped, program does not parse: %s", exc)
        return []

    starts = _line_starts(code)

    def pos(lineno: int, col: int) -> int:
        return starts[lineno - 1] + col

    last_by_name: dict[str, ast.AST] = {}
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            last_by_name[node.name] = node
    kept = sorted(last_by_name.values(), key=lambda n: n.lineno)

    out: list[SubModule] = []
    for node in kept:
        def_start = pos(node.lineno, node.col_offset)
        func_end = pos(node.end_lineno, node.end_col_offset)
        first_stmt = node.body[0]
        body0_start = pos(first_stmt.lineno, first_stmt.col_offset)
        header = code[def_start:body0_start].rstrip()

        docstring = ""
        body_stmts = node.body
        body_from = body0_start
        # keep the first body line's indentation when the statement sits on
        # its own line below the signature
        line_start = pos(first_stmt.lineno, 0)
        if line_start > def_start and not code[line_start:body0_start].strip():
            body_from = line_start
        if (
            isinstance(first_stmt, ast.Expr)
            and isinstance(first_stmt.value, ast.Constant)
            and isinstance(first_stmt.value.value, str)
        ):
            ds_end = pos(first_stmt.end_lineno, first_stmt.end_col_offset)
            docstring = code[body0_start:ds_end]
            body_stmts = node.body[1:]
            if body_stmts:
                nxt = body_stmts[0]
                # slice from the line start so the body keeps its indentation
                if nxt.lineno > first_stmt.end_lineno:
                    body_from = pos(nxt.lineno, 0)
                else:
                    body_from = pos(nxt.lineno, nxt.col_offset)
            else:
                body_from = func_end  # docstring-only function, empty body

        body = code[body_from:func_end] if body_from < func_end else ""
        out.append(
            SubModule(
                name=node.name,
                header=header,
                docstring=docstring,
                body=body,
                source_sample_id=source_sample_id,
                round_index=round_index,
                source_text=code[def_start:func_end],
            )
        )
    return out


def parse_candidate(
    raw_text: str,
    sample_id: int,
    task_id: str,
    round_index: int,
) -> CandidateSolution:
    candidate = extract_solution(raw_text, sample_id, task_id, round_index)
    if candidate.parse_status == PARSE_OK:
        candidate.submodules = extract_submodules(
            candidate.code, source_sample_id=sample_id, round_index=round_index
        )
    return candidate

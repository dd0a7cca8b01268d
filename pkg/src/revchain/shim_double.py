"""Supervisor-side child runner for candidate programs.

This file is a self-contained program, not an importable library module. The
supervisor launches it as ``python -S <this file> --result-fd N``, writes one
JSON request document to its stdin, and reads exactly one JSON result line
from the dedicated descriptor. The full request/result schema lives in
PROTOCOL.md at the repository root; the standalone runner package implements
the same contract and replaces this double when installed.

Self-imposed containment (the supervisor adds its own limits on top):
- address-space / file-size / core rlimits from the request
- a wall-clock alarm armed slightly below the supervisor's hard kill
- stdout/stderr captured into capped buffers
- an audit hook that denies forking, process spawning, sockets, rlimit
  changes, and file access outside the working directory and the standard
  library (a candidate that defeats the alarm, e.g. by rewiring SIGALRM,
  is contained by the supervisor's hard kill instead)
"""

import io
import json
import os
import signal
import sys
import time
import traceback

PROTOCOL_VERSION = 1
RECURSION_LIMIT = 10000
STDERR_CAP = 4096
SELF_TIMEOUT_MARGIN_S = 0.3


class _SelfTimeout(Exception):
    pass


class _OutputOverflow(Exception):
    pass


class _CappedWriter(io.TextIOBase):
    """Accumulates writes up to a cap, then aborts the candidate."""

    def __init__(self, cap):
        self._chunks = []
        self._size = 0
        self._cap = cap

    def writable(self):
        return True

    def write(self, s):
        s = str(s)
        budget = self._cap - self._size
        self._size += len(s)
        if self._size > self._cap:
            if budget > 0:
                self._chunks.append(s[:budget])
            raise _OutputOverflow()
        self._chunks.append(s)
        return len(s)

    def flush(self):
        pass

    def value(self):
        return "".join(self._chunks)


def canonical_value_text(value):
    # keep in sync with PROTOCOL.md: deterministic literal rendering with
    # stable collection ordering
    if value is None or isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        inner = ", ".join(canonical_value_text(v) for v in value)
        if isinstance(value, tuple):
            return "(" + inner + ",)" if len(value) == 1 else "(" + inner + ")"
        return "[" + inner + "]"
    if isinstance(value, (set, frozenset)):
        if not value:
            return "set()"
        return "{" + ", ".join(sorted(canonical_value_text(v) for v in value)) + "}"
    if isinstance(value, dict):
        items = sorted((canonical_value_text(k), canonical_value_text(v)) for k, v in value.items())
        return "{" + ", ".join(k + ": " + v for k, v in items) + "}"
    rep = repr(value)
    if " at 0x" in rep:
        return "<" + type(value).__name__ + ">"
    return rep


_DENIED_EVENTS = {
    "os.fork",
    "os.forkpty",
    "os.posix_spawn",
    "os.spawn",
    "os.system",
    "os.exec",
    "os.kill",
    "os.killpg",
    "subprocess.Popen",
    "pty.spawn",
    "resource.setrlimit",
    "sys.addaudithook",
}
_DENIED_PREFIXES = (
    "socket.",
    "os.remove",
    "os.unlink",
    "os.rename",
    "os.rmdir",
    "os.truncate",
    "os.chmod",
    "os.chown",
    "os.link",
    "os.symlink",
    "shutil.",
    "ftplib.",
    "smtplib.",
    "urllib.",
    "webbrowser.",
)


def _install_guard(state, allowed_prefixes):
    def hook(event, args):
        if not state["active"]:
            return
        if event == "open":
            path = args[0]
            if isinstance(path, int):
                return
            if isinstance(path, bytes):
                path = path.decode("utf-8", "replace")
            if not isinstance(path, str):
                return
            full = os.path.abspath(path)
            for prefix in allowed_prefixes:
                if full.startswith(prefix):
                    return
            raise RuntimeError("sandbox: file access denied: " + path)
        if event in _DENIED_EVENTS:
            raise RuntimeError("sandbox: operation denied: " + event)
        for prefix in _DENIED_PREFIXES:
            if event.startswith(prefix):
                raise RuntimeError("sandbox: operation denied: " + event)

    sys.addaudithook(hook)


def _apply_self_limits(limits):
    try:
        import resource
    except ImportError:
        return
    pairs = [
        (resource.RLIMIT_AS, int(limits.get("memory_cap_bytes", 1 << 30))),
        (resource.RLIMIT_FSIZE, int(limits.get("output_cap_bytes", 8 << 20))),
        (resource.RLIMIT_CORE, 0),
    ]
    for which, cap in pairs:
        try:
            resource.setrlimit(which, (cap, cap))
        except (ValueError, OSError):
            pass


def _protocol_error(message):
    return {
        "protocol": PROTOCOL_VERSION,
        "verdict_raw": "protocol_error",
        "stdout": "",
        "return_value_repr": "",
        "stderr_excerpt": message[:STDERR_CAP],
        "elapsed_s": 0.0,
    }


def _run(request):
    program = request["program_source"]
    io_mode = request["io_mode"]
    fn_name = request.get("fn_name")
    test_input = request.get("test_input", "")
    limits = request.get("limits", {})
    wall = float(limits.get("wall_timeout_s", 10.0))
    out_cap = int(limits.get("output_cap_bytes", 8 << 20))

    _apply_self_limits(limits)
    sys.setrecursionlimit(RECURSION_LIMIT)

    stdlib_dir = os.path.dirname(os.__file__)
    allowed = (
        os.path.abspath(os.getcwd()) + os.sep,
        stdlib_dir,
        os.path.dirname(stdlib_dir),
        "/dev/null",
        "/dev/urandom",
    )
    guard_state = {"active": False}
    _install_guard(guard_state, allowed)

    out = _CappedWriter(out_cap)
    err = _CappedWriter(STDERR_CAP * 4)
    saved = (sys.stdin, sys.stdout, sys.stderr)
    verdict = "completed"
    rv_repr = ""
    excerpt = ""

    def on_alarm(signum, frame):
        raise _SelfTimeout()

    signal.signal(signal.SIGALRM, on_alarm)
    budget = max(0.05, wall - SELF_TIMEOUT_MARGIN_S)

    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    start = time.monotonic()
    try:
        try:
            sys.stdin = io.StringIO(test_input if io_mode == "stdio" else "")
            sys.stdout = out
            sys.stderr = err
            guard_state["active"] = True
            signal.setitimer(signal.ITIMER_REAL, budget)
            compiled = compile(program, "<candidate>", "exec")
            exec(compiled, namespace)
            if io_mode == "call_based":
                fn = namespace.get(fn_name)
                if not callable(fn):
                    raise NameError("function not defined: " + str(fn_name))
                args = json.loads(test_input) if isinstance(test_input, str) else test_input
                if not isinstance(args, list):
                    args = [args]
                rv = fn(*args)
                rv_repr = canonical_value_text(rv)
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
            guard_state["active"] = False
            sys.stdin, sys.stdout, sys.stderr = saved
    except _SelfTimeout:
        verdict = "self_timeout"
    except _OutputOverflow:
        verdict = "output_overflow"
    except SystemExit as exc:
        if exc.code not in (None, 0):
            verdict = "exception"
            excerpt = "SystemExit: " + repr(exc.code)
    except MemoryError:
        verdict = "exception"
        excerpt = "MemoryError"
    except BaseException as exc:
        verdict = "exception"
        excerpt = "".join(traceback.format_exception_only(type(exc), exc))
    elapsed = time.monotonic() - start

    stream_tail = err.value()[-STDERR_CAP:]
    if excerpt:
        excerpt = (stream_tail + "\n" + excerpt) if stream_tail else excerpt
    else:
        excerpt = stream_tail
    return {
        "protocol": PROTOCOL_VERSION,
        "verdict_raw": verdict,
        "stdout": out.value(),
        "return_value_repr": rv_repr,
        "stderr_excerpt": excerpt[-STDERR_CAP:],
        "elapsed_s": elapsed,
    }


def main(argv):
    result_fd = None
    for i, arg in enumerate(argv):
        if arg == "--result-fd" and i + 1 < len(argv):
            result_fd = int(argv[i + 1])
    if result_fd is None:
        sys.stderr.write("usage: runner --result-fd N\n")
        return 2

    # the result channel is opened before any candidate code can run
    result_file = os.fdopen(result_fd, "w", encoding="utf-8")

    try:
        raw = sys.stdin.read()
        request = json.loads(raw)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        if request.get("protocol") != PROTOCOL_VERSION:
            raise ValueError("unsupported protocol version: " + repr(request.get("protocol")))
        if request.get("io_mode") not in ("stdio", "call_based"):
            raise ValueError("bad io_mode")
        if request.get("io_mode") == "call_based" and not request.get("fn_name"):
            raise ValueError("call_based request requires fn_name")
        if not isinstance(request.get("program_source"), str):
            raise ValueError("program_source must be text")
    except (ValueError, KeyError, TypeError) as exc:
        record = _protocol_error("malformed request: " + str(exc))
    else:
        try:
            record = _run(request)
        except BaseException as exc:  # the runner itself must never crash
            record = {
                "protocol": PROTOCOL_VERSION,
                "verdict_raw": "exception",
                "stdout": "",
                "return_value_repr": "",
                "stderr_excerpt": ("runner error: " + repr(exc))[:STDERR_CAP],
                "elapsed_s": 0.0,
            }

    # exactly one result document, as the final act
    result_file.write(json.dumps(record) + "\n")
    result_file.flush()
    result_file.close()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

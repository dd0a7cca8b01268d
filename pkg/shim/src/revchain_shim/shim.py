"""In-sandbox runner: one candidate program, one test case, one result line.

This file is launched as a child process, never imported:

    python -S shim.py --result-fd N

The parent writes a single JSON request document to stdin; this process
executes the candidate under self-imposed limits and writes a single JSON
record line to descriptor N as its final act. The request and record
schemas, the containment rules, and the canonical value rendering are
specified in PROTOCOL.md (protocol version 1); the bundled supervisor-side
double implements the identical contract.

Containment layers applied here (the supervisor stacks its own on top):
- rlimits for address space, file size, and core dumps
- a SIGALRM self-timeout armed below the supervisor's hard kill
- capped stdout/stderr buffers
- an audit hook denying process, socket, and filesystem escape (defeating
  the alarm itself, e.g. by rewiring SIGALRM, is the supervisor kill's job)
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
EXCERPT_CAP = 4096
STDERR_BUFFER_CAP = 4 * EXCERPT_CAP
ALARM_MARGIN_S = 0.3
MIN_BUDGET_S = 0.05

DEFAULT_WALL_S = 10.0
DEFAULT_MEMORY_BYTES = 1 << 30
DEFAULT_OUTPUT_BYTES = 8 << 20


class CandidateTimeout(Exception):
    """Raised by the alarm handler inside candidate code."""


class OutputOverflow(Exception):
    """Raised by a capped stream when the candidate floods it."""


class CappedStream(io.TextIOBase):
    def __init__(self, cap):
        self._parts = []
        self._written = 0
        self._cap = cap

    def writable(self):
        return True

    def write(self, text):
        text = str(text)
        room = self._cap - self._written
        self._written += len(text)
        if self._written > self._cap:
            if room > 0:
                self._parts.append(text[:room])
            raise OutputOverflow()
        self._parts.append(text)
        return len(text)

    def flush(self):
        pass

    def getvalue(self):
        return "".join(self._parts)


# ---------------------------------------------------------------------------
# Canonical rendering of call-based return values (PROTOCOL.md, normative)


def render_canonical(value):
    if value is None or isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        inner = ", ".join(render_canonical(item) for item in value)
        if isinstance(value, tuple):
            return "(" + inner + ",)" if len(value) == 1 else "(" + inner + ")"
        return "[" + inner + "]"
    if isinstance(value, (set, frozenset)):
        if not value:
            return "set()"
        return "{" + ", ".join(sorted(render_canonical(item) for item in value)) + "}"
    if isinstance(value, dict):
        entries = sorted(
            (render_canonical(k), render_canonical(v)) for k, v in value.items()
        )
        return "{" + ", ".join(k + ": " + v for k, v in entries) + "}"
    text = repr(value)
    if " at 0x" in text:
        return "<" + type(value).__name__ + ">"
    return text


# ---------------------------------------------------------------------------
# Escape prevention


DENIED_EXACT = {
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

DENIED_PREFIXES = (
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


def install_audit_guard(state, readable_roots):
    def guard(event, args):
        if not state["armed"]:
            return
        if event == "open":
            path = args[0]
            if isinstance(path, int):
                return
            if isinstance(path, bytes):
                path = path.decode("utf-8", "replace")
            if not isinstance(path, str):
                return
            resolved = os.path.abspath(path)
            for root in readable_roots:
                if resolved.startswith(root):
                    return
            raise RuntimeError("sandbox: file access denied: " + path)
        if event in DENIED_EXACT:
            raise RuntimeError("sandbox: operation denied: " + event)
        for prefix in DENIED_PREFIXES:
            if event.startswith(prefix):
                raise RuntimeError("sandbox: operation denied: " + event)

    sys.addaudithook(guard)


def apply_rlimits(limits):
    try:
        import resource
    except ImportError:
        return
    caps = [
        (resource.RLIMIT_AS, int(limits.get("memory_cap_bytes", DEFAULT_MEMORY_BYTES))),
        (resource.RLIMIT_FSIZE, int(limits.get("output_cap_bytes", DEFAULT_OUTPUT_BYTES))),
        (resource.RLIMIT_CORE, 0),
    ]
    for which, cap in caps:
        try:
            resource.setrlimit(which, (cap, cap))
        except (ValueError, OSError):
            pass


# ---------------------------------------------------------------------------
# Request handling


def validate_request(raw_text):
    """Parse and check the request document; raises on any malformation."""
    request = json.loads(raw_text)
    if not isinstance(request, dict):
        raise ValueError("request must be a JSON object")
    if request.get("protocol") != PROTOCOL_VERSION:
        raise ValueError(
            "unsupported protocol version: " + repr(request.get("protocol"))
        )
    if request.get("io_mode") not in ("stdio", "call_based"):
        raise ValueError("bad io_mode")
    if request.get("io_mode") == "call_based" and not request.get("fn_name"):
        raise ValueError("call_based request requires fn_name")
    if not isinstance(request.get("program_source"), str):
        raise ValueError("program_source must be text")
    return request


def make_record(verdict, stdout="", rv_repr="", excerpt="", elapsed=0.0):
    return {
        "protocol": PROTOCOL_VERSION,
        "verdict_raw": verdict,
        "stdout": stdout,
        "return_value_repr": rv_repr,
        "stderr_excerpt": excerpt[-EXCERPT_CAP:],
        "elapsed_s": elapsed,
    }


def decode_call_args(test_input):
    args = json.loads(test_input) if isinstance(test_input, str) else test_input
    if not isinstance(args, list):
        args = [args]
    return args


def execute(request):
    """Run the candidate and build its execution record."""
    program = request["program_source"]
    io_mode = request["io_mode"]
    fn_name = request.get("fn_name")
    test_input = request.get("test_input", "")
    limits = request.get("limits", {})
    wall = float(limits.get("wall_timeout_s", DEFAULT_WALL_S))
    out_cap = int(limits.get("output_cap_bytes", DEFAULT_OUTPUT_BYTES))

    apply_rlimits(limits)
    sys.setrecursionlimit(RECURSION_LIMIT)

    stdlib_dir = os.path.dirname(os.__file__)
    readable_roots = (
        os.path.abspath(os.getcwd()) + os.sep,
        stdlib_dir,
        os.path.dirname(stdlib_dir),
        "/dev/null",
        "/dev/urandom",
    )
    guard_state = {"armed": False}
    install_audit_guard(guard_state, readable_roots)

    captured_out = CappedStream(out_cap)
    captured_err = CappedStream(STDERR_BUFFER_CAP)
    original_streams = (sys.stdin, sys.stdout, sys.stderr)
    verdict = "completed"
    rv_repr = ""
    failure_text = ""

    def on_alarm(signum, frame):
        raise CandidateTimeout()

    signal.signal(signal.SIGALRM, on_alarm)
    alarm_budget = max(MIN_BUDGET_S, wall - ALARM_MARGIN_S)

    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    started = time.monotonic()
    try:
        try:
            sys.stdin = io.StringIO(test_input if io_mode == "stdio" else "")
            sys.stdout = captured_out
            sys.stderr = captured_err
            guard_state["armed"] = True
            signal.setitimer(signal.ITIMER_REAL, alarm_budget)
            exec(compile(program, "<candidate>", "exec"), namespace)
            if io_mode == "call_based":
                fn = namespace.get(fn_name)
                if not callable(fn):
                    raise NameError("function not defined: " + str(fn_name))
                rv_repr = render_canonical(fn(*decode_call_args(test_input)))
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
            guard_state["armed"] = False
            sys.stdin, sys.stdout, sys.stderr = original_streams
    except CandidateTimeout:
        verdict = "self_timeout"
    except OutputOverflow:
        verdict = "output_overflow"
    except SystemExit as exc:
        if exc.code not in (None, 0):
            verdict = "exception"
            failure_text = "SystemExit: " + repr(exc.code)
    except MemoryError:
        verdict = "exception"
        failure_text = "MemoryError"
    except BaseException as exc:
        verdict = "exception"
        failure_text = "".join(traceback.format_exception_only(type(exc), exc))
    elapsed = time.monotonic() - started

    stream_tail = captured_err.getvalue()[-EXCERPT_CAP:]
    if failure_text:
        excerpt = (stream_tail + "\n" + failure_text) if stream_tail else failure_text
    else:
        excerpt = stream_tail
    return make_record(verdict, captured_out.getvalue(), rv_repr, excerpt, elapsed)


def main(argv):
    result_fd = None
    for i, arg in enumerate(argv):
        if arg == "--result-fd" and i + 1 < len(argv):
            result_fd = int(argv[i + 1])
    if result_fd is None:
        sys.stderr.write("usage: shim --result-fd N\n")
        return 2

    # claim the result channel before any candidate code can interfere
    result_channel = os.fdopen(result_fd, "w", encoding="utf-8")

    try:
        request = validate_request(sys.stdin.read())
    except (ValueError, KeyError, TypeError) as exc:
        # diagnostic messages keep their head when over the cap
        record = make_record(
            "protocol_error", excerpt=("malformed request: " + str(exc))[:EXCERPT_CAP]
        )
    else:
        try:
            record = execute(request)
        except BaseException as exc:  # this process must never crash
            record = make_record(
                "exception", excerpt=("runner error: " + repr(exc))[:EXCERPT_CAP]
            )

    # exactly one result document, as the final act
    result_channel.write(json.dumps(record) + "\n")
    result_channel.flush()
    result_channel.close()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

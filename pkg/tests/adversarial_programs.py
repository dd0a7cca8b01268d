"""Hostile candidate programs used by the sandbox tests.

Each entry maps a label to (program_source, expected_verdict). The expected
verdict is what the supervisor must report; every case must come back as a
controlled verdict, never as a hung test run or a crashed supervisor.
"""

from revchain.execution import (
    VERDICT_RESOURCE,
    VERDICT_RUNTIME_ERROR,
    VERDICT_TIMEOUT,
)

INFINITE_LOOP = (
    "while True:\n    pass\n",
    VERDICT_TIMEOUT,
)

# swallows the self-timeout exception, forcing the supervisor-side kill
EXCEPTION_SWALLOWER = (
    "while True:\n    try:\n        pass\n    except BaseException:\n        pass\n",
    VERDICT_TIMEOUT,
)

# disarms the runner's alarm entirely (no audit event covers signal.signal),
# so only the supervisor-side kill can end it
ALARM_REWIRE = (
    "import signal\n"
    "signal.signal(signal.SIGALRM, signal.SIG_IGN)\n"
    "while True:\n    pass\n",
    VERDICT_TIMEOUT,
)

FORK_STORM = (
    "import os\nwhile True:\n    os.fork()\n",
    VERDICT_RUNTIME_ERROR,
)

STDOUT_FLOOD = (
    'chunk = "x" * 65536\nfor _ in range(1600):\n    print(chunk)\n',  # ~100 MiB
    VERDICT_RESOURCE,
)

DEEP_RECURSION = (
    "def dive(n):\n    return dive(n + 1)\n\nprint(dive(0))\n",
    VERDICT_RUNTIME_ERROR,
)

FILE_PROBE = (
    'with open("/etc/passwd") as fh:\n    print(fh.read()[:20])\n',
    VERDICT_RUNTIME_ERROR,
)

SOCKET_PROBE = (
    "import socket\n"
    "s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)\n"
    's.connect(("127.0.0.1", 9))\n',
    VERDICT_RUNTIME_ERROR,
)

ADVERSARIAL_CASES = {
    "infinite_loop": INFINITE_LOOP,
    "exception_swallower": EXCEPTION_SWALLOWER,
    "alarm_rewire": ALARM_REWIRE,
    "fork_storm": FORK_STORM,
    "stdout_flood": STDOUT_FLOOD,
    "deep_recursion": DEEP_RECURSION,
    "file_probe": FILE_PROBE,
    "socket_probe": SOCKET_PROBE,
}

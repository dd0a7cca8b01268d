"""Standalone runner package for the supervisor/runner execution protocol.

The package exports one thing: the filesystem path of the runner program.
Supervisors launch that file as a child process (``python -S <path>
--result-fd N``) and talk to it over the versioned request/record documents
described in PROTOCOL.md at the repository root. Nothing here imports the
supervisor side; the protocol is the whole interface.
"""

from pathlib import Path

__version__ = "0.1.0"


def shim_path() -> str:
    """Absolute path of the runner program file."""
    return str(Path(__file__).resolve().parent / "shim.py")


__all__ = ["shim_path", "__version__"]

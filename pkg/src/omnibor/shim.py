"""Tool shim: stands in front of a build tool on PATH, runs the real
tool with untouched arguments and stdio, analyzes the step, and appends
records to the raw build logs.

Invoked as ``python -m omnibor.shim <tool> <args...>`` by the tiny
scripts wrap_build installs.  The shim must be invisible: the tool's
exit status is passed through, analysis failures become stderr warnings,
and a shim spawned by another shimmed tool (a compiler driver calling
its linker) steps aside entirely.
"""

from __future__ import annotations

import os
import shutil
import sys
from typing import List, Optional

from .analyze import _run_tool, analyze_command, classify, ToolKind
from .gitoid import HashAlgorithm
from .rawlog import append_record, log_path_for

RAW_LOG_ENV = "OMNIBOR_RAW_LOG"
SHIM_DIR_ENV = "OMNIBOR_SHIM_DIR"
IN_TOOL_ENV = "OMNIBOR_IN_TOOL"

# Written into every shim script; how a shim recognizes its siblings.
SHIM_MARKER = b"omnibor.shim"


def _is_shim(path: str) -> bool:
    try:
        with open(path, "rb") as handle:
            return SHIM_MARKER in handle.read(512)
    except OSError:
        return True  # unreadable candidates are not safe to exec


def find_real_tool(tool: str,
                   env: Optional[dict] = None) -> Optional[str]:
    """First PATH entry holding an executable `tool` that is not one of
    our shims.  The shim directory is excluded outright; any other
    candidate is sniffed for the shim marker so a stray copy cannot
    recurse into itself."""
    environ = os.environ if env is None else env
    shim_dir = environ.get(SHIM_DIR_ENV)
    shim_real = os.path.realpath(shim_dir) if shim_dir else None
    for entry in environ.get("PATH", "").split(os.pathsep):
        if not entry:
            continue
        if shim_real and os.path.realpath(entry) == shim_real:
            continue
        candidate = os.path.join(entry, tool)
        if not (os.path.isfile(candidate)
                and os.access(candidate, os.X_OK)):
            continue
        if _is_shim(candidate):
            continue
        return candidate
    return None


def _normalize_status(returncode: int) -> int:
    if returncode < 0:
        return 128 - returncode  # killed by signal
    return returncode


def main(argv: Optional[List[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        print("omnibor shim: missing tool name", file=sys.stderr)
        return 2
    tool, tool_args = args[0], args[1:]
    full_argv = [tool, *tool_args]
    cwd = os.getcwd()

    real = find_real_tool(tool)
    if real is None:
        print("omnibor shim: %s: command not found" % tool,
              file=sys.stderr)
        return 127

    log_base = os.environ.get(RAW_LOG_ENV)
    if os.environ.get(IN_TOOL_ENV) or not log_base:
        # Inside another shimmed tool, or nobody is collecting: step
        # aside and just run the real thing.
        returncode, _ = _run_tool(full_argv, real, cwd)
        return _normalize_status(returncode)

    child_env = dict(os.environ)
    child_env[IN_TOOL_ENV] = "1"

    stdin_data: Optional[bytes] = None
    if classify(full_argv) == ToolKind.PATCH and \
            not sys.stdin.isatty():
        stdin_data = sys.stdin.buffer.read()

    try:
        outcome = analyze_command(full_argv, cwd, executable=real,
                                  stdin_data=stdin_data, env=child_env)
    except Exception as exc:  # never let analysis break the build
        print("omnibor: analysis failed for %s: %s" % (tool, exc),
              file=sys.stderr)
        returncode, _ = _run_tool(full_argv, real, cwd,
                                  stdin_data=stdin_data, env=child_env)
        return _normalize_status(returncode)

    for warning in outcome.warnings:
        print("omnibor: warning: %s" % warning, file=sys.stderr)

    for record in outcome.records:
        for algorithm in HashAlgorithm:
            try:
                append_record(log_path_for(log_base, algorithm),
                              record, algorithm)
            except OSError as exc:
                print("omnibor: could not write raw log: %s" % exc,
                      file=sys.stderr)
                break
    return _normalize_status(outcome.returncode)


if __name__ == "__main__":
    sys.exit(main())

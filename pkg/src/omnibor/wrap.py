"""Wrap a whole build so every interesting tool invocation is observed.

install_shims writes one tiny script per tool into a directory;
wrap_build puts that directory at the front of PATH and runs the build
command.  No build system cooperation is needed: make, cmake, shell
scripts, anything that finds its tools through PATH gets shimmed.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .analyze import COMPILER_DRIVERS, IN_PLACE_TOOLS, LINKERS
from .gitoid import HashAlgorithm
from .shim import IN_TOOL_ENV, RAW_LOG_ENV, SHIM_DIR_ENV
from .rawlog import log_path_for

DEFAULT_TOOLS = tuple(sorted(
    COMPILER_DRIVERS | LINKERS | IN_PLACE_TOOLS | {"ar", "patch"}))

_SHIM_TEMPLATE = """#!/bin/sh
# omnibor tool shim; runs the real tool via omnibor.shim
exec {python} -m omnibor.shim {tool} "$@"
"""


def install_shims(shim_dir: str,
                  tools: Sequence[str] = DEFAULT_TOOLS,
                  python: Optional[str] = None) -> List[str]:
    """Write an executable shim for each tool name.  Returns the shim
    paths."""
    interpreter = python or sys.executable
    os.makedirs(shim_dir, exist_ok=True)
    written = []
    for tool in tools:
        path = os.path.join(shim_dir, tool)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(_SHIM_TEMPLATE.format(python=interpreter,
                                               tool=tool))
        os.chmod(path, 0o755)
        written.append(path)
    return written


@dataclass
class WrapResult:
    returncode: int
    log_paths: Dict[HashAlgorithm, str]


def wrap_build(command: Sequence[str], log_path: str,
               cwd: Optional[str] = None,
               env: Optional[Dict[str, str]] = None,
               tools: Sequence[str] = DEFAULT_TOOLS,
               shim_dir: Optional[str] = None) -> WrapResult:
    """Run `command` with shims on PATH, collecting raw build logs at
    log_path (and its sha256 twin).  The command's stdio and exit
    status pass through untouched."""
    base_env = dict(os.environ if env is None else env)
    log_abs = os.path.abspath(log_path)
    os.makedirs(os.path.dirname(log_abs) or ".", exist_ok=True)
    log_paths = {}
    for algorithm in HashAlgorithm:
        path = log_path_for(log_abs, algorithm)
        log_paths[algorithm] = path
        open(path, "ab").close()

    own_dir = shim_dir is None
    if own_dir:
        shim_dir = tempfile.mkdtemp(prefix="omnibor-shims-")
    try:
        install_shims(shim_dir, tools)
        base_env["PATH"] = shim_dir + os.pathsep + \
            base_env.get("PATH", os.defpath)
        base_env[SHIM_DIR_ENV] = shim_dir
        base_env[RAW_LOG_ENV] = log_abs
        base_env.pop(IN_TOOL_ENV, None)
        # PYTHONPATH must reach this package even when the build runs
        # from an arbitrary directory.
        package_root = os.path.dirname(os.path.dirname(
            os.path.abspath(__file__)))
        existing = base_env.get("PYTHONPATH")
        base_env["PYTHONPATH"] = package_root + (
            os.pathsep + existing if existing else "")
        proc = subprocess.run(list(command), cwd=cwd, env=base_env)
        return WrapResult(proc.returncode, log_paths)
    finally:
        if own_dir:
            shutil.rmtree(shim_dir, ignore_errors=True)

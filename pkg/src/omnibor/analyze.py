"""Per-tool build step analysis.

Each analyzer runs the real tool with the caller's argv, then works out
which files went in and which came out, hashing every one under both
algorithms.  Knowledge about the tools lives here: compilers reveal
their header closure through injected depfiles, compiler drivers reveal
their effective link line through -###, archivers and in-place
rewriters are handled from their argv alone.
"""

from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .depfile import parse_depfile
from .errors import AnalysisError
from .gitoid import ArtifactId, BOTH_ALGORITHMS, HashAlgorithm, \
    gitoids_of_file
from .rawlog import FileRef, RawBuildRecord


class ToolKind:
    COMPILE = "compile"
    LINK = "link"
    ARCHIVE = "archive"
    IN_PLACE = "in_place"
    PATCH = "patch"
    OTHER = "other"


COMPILER_DRIVERS = {"gcc", "g++", "clang", "clang++", "cc", "c++"}
LINKERS = {"ld", "lld", "ld.lld", "ld.gold", "ld.bfd", "gold"}
IN_PLACE_TOOLS = {"strip", "objcopy", "ranlib"}

# Driver flags that stop the pipeline before the link step.
_NO_LINK_FLAGS = {"-c", "-S", "-E"}
# Dependency-generation flags that replace compilation with a make rule
# on stdout.
_DEPS_ONLY_FLAGS = {"-M", "-MM"}
# Driver flags whose value is the following argument.  Needed so a flag
# value that happens to name an existing file is not taken for an input.
_DRIVER_VALUE_FLAGS = {
    "-o", "-x", "-I", "-isystem", "-iquote", "-idirafter", "-include",
    "-imacros", "-D", "-U", "-MF", "-MT", "-MQ", "-Xlinker",
    "-Xassembler", "-Xpreprocessor", "-T", "-e", "-u", "-z", "--param",
    "-aux-info", "-arch", "-target", "-L", "-specs", "-B",
}
_SOURCE_SUFFIXES = {
    ".c", ".i", ".ii", ".cc", ".cp", ".cxx", ".cpp", ".c++", ".C",
    ".m", ".mi", ".mm", ".M", ".s", ".S", ".sx",
}
_ASM_SUFFIXES = {".s", ".S", ".sx"}

# Linker flags whose value is the following argument.
_LINKER_VALUE_FLAGS = {
    "-o", "-m", "-e", "--entry", "-z", "-T", "--script", "-soname",
    "-h", "-rpath", "-R", "-rpath-link", "-dynamic-linker",
    "--dynamic-linker", "-plugin", "-plugin-opt", "-u", "-y", "-Y",
    "-A", "-b", "-f", "-F", "-G", "-Map", "--version-script",
    "--hash-style", "-O", "--build-id", "-L", "-l",
}


@dataclass
class AnalysisOutcome:
    """What running one build step produced."""

    returncode: int
    records: List[RawBuildRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def classify(argv: Sequence[str]) -> str:
    """Tool kind from argv[0]'s basename, plus the driver flags that
    decide compile versus link."""
    if not argv:
        return ToolKind.OTHER
    base = os.path.basename(argv[0])
    if base in COMPILER_DRIVERS:
        stops_link = any(a in _NO_LINK_FLAGS or a in _DEPS_ONLY_FLAGS
                         for a in argv[1:])
        return ToolKind.COMPILE if stops_link else ToolKind.LINK
    if base in LINKERS:
        return ToolKind.LINK
    if base == "ar":
        return ToolKind.ARCHIVE
    if base in IN_PLACE_TOOLS:
        return ToolKind.IN_PLACE
    if base == "patch":
        return ToolKind.PATCH
    return ToolKind.OTHER


def expand_response_files(argv: Sequence[str], cwd: str) -> List[str]:
    """Inline @file arguments the way binutils tools do."""
    expanded: List[str] = []
    for arg in argv:
        if arg.startswith("@"):
            path = os.path.join(cwd, arg[1:])
            if os.path.isfile(path):
                with open(path, "r", encoding="utf-8",
                          errors="surrogateescape") as handle:
                    expanded.extend(shlex.split(handle.read()))
                continue
        expanded.append(arg)
    return expanded


_INCBIN_RE = re.compile(r'\.incbin\s+"([^"]+)"')
_BLOCK_COMMENT_RE = re.compile(r"/\*.*?\*/", re.S)


def scan_incbin(source_text: str, base_dir: str,
                include_dirs: Sequence[str] = ()) -> List[str]:
    """Paths pulled in by .incbin directives in an assembly source.
    Commented-out directives do not count; a directive whose file
    cannot be found is an error, since the build would embed it."""
    stripped = _BLOCK_COMMENT_RE.sub("", source_text)
    found: List[str] = []
    for line in stripped.splitlines():
        for marker in ("#", "//", ";"):
            cut = line.find(marker)
            if cut != -1:
                line = line[:cut]
        for match in _INCBIN_RE.finditer(line):
            rel = match.group(1)
            for directory in (base_dir, *include_dirs):
                candidate = os.path.normpath(os.path.join(directory, rel))
                if os.path.isfile(candidate):
                    found.append(candidate)
                    break
            else:
                raise AnalysisError(
                    ".incbin file not found: %s" % rel)
    return found


def _run_tool(argv: Sequence[str], executable: Optional[str], cwd: str,
              stdin_data: Optional[bytes] = None,
              env: Optional[Dict[str, str]] = None) -> Tuple[int, int]:
    """Run the real tool with inherited stdio.  Returns (returncode,
    pid of the tool process)."""
    command = [executable or argv[0], *argv[1:]]
    stdin = subprocess.PIPE if stdin_data is not None else None
    proc = subprocess.Popen(command, cwd=cwd, stdin=stdin, env=env)
    if stdin_data is not None:
        proc.communicate(stdin_data)
    else:
        proc.wait()
    return proc.returncode, proc.pid


def _file_ref(path: str) -> FileRef:
    # one spelling per file: search-path arithmetic like a/b/../c must
    # not make the same input look like two
    path = os.path.normpath(path)
    return FileRef(path, gitoids_of_file(path, BOTH_ALGORITHMS))


def _ref_existing(paths: Iterable[str],
                  warnings: List[str]) -> List[FileRef]:
    refs = []
    seen: Set[str] = set()
    for path in paths:
        path = os.path.normpath(path)
        if path in seen:
            continue
        seen.add(path)
        if not os.path.isfile(path):
            warnings.append("skipping vanished input %s" % path)
            continue
        refs.append(_file_ref(path))
    return refs


def _command_string(argv: Sequence[str]) -> str:
    return " ".join(argv)


# ---------------------------------------------------------------------------
# Compile steps


def _split_driver_args(argv: Sequence[str], cwd: str):
    """Partition driver argv into (flag tokens, positional input paths,
    -o value).  Positionals are returned as given, not absolutized."""
    flags: List[str] = []
    inputs: List[str] = []
    output: Optional[str] = None
    args = list(argv[1:])
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "-o":
            if i + 1 < len(args):
                output = args[i + 1]
            i += 2
            continue
        if arg in _DRIVER_VALUE_FLAGS:
            flags.extend(args[i:i + 2])
            i += 2
            continue
        if arg.startswith("-") and arg != "-":
            flags.append(arg)
            i += 1
            continue
        inputs.append(arg)
        i += 1
    return flags, inputs, output


def _default_compile_output(source: str, mode: str) -> Optional[str]:
    stem = os.path.splitext(os.path.basename(source))[0]
    if mode == "-c":
        return stem + ".o"
    if mode == "-S":
        return stem + ".s"
    return None  # -E writes to stdout


def _strip_dep_flags(flags: Sequence[str]) -> List[str]:
    """Drop dependency-output flags so a separate -M pass can use its
    own depfile."""
    out: List[str] = []
    skip_next = False
    for flag in flags:
        if skip_next:
            skip_next = False
            continue
        if flag in ("-MF", "-MT", "-MQ"):
            skip_next = True
            continue
        if flag in ("-M", "-MM", "-MD", "-MMD", "-MP", "-MG"):
            continue
        out.append(flag)
    return out


def compile_dependency_pass(argv: Sequence[str], cwd: str,
                            executable: Optional[str] = None,
                            env: Optional[Dict[str, str]] = None
                            ) -> Dict[str, List[str]]:
    """Run the compiler once per source in dependency-only mode and
    return {source: [absolute prerequisite paths]}.  Used to rebuild
    the full header closure when the original compile did not leave a
    usable depfile behind."""
    flags, inputs, _ = _split_driver_args(argv, cwd)
    flags = _strip_dep_flags(
        [f for f in flags if f not in _NO_LINK_FLAGS])
    sources = [p for p in inputs
               if os.path.splitext(p)[1] in _SOURCE_SUFFIXES]
    tool = executable or shutil.which(argv[0]) or argv[0]
    result: Dict[str, List[str]] = {}
    for source in sources:
        fd, dep_path = tempfile.mkstemp(suffix=".d")
        os.close(fd)
        try:
            proc = subprocess.run(
                [tool, *flags, "-M", "-MF", dep_path, source],
                cwd=cwd, env=env, stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL)
            if proc.returncode != 0:
                raise AnalysisError(
                    "dependency pass failed for %s (exit %d)"
                    % (source, proc.returncode))
            with open(dep_path, "r", encoding="utf-8",
                      errors="surrogateescape") as handle:
                deps = parse_depfile(handle.read())
        finally:
            os.unlink(dep_path)
        result[source] = [os.path.normpath(os.path.join(cwd, d))
                          for d in deps]
    return result


def analyze_compile(argv: Sequence[str], cwd: str,
                    executable: Optional[str] = None,
                    env: Optional[Dict[str, str]] = None
                    ) -> AnalysisOutcome:
    """Run a compile step (-c/-S/-E) and record one build step per
    source file, with the preprocessor's own view of the header
    closure as the inputs."""
    argv = expand_response_files(argv, cwd)
    warnings: List[str] = []
    flags, inputs, output = _split_driver_args(argv, cwd)
    mode = next((f for f in ("-c", "-S", "-E") if f in flags), None)
    deps_only = any(f in _DEPS_ONLY_FLAGS for f in flags)
    sources = [p for p in inputs
               if os.path.splitext(p)[1] in _SOURCE_SUFFIXES
               or os.path.isfile(os.path.join(cwd, p))]

    user_controls_deps = any(
        f in ("-M", "-MM", "-MD", "-MMD", "-MF") for f in flags)
    injected_dep: Optional[str] = None
    run_argv = list(argv)
    if (not user_controls_deps and not deps_only and mode in ("-c", "-S")
            and len(sources) == 1
            and os.path.splitext(sources[0])[1] not in _ASM_SUFFIXES):
        fd, injected_dep = tempfile.mkstemp(suffix=".d")
        os.close(fd)
        run_argv += ["-MD", "-MF", injected_dep]

    returncode, pid = _run_tool(run_argv, executable, cwd, env=env)
    try:
        if returncode != 0 or deps_only or mode == "-E" and output is None:
            return AnalysisOutcome(returncode, [], warnings)

        mf_value = None
        for i, flag in enumerate(argv):
            if flag == "-MF" and i + 1 < len(argv):
                mf_value = argv[i + 1]
        if "-MMD" in flags or "-MD" in flags:
            if mf_value is None:
                warnings.append(
                    "using compiler-named depfiles left by %s"
                    % ("-MMD" if "-MMD" in flags else "-MD"))
            if "-MMD" in flags:
                warnings.append(
                    "-MMD omits system headers; inputs may be "
                    "incomplete (re-run post-processing with a full "
                    "dependency pass to recover them)")

        dep_map: Dict[str, List[str]] = {}
        if injected_dep is not None:
            with open(injected_dep, "r", encoding="utf-8",
                      errors="surrogateescape") as handle:
                dep_map[sources[0]] = parse_depfile(handle.read())
        elif mf_value is not None and len(sources) == 1:
            mf_abs = os.path.join(cwd, mf_value)
            if os.path.isfile(mf_abs):
                with open(mf_abs, "r", encoding="utf-8",
                          errors="surrogateescape") as handle:
                    dep_map[sources[0]] = parse_depfile(handle.read())
        else:
            for source in sources:
                named = None
                if "-MD" in flags or "-MMD" in flags:
                    base = (os.path.splitext(output)[0] if output and mode
                            else os.path.splitext(
                                os.path.basename(source))[0])
                    candidate = os.path.join(cwd, base + ".d")
                    if os.path.isfile(candidate):
                        named = candidate
                if named is not None:
                    with open(named, "r", encoding="utf-8",
                              errors="surrogateescape") as handle:
                        dep_map[source] = parse_depfile(handle.read())
        missing = [s for s in sources if s not in dep_map]
        if missing:
            try:
                dep_map.update(compile_dependency_pass(
                    argv, cwd, executable, env))
            except AnalysisError as exc:
                warnings.append(str(exc))
                for source in missing:
                    dep_map.setdefault(source, [source])

        records = []
        for source in sources:
            out_name = output if output is not None else \
                _default_compile_output(source, mode or "-c")
            if out_name is None:
                continue
            out_path = os.path.normpath(os.path.join(cwd, out_name))
            if not os.path.isfile(out_path):
                warnings.append("expected output %s missing" % out_path)
                continue
            dep_paths = [os.path.normpath(os.path.join(cwd, d))
                         for d in dep_map.get(source, [source])]
            source_abs = os.path.normpath(os.path.join(cwd, source))
            if source_abs not in dep_paths:
                dep_paths.insert(0, source_abs)
            if os.path.splitext(source)[1] in _ASM_SUFFIXES:
                try:
                    with open(source_abs, "r", encoding="utf-8",
                              errors="surrogateescape") as handle:
                        dep_paths += scan_incbin(
                            handle.read(), os.path.dirname(source_abs))
                except AnalysisError as exc:
                    # The assembler already succeeded; an unlocatable
                    # .incbin is a gap in the record, not a build error.
                    warnings.append(str(exc))
            records.append(RawBuildRecord(
                pid=pid, build_cmd=_command_string(argv),
                outfile=_file_ref(out_path),
                infiles=tuple(_ref_existing(dep_paths, warnings))))
        return AnalysisOutcome(returncode, records, warnings)
    finally:
        if injected_dep is not None and os.path.exists(injected_dep):
            os.unlink(injected_dep)


# ---------------------------------------------------------------------------
# Link steps


_DEFAULT_LIB_DIRS = (
    "/usr/lib/x86_64-linux-gnu", "/usr/lib64", "/usr/lib",
    "/lib/x86_64-linux-gnu", "/lib64", "/lib",
)


def _resolve_lib(name: str, search_dirs: Sequence[str],
                 static_only: bool) -> str:
    """ld's -l search: each directory in order, shared before static
    unless static linking is in force.  -l:name asks for that exact
    file name."""
    if name.startswith(":"):
        candidates = [name[1:]]
    elif static_only:
        candidates = ["lib%s.a" % name]
    else:
        candidates = ["lib%s.so" % name, "lib%s.a" % name]
    for directory in search_dirs:
        for candidate in candidates:
            path = os.path.join(directory, candidate)
            if os.path.isfile(path):
                return path
    raise AnalysisError("cannot resolve -l%s in %s"
                        % (name, list(search_dirs)))


def _parse_linker_tokens(tokens: Sequence[str], cwd: str,
                         warnings: List[str]):
    """Walk a linker command line collecting inputs, dynamic library
    inputs, and the output path."""
    search_dirs: List[str] = []
    args = list(tokens)
    i = 0
    # -L directories apply to every -l regardless of position, so
    # collect them before resolving anything.
    while i < len(args):
        arg = args[i]
        if arg == "-L" and i + 1 < len(args):
            search_dirs.append(os.path.join(cwd, args[i + 1]))
            i += 2
            continue
        if arg.startswith("-L") and len(arg) > 2:
            search_dirs.append(os.path.join(cwd, arg[2:]))
        i += 1
    search_dirs += [d for d in _DEFAULT_LIB_DIRS if os.path.isdir(d)]

    infiles: List[str] = []
    dynlibs: List[str] = []
    output: Optional[str] = None
    static_only = False
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "-o":
            if i + 1 < len(args):
                output = args[i + 1]
            i += 2
            continue
        if arg in ("-static", "-Bstatic", "-dn", "-non_shared"):
            static_only = True
            i += 1
            continue
        if arg in ("-Bdynamic", "-dy", "-call_shared"):
            static_only = False
            i += 1
            continue
        if arg == "-l" and i + 1 < len(args):
            arg = "-l" + args[i + 1]
            i += 1
        if arg.startswith("-l") and len(arg) > 2:
            try:
                resolved = _resolve_lib(arg[2:], search_dirs, static_only)
            except AnalysisError:
                if arg[2:] in ("gcc", "gcc_s") and not static_only:
                    # Driver-internal support libs may live outside the
                    # stated search path; the driver knows, we warn.
                    warnings.append("could not resolve %s" % arg)
                    i += 1
                    continue
                raise
            if resolved.endswith(".a"):
                infiles.append(resolved)
            else:
                dynlibs.append(resolved)
            i += 1
            continue
        if arg in _LINKER_VALUE_FLAGS:
            i += 2
            continue
        if arg.startswith("-") and arg != "-":
            i += 1
            continue
        path = os.path.normpath(os.path.join(cwd, arg))
        if ".so" in os.path.basename(path):
            dynlibs.append(path)
        else:
            infiles.append(path)
        i += 1
    return infiles, dynlibs, output


_EFFECTIVE_LINKER_NAMES = LINKERS | {"collect2"}


def _driver_link_line(argv: Sequence[str], cwd: str,
                      executable: Optional[str],
                      env: Optional[Dict[str, str]]
                      ) -> Optional[List[str]]:
    """Ask the driver for its effective link line via -###.  Returns
    the tokenized linker invocation, or None if none was printed."""
    tool = executable or shutil.which(argv[0]) or argv[0]
    proc = subprocess.run([tool, "-###", *argv[1:]], cwd=cwd, env=env,
                          stdout=subprocess.DEVNULL,
                          stderr=subprocess.PIPE)
    text = proc.stderr.decode("utf-8", errors="surrogateescape")
    effective: Optional[List[str]] = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("#", "Using ", "COLLECT_",
                                        "Target:", "Thread model",
                                        "InstalledDir", "Configured",
                                        "OFFLOAD", "Supported",
                                        "gcc version", "clang version")):
            continue
        try:
            tokens = shlex.split(line)
        except ValueError:
            continue
        if tokens and os.path.basename(tokens[0]).split("-")[-1] in \
                _EFFECTIVE_LINKER_NAMES:
            effective = tokens
    return effective


def analyze_link(argv: Sequence[str], cwd: str,
                 executable: Optional[str] = None,
                 env: Optional[Dict[str, str]] = None) -> AnalysisOutcome:
    """Run a link step and record the produced binary with every object
    and archive that went into it; dynamic libraries are noted
    separately since their bytes are not in the output."""
    argv = expand_response_files(argv, cwd)
    warnings: List[str] = []
    returncode, pid = _run_tool(argv, executable, cwd, env=env)
    if returncode != 0:
        return AnalysisOutcome(returncode, [], warnings)

    base = os.path.basename(argv[0])
    infiles: List[str] = []
    dynlibs: List[str] = []
    output: Optional[str] = None
    if base in COMPILER_DRIVERS:
        _, user_inputs, output = _split_driver_args(argv, cwd)
        for path in user_inputs:
            abs_path = os.path.normpath(os.path.join(cwd, path))
            if ".so" in os.path.basename(abs_path):
                dynlibs.append(abs_path)
            else:
                infiles.append(abs_path)
        tokens = _driver_link_line(argv, cwd, executable, env)
        if tokens is None:
            warnings.append(
                "driver did not reveal a link line; recording only the "
                "command's own inputs")
        else:
            try:
                more_in, more_dyn, eff_out = _parse_linker_tokens(
                    tokens[1:], cwd, warnings)
            except AnalysisError as exc:
                # The link already succeeded; record what the driver
                # argv alone shows rather than fail the build step.
                warnings.append("link analysis incomplete: %s" % exc)
            else:
                # The driver compiles bare sources into temporary
                # objects and deletes them before we look; the sources
                # themselves are already recorded, so vanished temps
                # are dropped without comment.
                infiles += [p for p in more_in if os.path.isfile(p)]
                dynlibs += [p for p in more_dyn if os.path.isfile(p)]
                if output is None:
                    output = eff_out
    else:
        try:
            infiles, dynlibs, output = _parse_linker_tokens(
                argv[1:], cwd, warnings)
        except AnalysisError as exc:
            warnings.append("link analysis incomplete: %s" % exc)
            return AnalysisOutcome(returncode, [], warnings)

    out_path = os.path.normpath(os.path.join(cwd, output or "a.out"))
    if not os.path.isfile(out_path):
        warnings.append("expected link output %s missing" % out_path)
        return AnalysisOutcome(returncode, [], warnings)
    # Sources handed straight to the driver were compiled into temps the
    # driver already deleted; their surviving trace is the source file
    # itself, which is in user_inputs and therefore in infiles.
    record = RawBuildRecord(
        pid=pid, build_cmd=_command_string(argv),
        outfile=_file_ref(out_path),
        infiles=tuple(_ref_existing(
            [p for p in infiles if p != out_path], warnings)),
        dynlibs=tuple(_ref_existing(dynlibs, warnings)))
    return AnalysisOutcome(returncode, [record], warnings)


# ---------------------------------------------------------------------------
# Archive steps


def analyze_archive(argv: Sequence[str], cwd: str,
                    executable: Optional[str] = None,
                    env: Optional[Dict[str, str]] = None
                    ) -> AnalysisOutcome:
    """ar: record creation/update operations (c, r, q); listing and
    extraction (t, x, p) and deletions produce no record."""
    argv = expand_response_files(argv, cwd)
    warnings: List[str] = []
    returncode, pid = _run_tool(argv, executable, cwd, env=env)
    if returncode != 0:
        return AnalysisOutcome(returncode, [], warnings)
    args = list(argv[1:])
    if not args:
        return AnalysisOutcome(returncode, [], warnings)
    ops = args[0].lstrip("-")
    positionals = [a for a in args[1:] if not a.startswith("-")]
    creates = bool(set(ops) & set("cqr"))
    reads_or_deletes = bool(set(ops) & set("txpd"))
    if not creates or reads_or_deletes or not positionals:
        return AnalysisOutcome(returncode, [], warnings)
    archive = os.path.normpath(os.path.join(cwd, positionals[0]))
    members = [os.path.normpath(os.path.join(cwd, m))
               for m in positionals[1:]]
    if not os.path.isfile(archive):
        warnings.append("archive %s missing after ar" % archive)
        return AnalysisOutcome(returncode, [], warnings)
    record = RawBuildRecord(
        pid=pid, build_cmd=_command_string(argv),
        outfile=_file_ref(archive),
        infiles=tuple(_ref_existing(members, warnings)))
    return AnalysisOutcome(returncode, [record], warnings)


# ---------------------------------------------------------------------------
# In-place rewriters (strip, objcopy, ranlib)


_OBJCOPY_VALUE_FLAGS = {
    "-O", "-I", "-B", "-F", "-j", "-R", "-N", "-K", "-G", "-L", "-W",
    "-o", "--target", "--input-target", "--output-target",
    "--add-section", "--update-section", "--dump-section",
    "--set-section-flags", "--rename-section", "--redefine-sym",
    "--only-section", "--remove-section", "--strip-symbol",
    "--keep-symbol", "--add-symbol", "--set-start",
    "--adjust-vma", "--change-addresses", "--adjust-section-vma",
    "--change-section-address", "--change-section-lma",
    "--change-section-vma", "--gap-fill", "--pad-to", "--heap",
    "--stack", "--subsystem",
}


def analyze_in_place(argv: Sequence[str], cwd: str,
                     executable: Optional[str] = None,
                     env: Optional[Dict[str, str]] = None
                     ) -> AnalysisOutcome:
    """Tools that rewrite files where they stand.  Targets are hashed
    before the run; a record is emitted per target whose bytes
    changed, old id as the input and new id as the output."""
    argv = expand_response_files(argv, cwd)
    warnings: List[str] = []
    args = list(argv[1:])
    targets: List[str] = []
    explicit_out: Optional[str] = None
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "-o":
            if i + 1 < len(args):
                explicit_out = args[i + 1]
            i += 2
            continue
        if "=" not in arg and arg in _OBJCOPY_VALUE_FLAGS:
            i += 2
            continue
        if arg.startswith("-") and arg != "-":
            i += 1
            continue
        targets.append(os.path.normpath(os.path.join(cwd, arg)))
        i += 1

    base = os.path.basename(argv[0])
    copy_out: Optional[str] = None
    if base == "objcopy" and len(targets) == 2:
        copy_out = targets[1]
        targets = targets[:1]
    elif explicit_out is not None:
        copy_out = os.path.normpath(os.path.join(cwd, explicit_out))

    before: Dict[str, Optional[Dict[HashAlgorithm, ArtifactId]]] = {}
    for target in targets:
        before[target] = gitoids_of_file(target, BOTH_ALGORITHMS) \
            if os.path.isfile(target) else None

    returncode, pid = _run_tool(argv, executable, cwd, env=env)
    if returncode != 0:
        return AnalysisOutcome(returncode, [], warnings)

    records: List[RawBuildRecord] = []
    command = _command_string(argv)
    if copy_out is not None:
        # Distinct input and output paths: an ordinary produce step.
        if os.path.isfile(copy_out) and targets and \
                os.path.isfile(targets[0]):
            records.append(RawBuildRecord(
                pid=pid, build_cmd=command,
                outfile=_file_ref(copy_out),
                infiles=(_file_ref(targets[0]),)))
        return AnalysisOutcome(returncode, records, warnings)

    for target in targets:
        old_ids = before.get(target)
        if old_ids is None or not os.path.isfile(target):
            continue
        new_ref = _file_ref(target)
        if new_ref.ids[HashAlgorithm.SHA1] == old_ids[HashAlgorithm.SHA1]:
            continue  # bytes unchanged, nothing happened
        records.append(RawBuildRecord(
            pid=pid, build_cmd=command, outfile=new_ref,
            infiles=(FileRef(target, old_ids),)))
    return AnalysisOutcome(returncode, records, warnings)


# ---------------------------------------------------------------------------
# Patch steps


_PATCH_OLD_RE = re.compile(r"^--- (\S+)")
_PATCH_NEW_RE = re.compile(r"^\+\+\+ (\S+)")


def _strip_components(path: str, level: Optional[int]) -> str:
    path = path.split("\t")[0]
    if level is None:
        return os.path.basename(path)
    parts = [p for p in path.split("/") if p not in ("", ".")]
    if level == 0:
        return path
    return "/".join(parts[level:]) if len(parts) > level else parts[-1]


def patch_targets(patch_text: str, strip_level: Optional[int],
                  reverse: bool = False) -> List[Tuple[str, str]]:
    """(old, new) path pairs named by a unified diff, after -p strip.
    /dev/null marks creation or deletion."""
    pairs: List[Tuple[str, str]] = []
    lines = patch_text.splitlines()
    for i, line in enumerate(lines):
        old_match = _PATCH_OLD_RE.match(line)
        if not old_match or i + 1 >= len(lines):
            continue
        new_match = _PATCH_NEW_RE.match(lines[i + 1])
        if not new_match:
            continue
        old_raw, new_raw = old_match.group(1), new_match.group(1)
        if reverse:
            old_raw, new_raw = new_raw, old_raw
        old = old_raw if old_raw == "/dev/null" else \
            _strip_components(old_raw, strip_level)
        new = new_raw if new_raw == "/dev/null" else \
            _strip_components(new_raw, strip_level)
        pairs.append((old, new))
    return pairs


def analyze_patch(argv: Sequence[str], cwd: str,
                  executable: Optional[str] = None,
                  stdin_data: Optional[bytes] = None,
                  env: Optional[Dict[str, str]] = None
                  ) -> AnalysisOutcome:
    """patch rewrites source files in place.  The patch file itself is
    an input alongside the old file bytes; targets the run left
    unchanged (failed hunks) are suppressed."""
    argv = expand_response_files(argv, cwd)
    warnings: List[str] = []
    args = list(argv[1:])
    strip_level: Optional[int] = None
    patch_input: Optional[str] = None
    directory: Optional[str] = None
    reverse = False
    positionals: List[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        if arg.startswith("-p") and len(arg) > 2 and arg[2:].isdigit():
            strip_level = int(arg[2:])
        elif arg == "-p" and i + 1 < len(args):
            strip_level = int(args[i + 1])
            i += 1
        elif arg.startswith("--strip="):
            strip_level = int(arg.split("=", 1)[1])
        elif arg == "-i" and i + 1 < len(args):
            patch_input = args[i + 1]
            i += 1
        elif arg.startswith("--input="):
            patch_input = arg.split("=", 1)[1]
        elif arg == "-d" and i + 1 < len(args):
            directory = args[i + 1]
            i += 1
        elif arg.startswith("--directory="):
            directory = arg.split("=", 1)[1]
        elif arg in ("-R", "--reverse"):
            reverse = True
        elif arg in ("-o", "--output"):
            i += 1  # output redirection: fall back to no-record run
        elif not arg.startswith("-"):
            positionals.append(arg)
        i += 1

    work_dir = os.path.normpath(os.path.join(cwd, directory)) \
        if directory else cwd

    saved_stream: Optional[str] = None
    if patch_input is None and len(positionals) >= 2:
        patch_input = positionals[1]
    if patch_input is not None:
        patch_path = os.path.normpath(os.path.join(cwd, patch_input))
    elif stdin_data is not None:
        fd, saved_stream = tempfile.mkstemp(suffix=".patch")
        with os.fdopen(fd, "wb") as handle:
            handle.write(stdin_data)
        patch_path = saved_stream
    else:
        returncode, _ = _run_tool(argv, executable, cwd, env=env)
        warnings.append("patch input not visible; step not recorded")
        return AnalysisOutcome(returncode, [], warnings)

    try:
        if not os.path.isfile(patch_path):
            raise AnalysisError("patch file not found: %s" % patch_path)
        with open(patch_path, "r", encoding="utf-8",
                  errors="surrogateescape") as handle:
            pairs = patch_targets(handle.read(), strip_level, reverse)

        if positionals:
            targets = [os.path.normpath(os.path.join(work_dir,
                                                     positionals[0]))]
        else:
            targets = []
            for old, new in pairs:
                name = old if old != "/dev/null" else new
                if name == "/dev/null":
                    continue
                targets.append(os.path.normpath(os.path.join(work_dir,
                                                             name)))
        targets = list(dict.fromkeys(targets))

        before: Dict[str, Optional[Dict[HashAlgorithm, ArtifactId]]] = {}
        for target in targets:
            before[target] = gitoids_of_file(target, BOTH_ALGORITHMS) \
                if os.path.isfile(target) else None
        patch_ref = _file_ref(patch_path)

        returncode, pid = _run_tool(argv, executable, cwd,
                                    stdin_data=stdin_data, env=env)
        records: List[RawBuildRecord] = []
        command = _command_string(argv)
        for target in targets:
            if not os.path.isfile(target):
                continue
            new_ref = _file_ref(target)
            old_ids = before.get(target)
            if old_ids is not None and \
                    new_ref.ids[HashAlgorithm.SHA1] == \
                    old_ids[HashAlgorithm.SHA1]:
                if returncode != 0:
                    warnings.append(
                        "%s unchanged (some hunks failed?)" % target)
                continue
            infiles: List[FileRef] = []
            if old_ids is not None:
                infiles.append(FileRef(target, old_ids))
            infiles.append(patch_ref)
            records.append(RawBuildRecord(
                pid=pid, build_cmd=command, outfile=new_ref,
                infiles=tuple(infiles)))
        return AnalysisOutcome(returncode, records, warnings)
    finally:
        if saved_stream is not None and os.path.exists(saved_stream):
            os.unlink(saved_stream)


# ---------------------------------------------------------------------------


def analyze_command(argv: Sequence[str], cwd: str,
                    executable: Optional[str] = None,
                    stdin_data: Optional[bytes] = None,
                    env: Optional[Dict[str, str]] = None
                    ) -> AnalysisOutcome:
    """Dispatch one observed command to its analyzer; unknown tools are
    run untouched and unrecorded."""
    kind = classify(argv)
    if kind == ToolKind.COMPILE:
        return analyze_compile(argv, cwd, executable, env)
    if kind == ToolKind.LINK:
        return analyze_link(argv, cwd, executable, env)
    if kind == ToolKind.ARCHIVE:
        return analyze_archive(argv, cwd, executable, env)
    if kind == ToolKind.IN_PLACE:
        return analyze_in_place(argv, cwd, executable, env)
    if kind == ToolKind.PATCH:
        return analyze_patch(argv, cwd, executable, stdin_data, env)
    returncode, _ = _run_tool(argv, executable, cwd,
                              stdin_data=stdin_data, env=env)
    return AnalysisOutcome(returncode, [], [])

"""Make-rule dependency file parsing (compiler -MD/-MF output).

A depfile is one or more make rules: targets, a colon, prerequisites,
with backslash-newline continuations and backslash-escaped spaces.
Compilers also emit phony no-prerequisite rules (-MP); those contribute
nothing.  The parser returns prerequisite paths in order of first
appearance.
"""

from __future__ import annotations

from typing import List


def _unescape_tokens(text: str) -> List[str]:
    tokens: List[str] = []
    current: List[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text) and text[i + 1] in " \t\\#":
            current.append(text[i + 1])
            i += 2
            continue
        if ch == "$" and i + 1 < len(text) and text[i + 1] == "$":
            current.append("$")
            i += 2
            continue
        if ch in " \t":
            if current:
                tokens.append("".join(current))
                current = []
            i += 1
            continue
        current.append(ch)
        i += 1
    if current:
        tokens.append("".join(current))
    return tokens


def parse_depfile(text: str) -> List[str]:
    """Prerequisite paths from every rule in the depfile, deduplicated,
    in first-appearance order."""
    joined = text.replace("\\\r\n", " ").replace("\\\n", " ")
    seen = {}
    for line in joined.splitlines():
        line = line.strip()
        if not line:
            continue
        colon = line.find(":")
        if colon == -1:
            continue
        for token in _unescape_tokens(line[colon + 1:]):
            seen.setdefault(token, None)
    return list(seen)

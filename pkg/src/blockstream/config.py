"""Plain-text key=value config files.

Lines are ``key = value``; ``#`` starts a comment; blank lines are
ignored.  Repeated keys accumulate into a list (used for experiment
rows).
"""

from __future__ import annotations

from .errors import ParseError


def parse_config(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ParseError(f"config line {lineno}: empty key")
        if key in out:
            if not isinstance(out[key], list):
                out[key] = [out[key]]
            out[key].append(value)
        else:
            out[key] = value
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def as_list(value):
    if value is None:
        return []
    return value if isinstance(value, list) else [value]

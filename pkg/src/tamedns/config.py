"""Flat ``key = value`` text format used for coefficient blocks and experiment specs.

Grammar (one entry per line, ``#`` starts a comment)::

    line   := key "=" value
    key    := [A-Za-z_][A-Za-z0-9_]*
    value  := number | bool | string | list
    number := decimal int | decimal float | "inf" | "-inf" | "nan" | hex float (0x1.8p+1)
    bool   := "true" | "false"
    string := '"' chars '"' | bare word ([A-Za-z_][A-Za-z0-9_.\\-/]*)
    list   := "[" [value ("," value)*] "]"

Floats are written with ``repr`` (shortest round-trip form), so dumping and
re-parsing is lossless.
"""

from __future__ import annotations

import math
import re

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_BARE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-/]*")
_NUM = re.compile(r"[+-]?(0[xX][0-9a-fA-F.]+[pP][+-]?\d+|inf|nan|(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)")


class ConfigError(ValueError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


def _parse_value(text: str, pos: int = 0):
    n = len(text)
    while pos < n and text[pos].isspace():
        pos += 1
    if pos >= n:
        raise ValueError("missing value")
    ch = text[pos]
    if ch == "[":
        items = []
        pos += 1
        while True:
            while pos < n and text[pos].isspace():
                pos += 1
            if pos < n and text[pos] == "]":
                return items, pos + 1
            item, pos = _parse_value(text, pos)
            items.append(item)
            while pos < n and text[pos].isspace():
                pos += 1
            if pos < n and text[pos] == ",":
                pos += 1
            elif pos < n and text[pos] == "]":
                return items, pos + 1
            else:
                raise ValueError(f"expected ',' or ']' at column {pos + 1}")
    if ch == '"':
        end = text.find('"', pos + 1)
        if end < 0:
            raise ValueError("unterminated string")
        return text[pos + 1:end], end + 1
    m = _NUM.match(text, pos)
    if m and m.group(0):
        tok = m.group(0)
        # a bare word starting with "inf"/"nan" such as "info" is a string
        tail = text[m.end():m.end() + 1]
        if not (tail and (tail.isalnum() or tail == "_")):
            body = tok.lstrip("+-")
            if body.lower().startswith("0x"):
                return float.fromhex(tok), m.end()
            if body in ("inf", "nan") or any(c in body for c in ".eE"):
                return float(tok), m.end()
            return int(tok), m.end()
    m = _BARE.match(text, pos)
    if m:
        word = m.group(0)
        if word == "true":
            return True, m.end()
        if word == "false":
            return False, m.end()
        return word, m.end()
    raise ValueError(f"cannot parse value at column {pos + 1}: {text[pos:pos + 20]!r}")


def parse(text: str) -> dict:
    """Parse a flat config; returns ``{key: value}`` with ``_lines`` for diagnostics."""
    out: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, rest = line.partition("=")
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", line=lineno)
        if key in out:
            raise ConfigError("duplicate key", line=lineno, key=key)
        try:
            value, end = _parse_value(rest)
        except ValueError as exc:
            raise ConfigError(str(exc), line=lineno, key=key) from None
        if rest[end:].strip():
            raise ConfigError(f"trailing text {rest[end:].strip()!r}", line=lineno, key=key)
        out[key] = value
        lines[key] = lineno
    out["_lines"] = lines
    return out


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, str):
        return v if _BARE.fullmatch(v) and v not in ("true", "false", "inf", "nan") else f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if hasattr(v, "item"):
        return format_value(v.item())
    raise TypeError(f"cannot format {type(v).__name__}")


def dump(entries: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in entries.items() if not k.startswith("_"))


# typed access ---------------------------------------------------------------


def get(cfg: dict, key: str, kind, default=...):
    """Fetch ``key`` coerced to ``kind`` (int, float, bool, str, 'floats', 'pairs')."""
    if key not in cfg:
        if default is ...:
            raise ConfigError("missing required field", key=key)
        return default
    value = cfg[key]
    line = cfg.get("_lines", {}).get(key)
    try:
        return _coerce(value, kind)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), line=line, key=key) from None


def _coerce(value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(f"expected string, got {value!r}")
        return value
    if kind == "floats":
        if not isinstance(value, list):
            raise TypeError(f"expected list of numbers, got {value!r}")
        return tuple(_coerce(v, float) for v in value)
    if kind == "ints":
        if not isinstance(value, list):
            raise TypeError(f"expected list of integers, got {value!r}")
        return tuple(_coerce(v, int) for v in value)
    if kind == "pairs":
        if not isinstance(value, list) or any(not isinstance(p, list) or len(p) != 2 for p in value):
            raise TypeError(f"expected list of [index, value] pairs, got {value!r}")
        return tuple((_coerce(p[0], int), _coerce(p[1], float)) for p in value)
    raise ValueError(f"unknown kind {kind!r}")

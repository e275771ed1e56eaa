"""Scenario/config file loading: JSON always, plus a small TOML subset.

Python 3.10 ships no tomllib and this environment carries no TOML package,
so a minimal reader covers the subset these configs use: [table] and
[table.sub] headers, key = value with strings, numbers, booleans and
single-line arrays, and # comments. stdlib tomllib is preferred when present.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:
    tomllib = None


def _parse_scalar(tok: str):
    tok = tok.strip()
    if tok.startswith('"') and tok.endswith('"') and len(tok) >= 2:
        return tok[1:-1]
    if tok == "true":
        return True
    if tok == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError as exc:
        raise ValueError(f"cannot parse TOML value {tok!r}") from exc


def _split_array_items(body: str):
    items, depth, cur, in_str = [], 0, "", False
    for ch in body:
        if ch == '"':
            in_str = not in_str
            cur += ch
        elif in_str:
            cur += ch
        elif ch == "[":
            depth += 1
            cur += ch
        elif ch == "]":
            depth -= 1
            cur += ch
        elif ch == "," and depth == 0:
            items.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        items.append(cur)
    return items


def _parse_value(tok: str):
    tok = tok.strip()
    if tok.startswith("[") and tok.endswith("]"):
        body = tok[1:-1].strip()
        if not body:
            return []
        return [_parse_value(item) for item in _split_array_items(body)]
    return _parse_scalar(tok)


def _strip_comment(line: str) -> str:
    out, in_str = [], False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_toml_subset(text: str) -> dict:
    root: dict = {}
    table = root
    for raw in text.splitlines():
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            table = root
            for part in line[1:-1].strip().split("."):
                table = table.setdefault(part.strip(), {})
            continue
        if "=" not in line:
            raise ValueError(f"cannot parse TOML line: {raw!r}")
        key, _, val = line.partition("=")
        table[key.strip()] = _parse_value(val)
    return root


def load_config(path) -> dict:
    """Load a JSON or TOML config file into a plain dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        return json.loads(text)
    if tomllib is not None:
        return tomllib.loads(text)
    return parse_toml_subset(text)

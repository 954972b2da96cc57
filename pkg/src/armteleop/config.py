"""Line-based key-value config format shared by the arm models and the
server.

Syntax: `[section]` headers, `key = value` pairs, `#` comments, blank
lines ignored. Sections and keys may repeat (fences, zones, DH rows).
Angles are written in degrees and lengths in meters; loaders convert to
radians at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(Exception):
    """Malformed or contradictory configuration."""


@dataclass
class Section:
    name: str
    items: list[tuple[str, str]] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.items:
            if k == key:
                return v
        return default

    def require(self, key: str) -> str:
        v = self.get(key)
        if v is None:
            raise ConfigError(f"[{self.name}] missing required key {key!r}")
        return v

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.items if k == key]

    def floats(self, key: str, count: int | None = None) -> list[float]:
        raw = self.require(key)
        try:
            vals = [float(t) for t in raw.split()]
        except ValueError as e:
            raise ConfigError(f"[{self.name}] {key}: {e}") from None
        if count is not None and len(vals) != count:
            raise ConfigError(f"[{self.name}] {key}: expected {count} values, got {len(vals)}")
        return vals


def parse(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = Section(line[1:-1].strip())
            sections.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        current.items.append((key.strip(), value.strip()))
    return sections


def parse_file(path: str) -> list[Section]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def first(sections: list[Section], name: str) -> Section:
    for s in sections:
        if s.name == name:
            return s
    raise ConfigError(f"missing required [{name}] section")


def maybe(sections: list[Section], name: str) -> Section | None:
    for s in sections:
        if s.name == name:
            return s
    return None


def parse_bool(raw: str, where: str) -> bool:
    v = raw.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")

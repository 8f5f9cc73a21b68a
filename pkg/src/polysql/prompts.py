"""Versioned prompt templates with named placeholders.

Templates are plain-text assets shipped with the package (optionally
overridden from a directory named in the config). Placeholders use the
``{name}`` form; substitution touches only known keys, so braces inside SQL
or schema text pass through untouched.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from .errors import ConfigInvalid

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render_template(template: str, **values: str) -> str:
    """Substitute {name} placeholders for the provided keys only."""

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key in values:
            return values[key]
        return match.group(0)

    return _PLACEHOLDER_RE.sub(_sub, template)


class PromptLibrary:
    """Loads template text by id, preferring an override directory."""

    def __init__(self, override_dir: str | Path | None = None):
        self._override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def has(self, template_id: str) -> bool:
        try:
            self.get(template_id)
        except ConfigInvalid:
            return False
        return True

    def get(self, template_id: str) -> str:
        if template_id in self._cache:
            return self._cache[template_id]
        text = None
        if self._override_dir is not None:
            candidate = self._override_dir / f"{template_id}.txt"
            if candidate.is_file():
                text = candidate.read_text(encoding="utf-8")
        if text is None:
            resource = resources.files("polysql").joinpath(f"templates/{template_id}.txt")
            if resource.is_file():
                text = resource.read_text(encoding="utf-8")
        if text is None:
            raise ConfigInvalid(f"no prompt template named {template_id!r}")
        self._cache[template_id] = text
        return text

    def render(self, template_id: str, **values: str) -> str:
        return render_template(self.get(template_id), **values)

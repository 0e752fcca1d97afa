"""Prompt templates with `{name}` placeholders, loaded from package data."""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.text))

    def render(self, **bindings: str) -> str:
        missing = self.required_placeholders - set(bindings)
        if missing:
            raise TemplateError(f"template {self.name!r}: unbound placeholders {sorted(missing)}")

        def sub(m: re.Match) -> str:
            return str(bindings[m.group(1)])

        return _PLACEHOLDER.sub(sub, self.text)


def load_template(name: str, directory: str | Path | None = None) -> PromptTemplate:
    """Load `<name>.txt` from a directory or the packaged templates."""
    if directory is not None:
        text = (Path(directory) / f"{name}.txt").read_text(encoding="utf-8")
    else:
        text = resources.files("storylogic").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name=name, text=text)

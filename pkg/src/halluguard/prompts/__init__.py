"""Frozen prompt templates.

Each ``*.vN.txt`` asset holds two sections introduced by ``### system`` and
``### user``. The user section uses ``str.format`` placeholders
(``{answer}``, ``{factoid}``, ``{query}``, ``{n}``, ``{context}``,
``{claim}``); literal braces must be doubled. Payloads are wrapped in
``<tag>...</tag>`` blocks so that offline backends can read them back.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

DECOMPOSE = "decompose.v1"
MUTATE_SYNONYM = "mutate_synonym.v1"
MUTATE_ANTONYM = "mutate_antonym.v1"
VERIFY = "verify.v1"

_SECTION = re.compile(r"^### (system|user)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system_prompt: str
    user_template: str

    def render(self, **values) -> tuple[str, str]:
        return self.system_prompt, self.user_template.format(**values)


def parse_template(name: str, text: str) -> PromptTemplate:
    parts = _SECTION.split(text)
    sections = dict(zip(parts[1::2], (p.strip("\n") for p in parts[2::2])))
    if set(sections) != {"system", "user"}:
        raise ValueError(f"template {name} needs exactly one system and one user section")
    return PromptTemplate(name, sections["system"].strip(), sections["user"].strip())


@lru_cache(maxsize=None)
def load(name: str) -> PromptTemplate:
    text = resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return parse_template(name, text)


def load_file(path: str | Path) -> PromptTemplate:
    path = Path(path)
    return parse_template(path.stem, path.read_text(encoding="utf-8"))


def extract_tag(text: str, tag: str) -> str | None:
    m = re.search(rf"<{tag}>\n?(.*?)\n?</{tag}>", text, re.DOTALL)
    return m.group(1) if m else None


def render_context(chunks) -> str:
    """Chunks joined with numbered separators, as shown to the verifier."""
    return "\n".join(f'<chunk id="{k}">\n{c.strip()}\n</chunk>' for k, c in enumerate(chunks, 1))


def context_chunks(rendered: str) -> list[str]:
    return re.findall(r'<chunk id="\d+">\n(.*?)\n</chunk>', rendered, re.DOTALL)

"""In-context prompt assembly for layout generation."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from mgcc.grounding.layout import DEFAULT_CANVAS, MARKER, Layout, LayoutParseError, parse_objects, serialize_objects

STORY_PREFIX = "Story sequence: "
DEFAULT_NUM_EXAMPLES = 5


def _asset(name: str) -> str:
    return resources.files("mgcc.grounding").joinpath("assets", name).read_text(encoding="utf-8")


def task_description() -> str:
    return _asset("task_description.txt")


def image_detail(canvas=DEFAULT_CANVAS) -> str:
    w, h = canvas
    return _asset("image_detail.txt").format(width=w, height=h)


@dataclass(frozen=True)
class InContextExample:
    story: str
    objects: Layout

    def block(self) -> str:
        return f"{STORY_PREFIX}{self.story}\n{MARKER} {serialize_objects(self.objects)}\n"


def story_text(captions: Sequence[str]) -> str:
    return " ".join(c.strip() for c in captions)


def assemble_prompt(story: Sequence[str], examples: Sequence[InContextExample], canvas=DEFAULT_CANVAS) -> str:
    if not story:
        raise ValueError("story needs at least one caption")
    if canvas[0] <= 0 or canvas[1] <= 0:
        raise ValueError(f"canvas must be positive, got {canvas}")
    parts = [task_description(), "\n\n", image_detail(canvas), "\n\n"]
    for ex in examples:
        parts.append(ex.block())
        parts.append("\n")
    parts.append(f"{STORY_PREFIX}{story_text(story)}\n{MARKER}")
    return "".join(parts)


# --------------------------------------------------------------------------- #
# Example bank file
# --------------------------------------------------------------------------- #
def parse_example_bank(text: str, canvas=DEFAULT_CANVAS) -> list[InContextExample]:
    examples = []
    for raw in text.split("\n\n"):
        block = raw.strip("\n")
        if not block:
            continue
        lines = block.split("\n")
        if len(lines) != 2 or not lines[0].startswith(STORY_PREFIX) or not lines[1].startswith(MARKER):
            raise ValueError(f"malformed example block: {block[:60]!r}")
        try:
            items, end = parse_objects(lines[1], len(MARKER))
        except LayoutParseError as exc:
            raise ValueError(f"bad objects line in example bank: {exc}") from exc
        if lines[1][end:].strip():
            raise ValueError(f"trailing text after objects list: {lines[1][end:]!r}")
        examples.append(InContextExample(lines[0][len(STORY_PREFIX) :], Layout(tuple(canvas), tuple(items))))
    return examples


def dump_example_bank(examples: Sequence[InContextExample]) -> str:
    return "".join(ex.block() + "\n" for ex in examples)


def load_example_bank(path: str | Path | None = None, limit: int | None = DEFAULT_NUM_EXAMPLES) -> list[InContextExample]:
    """Read an example bank; ``path=None`` loads the bundled one."""
    text = _asset("examples.txt") if path is None else Path(path).read_text(encoding="utf-8")
    examples = parse_example_bank(text)
    return examples if limit is None else examples[:limit]

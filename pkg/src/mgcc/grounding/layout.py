"""Object layouts: boxes, the ``Objects: [...]`` grammar, validation and JSON."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_CANVAS = (512, 512)


class LayoutParseError(ValueError):
    """Malformed layout text. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class LayoutObject:
    label: str
    box: BoundingBox


@dataclass(frozen=True)
class Layout:
    canvas: tuple[int, int] = DEFAULT_CANVAS
    objects: tuple[LayoutObject, ...] = ()

    @classmethod
    def from_pairs(cls, pairs, canvas=DEFAULT_CANVAS) -> "Layout":
        return cls(tuple(canvas), tuple(LayoutObject(label, BoundingBox(*box)) for label, box in pairs))

    def pairs(self) -> list[tuple[str, list[int]]]:
        return [(o.label, o.box.as_list()) for o in self.objects]

    def __len__(self) -> int:
        return len(self.objects)

    # -- JSON layout file --------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "canvas": list(self.canvas),
                "objects": [{"label": o.label, "bbox": o.box.as_list()} for o in self.objects],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Layout":
        raw = json.loads(text)
        pairs = [(o["label"], o["bbox"]) for o in raw["objects"]]
        for _, box in pairs:
            if len(box) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in box):
                raise ValueError(f"bbox must be four integers, got {box!r}")
        return cls.from_pairs(pairs, tuple(raw["canvas"]))


# --------------------------------------------------------------------------- #
# Canonical text form
# --------------------------------------------------------------------------- #
def quote_label(label: str) -> str:
    return "'" + label.replace("\\", "\\\\").replace("'", "\\'") + "'"


def serialize_objects(layout: Layout) -> str:
    items = (f"({quote_label(o.label)}, [{o.box.x}, {o.box.y}, {o.box.w}, {o.box.h}])" for o in layout.objects)
    return "[" + ", ".join(items) + "]"


def serialize_layout(layout: Layout) -> str:
    return "Objects: " + serialize_objects(layout)


_INT = re.compile(r"[+-]?\d+")


class _Parser:
    def __init__(self, text: str, pos: int):
        self.text = text
        self.pos = pos

    def fail(self, message: str, pos: int | None = None):
        pos = self.pos if pos is None else pos
        raise LayoutParseError(message, len(self.text[:pos].encode("utf-8")))

    def ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch: str):
        self.ws()
        if not self.text.startswith(ch, self.pos):
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            self.fail(f"expected {ch!r}, found {found!r}")
        self.pos += len(ch)

    def peek(self) -> str:
        self.ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self) -> str:
        self.expect("'")
        out = []
        while True:
            if self.pos >= len(self.text):
                self.fail("unterminated label")
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    self.fail("dangling escape in label")
                out.append(self.text[self.pos + 1])
                self.pos += 2
            elif ch == "'":
                self.pos += 1
                return "".join(out)
            else:
                out.append(ch)
                self.pos += 1

    def integer(self) -> int:
        self.ws()
        m = _INT.match(self.text, self.pos)
        if not m:
            self.fail("expected integer coordinate")
        end = m.end()
        if end < len(self.text) and self.text[end] in ".eE":
            self.fail("non-integer coordinate", m.start())
        self.pos = end
        return int(m.group())

    def box(self) -> BoundingBox:
        self.expect("[")
        vals = [self.integer()]
        for _ in range(3):
            self.expect(",")
            vals.append(self.integer())
        self.expect("]")
        return BoundingBox(*vals)

    def item(self) -> LayoutObject:
        self.expect("(")
        label = self.label()
        self.expect(",")
        box = self.box()
        self.expect(")")
        return LayoutObject(label, box)

    def objects(self) -> list[LayoutObject]:
        self.expect("[")
        items: list[LayoutObject] = []
        if self.peek() == "]":
            self.pos += 1
            return items
        items.append(self.item())
        while self.peek() == ",":
            self.pos += 1
            items.append(self.item())
        self.expect("]")
        return items


MARKER = "Objects:"


def parse_objects(text: str, start: int = 0) -> tuple[list[LayoutObject], int]:
    p = _Parser(text, start)
    items = p.objects()
    return items, p.pos


def parse_layout(completion: str, canvas=DEFAULT_CANVAS) -> Layout:
    """Parse the first ``Objects: [...]`` list in ``completion``.

    Anything after the closing bracket is ignored.
    """
    start = completion.find(MARKER)
    if start < 0:
        raise LayoutParseError("missing 'Objects:' marker", 0)
    items, _ = parse_objects(completion, start + len(MARKER))
    return Layout(tuple(canvas), tuple(items))


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    values: tuple = field(default=())


def layout_violations(layout: Layout) -> list[Violation]:
    W, H = layout.canvas
    out = []
    for i, o in enumerate(layout.objects):
        b = o.box
        if not o.label:
            out.append(Violation(i, "empty-label"))
        if b.w <= 0 or b.h <= 0:
            out.append(Violation(i, "nonpositive-size", (b.w, b.h)))
        if b.x < 0 or b.y < 0:
            out.append(Violation(i, "negative-origin", (b.x, b.y)))
        if b.x + b.w > W:
            out.append(Violation(i, "out-of-canvas-x", (b.x + b.w, W)))
        if b.y + b.h > H:
            out.append(Violation(i, "out-of-canvas-y", (b.y + b.h, H)))
    return out


def validate_layout(layout: Layout) -> Layout | list[Violation]:
    """The layout itself when every box fits its canvas, else every violation."""
    violations = layout_violations(layout)
    return violations if violations else layout


def save_layout(layout: Layout, path: str | Path) -> None:
    Path(path).write_text(layout.to_json())


def load_layout(path: str | Path) -> Layout:
    return Layout.from_json(Path(path).read_text())

"""Contextual object grounding: prompt an LLM for a layout of the final story step."""
from __future__ import annotations

import logging
from typing import Sequence

from mgcc.grounding.client import ClientError, CompletionClient, RemoteClient, ScriptedClient, prompt_hash
from mgcc.grounding.layout import (
    DEFAULT_CANVAS,
    BoundingBox,
    Layout,
    LayoutObject,
    LayoutParseError,
    Violation,
    layout_violations,
    load_layout,
    parse_layout,
    save_layout,
    serialize_layout,
    serialize_objects,
    validate_layout,
)
from mgcc.grounding.prompt import (
    DEFAULT_NUM_EXAMPLES,
    InContextExample,
    assemble_prompt,
    dump_example_bank,
    load_example_bank,
    parse_example_bank,
)

log = logging.getLogger(__name__)


class GroundingError(RuntimeError):
    """No usable layout after every attempt. Carries the last raw completion."""

    def __init__(self, message: str, last_completion: str | None, attempts: int):
        super().__init__(message)
        self.last_completion = last_completion
        self.attempts = attempts
        self.partial: dict = {}


def generate_layout(
    story: Sequence[str],
    client: CompletionClient,
    examples: Sequence[InContextExample] | None = None,
    canvas=DEFAULT_CANVAS,
    max_attempts: int = 3,
) -> Layout:
    """Prompt ``client`` until it returns a parseable, valid layout.

    The same prompt is re-sent after a malformed or invalid completion.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if examples is None:
        examples = load_example_bank()
    prompt = assemble_prompt(story, examples, canvas)
    completion = None
    for attempt in range(1, max_attempts + 1):
        completion = client.complete(prompt)
        try:
            layout = parse_layout(completion, canvas)
        except LayoutParseError as exc:
            log.info("attempt %d: unparseable layout: %s", attempt, exc)
            continue
        checked = validate_layout(layout)
        if isinstance(checked, Layout):
            return checked
        log.info("attempt %d: invalid layout: %s", attempt, checked)
    raise GroundingError(f"no valid layout after {max_attempts} attempts", completion, max_attempts)


__all__ = [
    "BoundingBox",
    "ClientError",
    "CompletionClient",
    "DEFAULT_CANVAS",
    "DEFAULT_NUM_EXAMPLES",
    "GroundingError",
    "InContextExample",
    "Layout",
    "LayoutObject",
    "LayoutParseError",
    "RemoteClient",
    "ScriptedClient",
    "Violation",
    "assemble_prompt",
    "dump_example_bank",
    "generate_layout",
    "layout_violations",
    "load_example_bank",
    "load_layout",
    "parse_example_bank",
    "parse_layout",
    "prompt_hash",
    "save_layout",
    "serialize_layout",
    "serialize_objects",
    "validate_layout",
]

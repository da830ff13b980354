from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from mgcc.backbone import StoryExample
from mgcc.grounding import (
    DEFAULT_CANVAS,
    CompletionClient,
    GroundingError,
    InContextExample,
    Layout,
    generate_layout,
)
from mgcc.pipeline.generator import GeneratorBackend, MockGenerator
from mgcc.pipeline.model import MGCCModel


def generate_image(
    story: StoryExample,
    model: MGCCModel,
    client: CompletionClient | None,
    backend: GeneratorBackend | None = None,
    seed: int = 0,
    examples: Sequence[InContextExample] | None = None,
    canvas=DEFAULT_CANVAS,
    max_attempts: int = 3,
    grounding: bool = True,
) -> tuple[np.ndarray, Layout | None, torch.Tensor]:
    """Story -> (image, layout, conditioning).

    With ``grounding=False`` no layout is requested and the backend sees
    ``None``. A grounding failure re-raises with ``partial["conditioning"]`` set.
    """
    backend = backend or MockGenerator()
    f_g = model.conditioning_for_story(story)
    layout = None
    if grounding:
        if client is None:
            raise ValueError("grounding needs a completion client")
        try:
            layout = generate_layout(story.captions, client, examples, canvas, max_attempts)
        except GroundingError as exc:
            exc.partial["conditioning"] = f_g
            raise
    image = backend(f_g, layout, seed)
    return image, layout, f_g


# --------------------------------------------------------------------------- #
# Story files: {"captions": [...], "images": ["a.png", null, ...]}
# --------------------------------------------------------------------------- #
def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def load_story(path: str | Path) -> StoryExample:
    path = Path(path)
    raw = json.loads(path.read_text())
    images = [None if p is None else load_image(path.parent / p) for p in raw.get("images", [])]
    story = StoryExample(list(raw["captions"]), images)
    story.validate()
    return story


def write_outputs(out: str | Path, image: np.ndarray, layout: Layout | None, conditioning: torch.Tensor) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(image, out / "image.png")
    if layout is not None:
        (out / "layout.json").write_text(layout.to_json())
    np.save(out / "conditioning.npy", conditioning.detach().cpu().numpy())

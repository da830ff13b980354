"""Procedural story data: templated captions over colored-rectangle scenes.

Layouts live on a 512x512 canvas with coordinates on an 8-px grid and at
least one grid cell between boxes, so a 64x64 render maps back to the exact
boxes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from mgcc.backbone import StoryExample
from mgcc.grounding.layout import DEFAULT_CANVAS, BoundingBox, Layout, LayoutObject
from mgcc.pipeline.generator import render_layout

LABELS = ("dog", "cat", "car", "tree", "ball", "bird", "boat", "chair")
PLURALS = {label: label + "s" for label in LABELS}
COUNT_WORDS = {1: "a", 2: "two", 3: "three"}

PLACES = ("in the park", "by the lake", "near our house", "at the beach", "on the hill", "in the yard")
OPENERS = ("We saw", "There were", "I noticed", "We found")
FILLERS = (
    "The weather was lovely.",
    "Everyone was in a good mood.",
    "It was a long and sunny afternoon.",
    "We had lunch together.",
    "The sky turned orange in the evening.",
)
ENDINGS = ("It was a great day to remember.", "Then we all went home.", "Nobody wanted to leave.")

GRID = 8
RENDER_SIZE = 64
BACKGROUND = (16, 16, 16)


@dataclass
class SyntheticStory:
    captions: list[str]
    images: list[np.ndarray]  # one per caption except the last
    target_layout: Layout
    target_image: np.ndarray
    scene_caption: str

    def to_story_example(self, with_images: bool = True) -> StoryExample:
        return StoryExample(list(self.captions), list(self.images) if with_images else [])

    def to_record(self) -> dict:
        return {
            "captions": self.captions,
            "scene_caption": self.scene_caption,
            "layout": json.loads(self.target_layout.to_json()),
        }


def _phrase(label: str, count: int) -> str:
    return f"{COUNT_WORDS[count]} {label if count == 1 else PLURALS[label]}"


def _join(phrases: list[str]) -> str:
    return phrases[0] if len(phrases) == 1 else ", ".join(phrases[:-1]) + " and " + phrases[-1]


def _place_boxes(rng: np.random.Generator, n: int, canvas=DEFAULT_CANVAS, max_tries: int = 2000) -> list[BoundingBox]:
    W, H = canvas
    while True:
        boxes: list[tuple[int, int, int, int]] = []
        for _ in range(max_tries):
            if len(boxes) == n:
                break
            w = int(rng.integers(6, 17)) * GRID
            h = int(rng.integers(6, 17)) * GRID
            x = int(rng.integers(0, (W - w) // GRID + 1)) * GRID
            y = int(rng.integers(0, (H - h) // GRID + 1)) * GRID
            # keep one grid cell of clearance to every placed box
            if all(x + w + GRID <= bx or bx + bw + GRID <= x or y + h + GRID <= by or by + bh + GRID <= y for bx, by, bw, bh in boxes):
                boxes.append((x, y, w, h))
        if len(boxes) == n:
            return [BoundingBox(*b) for b in boxes]


def _scene(rng: np.random.Generator, items: list[tuple[str, int]]) -> Layout:
    total = sum(c for _, c in items)
    boxes = _place_boxes(rng, total)
    objects, i = [], 0
    for label, count in items:
        for _ in range(count):
            objects.append(LayoutObject(label, boxes[i]))
            i += 1
    return Layout(DEFAULT_CANVAS, tuple(objects))


def make_story(rng: np.random.Generator, max_story_len: int = 5) -> SyntheticStory:
    story_len = int(rng.integers(1, max_story_len + 1))
    kinds = int(rng.integers(1, 3))
    labels = [LABELS[i] for i in rng.choice(len(LABELS), size=kinds, replace=False)]
    counts = [int(rng.integers(1, 4)) for _ in labels]
    items = list(zip(labels, counts))

    # which caption mentions each object kind
    where = [int(rng.integers(0, story_len)) for _ in items]
    captions, step_items = [], []
    for step in range(story_len):
        mine = [it for it, w in zip(items, where) if w == step]
        step_items.append(mine)
        last = step == story_len - 1
        if mine:
            opener = "In the end we saw" if last and story_len > 1 else str(rng.choice(OPENERS))
            phrases = _join([_phrase(l, c) for l, c in mine])
            captions.append(f"{opener} {phrases} {rng.choice(PLACES)}.")
        else:
            captions.append(str(rng.choice(ENDINGS if last else FILLERS)))

    images = []
    for mine in step_items[:-1]:
        scene = _scene(rng, mine) if mine else None
        images.append(render_layout(scene, RENDER_SIZE, BACKGROUND))
    target = _scene(rng, items)
    scene_caption = "A picture of " + _join([_phrase(l, c) for l, c in items]) + "."
    return SyntheticStory(captions, images, target, render_layout(target, RENDER_SIZE, BACKGROUND), scene_caption)


def make_synthetic_dataset(count: int, seed: int, max_story_len: int = 5) -> list[SyntheticStory]:
    """``count`` stories, each from its own child seed of ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 1 <= max_story_len <= 5:
        raise ValueError("max_story_len must be in 1..5")
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_story(np.random.default_rng(s), max_story_len) for s in children]


def dataset_bytes(stories: list[SyntheticStory]) -> bytes:
    out = bytearray()
    for s in stories:
        out += json.dumps(s.to_record(), sort_keys=True).encode()
        for img in s.images:
            out += img.tobytes()
        out += s.target_image.tobytes()
    return bytes(out)


def training_pairs(stories: list[SyntheticStory]) -> list[tuple[np.ndarray, str]]:
    """(target image, scene caption) pairs, the image-caption training signal."""
    return [(s.target_image, s.scene_caption) for s in stories]

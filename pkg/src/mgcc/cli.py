"""Command-line entry point: ``mgcc {train,generate,layout,eval,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mgcc.config import Config, load_config

log = logging.getLogger("mgcc")


def make_client(cfg: Config, script: str | None = None):
    from mgcc.grounding import RemoteClient

    script = script or cfg.client.script
    if script is not None or cfg.client.kind == "scripted":
        if script is None:
            raise SystemExit("scripted client needs --script or client.script in the config")
        return scripted_client_from_file(script)
    c = cfg.client
    return RemoteClient(c.endpoint, c.timeout, c.max_retries, c.backoff, c.max_in_flight)


def scripted_client_from_file(path: str | Path):
    """A script is either plain completion text (answers every prompt), a JSON
    list of completions (replayed in order), or a JSON object
    ``{"responses": {prompt_sha256: completion(s)}, "default": ...}``.
    """
    from mgcc.grounding import ScriptedClient

    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        return ScriptedClient(default=text)
    if isinstance(raw, str):
        return ScriptedClient(default=raw)
    if isinstance(raw, list):
        return ScriptedClient(default=raw)
    return ScriptedClient(raw.get("responses", {}), raw.get("default"))


# --------------------------------------------------------------------------- #
def cmd_train(args) -> int:
    import torch

    from mgcc.pipeline.checkpoint import save_checkpoint
    from mgcc.pipeline.model import build_model
    from mgcc.pipeline.synthetic import make_synthetic_dataset, training_pairs
    from mgcc.pipeline.training import OptimizerState, train

    cfg = load_config(args.config)
    t = cfg.train
    stories = make_synthetic_dataset(t.dataset_size, t.dataset_seed, t.max_story_len)
    model = build_model(cfg.model, dtype=torch.float32)
    opt = OptimizerState(model, t.lr, t.betas, t.eps)
    history = train(
        model, opt, training_pairs(stories), t.steps, t.batch_size, (t.lambda_ce, t.lambda_mse), t.dataset_seed, t.log_every
    )
    out = args.out or t.out
    save_checkpoint(model, opt, out, cfg)
    last = history[-1] if history else None
    print(json.dumps({"checkpoint": str(out), "steps": opt.step_count, "final": None if last is None else vars(last)}))
    return 0


def cmd_generate(args) -> int:
    from mgcc.grounding import GroundingError, load_example_bank
    from mgcc.pipeline.checkpoint import load_checkpoint, read_manifest
    from mgcc.pipeline.generation import generate_image, load_story, write_outputs
    from mgcc.pipeline.generator import MockGenerator

    cfg = Config.from_dict(read_manifest(args.ckpt)["config"])
    if args.config:
        cfg.client = load_config(args.config).client
    model, _ = load_checkpoint(args.ckpt)
    story = load_story(args.story)
    g = cfg.grounding
    client = None if args.no_grounding else make_client(cfg, args.script)
    examples = load_example_bank(args.examples or g.examples_file, g.num_examples)
    try:
        image, layout, f_g = generate_image(
            story,
            model,
            client,
            MockGenerator(g.render_size),
            args.seed,
            examples,
            tuple(g.canvas),
            g.max_attempts,
            grounding=not args.no_grounding,
        )
    except GroundingError as exc:
        print(f"grounding failed: {exc}; last completion: {exc.last_completion!r}", file=sys.stderr)
        return 2
    write_outputs(args.out, image, layout, f_g)
    return 0


def cmd_layout(args) -> int:
    from mgcc.grounding import assemble_prompt, generate_layout, load_example_bank
    from mgcc.pipeline.generation import load_story

    cfg = load_config(args.config)
    g = cfg.grounding
    story = load_story(args.story)
    examples = load_example_bank(args.examples or g.examples_file, g.num_examples)
    canvas = tuple(g.canvas)
    if args.print_prompt:
        sys.stdout.write(assemble_prompt(story.captions, examples, canvas))
        return 0
    layout = generate_layout(story.captions, make_client(cfg, args.script), examples, canvas, g.max_attempts)
    print(layout.to_json())
    return 0


def _image_dir(path: Path) -> dict[str, np.ndarray]:
    from mgcc.pipeline.generation import load_image

    return {p.name: load_image(p) for p in sorted(path.glob("*.png"))}


def cmd_eval(args) -> int:
    from mgcc.backbone import ToyVisualEncoder
    from mgcc.metrics import clip_similarity, extract_features, fid_report, lpips_report

    cfg = load_config(args.config)
    real, gen = _image_dir(Path(args.real)), _image_dir(Path(args.gen))
    if set(real) != set(gen):
        raise SystemExit(f"real and generated directories hold different files: {sorted(set(real) ^ set(gen))}")
    if not real:
        raise SystemExit("no .png images found")
    ids = sorted(real)
    shape = real[ids[0]].shape
    encoder = ToyVisualEncoder(shape, cfg.model.d, seed=cfg.model.seed + 1)

    def extract(im):
        return encoder(im).numpy()

    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    fr = fg = None
    if {"clip", "fid"} & set(metrics):
        fr = extract_features([real[i] for i in ids], ids, extract)
        fg = extract_features([gen[i] for i in ids], ids, extract)
    for name in metrics:
        if name == "clip":
            rep = clip_similarity(fr, fg, args.bootstrap, args.seed)
        elif name == "lpips":
            rep = lpips_report([real[i] for i in ids], [gen[i] for i in ids], ids, None, args.bootstrap, args.seed)
        elif name == "fid":
            try:
                rep = fid_report(fr, fg, args.seed)
            except ValueError as exc:
                print(json.dumps({"metric": "fid", "error": str(exc)}))
                continue
        else:
            raise SystemExit(f"unknown metric {name!r}")
        print(json.dumps(rep.record()))
    return 0


def cmd_synth(args) -> int:
    from mgcc.grounding import serialize_layout
    from mgcc.pipeline.generation import save_image
    from mgcc.pipeline.synthetic import make_synthetic_dataset

    out = Path(args.out)
    stories = make_synthetic_dataset(args.count, args.seed, args.max_story_len)
    for i, s in enumerate(stories):
        d = out / f"story_{i:04d}"
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for j, img in enumerate(s.images):
            names.append(f"image_{j}.png")
            save_image(img, d / names[-1])
        (d / "story.json").write_text(json.dumps({"captions": s.captions, "images": names}, indent=2))
        (d / "layout.json").write_text(s.target_layout.to_json())
        (d / "completion.txt").write_text(serialize_layout(s.target_layout))
        (d / "caption.txt").write_text(s.scene_caption)
        save_image(s.target_image, d / "target.png")
    print(json.dumps({"stories": len(stories), "out": str(out)}))
    return 0


# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgcc")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the adapters on synthetic stories")
    t.add_argument("--config")
    t.add_argument("--out", help="checkpoint directory (overrides train.out)")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="generate an image for a story")
    g.add_argument("--story", required=True)
    g.add_argument("--ckpt", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--script", help="scripted completions for the layout client")
    g.add_argument("--examples", help="in-context example bank")
    g.add_argument("--config", help="config file supplying the client section")
    g.add_argument("--no-grounding", action="store_true", help="skip layout generation")
    g.set_defaults(func=cmd_generate)

    lay = sub.add_parser("layout", help="query the layout generator for a story")
    lay.add_argument("--story", required=True)
    lay.add_argument("--examples")
    lay.add_argument("--script")
    lay.add_argument("--config")
    lay.add_argument("--print-prompt", action="store_true")
    lay.set_defaults(func=cmd_layout)

    e = sub.add_parser("eval", help="score generated images against references")
    e.add_argument("--real", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--metrics", default="clip,lpips,fid")
    e.add_argument("--bootstrap", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic story dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-story-len", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

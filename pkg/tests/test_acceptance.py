"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import torch

from oracles import central_difference, cmrm_stack_loops, relative_error, sample_indices
from mgcc.cli import main
from mgcc.config import ModelConfig
from mgcc.grounding import (
    Layout,
    LayoutParseError,
    ScriptedClient,
    assemble_prompt,
    load_example_bank,
    load_layout,
    parse_layout,
    serialize_layout,
)
from mgcc.metrics import FeatureSet, clip_similarity, fid, lpips_distance
from mgcc.pipeline import (
    CheckpointError,
    OptimizerState,
    build_model,
    decode_rectangles,
    generate_image,
    load_checkpoint,
    make_synthetic_dataset,
    save_checkpoint,
    train,
    training_step,
)
from mgcc.pipeline.generation import load_image
from mgcc.pipeline.generator import label_color, scale_box
from mgcc.pipeline.synthetic import training_pairs
from mgcc.pipeline.training import total_loss
from mgcc.refinement import RefinementStack, refine_stack


def test_01_cmrm_matches_loop_oracle(acceptance):
    def body():
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for i in range(50):
            n_S = int(rng.integers(1, 6))
            e = int(rng.integers(1, 5))
            n_I = int(rng.integers(1, n_S + 1))
            mask = torch.zeros(n_S, dtype=torch.bool)
            mask[rng.choice(n_S, size=n_I, replace=False)] = True
            torch.manual_seed(i)
            stack = RefinementStack(int(rng.integers(1, 5)), e, ffn_depth=int(rng.integers(1, 3))).double()
            f_mm = torch.randn(n_S, e, dtype=torch.float64)
            with torch.no_grad():
                got = refine_stack(f_mm, mask, stack).numpy()
            worst = max(worst, float(np.abs(got - cmrm_stack_loops(f_mm, mask, stack)).max()))
        elapsed = time.perf_counter() - start
        return worst <= 1e-6 and elapsed < 5.0, f"max abs err {worst:.2e}, {elapsed:.2f}s"

    acceptance(1, "refinement stack matches loop oracle (50 instances, 1e-6)", body)


def test_02_gradients_match_finite_differences(acceptance, toy_model64, toy_pair):
    def body():
        start = time.perf_counter()
        model = toy_model64
        # training-mode loss without an optimizer step
        model.train()

        def loss() -> float:
            return total_loss(model, model.collate([toy_pair]))[0].item()

        model.params.zero_grad(set_to_none=True)
        total_loss(model, model.collate([toy_pair]))[0].backward()
        rng = np.random.default_rng(0)
        worst, checks, groups = 0.0, 0, set()
        for name, t in model.params.named_tensors().items():
            assert t.grad is not None, f"{name} received no gradient"
            groups.add(name.split(".")[0])
            for idx in sample_indices(tuple(t.shape), 16, rng):
                numeric = central_difference(loss, t.data, idx, h=1e-5)
                worst = max(worst, relative_error(t.grad[idx].item(), numeric))
                checks += 1
        model.eval()
        elapsed = time.perf_counter() - start
        ok = worst < 1e-4 and elapsed < 60.0 and groups == {"h_cap", "emd", "cmrm", "mapper", "queries"}
        return ok, f"max rel err {worst:.2e} over {checks} entries, {elapsed:.1f}s"

    acceptance(2, "analytic gradients match central differences (1e-4)", body)


def test_03_frozen_weights_untouched(acceptance):
    def body():
        model = build_model(ModelConfig())
        before = model.frozen_hash()
        opt = OptimizerState(model)
        pairs = training_pairs(make_synthetic_dataset(8, seed=1))
        train(model, opt, pairs, steps=100, log_every=0)
        after = model.frozen_hash()
        return before == after and opt.step_count == 100, f"hash {after[:16]}... after {opt.step_count} steps"

    acceptance(3, "frozen backbone and encoder hash unchanged over 100 steps", body)


def test_04_overfit_sanity(acceptance):
    def body():
        start = time.perf_counter()
        model = build_model(ModelConfig())
        opt = OptimizerState(model)
        pairs = training_pairs(make_synthetic_dataset(32, seed=0))
        history = train(model, opt, pairs, steps=500, batch_size=32, log_every=0)
        with torch.no_grad():
            final_total, _, final_mse = total_loss(model, model.collate(pairs))
        elapsed = time.perf_counter() - start
        mse0 = history[0].mse
        ratio = final_mse.mean().item() / mse0
        finite = all(math.isfinite(h.total) for h in history) and math.isfinite(final_total.item())
        ok = ratio <= 0.10 and finite and elapsed < 120.0
        return ok, f"mse {mse0:.4f} -> {final_mse.mean().item():.5f} ({ratio:.2%}), {elapsed:.1f}s"

    acceptance(4, "500 steps on 32 examples cut the alignment MSE to <= 10%", body)


MALFORMED = [
    ("We could not find any objects.", 0),
    ("Objects: [('a car', [482, 100, 27])]", 33),
    ("Objects: [('a car' [482, 100, 27, 18])]", 19),
    ("Objects: [('a car', [482, 100.0, 27, 18])]", 26),
    ("Objects: [('a car', [482, 100, 27, 18])", 39),
    ("Objects: [(a car, [482, 100, 27, 18])]", 11),
]


def test_05_layout_grammar(acceptance):
    def body():
        layout = parse_layout("Objects: [('a car', [482, 100, 27, 18]), ('a child', [102, 107, 201, 402])]")
        example_ok = layout.pairs() == [("a car", [482, 100, 27, 18]), ("a child", [102, 107, 201, 402])]

        rng = np.random.default_rng(5)
        alphabet = list("abcdefghijklmnopqrstuvwxyz '\\")
        round_trips = 0
        for _ in range(100):
            pairs = []
            for _ in range(int(rng.integers(0, 6))):
                label = "".join(rng.choice(alphabet, size=int(rng.integers(1, 12))))
                pairs.append((label, [int(v) for v in rng.integers(-600, 600, size=4)]))
            original = Layout.from_pairs(pairs)
            round_trips += parse_layout(serialize_layout(original)) == original

        offsets_ok = True
        for text, offset in MALFORMED:
            try:
                parse_layout(text)
                offsets_ok = False
            except LayoutParseError as exc:
                offsets_ok &= exc.offset == offset
        ok = example_ok and round_trips == 100 and offsets_ok
        return ok, f"example {example_ok}, round-trips {round_trips}/100, malformed offsets {offsets_ok}"

    acceptance(5, "layout grammar: example, round-trips, malformed offsets", body)


def test_06_prompt_golden(acceptance, golden_dir):
    def body():
        captions = json.loads((golden_dir / "fixture_story.json").read_text())["captions"]
        golden = (golden_dir / "prompt_fixture_5.txt").read_bytes()
        examples = load_example_bank()
        prompt = assemble_prompt(captions, examples, (512, 512)).encode("utf-8")
        return prompt == golden and len(examples) == 5, f"{len(prompt)} bytes vs golden {len(golden)}"

    acceptance(6, "assembled prompt is byte-identical to the golden file", body)


def test_07_metric_fixed_points(acceptance):
    def body():
        rng = np.random.default_rng(7)
        X = rng.standard_normal((64, 8))
        ids = [str(i) for i in range(64)]
        clip = clip_similarity(FeatureSet(X, ids), FeatureSet(X, ids), bootstrap=0)
        clip_ok = all(v == 1.0 for v in clip.values)
        img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        lp = lpips_distance(img, img)
        f0 = fid(X, X)
        delta = rng.standard_normal(8)
        shifted = fid(X, X + delta)
        shift_err = abs(shifted - float(delta @ delta))
        ok = clip_ok and lp == 0.0 and f0 < 1e-6 and shift_err <= 1e-6
        return ok, f"clip exact {clip_ok}, lpips {lp}, fid(X,X) {f0:.1e}, shift err {shift_err:.1e}"

    acceptance(7, "metric fixed points (clip 1, lpips 0, fid 0, mean shift)", body)


def test_08_cli_generate_is_deterministic(acceptance, tmp_path):
    def body():
        data = tmp_path / "data"
        assert main(["synth", "--count", "1", "--seed", "11", "--max-story-len", "4", "--out", str(data)]) == 0
        story_dir = data / "story_0000"
        cfg = tmp_path / "train.yaml"
        cfg.write_text("train:\n  steps: 3\n  dataset_size: 4\n  batch_size: 4\n")
        ckpt = tmp_path / "ckpt"
        assert main(["train", "--config", str(cfg), "--out", str(ckpt)]) == 0

        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            argv = ["generate", "--story", str(story_dir / "story.json"), "--ckpt", str(ckpt), "--out", str(out),
                    "--seed", "3", "--script", str(story_dir / "completion.txt")]
            assert main(argv) == 0
            outs.append(out)
        names = ("image.png", "layout.json", "conditioning.npy")
        identical = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)

        layout = load_layout(outs[0] / "layout.json")
        image = load_image(outs[0] / "image.png")
        placed = True
        for obj in layout.objects:
            x0, y0, x1, y1 = scale_box(obj.box, layout.canvas, image.shape[0])
            placed &= bool(np.all(image[y0:y1, x0:x1] == label_color(obj.label)))
        decoded = decode_rectangles(image, {o.label for o in layout.objects}, layout.canvas)
        placed &= decoded == sorted(layout.pairs())
        ok = identical and placed and len(layout) > 0
        return ok, f"bit-identical {identical}, {len(layout)} rectangles at scaled coordinates {placed}"

    acceptance(8, "mgcc generate is bit-reproducible and draws every box", body)


def test_09_checkpoint_round_trip(acceptance, tmp_path, toy_cfg, toy_pair):
    def body():
        model = build_model(toy_cfg)
        opt = OptimizerState(model)
        for _ in range(2):
            training_step(model, opt, [toy_pair])
        save_checkpoint(model, opt, tmp_path / "ck")
        restored, ropt = load_checkpoint(tmp_path / "ck")
        exact = all(
            torch.equal(t, restored.params.named_tensors()[name]) for name, t in model.params.named_tensors().items()
        )
        saved_m, loaded_m = opt.moments(model), ropt.moments(restored)
        exact &= saved_m.keys() == loaded_m.keys() and all(
            torch.equal(a, b) for k in saved_m for a, b in zip(saved_m[k], loaded_m[k])
        )
        blob = tmp_path / "ck" / "tensors.bin"
        blob.write_bytes(blob.read_bytes()[: len(blob.read_bytes()) // 2])
        try:
            load_checkpoint(tmp_path / "ck")
            named = False
            msg = "no error"
        except CheckpointError as exc:
            msg = str(exc)
            named = msg.startswith("tensor ") and "truncated" in msg
        return exact and named, f"bit-exact {exact}; truncated load: {msg}"

    acceptance(9, "checkpoint save/load is bit-exact; truncation is a named error", body)


def test_10_grounding_carries_object_content(acceptance, default_model):
    def body():
        stories = make_synthetic_dataset(50, seed=10)
        grounded = ungrounded = 0
        for i, s in enumerate(stories):
            target = sorted(s.target_layout.pairs())
            labels = {o.label for o in s.target_layout.objects}
            client = ScriptedClient(default=serialize_layout(s.target_layout))
            ex = s.to_story_example()
            img, _, _ = generate_image(ex, default_model, client, seed=i)
            grounded += decode_rectangles(img, labels) == target
            img, _, _ = generate_image(ex, default_model, None, seed=i, grounding=False)
            ungrounded += decode_rectangles(img, labels) == target
        ok = grounded == 50 and ungrounded == 0
        return ok, f"match with layouts {grounded}/50, without {ungrounded}/50"

    acceptance(10, "rendered rectangles match targets with grounding, never without", body)

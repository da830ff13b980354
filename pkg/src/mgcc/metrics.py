"""Evaluation metrics: cosine (CLIP-style) similarity, patch-feature perceptual
distance (LPIPS-style), Frechet distance and bootstrap standard errors.

Feature extractors are plain callables ``image -> 1-D vector``; the toy
visual encoder is the default.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

Extractor = Callable[[np.ndarray], np.ndarray]


@dataclass
class FeatureSet:
    features: np.ndarray  # (N, D)
    ids: list[str]
    extractor: str = "toy"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array (one row per image)")
        if len(self.ids) != len(self.features):
            raise ValueError("ids and features disagree in length")


@dataclass
class MetricReport:
    metric: str
    mean: float
    stderr: float | None
    values: list[float]
    n: int
    seed: int | None = None
    excluded: list[str] = field(default_factory=list)

    def record(self) -> dict:
        out = asdict(self)
        out.pop("values")
        return out


def _check_aligned(real: FeatureSet, gen: FeatureSet) -> None:
    if real.ids != gen.ids:
        raise ValueError("feature sets are not aligned by id")
    if real.features.shape[1] != gen.features.shape[1]:
        raise ValueError(f"feature widths differ: {real.features.shape[1]} vs {gen.features.shape[1]}")


def bootstrap_stderr(values: Sequence[float], resamples: int = 1000, seed: int = 0, exhaustive: bool = False) -> float:
    """Standard deviation of the mean over with-replacement resamples.

    ``exhaustive=True`` enumerates all n**n resamples instead of drawing
    ``resamples`` of them (small n only).
    """
    vals = np.asarray(values, dtype=np.float64)
    n = len(vals)
    if n < 2:
        raise ValueError("bootstrap needs at least two values")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    if exhaustive:
        if n > 8:
            raise ValueError("exhaustive bootstrap is limited to n <= 8")
        idx = np.array(list(itertools.product(range(n), repeat=n)))
    else:
        idx = np.random.default_rng(seed).integers(0, n, size=(resamples, n))
    # centred first so a constant sample gives exactly zero
    vals = vals - vals[0]
    return float(vals[idx].mean(axis=1).std())


def _report(metric: str, values: list[float], ids_excluded: list[str], bootstrap: int, seed: int) -> MetricReport:
    mean = math.fsum(values) / len(values) if values else float("nan")
    stderr = bootstrap_stderr(values, bootstrap, seed) if bootstrap and len(values) >= 2 else None
    return MetricReport(metric, mean, stderr, values, len(values), seed, ids_excluded)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.dot(a, a)), float(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        raise ZeroDivisionError("zero-norm feature vector")
    # sqrt(na * nb) rather than sqrt(na) * sqrt(nb): exact 1.0 for a == b
    return max(-1.0, min(1.0, float(np.dot(a, b)) / math.sqrt(na * nb)))


def clip_similarity(real: FeatureSet, gen: FeatureSet, bootstrap: int = 1000, seed: int = 0) -> MetricReport:
    """Per-image cosine similarity of aligned features; zero vectors are excluded."""
    _check_aligned(real, gen)
    values, excluded = [], []
    for i, image_id in enumerate(real.ids):
        try:
            values.append(cosine(real.features[i], gen.features[i]))
        except ZeroDivisionError:
            excluded.append(image_id)
    return _report("clip", values, excluded, bootstrap, seed)


# --------------------------------------------------------------------------- #
# LPIPS-style distance
# --------------------------------------------------------------------------- #
def _pixels(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def iter_patches(image: np.ndarray, patch: int):
    H, W = image.shape[:2]
    if H < patch or W < patch:
        raise ValueError(f"image {H}x{W} smaller than one {patch}x{patch} patch")
    for y in range(0, H - patch + 1, patch):
        for x in range(0, W - patch + 1, patch):
            yield image[y : y + patch, x : x + patch]


def _unit(v: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def lpips_distance(real, gen, extractor: Extractor | None = None, patch: int = 8) -> float:
    """Mean over non-overlapping patches of ||unit(f(a)) - unit(f(b))||^2."""
    a, b = _pixels(real), _pixels(gen)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if extractor is None:
        extractor = default_patch_extractor(a.shape[2] if a.ndim == 3 else 1, patch)
    total, count = 0.0, 0
    for pa, pb in zip(iter_patches(a, patch), iter_patches(b, patch)):
        fa = _unit(np.asarray(extractor(pa), dtype=np.float64).reshape(-1))
        fb = _unit(np.asarray(extractor(pb), dtype=np.float64).reshape(-1))
        total += float(np.sum((fa - fb) ** 2))
        count += 1
    return total / count


def default_patch_extractor(channels: int, patch: int = 8, d: int = 16, seed: int = 7) -> Extractor:
    from mgcc.backbone import ToyVisualEncoder

    enc = ToyVisualEncoder((patch, patch, channels), d, seed=seed)

    def extract(p: np.ndarray) -> np.ndarray:
        p = p if p.ndim == 3 else p[..., None]
        return enc(p).numpy()

    return extract


def lpips_report(real_images, gen_images, ids, extractor=None, bootstrap: int = 1000, seed: int = 0) -> MetricReport:
    values = [lpips_distance(a, b, extractor) for a, b in zip(real_images, gen_images)]
    return _report("lpips", values, [], bootstrap, seed)


# --------------------------------------------------------------------------- #
# FID
# --------------------------------------------------------------------------- #
def psd_sqrt_trace(a: np.ndarray, b: np.ndarray, tol: float = 1e-8) -> float:
    """tr((a b)^{1/2}) for symmetric PSD a, b via the symmetric form a^{1/2} b a^{1/2}."""
    w, v = np.linalg.eigh((a + a.T) / 2)
    w = _clamp(w, tol)
    ra = (v * np.sqrt(w)) @ v.T
    m = ra @ b @ ra
    ev = _clamp(np.linalg.eigvalsh((m + m.T) / 2), tol)
    return float(np.sum(np.sqrt(ev)))


def _clamp(w: np.ndarray, tol: float) -> np.ndarray:
    floor = -tol * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if np.any(w < floor):
        raise np.linalg.LinAlgError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    return np.clip(w, 0.0, None)


def fid(real: FeatureSet | np.ndarray, gen: FeatureSet | np.ndarray, diagonal_fallback: bool = False) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    xr = real.features if isinstance(real, FeatureSet) else np.asarray(real, dtype=np.float64)
    xg = gen.features if isinstance(gen, FeatureSet) else np.asarray(gen, dtype=np.float64)
    if xr.shape[1] != xg.shape[1]:
        raise ValueError("feature widths differ")
    D = xr.shape[1]
    if min(len(xr), len(xg)) < 2:
        raise ValueError("need at least two samples per set")
    mu_r, mu_g = xr.mean(0), xg.mean(0)
    mean_term = float(np.sum((mu_r - mu_g) ** 2))
    if min(len(xr), len(xg)) < D + 1:
        if not diagonal_fallback:
            raise ValueError(f"need at least {D + 1} samples per set for a full covariance (width {D})")
        vr, vg = xr.var(0, ddof=1), xg.var(0, ddof=1)
        return max(0.0, mean_term + float(np.sum(vr + vg - 2 * np.sqrt(vr * vg))))
    cr = np.cov(xr, rowvar=False)
    cg = np.cov(xg, rowvar=False)
    trace = float(np.trace(cr) + np.trace(cg)) - 2 * psd_sqrt_trace(cr, cg)
    return max(0.0, mean_term + trace)


def fid_report(real: FeatureSet, gen: FeatureSet, seed: int = 0, diagonal_fallback: bool = True) -> MetricReport:
    # set-level metric: one value, no per-example bootstrap
    _check_aligned(real, gen)
    value = fid(real, gen, diagonal_fallback)
    return MetricReport("fid", value, None, [value], len(real.ids), seed)


def extract_features(images: Sequence[np.ndarray], ids: Sequence[str], extractor: Extractor, name: str = "toy") -> FeatureSet:
    feats = np.stack([np.asarray(extractor(im), dtype=np.float64).reshape(-1) for im in images])
    return FeatureSet(feats, list(ids), name)

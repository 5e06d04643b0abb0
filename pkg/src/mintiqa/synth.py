"""Procedural synthetic corpora for tests and toy training runs.

Each generated picture is noise around a controlled brightness, contrast and
red/blue tilt.  Labels are then recomputed from the stored (quantized) pixels,
so every label is an exact deterministic function of image statistics and a
model can in principle recover it from pixels alone.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (CHALLENGE_CATEGORIES, DEFAULT_VOCABULARIES, Dataset,
                      FineGrainedAnnotation, ImageRecord, PromptRecord,
                      SCENE_CATEGORIES, save_manifest)

_NOUNS = ("cat", "bridge", "lantern", "forest", "robot", "teapot", "harbor",
          "violin", "mountain", "garden")
_STYLES = ("realistic", "painting", "watercolor", "sketch", "cartoon",
           "abstract", "photorealistic", "artistic", "fiction", "texture")
_MOODS = ("serene", "gloomy", "joyful", "dreamy", "mysterious")


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def pixel_scores(pixels: np.ndarray) -> dict[str, float]:
    """Map pixel statistics of an RGB [0,1] array to [0,100] labels.

    brightness -> quality, contrast -> authenticity,
    red-minus-blue tilt -> correspondence.
    """
    m = float(pixels.mean())
    s = float(pixels.std())
    t = float(pixels[..., 0].mean() - pixels[..., 2].mean())
    return {
        "quality": 100.0 * _clip01((m - 0.10) / 0.80),
        "authenticity": 100.0 * _clip01((s - 0.02) / 0.33),
        "correspondence": 100.0 * _clip01((t + 0.25) / 0.50),
    }


def _level(score: float, vocab: tuple[str, ...]) -> str:
    idx = min(len(vocab) - 1, int(score / 100.0 * len(vocab)))
    return vocab[idx]


def labels_from_scores(scores: dict[str, float],
                       vocabularies: dict[str, tuple[str, ...]] | None = None
                       ) -> dict[str, str]:
    vocabularies = vocabularies or DEFAULT_VOCABULARIES
    return {
        "clarity": _level(scores["quality"], vocabularies["clarity"]),
        "outline": _level(scores["quality"], vocabularies["outline"]),
        "detail_richness": _level(scores["authenticity"],
                                  vocabularies["detail_richness"]),
        "geometry_distortion": _level(scores["authenticity"],
                                      vocabularies["geometry_distortion"]),
        "text_image_consistency": _level(scores["correspondence"],
                                         vocabularies["text_image_consistency"]),
    }


def render_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One synthetic RGB uint8 image with randomized brightness/contrast/tilt."""
    brightness = rng.uniform(0.25, 0.80)
    contrast = rng.uniform(0.06, 0.30)
    tilt = rng.uniform(-0.18, 0.18)
    field = rng.standard_normal((size, size, 1))
    field = field - field.mean()
    std = field.std()
    if std > 0:
        field = field / std
    img = brightness + contrast * np.repeat(field, 3, axis=2)
    img[..., 0] += tilt
    img[..., 2] -= tilt
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def make_synthetic_dataset(root, n_prompts: int = 50,
                           generator_tags: tuple[str, ...] = ("gen-a", "gen-b"),
                           images_per_generator: int = 2,
                           image_size: int = 32, seed: int = 0) -> Dataset:
    """Build a corpus under ``root`` and write root/manifest.jsonl.

    Total images = n_prompts * len(generator_tags) * images_per_generator.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ds = Dataset(root=root)
    width = len(str(max(1, n_prompts - 1)))
    for i in range(n_prompts):
        pid = f"p{i:0{width}d}"
        noun = _NOUNS[i % len(_NOUNS)]
        style = _STYLES[i % len(_STYLES)]
        mood = _MOODS[i % len(_MOODS)]
        rec = PromptRecord(
            prompt_id=pid,
            raw_text=f"a {style} image of a {mood} {noun}",
            scene_category=SCENE_CATEGORIES[i % len(SCENE_CATEGORIES)],
            challenge_category=CHALLENGE_CATEGORIES[
                (i // len(SCENE_CATEGORIES)) % len(CHALLENGE_CATEGORIES)],
        )
        ds.prompts[pid] = rec
        for tag in generator_tags:
            for k in range(images_per_generator):
                image_id = f"{pid}-{tag}-{k}"
                rel = f"images/{image_id}.png"
                arr = render_image(rng, image_size)
                Image.fromarray(arr, mode="RGB").save(root / rel)
                ds.images[image_id] = ImageRecord(
                    image_id=image_id, prompt_id=pid, generator_tag=tag,
                    file_path=rel, width=image_size, height=image_size)
                scores = pixel_scores(arr.astype(np.float64) / 255.0)
                ds.mos[image_id] = scores
                labels = labels_from_scores(scores, ds.vocabularies)
                ds.annotations[image_id] = [FineGrainedAnnotation(
                    image_id=image_id,
                    explanation_text=f"the {noun} looks {labels['clarity']}",
                    **labels)]
    save_manifest(ds, root / "manifest.jsonl")
    return ds


def simulate_ratings(ds: Dataset, n_subjects: int = 28, seed: int = 0,
                     wild_fraction: float = 0.0) -> list[dict]:
    """Raw 0-5 panel ratings consistent with the dataset's MOS labels.

    Each subject applies a private affine response (gain, offset) plus small
    noise to the latent [0,100] score; a ``wild_fraction`` of ratings is
    replaced by uniform noise to exercise outlier screening.
    """
    rng = np.random.default_rng(seed)
    records: list[dict] = []
    image_ids = sorted(ds.mos)
    for s in range(n_subjects):
        subject_id = f"subj{s:03d}"
        gain = rng.uniform(0.7, 1.3)
        offset = rng.uniform(-0.4, 0.4)
        for image_id in image_ids:
            for persp, latent in sorted(ds.mos[image_id].items()):
                if rng.random() < wild_fraction:
                    rating = rng.uniform(0.0, 5.0)
                else:
                    rating = gain * (latent / 20.0) + offset \
                        + rng.normal(0.0, 0.15)
                    rating = min(5.0, max(0.0, rating))
                records.append({"subject_id": subject_id, "image_id": image_id,
                                "perspective": persp,
                                "rating": round(rating, 4)})
    return records

"""Manifest schema and ingestion for prompt/image/MOS/annotation corpora.

Manifests are UTF-8 JSON Lines.  The first line is a header carrying the
schema version; every following line is tagged with ``kind`` in
{prompt, image, mos, annotation}.  Images are referenced by path relative to
the manifest and decoded to RGB float arrays in [0,1].
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

SCHEMA_VERSION = 1

SCENE_CATEGORIES = (
    "people", "animals", "artifacts", "illustrations", "indoor scenes",
    "outdoor scenes", "vehicles", "produce & plants", "food & beverage",
    "world knowledge",
)

CHALLENGE_CATEGORIES = (
    "basic", "simple detail", "fine-grained detail", "complex", "quantity",
    "imagination", "style & format", "perspective", "writing & symbols",
    "linguistic structures",
)

DIMENSIONS = ("quality", "authenticity", "correspondence")

# The five single-choice factors, their closed level vocabularies (worst to
# best) and the evaluation dimension each factor informs.  Vocabularies are
# configuration: pass a custom ``vocabularies`` mapping to override wording.
DEFAULT_VOCABULARIES: dict[str, tuple[str, ...]] = {
    "clarity": ("very blurry", "partially blurry", "essentially clear", "very clear"),
    "outline": ("unrecognizable outline", "partially recognizable",
                "essentially recognizable", "fully recognizable"),
    "detail_richness": ("very poor details", "limited details",
                        "adequate details", "rich details"),
    "geometry_distortion": ("highly distorted", "partially distorted",
                            "essentially distortion-free"),
    "text_image_consistency": ("highly inconsistent", "partially inconsistent",
                               "essentially consistent"),
}

FACTOR_DIMENSION = {
    "clarity": "quality",
    "outline": "quality",
    "detail_richness": "quality",
    "geometry_distortion": "authenticity",
    "text_image_consistency": "correspondence",
}

CANONICAL_QUESTIONS = {
    "quality": "How is the quality of the image?",
    "authenticity": "How is the authenticity of the image?",
    "correspondence": "How is the correspondence between the image and its text prompt?",
}

FACTOR_QUESTIONS = {
    "clarity": "How is the clarity of the image?",
    "outline": "How is the outline of the image?",
    "detail_richness": "How is the richness of details in the image?",
    "geometry_distortion": "How is the geometry distortion of the image?",
    "text_image_consistency": "How is the consistency between the image and its text prompt?",
}

# Which factor answers each canonical dimension question.
DIMENSION_FACTOR = {
    "quality": "clarity",
    "authenticity": "geometry_distortion",
    "correspondence": "text_image_consistency",
}


class ManifestError(ValueError):
    pass


@dataclass
class PromptRecord:
    prompt_id: str
    raw_text: str
    scene_category: str
    challenge_category: str
    segmented: dict | None = None  # optional SegmentedPrompt.to_dict()

    def validate(self):
        if not self.raw_text:
            raise ManifestError(f"prompt {self.prompt_id}: empty raw_text")
        if self.scene_category not in SCENE_CATEGORIES:
            raise ManifestError(f"prompt {self.prompt_id}: unknown scene "
                                f"{self.scene_category!r}")
        if self.challenge_category not in CHALLENGE_CATEGORIES:
            raise ManifestError(f"prompt {self.prompt_id}: unknown challenge "
                                f"{self.challenge_category!r}")


@dataclass
class ImageRecord:
    image_id: str
    prompt_id: str
    generator_tag: str
    file_path: str
    width: int
    height: int


@dataclass
class FineGrainedAnnotation:
    image_id: str
    clarity: str
    outline: str
    detail_richness: str
    geometry_distortion: str
    text_image_consistency: str
    explanation_text: str = ""

    def labels(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in DEFAULT_VOCABULARIES}

    def validate(self, vocabularies: dict[str, tuple[str, ...]]):
        for factor, vocab in vocabularies.items():
            value = getattr(self, factor)
            if value not in vocab:
                raise ManifestError(
                    f"annotation {self.image_id}: {factor}={value!r} not in vocabulary")


@dataclass(frozen=True)
class QaPair:
    image_id: str
    dimension: str
    question: str
    answer: str


@dataclass
class Dataset:
    root: Path
    prompts: dict[str, PromptRecord] = field(default_factory=dict)
    images: dict[str, ImageRecord] = field(default_factory=dict)
    mos: dict[str, dict[str, float]] = field(default_factory=dict)
    annotations: dict[str, list[FineGrainedAnnotation]] = field(default_factory=dict)
    vocabularies: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_VOCABULARIES))

    def counts(self) -> dict:
        scenes: dict[str, int] = {}
        challenges: dict[str, int] = {}
        generators: dict[str, int] = {}
        for p in self.prompts.values():
            scenes[p.scene_category] = scenes.get(p.scene_category, 0) + 1
            challenges[p.challenge_category] = challenges.get(p.challenge_category, 0) + 1
        for im in self.images.values():
            generators[im.generator_tag] = generators.get(im.generator_tag, 0) + 1
        return {
            "n_prompts": len(self.prompts),
            "n_images": len(self.images),
            "n_mos": len(self.mos),
            "n_annotations": sum(len(v) for v in self.annotations.values()),
            "scenes": scenes,
            "challenges": challenges,
            "generators": generators,
        }

    def load_pixels(self, image_id: str) -> np.ndarray:
        """Decode the referenced file to an RGB float64 array in [0,1]."""
        rec = self.images[image_id]
        with Image.open(self.root / rec.file_path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0


def load_manifest(path, require_files: bool = True) -> Dataset:
    path = Path(path)
    ds = Dataset(root=path.parent)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise ManifestError(f"{path}: empty file (missing schema header)")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(f"{path}:1: unsupported schema_version "
                            f"{header.get('schema_version')!r}")
    if "vocabularies" in header:
        ds.vocabularies = {k: tuple(v) for k, v in header["vocabularies"].items()}
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        kind = obj.pop("kind", None)
        try:
            if kind == "prompt":
                rec = PromptRecord(**obj)
                rec.validate()
                if rec.prompt_id in ds.prompts:
                    raise ManifestError(f"duplicate prompt_id {rec.prompt_id}")
                ds.prompts[rec.prompt_id] = rec
            elif kind == "image":
                img = ImageRecord(**obj)
                if img.image_id in ds.images:
                    raise ManifestError(f"duplicate image_id {img.image_id}")
                if img.prompt_id not in ds.prompts:
                    raise ManifestError(f"image {img.image_id}: dangling prompt_id "
                                        f"{img.prompt_id}")
                if require_files and not (ds.root / img.file_path).exists():
                    raise ManifestError(f"image {img.image_id}: missing file "
                                        f"{img.file_path}")
                ds.images[img.image_id] = img
            elif kind == "mos":
                image_id = obj["image_id"]
                if image_id not in ds.images:
                    raise ManifestError(f"mos: dangling image_id {image_id}")
                scores = {k: float(v) for k, v in obj["scores"].items()}
                for dim, v in scores.items():
                    if dim not in DIMENSIONS:
                        raise ManifestError(f"mos {image_id}: unknown dimension {dim!r}")
                    if not (0.0 <= v <= 100.0):
                        raise ManifestError(f"mos {image_id}: {dim}={v} out of [0,100]")
                ds.mos[image_id] = scores
            elif kind == "annotation":
                ann = FineGrainedAnnotation(**obj)
                if ann.image_id not in ds.images:
                    raise ManifestError(f"annotation: dangling image_id {ann.image_id}")
                ann.validate(ds.vocabularies)
                ds.annotations.setdefault(ann.image_id, []).append(ann)
            else:
                raise ManifestError(f"unknown kind {kind!r}")
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        except TypeError as exc:
            raise ManifestError(f"{path}:{lineno}: bad record fields ({exc})") from exc
    return ds


def save_manifest(ds: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        header = {"schema_version": SCHEMA_VERSION,
                  "vocabularies": {k: list(v) for k, v in ds.vocabularies.items()}}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in sorted(ds.prompts.values(), key=lambda r: r.prompt_id):
            fh.write(json.dumps({"kind": "prompt", **asdict(p)}, sort_keys=True) + "\n")
        for im in sorted(ds.images.values(), key=lambda r: r.image_id):
            fh.write(json.dumps({"kind": "image", **asdict(im)}, sort_keys=True) + "\n")
        for image_id in sorted(ds.mos):
            fh.write(json.dumps({"kind": "mos", "image_id": image_id,
                                 "scores": dict(sorted(ds.mos[image_id].items()))},
                                sort_keys=True) + "\n")
        for image_id in sorted(ds.annotations):
            for ann in ds.annotations[image_id]:
                fh.write(json.dumps({"kind": "annotation", **asdict(ann)},
                                    sort_keys=True) + "\n")


def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split by prompt, so image content never leaks."""
    if not (0.0 < ratio < 1.0):
        raise ManifestError(f"split ratio {ratio} out of (0,1)")
    prompt_ids = sorted(ds.prompts)
    rng = random.Random(seed)
    rng.shuffle(prompt_ids)
    n_train = round(len(prompt_ids) * ratio)
    if n_train == 0 or n_train == len(prompt_ids):
        raise ManifestError(f"split ratio {ratio} yields an empty side "
                            f"for {len(prompt_ids)} prompts")
    train_ids = set(prompt_ids[:n_train])

    def subset(keep: set[str]) -> Dataset:
        sub = Dataset(root=ds.root, vocabularies=dict(ds.vocabularies))
        sub.prompts = {k: v for k, v in ds.prompts.items() if k in keep}
        sub.images = {k: v for k, v in ds.images.items() if v.prompt_id in keep}
        sub.mos = {k: v for k, v in ds.mos.items() if k in sub.images}
        sub.annotations = {k: v for k, v in ds.annotations.items() if k in sub.images}
        return sub

    return subset(train_ids), subset(set(prompt_ids[n_train:]))


def generate_qa_pairs(annotation: FineGrainedAnnotation,
                      vocabularies: dict[str, tuple[str, ...]] | None = None
                      ) -> list[QaPair]:
    """Deterministic template QA pairs from one annotation.

    Emits one pair per canonical dimension question, one per single-choice
    factor, and a free-text explanation pair when present (8 or 9 per image).
    """
    vocabularies = vocabularies or DEFAULT_VOCABULARIES
    annotation.validate(vocabularies)
    pairs: list[QaPair] = []
    for dim in DIMENSIONS:
        factor = DIMENSION_FACTOR[dim]
        pairs.append(QaPair(annotation.image_id, dim, CANONICAL_QUESTIONS[dim],
                            getattr(annotation, factor)))
    for factor in DEFAULT_VOCABULARIES:
        pairs.append(QaPair(annotation.image_id, FACTOR_DIMENSION[factor],
                            FACTOR_QUESTIONS[factor], getattr(annotation, factor)))
    if annotation.explanation_text:
        pairs.append(QaPair(annotation.image_id, "correspondence",
                            "Explain the main problems of the image.",
                            annotation.explanation_text))
    return pairs


def question_vocabulary(question: str,
                        vocabularies: dict[str, tuple[str, ...]] | None = None
                        ) -> tuple[str, ...] | None:
    """Closed answer vocabulary for a template question, if it has one."""
    vocabularies = vocabularies or DEFAULT_VOCABULARIES
    for dim, q in CANONICAL_QUESTIONS.items():
        if q == question:
            return tuple(vocabularies[DIMENSION_FACTOR[dim]])
    for factor, q in FACTOR_QUESTIONS.items():
        if q == question:
            return tuple(vocabularies[factor])
    return None

"""Subjective-study score processing: z-scoring, screening, and MOS tables.

Raw 0-5 ratings are normalized per subject, rescaled to [0,100], screened for
outliers at the subject and the individual-rating level, and averaged into a
per-image MOS for each perspective.  Perspectives are processed independently.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

PERSPECTIVES = ("quality", "authenticity", "correspondence")


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class RawRatingRecord:
    subject_id: str
    image_id: str
    perspective: str
    rating: float

    def __post_init__(self):
        if self.perspective not in PERSPECTIVES:
            raise StudyError(f"unknown perspective {self.perspective!r}")
        if not (0.0 <= self.rating <= 5.0):
            raise StudyError(
                f"rating {self.rating} out of [0,5] "
                f"(subject {self.subject_id}, image {self.image_id})")


@dataclass
class RejectionPolicy:
    subject_corr_min: float = 0.2
    z_abs_max: float = 3.0


@dataclass
class RejectionReport:
    rejected_subjects: dict[str, list[str]] = field(default_factory=dict)
    n_ratings_in: int = 0
    n_subject_level_rejected: int = 0
    n_rating_level_rejected: int = 0
    degenerate_subjects: dict[str, list[str]] = field(default_factory=dict)

    @property
    def rejection_rate(self) -> float:
        if self.n_ratings_in == 0:
            return 0.0
        removed = self.n_subject_level_rejected + self.n_rating_level_rejected
        return removed / self.n_ratings_in

    def to_dict(self) -> dict:
        return {
            "rejected_subjects": {k: sorted(v) for k, v in self.rejected_subjects.items()},
            "degenerate_subjects": {k: sorted(v) for k, v in self.degenerate_subjects.items()},
            "n_ratings_in": self.n_ratings_in,
            "n_subject_level_rejected": self.n_subject_level_rejected,
            "n_rating_level_rejected": self.n_rating_level_rejected,
            "rejection_rate": self.rejection_rate,
        }


@dataclass
class MosTable:
    # image_id -> perspective -> MOS in [0,100]
    mos: dict[str, dict[str, float]]
    # perspective -> number of valid subjects
    valid_subject_count: dict[str, int]
    # images that lost all ratings for some perspective
    dropped: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mos": {img: dict(sorted(per.items())) for img, per in sorted(self.mos.items())},
            "valid_subject_count": dict(sorted(self.valid_subject_count.items())),
            "dropped": {k: sorted(v) for k, v in sorted(self.dropped.items())},
        }


def _check_unique(ratings: list[RawRatingRecord]) -> None:
    seen = set()
    for r in ratings:
        key = (r.subject_id, r.image_id, r.perspective)
        if key in seen:
            raise StudyError(f"duplicate rating for {key}")
        seen.add(key)


def _by_perspective(ratings: list[RawRatingRecord]) -> dict[str, list[RawRatingRecord]]:
    out: dict[str, list[RawRatingRecord]] = {}
    for r in ratings:
        out.setdefault(r.perspective, []).append(r)
    return out


def _subject_stats(records: list[RawRatingRecord]) -> dict[str, tuple[float, float, int]]:
    """Per-subject (mean, stddev with N-1 denominator, count) within one perspective."""
    per_subject: dict[str, list[float]] = {}
    for r in records:
        per_subject.setdefault(r.subject_id, []).append(r.rating)
    stats = {}
    for sid, vals in per_subject.items():
        n = len(vals)
        mu = sum(vals) / n
        sigma = math.sqrt(sum((v - mu) ** 2 for v in vals) / (n - 1)) if n >= 2 else 0.0
        stats[sid] = (mu, sigma, n)
    return stats


def rescale_z(z: float) -> float:
    """Map a z-score to [0,100] via 100(z+3)/6, clamped at the ends."""
    return min(100.0, max(0.0, 100.0 * (z + 3.0) / 6.0))


def z_score_normalize(ratings: list[RawRatingRecord]
                      ) -> tuple[dict[tuple[str, str, str], float], dict[str, list[str]]]:
    """Per-subject z-scores rescaled to [0,100].

    Returns (table keyed by (subject, image, perspective), degenerate subjects
    per perspective).  Subjects with fewer than 2 ratings or zero spread are
    excluded from the perspective in question.
    """
    _check_unique(ratings)
    table: dict[tuple[str, str, str], float] = {}
    degenerate: dict[str, list[str]] = {}
    for persp, records in _by_perspective(ratings).items():
        stats = _subject_stats(records)
        for r in records:
            mu, sigma, n = stats[r.subject_id]
            if n < 2 or sigma == 0.0:
                bucket = degenerate.setdefault(persp, [])
                if r.subject_id not in bucket:
                    bucket.append(r.subject_id)
                continue
            z = (r.rating - mu) / sigma
            table[(r.subject_id, r.image_id, persp)] = rescale_z(z)
    return table, degenerate


def _pearson(xs: list[float], ys: list[float]) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def reject_outliers(ratings: list[RawRatingRecord],
                    policy: RejectionPolicy | None = None
                    ) -> tuple[list[RawRatingRecord], RejectionReport]:
    """Two-level screening: disagreeing subjects, then individual wild ratings.

    Subject level: a subject whose ratings correlate below
    ``policy.subject_corr_min`` with the leave-one-out per-image mean is
    dropped for that perspective.  Subjects in perfect agreement with the
    panel (zero spread anywhere) are never dropped.

    Rating level: per-subject z' values farther than ``policy.z_abs_max``
    standard deviations from the per-image mean of z' values are dropped.
    """
    policy = policy or RejectionPolicy()
    _check_unique(ratings)
    report = RejectionReport(n_ratings_in=len(ratings))
    kept: list[RawRatingRecord] = []
    for persp, records in _by_perspective(ratings).items():
        subjects = sorted({r.subject_id for r in records})
        if len(subjects) < 3:
            raise StudyError(f"perspective {persp}: need >= 3 subjects, got {len(subjects)}")
        by_image: dict[str, dict[str, float]] = {}
        for r in records:
            by_image.setdefault(r.image_id, {})[r.subject_id] = r.rating
        rejected: set[str] = set()
        for sid in subjects:
            own, loo = [], []
            for img, per_subject in by_image.items():
                if sid not in per_subject or len(per_subject) < 2:
                    continue
                others = [v for s, v in per_subject.items() if s != sid]
                own.append(per_subject[sid])
                loo.append(sum(others) / len(others))
            if len(own) < 2:
                continue
            if all(o == ll for o, ll in zip(own, loo)):
                continue  # identical to the panel: perfect agreement
            if _pearson(own, loo) < policy.subject_corr_min:
                rejected.add(sid)
        if rejected == set(subjects):
            raise StudyError(
                f"perspective {persp}: all subjects rejected; thresholds too strict")
        if rejected:
            report.rejected_subjects[persp] = sorted(rejected)
        survivors = [r for r in records if r.subject_id not in rejected]
        report.n_subject_level_rejected += len(records) - len(survivors)

        # rating level: screen z' values against the per-image distribution
        zt, degen = z_score_normalize(survivors)
        if degen.get(persp):
            report.degenerate_subjects[persp] = degen[persp]
        z_by_image: dict[str, list[float]] = {}
        for (sid, img, p), z in zt.items():
            z_by_image.setdefault(img, []).append(z)
        for r in survivors:
            key = (r.subject_id, r.image_id, persp)
            if key not in zt:
                kept.append(r)  # degenerate subjects handled downstream
                continue
            vals = z_by_image[r.image_id]
            n = len(vals)
            if n < 2:
                kept.append(r)
                continue
            mu = sum(vals) / n
            sd = math.sqrt(sum((v - mu) ** 2 for v in vals) / (n - 1))
            if sd > 0.0 and abs(zt[key] - mu) > policy.z_abs_max * sd:
                report.n_rating_level_rejected += 1
                continue
            kept.append(r)
    return kept, report


def compute_mos(z_table: dict[tuple[str, str, str], float]) -> MosTable:
    """Average surviving z' values per image and perspective."""
    sums: dict[str, dict[str, tuple[float, int]]] = {}
    subjects: dict[str, set[str]] = {}
    for (sid, img, persp), z in z_table.items():
        total, count = sums.setdefault(persp, {}).get(img, (0.0, 0))
        sums[persp][img] = (total + z, count + 1)
        subjects.setdefault(persp, set()).add(sid)
    mos: dict[str, dict[str, float]] = {}
    for persp, imgs in sums.items():
        for img, (total, count) in imgs.items():
            mos.setdefault(img, {})[persp] = total / count
    valid = {p: len(s) for p, s in subjects.items()}
    dropped: dict[str, list[str]] = {}
    all_images = set(mos)
    for persp in sums:
        missing = sorted(all_images - set(sums[persp]))
        if missing:
            dropped[persp] = missing
    return MosTable(mos=mos, valid_subject_count=valid, dropped=dropped)


def process_study(ratings: list[RawRatingRecord],
                  policy: RejectionPolicy | None = None
                  ) -> tuple[MosTable, RejectionReport]:
    """Full pipeline: screening, z-scoring, MOS. Deterministic in its inputs."""
    if not ratings:
        raise StudyError("no ratings")
    kept, report = reject_outliers(ratings, policy)
    z_table, _ = z_score_normalize(kept)
    return compute_mos(z_table), report


def load_ratings_jsonl(path) -> list[RawRatingRecord]:
    """Read RawRatingRecord JSON lines.

    Annotation-server submission records (with a ``scores`` object) are
    accepted too and expanded into one record per perspective; a re-submission
    for the same (subject, image) replaces the earlier one.
    """
    flat: list[RawRatingRecord] = []
    resubmittable: dict[tuple[str, str, str], RawRatingRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StudyError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                if "scores" in obj:
                    for persp, value in obj["scores"].items():
                        rec = RawRatingRecord(
                            subject_id=obj["subject_id"], image_id=obj["image_id"],
                            perspective=persp, rating=float(value))
                        resubmittable[(rec.subject_id, rec.image_id, persp)] = rec
                else:
                    flat.append(RawRatingRecord(
                        subject_id=obj["subject_id"], image_id=obj["image_id"],
                        perspective=obj["perspective"], rating=float(obj["rating"])))
            except (KeyError, TypeError, ValueError, StudyError) as exc:
                raise StudyError(f"{path}:{lineno}: {exc}") from exc
    return flat + list(resubmittable.values())

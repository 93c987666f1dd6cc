"""Gallery enrollment, correlation matching, ranked identification, and CMC.

Signatures are canonical-frame vesselness maps. Similarity is the plain
correlation coefficient over the intersection of the two signatures' valid
supports, so zero padding from the mesh exterior never enters the statistic.
Identification is closed set: every probe gets a full ranking of enrolled
subjects, best correlation per subject, ties broken by enrollment order.

Enrollment quantizes signature values onto the 16-bit grid before storing
them, which makes a persisted gallery reload bit-identical to the in-memory
one: match results survive a save/load round trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GalleryError, ZeroVarianceError
from .imaging import read_image, write_image
from .vesselness import VesselnessMap

__all__ = [
    "Signature",
    "Gallery",
    "MatchResult",
    "make_signature",
    "ncc",
    "ncc_arrays",
    "enroll",
    "identify",
    "cmc",
    "save_gallery",
    "load_gallery",
]

GALLERY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Signature:
    """Canonical-frame vesselness map tagged with identity and provenance."""

    values: np.ndarray
    mask: np.ndarray
    subject_id: str
    image_id: str
    config_hash: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape:
            raise ValueError("signature values and mask must share a shape")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)


def make_signature(
    vmap: VesselnessMap, mask: np.ndarray, subject_id: str, image_id: str, meta: dict | None = None
) -> Signature:
    return Signature(
        values=vmap.values,
        mask=mask,
        subject_id=subject_id,
        image_id=image_id,
        config_hash=vmap.config_hash,
        meta=dict(meta or {}),
    )


def ncc_arrays(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Correlation coefficient of two equal-shaped arrays over a support.

    Means are taken over the support. A constant input over the support has
    no defined correlation and raises :class:`ZeroVarianceError`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("correlation inputs must share a shape")
    if mask is not None:
        a = a[mask]
        b = b[mask]
    else:
        a = a.ravel()
        b = b.ravel()
    if a.size < 2:
        raise ZeroVarianceError("correlation support has fewer than 2 pixels")
    da = a - a.mean()
    db = b - b.mean()
    var_a = float(da @ da)
    var_b = float(db @ db)
    if var_a <= 0 or var_b <= 0:
        raise ZeroVarianceError("constant signature has no defined correlation")
    return float((da @ db) / np.sqrt(var_a * var_b))


def ncc(a: Signature, b: Signature) -> float:
    """Similarity of two signatures over the intersection of their supports."""
    if a.values.shape != b.values.shape:
        raise ValueError("signatures must live on the same canonical frame")
    return ncc_arrays(a.values, b.values, a.mask & b.mask)


def _quantize16(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 65535.0) / 65535.0


@dataclass(frozen=True)
class Gallery:
    """Ordered collection of enrolled signatures sharing one configuration."""

    entries: tuple[Signature, ...]
    config_hash: str
    model_ref: str = ""

    @property
    def size(self) -> int:
        return len(self.entries)

    def subjects(self) -> list[str]:
        seen: list[str] = []
        for sig in self.entries:
            if sig.subject_id not in seen:
                seen.append(sig.subject_id)
        return seen


def enroll(gallery: Gallery, subject_id: str, sig: Signature) -> Gallery:
    """Return a new gallery with the signature appended.

    The signature's config hash must match the gallery's, and the
    (subject-id, image-id) pair must be new. Values are quantized onto the
    16-bit grid here so that what is matched now equals what a reloaded
    gallery will match later.
    """
    if sig.config_hash != gallery.config_hash:
        raise GalleryError(
            f"config hash mismatch: gallery {gallery.config_hash[:12]}..., "
            f"signature {sig.config_hash[:12]}..."
        )
    for existing in gallery.entries:
        if existing.subject_id == subject_id and existing.image_id == sig.image_id:
            raise GalleryError(f"duplicate enrollment ({subject_id}, {sig.image_id})")
    stored = Signature(
        values=_quantize16(sig.values),
        mask=sig.mask,
        subject_id=subject_id,
        image_id=sig.image_id,
        config_hash=sig.config_hash,
        meta=dict(sig.meta),
    )
    return Gallery(entries=gallery.entries + (stored,), config_hash=gallery.config_hash, model_ref=gallery.model_ref)


@dataclass(frozen=True)
class MatchResult:
    """Ranked closed-set identification outcome for one probe."""

    probe_id: str
    ranking: tuple[tuple[str, float], ...]
    rank: int | None

    def top(self) -> str:
        return self.ranking[0][0]


def identify(gallery: Gallery, probe: Signature) -> MatchResult:
    """Score the probe against every entry and rank subjects by best score.

    Scores are correlations against each enrolled signature; a subject's
    score is its best entry. Subjects sort by descending score with ties
    kept in enrollment order. ``rank`` is the 1-based position of the
    probe's labeled subject if it is enrolled.
    """
    if gallery.size == 0:
        raise GalleryError("cannot identify against an empty gallery")
    order = gallery.subjects()
    best: dict[str, float] = {}
    for sig in gallery.entries:
        rho = ncc(probe, sig)
        if sig.subject_id not in best or rho > best[sig.subject_id]:
            best[sig.subject_id] = rho
    ranking = tuple(
        (subject, best[subject])
        for subject in sorted(order, key=lambda s: (-best[s], order.index(s)))
    )
    rank = None
    if probe.subject_id:
        for position, (subject, _) in enumerate(ranking, start=1):
            if subject == probe.subject_id:
                rank = position
                break
    return MatchResult(probe_id=probe.image_id, ranking=ranking, rank=rank)


def cmc(gallery: Gallery, probes) -> np.ndarray:
    """Cumulative match characteristic over labeled probes.

    Entry N-1 is the fraction of probes whose true subject appears within
    the top N; the curve is non-decreasing and reaches 1.0 at the subject
    count when every probe's subject is enrolled.
    """
    probes = list(probes)
    if not probes:
        raise ValueError("CMC needs at least one probe")
    subjects = set(gallery.subjects())
    ranks = []
    for probe in probes:
        if not probe.subject_id or probe.subject_id not in subjects:
            raise GalleryError(f"probe label {probe.subject_id!r} is not enrolled")
        ranks.append(identify(gallery, probe).rank)
    n_subjects = len(subjects)
    curve = np.zeros(n_subjects, dtype=np.float64)
    for rank in ranks:
        curve[rank - 1 :] += 1.0
    return curve / len(probes)


# ---------------------------------------------------------------------------
# Directory persistence


def save_gallery(directory, gallery: Gallery) -> None:
    """Persist as one 16-bit image + JSON sidecar per entry plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, sig in enumerate(gallery.entries):
        stem = f"entry_{index:04d}"
        write_image(directory / f"{stem}.pgm", sig.values, bits=16)
        sidecar = {
            "subject_id": sig.subject_id,
            "image_id": sig.image_id,
            "meta": sig.meta,
        }
        (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
        entries.append(stem)
    if gallery.entries:
        write_image(directory / "mask.pgm", gallery.entries[0].mask.astype(np.float64), bits=8)
    manifest = {
        "format_version": GALLERY_FORMAT_VERSION,
        "config_hash": gallery.config_hash,
        "model_ref": gallery.model_ref,
        "entries": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_gallery(directory) -> Gallery:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise GalleryError(f"{directory}: no gallery manifest found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != GALLERY_FORMAT_VERSION:
        raise GalleryError(f"{directory}: unsupported gallery version")
    mask = None
    if manifest["entries"]:
        mask = read_image(directory / "mask.pgm").data > 0.5
    signatures = []
    for stem in manifest["entries"]:
        values = read_image(directory / f"{stem}.pgm").data
        sidecar = json.loads((directory / f"{stem}.json").read_text())
        signatures.append(
            Signature(
                values=values,
                mask=mask,
                subject_id=sidecar["subject_id"],
                image_id=sidecar["image_id"],
                config_hash=manifest["config_hash"],
                meta=sidecar.get("meta", {}),
            )
        )
    return Gallery(
        entries=tuple(signatures),
        config_hash=manifest["config_hash"],
        model_ref=manifest.get("model_ref", ""),
    )

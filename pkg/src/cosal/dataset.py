"""Group-structured dataset IO: scanning, masks, predictions, feature cache.

Expected layout:
    <root>/<group>/<image>.{png,jpg,jpeg}     images, one directory per group
    <gt_root>/<group>/<stem>.png              ground-truth masks (same stems)

Feature cache layout (one directory per backend id):
    <cache>/<backend_id>/manifest.json        entry table
    <cache>/<backend_id>/<slug>.bin           row-major (C, H, W) little-endian f32
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CacheCorruptionError, DatasetError
from .types import FeatureMap, GroupRecord, ImageRecord, SaliencyMap

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# Benchmark convention: a GT pixel is foreground iff its 8-bit value exceeds 128.
GT_BINARY_THRESHOLD = 128.0 / 255.0


@dataclass
class DatasetScan:
    """Result of scanning a dataset tree.

    ground_truth maps (group_id, image_id) -> SaliencyMap and is None when no
    GT directory was supplied.
    """

    groups: list[GroupRecord]
    ground_truth: dict[tuple[str, str], SaliencyMap] | None = None

    @property
    def image_count(self) -> int:
        return sum(len(g) for g in self.groups)


def _list_image_files(group_dir: Path) -> list[Path]:
    files = [p for p in group_dir.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(files, key=lambda p: p.stem)


def load_saliency_map(path: Path | str, image_id: str, group_id: str = "") -> SaliencyMap:
    """Load an 8-bit grayscale PNG and rescale to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            values = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DatasetError(f"unreadable mask file {path}: {exc}") from exc
    return SaliencyMap(values=values, image_id=image_id, group_id=group_id)


def binarize_mask(mask: SaliencyMap | np.ndarray,
                  threshold: float = GT_BINARY_THRESHOLD) -> np.ndarray:
    """Binarize a soft mask (strictly greater than threshold) to float {0, 1}."""
    values = mask.values if isinstance(mask, SaliencyMap) else np.asarray(mask)
    return (values > threshold).astype(np.float64)


def scan_dataset(root_dir: Path | str, gt_dir: Path | str | None = None) -> DatasetScan:
    """Enumerate an image-group tree, optionally pairing images with GT masks.

    Groups are the immediate subdirectories of root_dir, sorted
    lexicographically; members are sorted by image stem. Empty group
    directories are skipped with a warning. When gt_dir is given, a group
    that has masks for some but not all of its images is an error.
    """
    root_dir = Path(root_dir)
    if not root_dir.is_dir():
        raise DatasetError(f"dataset root {root_dir} does not exist or is not a directory")
    gt_root = Path(gt_dir) if gt_dir is not None else None
    if gt_root is not None and not gt_root.is_dir():
        raise DatasetError(f"ground-truth root {gt_root} does not exist or is not a directory")

    groups: list[GroupRecord] = []
    ground_truth: dict[tuple[str, str], SaliencyMap] = {}

    for group_dir in sorted((p for p in root_dir.iterdir() if p.is_dir()),
                            key=lambda p: p.name):
        group_id = group_dir.name
        files = _list_image_files(group_dir)
        if not files:
            logger.warning("skipping empty group directory %s", group_dir)
            continue

        stems = [p.stem for p in files]
        if len(set(stems)) != len(stems):
            dupes = sorted({s for s in stems if stems.count(s) > 1})
            raise DatasetError(f"group {group_id!r}: duplicate image stems {dupes} "
                               f"(e.g. same name with .png and .jpg)")

        members = []
        for path in files:
            try:
                members.append(ImageRecord.from_file(path, group_id))
            except OSError as exc:
                raise DatasetError(f"unreadable image file {path}: {exc}") from exc
        groups.append(GroupRecord(group_id=group_id, members=members))

        if gt_root is not None:
            mask_dir = gt_root / group_id
            found, missing = [], []
            for member in members:
                mask_path = mask_dir / f"{member.image_id}.png"
                if mask_path.is_file():
                    found.append((member.image_id, mask_path))
                else:
                    missing.append(member.image_id)
            if found and missing:
                raise DatasetError(
                    f"group {group_id!r}: ground truth present for some images but "
                    f"missing for: {', '.join(sorted(missing))}")
            for image_id, mask_path in found:
                ground_truth[(group_id, image_id)] = load_saliency_map(
                    mask_path, image_id=image_id, group_id=group_id)

    return DatasetScan(groups=groups,
                       ground_truth=ground_truth if gt_root is not None else None)


def write_prediction(pred: SaliencyMap, out_dir: Path | str) -> Path:
    """Write a prediction as an 8-bit grayscale PNG under out_dir/group/.

    Values are quantized with round-half-up: byte = floor(255 * v + 0.5).
    """
    out_dir = Path(out_dir)
    target_dir = out_dir / pred.group_id if pred.group_id else out_dir
    try:
        target_dir.mkdir(parents=True, exist_ok=True)
        path = target_dir / f"{pred.image_id}.png"
        quantized = np.floor(pred.values * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(quantized, mode="L").save(path)
    except OSError as exc:
        raise DatasetError(f"cannot write prediction under {target_dir}: {exc}") from exc
    return path


@dataclass
class FeatureCacheEntry:
    image_id: str
    backend_id: str
    shape: tuple[int, int, int]  # (C, H, W)
    dtype_tag: str
    payload_path: str
    image_h: int
    image_w: int

    def __post_init__(self) -> None:
        if self.dtype_tag != "f32":
            raise ValueError(f"unsupported dtype tag {self.dtype_tag!r}")
        if any(int(d) < 1 for d in self.shape):
            raise ValueError(f"cache entry {self.image_id!r}: degenerate shape {self.shape}")
        self.shape = tuple(int(d) for d in self.shape)  # type: ignore[assignment]


def _payload_slug(image_id: str) -> str:
    # image ids may contain path separators (group-qualified keys); keep the
    # filename readable but collision-proof via a short digest.
    slug = re.sub(r"[^A-Za-z0-9._-]", "_", image_id)[:80]
    digest = hashlib.sha1(image_id.encode("utf-8")).hexdigest()[:10]
    return f"{slug}-{digest}.bin"


class FeatureCache:
    """On-disk store of f32 feature tensors with a JSON manifest.

    Reads may happen concurrently; writes assume a single writer per cache
    directory. Missing entries are a cache miss (load returns None), anything
    inconsistent raises CacheCorruptionError.
    """

    MANIFEST_NAME = "manifest.json"

    def __init__(self, cache_root: Path | str, backend_id: str):
        self.backend_id = backend_id
        self.directory = Path(cache_root) / backend_id
        self._entries: dict[str, FeatureCacheEntry] = {}
        self._load_manifest()

    def _manifest_path(self) -> Path:
        return self.directory / self.MANIFEST_NAME

    def _load_manifest(self) -> None:
        path = self._manifest_path()
        if not path.is_file():
            return
        try:
            raw = json.loads(path.read_text())
            for key, item in raw.get("entries", {}).items():
                item["shape"] = tuple(item["shape"])
                self._entries[key] = FeatureCacheEntry(**item)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CacheCorruptionError(f"unreadable cache manifest {path}: {exc}") from exc

    def _write_manifest(self) -> None:
        payload = {
            "backend_id": self.backend_id,
            "entries": {k: asdict(e) | {"shape": list(e.shape)}
                        for k, e in sorted(self._entries.items())},
        }
        tmp = self._manifest_path().with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
        tmp.replace(self._manifest_path())

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._entries

    def save_features(self, image_id: str, fmap: FeatureMap) -> FeatureCacheEntry:
        """Persist one feature map; round-trip through load_features is bit-exact."""
        data = np.ascontiguousarray(fmap.values, dtype="<f4")
        entry = FeatureCacheEntry(
            image_id=image_id,
            backend_id=self.backend_id,
            shape=data.shape,  # type: ignore[arg-type]
            dtype_tag="f32",
            payload_path=_payload_slug(image_id),
            image_h=fmap.image_h,
            image_w=fmap.image_w,
        )
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / entry.payload_path).write_bytes(data.tobytes())
        self._entries[image_id] = entry
        self._write_manifest()
        return entry

    def load_features(self, image_id: str) -> FeatureMap | None:
        """Return the cached FeatureMap, or None on a cache miss."""
        entry = self._entries.get(image_id)
        if entry is None:
            return None
        payload_path = self.directory / entry.payload_path
        if not payload_path.is_file():
            raise CacheCorruptionError(f"cache payload missing: {payload_path}")
        raw = payload_path.read_bytes()
        c, h, w = entry.shape
        expected = c * h * w * 4
        if len(raw) != expected:
            raise CacheCorruptionError(
                f"cache payload {payload_path} has {len(raw)} bytes, expected {expected}")
        values = np.frombuffer(raw, dtype="<f4").reshape(entry.shape).copy()
        return FeatureMap(values=values, grid_h=h, grid_w=w,
                          image_h=entry.image_h, image_w=entry.image_w,
                          backend_id=entry.backend_id)

"""Image-folder datasets: ingestion manifests and image decoding."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, InvalidInputError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
DECODABLE = ("PNG", "JPEG")
MANIFEST_NAME = "dataset_manifest.json"


@dataclass(frozen=True)
class ClassEntry:
    name: str
    index: int
    count: int


@dataclass
class DatasetManifest:
    root: str
    classes: list[ClassEntry]
    samples: list[tuple[str, int]] = field(default_factory=list)  # (path relative to root, class index)

    @property
    def total(self) -> int:
        return len(self.samples)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "classes": [{"name": c.name, "index": c.index, "count": c.count} for c in self.classes],
            "total": self.total,
            "samples": [{"path": p, "label": y} for p, y in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        classes = [ClassEntry(c["name"], int(c["index"]), int(c["count"])) for c in data["classes"]]
        samples = [(s["path"], int(s["label"])) for s in data["samples"]]
        return cls(data["root"], classes, samples)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read dataset manifest {path}: {exc}") from exc


def ingest(root) -> DatasetManifest:
    """Scan ``root/<class>/<image>``; classes and files are ordered lexicographically."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a readable directory")
    try:
        class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    except OSError as exc:
        raise DataError(f"cannot list dataset root {root}: {exc}") from exc
    if not class_dirs:
        raise DataError(f"dataset root {root} contains no class folders")
    classes, samples = [], []
    for index, cdir in enumerate(class_dirs):
        try:
            files = sorted(
                p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES and not p.name.startswith(".")
            )
        except OSError as exc:
            raise DataError(f"cannot list class folder {cdir}: {exc}") from exc
        if not files:
            raise DataError(f"class folder {cdir} contains no PNG or JPEG images")
        classes.append(ClassEntry(cdir.name, index, len(files)))
        samples += [(p.relative_to(root).as_posix(), index) for p in files]
    return DatasetManifest(str(root.resolve()), classes, samples)


def load_image(path) -> np.ndarray:
    """Decode a PNG or JPEG to a float32 ``(H, W, 3)`` array in ``[0, 1]``."""
    try:
        with Image.open(path) as im:
            if im.format not in DECODABLE:
                raise DataError(f"{path}: unsupported image format {im.format}; only PNG and JPEG are accepted")
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / np.float32(255.0)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    return arr


def save_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings so identical pixels give identical bytes
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


class FolderDataset:
    """Lazily decoded dataset over a :class:`DatasetManifest`, with an in-memory cache."""

    def __init__(self, manifest: DatasetManifest, cache: bool = True):
        if manifest.total == 0:
            raise InvalidInputError("dataset is empty")
        self.manifest = manifest
        self.root = Path(manifest.root)
        self.ids = [p for p, _ in manifest.samples]
        self.labels = np.array([y for _, y in manifest.samples], dtype=np.int64)
        self.class_names = manifest.class_names
        self._cache: dict[int, np.ndarray] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.ids)

    def path(self, i: int) -> Path:
        return self.root / self.ids[i]

    def image(self, i: int) -> np.ndarray:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        img = load_image(self.path(i))
        if self._cache is not None:
            self._cache[i] = img
        return img

    def label(self, i: int) -> int:
        return int(self.labels[i])


def write_image_folder(root, images: np.ndarray, labels: np.ndarray, class_names) -> DatasetManifest:
    """Write ``images`` as ``root/<class name>/<index>.png`` and ingest the result."""
    root = Path(root)
    counters: dict[int, int] = {}
    for img, y in zip(images, labels):
        y = int(y)
        k = counters.get(y, 0)
        counters[y] = k + 1
        save_png(root / class_names[y] / f"{k:05d}.png", img)
    return ingest(root)

"""Dataset schemas, ingestion, label splits, augmentation, and batching.

On-disk layout for a dataset directory:
    data.csv        -- header `id,split,label,<col...>`; one row per sample
    schema.json     -- {"columns": [{"name", "kind", "cardinality"?}, ...]}
    split.json      -- {"seed", "label_fraction", "labeled_ids",
                        "unlabeled_ids", "val_ids", "test_ids"}
    images/<id>.png -- one lossless grayscale image per id, loaded to [0,1]
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class Column:
    name: str
    kind: str  # "categorical" | "continuous"
    cardinality: int | None = None
    mean: float | None = None
    std: float | None = None


@dataclass
class TabularSchema:
    columns: list[Column]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        for c in self.columns:
            if c.kind == "categorical":
                if c.cardinality is None or c.cardinality < 2:
                    raise DataError(f"column {c.name}: cardinality must be >= 2")
            elif c.kind != "continuous":
                raise DataError(f"column {c.name}: unknown kind {c.kind!r}")

    def __len__(self):
        return len(self.columns)

    @classmethod
    def from_json(cls, path: str | Path) -> "TabularSchema":
        spec = json.loads(Path(path).read_text())
        cols = [Column(name=c["name"], kind=c["kind"],
                       cardinality=c.get("cardinality")) for c in spec["columns"]]
        return cls(cols)

    def to_json(self, path: str | Path):
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.kind == "categorical":
                entry["cardinality"] = c.cardinality
            cols.append(entry)
        Path(path).write_text(json.dumps({"columns": cols}, indent=2))


@dataclass
class Dataset:
    """An in-memory split: images [N,1,H,W], tabular rows [N,L], labels [N].

    `labels` holds the true class for every sample; `labeled` marks whether
    the label is visible to training. Hidden labels are retained so the
    synthetic-benchmark diagnostics can score pseudo-labels.
    """
    ids: list[str]
    images: np.ndarray
    tabular: np.ndarray
    labels: np.ndarray
    labeled: np.ndarray
    schema: TabularSchema

    def __len__(self):
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass
class BatchPair:
    """Index-level batch: labeled indices (B) and unlabeled indices (mu*B)."""
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray


def _read_image(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.uint16:
        arr = arr.astype(np.float32) / 65535.0
    elif arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    else:
        arr = arr.astype(np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def load_dataset(table_path: str | Path, image_dir: str | Path,
                 schema: TabularSchema, split_manifest: str | Path) -> dict:
    """Load csv + images + split manifest into the four standard splits.

    Continuous columns are z-scored with statistics computed on the train
    split (labeled + unlabeled) only; categorical values are validated
    ordinal indices. Returns {"train_labeled", "train_unlabeled", "val",
    "test"} mapping to Dataset objects.
    """
    table_path, image_dir = Path(table_path), Path(image_dir)
    manifest = json.loads(Path(split_manifest).read_text())
    labeled_ids = set(manifest["labeled_ids"])
    unlabeled_ids = set(manifest["unlabeled_ids"])
    val_ids = set(manifest["val_ids"])
    test_ids = set(manifest["test_ids"])

    rows = {}
    with open(table_path, newline="") as fh:
        reader = csv.DictReader(fh)
        col_names = [c.name for c in schema.columns]
        missing = [c for c in col_names if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"csv missing columns: {missing}")
        for row in reader:
            rows[row["id"]] = row
    known = labeled_ids | unlabeled_ids | val_ids | test_ids
    for sid in known:
        if sid not in rows:
            raise DataError(f"id {sid} in split manifest but not in csv")

    def encode(sid: str) -> np.ndarray:
        row = rows[sid]
        vec = np.empty(len(schema), dtype=np.float64)
        for j, col in enumerate(schema.columns):
            raw = row[col.name]
            try:
                val = float(raw)
            except ValueError:
                raise DataError(f"row {sid}, column {col.name}: "
                                f"non-numeric value {raw!r}") from None
            if not math.isfinite(val):
                raise DataError(f"row {sid}, column {col.name}: non-finite value")
            if col.kind == "categorical":
                idx = int(val)
                if idx != val or not (0 <= idx < col.cardinality):
                    raise DataError(f"row {sid}, column {col.name}: "
                                    f"unknown categorical value {raw!r}")
                vec[j] = idx
            else:
                vec[j] = val
        return vec

    def build(ids: list[str], labeled_flag) -> Dataset:
        ids = sorted(ids)
        images, tabs, labels, lab_mask = [], [], [], []
        for sid in ids:
            img_path = image_dir / f"{sid}.png"
            if not img_path.exists():
                raise DataError(f"missing image for id {sid}: {img_path}")
            images.append(_read_image(img_path))
            tabs.append(encode(sid))
            label_raw = rows[sid].get("label", "")
            labels.append(int(label_raw) if label_raw != "" else -1)
            lab_mask.append(labeled_flag(sid))
        return Dataset(ids=ids,
                       images=np.stack(images).astype(np.float32),
                       tabular=np.stack(tabs),
                       labels=np.asarray(labels, dtype=np.int64),
                       labeled=np.asarray(lab_mask, dtype=bool),
                       schema=schema)

    train_labeled = build(list(labeled_ids), lambda s: True)
    train_unlabeled = build(list(unlabeled_ids), lambda s: False)
    val = build(list(val_ids), lambda s: True)
    test = build(list(test_ids), lambda s: True)

    # z-score statistics from the train split only
    train_tab = np.concatenate([train_labeled.tabular, train_unlabeled.tabular])
    for j, col in enumerate(schema.columns):
        if col.kind != "continuous":
            continue
        mean = float(train_tab[:, j].mean())
        std = float(train_tab[:, j].std())
        if std <= 0:
            raise DataError(f"column {col.name}: zero variance in train split")
        col.mean, col.std = mean, std
        for ds in (train_labeled, train_unlabeled, val, test):
            ds.tabular[:, j] = (ds.tabular[:, j] - mean) / std
    for ds in (train_labeled, train_unlabeled, val, test):
        ds.tabular = ds.tabular.astype(np.float32)

    return {"train_labeled": train_labeled, "train_unlabeled": train_unlabeled,
            "val": val, "test": test}


def make_label_split(labels: np.ndarray, ids: list[str], label_fraction: float,
                     seed: int) -> tuple[list[str], list[str]]:
    """Per-class stratified labeled/unlabeled split over the train samples."""
    if not (0 < label_fraction <= 1):
        raise ConfigError("label_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    labeled, unlabeled = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            raise DataError(f"class {c} has no samples")
        n_lab = int(round(label_fraction * len(idx)))
        if n_lab == 0:
            n_lab = 1
            log.warning("class %s: label fraction rounds to zero, keeping 1", c)
        chosen = rng.choice(idx, size=n_lab, replace=False)
        chosen_set = set(chosen.tolist())
        for i in idx:
            (labeled if i in chosen_set else unlabeled).append(ids[i])
    return sorted(labeled), sorted(unlabeled)


def build_value_pools(train_tabular: np.ndarray) -> list[np.ndarray]:
    """Per-column empirical value pools from the train split."""
    return [train_tabular[:, j].copy() for j in range(train_tabular.shape[1])]


def augment_tabular(row: np.ndarray, schema: TabularSchema, replace_fraction: float,
                    value_pool: list[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Replace round(fraction * L) positions with draws from column pools."""
    if not (0 <= replace_fraction <= 1):
        raise ConfigError("replace_fraction must be in [0, 1]")
    out = row.copy()
    n_replace = int(round(replace_fraction * len(row)))
    if n_replace == 0:
        return out
    positions = rng.choice(len(row), size=n_replace, replace=False)
    for j in positions:
        pool = value_pool[j]
        if len(pool) == 0:
            log.warning("column %d: empty value pool, skipping", j)
            continue
        out[j] = pool[rng.integers(len(pool))]
    return out


def augment_tabular_batch(rows: np.ndarray, schema: TabularSchema,
                          replace_fraction: float, value_pool: list[np.ndarray],
                          rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment_tabular(r, schema, replace_fraction, value_pool, rng)
                     for r in rows])


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, :, ::-1])


def augment_image(image: np.ndarray, strength: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Random flip, small rotation, crop-resize, and Gaussian noise.

    strength=0 is the identity; shape is always preserved.
    """
    if strength <= 0:
        return image.copy()
    out = image
    c, h, w = out.shape
    if rng.random() < 0.5:
        out = hflip(out)
    angle = rng.uniform(-15.0, 15.0) * strength
    # random crop keeping at least (1 - 0.2*strength) of the area, then resize back
    min_keep = max(0.5, 1.0 - 0.2 * strength)
    keep = math.sqrt(rng.uniform(min_keep, 1.0))
    ch_, cw_ = max(2, int(round(h * keep))), max(2, int(round(w * keep)))
    top = rng.integers(0, h - ch_ + 1)
    left = rng.integers(0, w - cw_ + 1)
    # rotation about the center followed by crop-resize, composed into one
    # inverse affine map (a single interpolation pass)
    rad = math.radians(angle)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    rot_inv = np.array([[math.cos(rad), -math.sin(rad)],
                        [math.sin(rad), math.cos(rad)]])
    matrix = rot_inv @ np.diag([ch_ / h, cw_ / w])
    offset = rot_inv @ (np.array([top, left], dtype=float) - center) + center
    out = np.stack([ndimage.affine_transform(chn, matrix, offset=offset,
                                             output_shape=(h, w), order=1,
                                             mode="nearest")
                    for chn in out])
    out = out + rng.normal(0.0, 0.05 * strength, size=out.shape)
    return np.ascontiguousarray(out.astype(np.float32))


def augment_image_batch(images: np.ndarray, strength: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Batch version of augment_image: same per-image transform family,
    resampled in a single interpolation call over the whole batch."""
    if strength <= 0:
        return images.copy()
    n, c, h, w = images.shape
    planes = images.reshape(n * c, h, w).copy()
    mats = np.empty((n, 2, 2))
    offsets = np.empty((n, 2))
    min_keep = max(0.5, 1.0 - 0.2 * strength)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    for i in range(n):
        if rng.random() < 0.5:
            planes[i * c:(i + 1) * c] = planes[i * c:(i + 1) * c, :, ::-1]
        angle = rng.uniform(-15.0, 15.0) * strength
        keep = math.sqrt(rng.uniform(min_keep, 1.0))
        ch_, cw_ = max(2, int(round(h * keep))), max(2, int(round(w * keep)))
        top = rng.integers(0, h - ch_ + 1)
        left = rng.integers(0, w - cw_ + 1)
        rad = math.radians(angle)
        rot_inv = np.array([[math.cos(rad), -math.sin(rad)],
                            [math.sin(rad), math.cos(rad)]])
        mats[i] = rot_inv @ np.diag([ch_ / h, cw_ / w])
        offsets[i] = rot_inv @ (np.array([top, left], dtype=float) - center) + center
    grid = np.indices((h, w), dtype=float)                      # [2, h, w]
    yx = np.einsum("nij,jhw->nihw", mats, grid) + offsets[:, :, None, None]
    yx = np.repeat(yx, c, axis=0)                               # [n*c, 2, h, w]
    plane_idx = np.broadcast_to(np.arange(n * c, dtype=float)[:, None, None],
                                (n * c, h, w))
    coords = np.stack([plane_idx, yx[:, 0], yx[:, 1]])          # [3, n*c, h, w]
    out = ndimage.map_coordinates(planes, coords.reshape(3, -1),
                                  order=1, mode="nearest")
    out = out.reshape(n, c, h, w)
    out = out + rng.normal(0.0, 0.05 * strength, size=out.shape)
    return np.ascontiguousarray(out.astype(np.float32))


def batch_iterator(n_labeled: int, n_unlabeled: int, batch_size: int, mu: int,
                   seed: int):
    """Yield BatchPair index batches for one epoch.

    The unlabeled set is visited once (drop-last); the labeled stream cycles
    with a reshuffle whenever exhausted.
    """
    if n_labeled < 1:
        raise ConfigError("labeled set is empty")
    if batch_size < 1 or mu < 1:
        raise ConfigError("batch_size and mu must be >= 1")
    if n_unlabeled < mu * batch_size:
        raise ConfigError("unlabeled set smaller than one unlabeled batch")
    rng = np.random.default_rng(seed)
    unl_order = rng.permutation(n_unlabeled)
    lab_order = rng.permutation(n_labeled)
    lab_pos = 0
    n_batches = n_unlabeled // (mu * batch_size)
    for b in range(n_batches):
        lab_idx = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            if lab_pos == len(lab_order):
                lab_order = rng.permutation(n_labeled)
                lab_pos = 0
            lab_idx[i] = lab_order[lab_pos]
            lab_pos += 1
        unl_idx = unl_order[b * mu * batch_size:(b + 1) * mu * batch_size]
        yield BatchPair(labeled_idx=lab_idx, unlabeled_idx=unl_idx.copy())


def save_split_manifest(path: str | Path, seed: int, label_fraction: float,
                        labeled_ids: list[str], unlabeled_ids: list[str],
                        val_ids: list[str], test_ids: list[str]):
    Path(path).write_text(json.dumps({
        "seed": seed, "label_fraction": label_fraction,
        "labeled_ids": sorted(labeled_ids), "unlabeled_ids": sorted(unlabeled_ids),
        "val_ids": sorted(val_ids), "test_ids": sorted(test_ids)}, indent=2))

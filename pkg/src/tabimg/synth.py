"""Synthetic image-tabular benchmark with a controllable split of task
information between modality-shared and modality-specific latents.

Each sample draws three Gaussian latent blocks whose class-mean separation
is set by three weights: a shared block rendered into both modalities, an
image-only block, and a tabular-only block. Rendering maps are fixed
random linear maps, so a multinomial logistic model on the true latents is
an approximate Bayes reference for every learned model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.linear_model import LogisticRegression

from .config import RunConfig
from .data import TabularSchema, Column, make_label_split, save_split_manifest
from .errors import ConfigError

PIXEL_SCALE = 6.0  # latent render units mapped to [0,1] as 0.5 + x/PIXEL_SCALE


@dataclass
class SynthConfig:
    num_classes: int = 4
    d_shared: int = 4
    d_image: int = 4
    d_tabular: int = 4
    w_shared: float = 1.5
    w_image: float = 1.5
    w_tabular: float = 1.5
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    label_fraction: float = 0.05
    noise_sigma: float = 0.3
    image_size: int = 32
    tabular_columns: int = 12
    categorical_columns: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.w_shared + self.w_image + self.w_tabular <= 0:
            raise ConfigError("at least one information weight must be positive")
        if min(self.w_shared, self.w_image, self.w_tabular) < 0:
            raise ConfigError("information weights must be >= 0")
        if min(self.n_train, self.n_val, self.n_test, self.num_classes,
               self.image_size, self.tabular_columns) < 1:
            raise ConfigError("sizes must be positive")
        if not (0 <= self.categorical_columns <= self.tabular_columns):
            raise ConfigError("categorical_columns out of range")

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "SynthConfig":
        return cls(num_classes=cfg.synth_classes, d_shared=cfg.synth_d_shared,
                   d_image=cfg.synth_d_image, d_tabular=cfg.synth_d_tabular,
                   w_shared=cfg.synth_w_shared, w_image=cfg.synth_w_image,
                   w_tabular=cfg.synth_w_tabular, n_train=cfg.synth_n_train,
                   n_val=cfg.synth_n_val, n_test=cfg.synth_n_test,
                   label_fraction=cfg.synth_label_fraction,
                   noise_sigma=cfg.synth_noise_sigma,
                   image_size=cfg.synth_image_size,
                   tabular_columns=cfg.synth_tabular_columns,
                   categorical_columns=cfg.synth_categorical_columns,
                   seed=cfg.seed)


@dataclass
class SynthSplit:
    ids: list[str]
    labels: np.ndarray     # [N]
    latents: np.ndarray    # [N, d_sh + d_im + d_tb]
    images: np.ndarray     # [N, 1, H, W] in [0, 1]
    tabular: np.ndarray    # [N, L_t], categoricals already ordinal


@dataclass
class SynthBundle:
    config: SynthConfig
    splits: dict  # name -> SynthSplit, names: train, val, test
    schema: TabularSchema
    labeled_ids: list[str]
    unlabeled_ids: list[str]


def _unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _balanced_labels(rng, n, num_classes):
    labels = np.tile(np.arange(num_classes), n // num_classes + 1)[:n]
    rng.shuffle(labels)
    return labels


def generate(cfg: SynthConfig) -> SynthBundle:
    """Deterministic generation of train/val/test splits plus label split."""
    rng = np.random.default_rng(cfg.seed)
    d_sh, d_im, d_tb = cfg.d_shared, cfg.d_image, cfg.d_tabular
    h = w = cfg.image_size

    mu_sh = _unit_rows(rng, cfg.num_classes, d_sh)
    mu_im = _unit_rows(rng, cfg.num_classes, d_im)
    mu_tb = _unit_rows(rng, cfg.num_classes, d_tb)
    a_img = rng.normal(size=(h * w, d_sh + d_im)) / np.sqrt(d_sh + d_im)
    a_tab = rng.normal(size=(cfg.tabular_columns, d_sh + d_tb)) / np.sqrt(d_sh + d_tb)

    def make_split(name: str, n: int) -> SynthSplit:
        labels = _balanced_labels(rng, n, cfg.num_classes)
        z_sh = cfg.w_shared * mu_sh[labels] + rng.normal(size=(n, d_sh))
        z_im = cfg.w_image * mu_im[labels] + rng.normal(size=(n, d_im))
        z_tb = cfg.w_tabular * mu_tb[labels] + rng.normal(size=(n, d_tb))
        img_lin = np.concatenate([z_sh, z_im], axis=1) @ a_img.T
        img_lin = img_lin + rng.normal(0, cfg.noise_sigma, size=img_lin.shape)
        images = np.clip(0.5 + img_lin / PIXEL_SCALE, 0.0, 1.0)
        images = images.reshape(n, 1, h, w).astype(np.float32)
        tabular = np.concatenate([z_sh, z_tb], axis=1) @ a_tab.T
        tabular = tabular + rng.normal(0, cfg.noise_sigma, size=tabular.shape)
        ids = [f"{name[:2]}{i:06d}" for i in range(n)]
        latents = np.concatenate([z_sh, z_im, z_tb], axis=1)
        return SynthSplit(ids=ids, labels=labels, latents=latents,
                          images=images, tabular=tabular)

    splits = {"train": make_split("train", cfg.n_train),
              "val": make_split("val", cfg.n_val),
              "test": make_split("test", cfg.n_test)}

    # quartile-discretize the first categorical_columns columns, train-fitted
    train_tab = splits["train"].tabular
    for j in range(cfg.categorical_columns):
        thresholds = np.quantile(train_tab[:, j], [0.25, 0.5, 0.75])
        for split in splits.values():
            split.tabular[:, j] = np.searchsorted(thresholds, split.tabular[:, j])

    columns = []
    for j in range(cfg.tabular_columns):
        if j < cfg.categorical_columns:
            columns.append(Column(name=f"c{j:02d}", kind="categorical",
                                  cardinality=4))
        else:
            columns.append(Column(name=f"c{j:02d}", kind="continuous"))
    schema = TabularSchema(columns)

    labeled_ids, unlabeled_ids = make_label_split(
        splits["train"].labels, splits["train"].ids, cfg.label_fraction, cfg.seed)
    return SynthBundle(config=cfg, splits=splits, schema=schema,
                       labeled_ids=labeled_ids, unlabeled_ids=unlabeled_ids)


def write_dataset(bundle: SynthBundle, out_dir: str | Path):
    """Emit the standard on-disk layout plus a latents archive for oracles."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    cfg = bundle.config

    rows = ["id,split,label," + ",".join(c.name for c in bundle.schema.columns)]
    for name, split in bundle.splits.items():
        for i, sid in enumerate(split.ids):
            vals = []
            for j, col in enumerate(bundle.schema.columns):
                v = split.tabular[i, j]
                vals.append(str(int(v)) if col.kind == "categorical"
                            else repr(float(v)))
            rows.append(f"{sid},{name},{split.labels[i]}," + ",".join(vals))
            img16 = np.round(split.images[i, 0] * 65535).astype(np.uint16)
            Image.fromarray(img16).save(out_dir / "images" / f"{sid}.png")
    (out_dir / "data.csv").write_text("\n".join(rows) + "\n")
    bundle.schema.to_json(out_dir / "schema.json")
    save_split_manifest(out_dir / "split.json", cfg.seed, cfg.label_fraction,
                        bundle.labeled_ids, bundle.unlabeled_ids,
                        bundle.splits["val"].ids, bundle.splits["test"].ids)
    np.savez(out_dir / "latents.npz",
             **{f"{name}_latents": split.latents for name, split
                in bundle.splits.items()},
             **{f"{name}_labels": split.labels for name, split
                in bundle.splits.items()})
    save_synth_config(cfg, out_dir / "synth_config.json")


def bundle_datasets(bundle: SynthBundle) -> dict:
    """In-memory equivalent of writing the bundle and loading it back:
    continuous columns z-scored with train statistics, labels hidden on the
    unlabeled train split."""
    from .data import Dataset

    train = bundle.splits["train"]
    id_to_idx = {sid: i for i, sid in enumerate(train.ids)}
    lab_idx = np.array([id_to_idx[s] for s in bundle.labeled_ids], dtype=np.intp)
    unl_idx = np.array([id_to_idx[s] for s in bundle.unlabeled_ids], dtype=np.intp)

    cont = np.array([c.kind == "continuous" for c in bundle.schema.columns])
    mean = train.tabular.mean(axis=0)
    std = train.tabular.std(axis=0)

    def z(tab):
        out = tab.astype(np.float64).copy()
        out[:, cont] = (out[:, cont] - mean[cont]) / std[cont]
        return out.astype(np.float32)

    def make(ids, images, tabular, labels, labeled):
        return Dataset(ids=list(ids), images=images.astype(np.float32),
                       tabular=z(tabular),
                       labels=np.asarray(labels, dtype=np.int64),
                       labeled=np.full(len(ids), labeled, dtype=bool),
                       schema=bundle.schema)

    out = {
        "train_labeled": make([train.ids[i] for i in lab_idx],
                              train.images[lab_idx], train.tabular[lab_idx],
                              train.labels[lab_idx], True),
        "train_unlabeled": make([train.ids[i] for i in unl_idx],
                                train.images[unl_idx], train.tabular[unl_idx],
                                train.labels[unl_idx], False),
    }
    for name in ("val", "test"):
        s = bundle.splits[name]
        out[name] = make(s.ids, s.images, s.tabular, s.labels, True)
    return out


def save_synth_config(cfg: SynthConfig, path: str | Path):
    import json
    Path(path).write_text(json.dumps(dataclasses.asdict(cfg), indent=2))


def reference_accuracy(bundle: SynthBundle, split: str = "test") -> float:
    """Accuracy of a multinomial logistic model fit on the true train
    latents, the approximate Bayes reference for this benchmark."""
    train = bundle.splits["train"]
    model = LogisticRegression(max_iter=2000, C=10.0)
    model.fit(train.latents, train.labels)
    target = bundle.splits[split]
    return float((model.predict(target.latents) == target.labels).mean())


def tabular_probe_accuracy(bundle: SynthBundle, split: str = "test") -> float:
    """Logistic probe on the rendered tabular columns alone."""
    train = bundle.splits["train"]
    model = LogisticRegression(max_iter=2000, C=10.0)
    model.fit(train.tabular, train.labels)
    target = bundle.splits[split]
    return float((model.predict(target.tabular) == target.labels).mean())

"""Training orchestration: teacher/student step, EMA, schedules,
evaluation, diagnostics, checkpointing."""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import cgpl, dcc, metrics, pgls
from .config import RunConfig
from .data import (Dataset, augment_image_batch, augment_tabular_batch,
                   batch_iterator, build_value_pools)
from .errors import ConfigError, NumericalError
from .model import MultimodalNet, VarNetPair

log = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1


def labeled_loss(p_m: torch.Tensor, p_i: torch.Tensor, p_t: torch.Tensor,
                 y_onehot: torch.Tensor) -> torch.Tensor:
    """Sum of the three classifier cross-entropies, batch averaged."""
    return (cgpl.cross_entropy(p_m, y_onehot)
            + cgpl.cross_entropy(p_i, y_onehot)
            + cgpl.cross_entropy(p_t, y_onehot)).mean()


def overall_loss(l_ce, l_dcc, l_pt, l_uce, alpha: float, lambda_p: float,
                 lambda_u: float):
    if alpha < 0 or lambda_p < 0 or lambda_u < 0:
        raise ConfigError("loss weights must be >= 0")
    return alpha * l_ce + l_dcc + lambda_p * l_pt + lambda_u * l_uce


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float):
    """teacher <- m * teacher + (1 - m) * student, elementwise."""
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ConfigError("teacher/student parameter trees differ")
    for name, tp in t_params.items():
        if tp.shape != s_params[name].shape:
            raise ConfigError(f"teacher/student shape mismatch at {name!r}")
        tp.mul_(momentum).add_((1 - momentum) * s_params[name])


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels, num_classes).float()


class Trainer:
    """Owns student, EMA teacher, variational nets, optimizers, prototype
    store, and the seeded RNG streams."""

    def __init__(self, cfg: RunConfig, schema, num_classes: int,
                 image_channels: int = 1):
        cfg = cfg.apply_ablations()
        self.cfg = cfg
        self.schema = schema
        torch.manual_seed(cfg.seed)
        self.student = MultimodalNet(cfg, schema, num_classes, image_channels)
        self.teacher = copy.deepcopy(self.student)
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.varnets = VarNetPair(cfg.token_dim)
        self.optimizer = torch.optim.Adam(self.student.parameters(), lr=cfg.lr)
        self.varnet_optimizer = torch.optim.Adam(self.varnets.parameters(),
                                                 lr=cfg.varnet_lr)
        self.store = pgls.PrototypeStore(num_classes, cfg.proj_dim)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.num_classes = num_classes
        self.value_pools = None
        self.history: list[dict] = []
        self._best_val = -float("inf")
        self._bad_epochs = 0

    # ---------------------------------------------------------------- step

    def _pl_active(self) -> bool:
        return self.epoch >= self.cfg.start_pl_epoch

    def _teacher_targets(self, unl_images: torch.Tensor, unl_rows: torch.Tensor):
        """Clean-view teacher pass: cases, pseudo-labels, smoothing, gate."""
        cfg = self.cfg
        with torch.no_grad():
            t_out = self.teacher(unl_images, unl_rows)
        cases = cgpl.determine_case(t_out.p_m, t_out.p_i, t_out.p_t)
        p = cgpl.make_pseudo_label(cases, t_out.p_m, t_out.p_i, t_out.p_t)
        use_smoothing = (cfg.enable_pgls and cfg.r < 1 and self.store.complete)
        if use_smoothing:
            q = pgls.prototype_similarity(t_out.v, self.store.prototypes)
            p_bar, p_bar_m = pgls.smooth(p, t_out.p_m, q, cfg.r)
        else:
            q = None
            p_bar, p_bar_m = p, t_out.p_m
        confident = p_bar_m.max(dim=-1).values >= cfg.tau
        pseudo_class = p_bar_m.argmax(dim=-1)
        return t_out, cases, p, q, p_bar, p_bar_m, confident, pseudo_class

    def train_step(self, lab_images, lab_rows, lab_y, unl_images, unl_rows) -> dict:
        """One full optimization step on a labeled + unlabeled batch pair.

        All array arguments are clean (unaugmented) numpy batches; the step
        augments the student views internally from its own RNG stream.
        """
        cfg = self.cfg
        pl_active = self._pl_active()
        b = len(lab_images)
        mu_b = len(unl_images)

        to_t = lambda arr: torch.as_tensor(np.asarray(arr), dtype=torch.float32)

        # (1) teacher targets on clean unlabeled views
        case_counts = [0, 0, 0, 0]
        teacher_lab_v = None
        masks = None
        if pl_active:
            (t_out, cases, p, q, p_bar, p_bar_m, confident,
             pseudo_class) = self._teacher_targets(to_t(unl_images), to_t(unl_rows))
            masks = cgpl.select_update_targets(cases, self.rng)
            for c in cases:
                case_counts[c.index] += 1
            with torch.no_grad():
                teacher_lab_v = self.teacher(to_t(lab_images), to_t(lab_rows)).v

        # (2) student forward on augmented views
        aug_lab_img = augment_image_batch(lab_images, cfg.image_aug_strength,
                                          self.rng)
        aug_unl_img = augment_image_batch(unl_images, cfg.image_aug_strength,
                                          self.rng)
        aug_lab_rows = augment_tabular_batch(lab_rows, self.schema,
                                             cfg.tabular_replace_fraction,
                                             self.value_pools, self.rng)
        aug_unl_rows = augment_tabular_batch(unl_rows, self.schema,
                                             cfg.tabular_replace_fraction,
                                             self.value_pools, self.rng)
        s_lab = self.student(to_t(aug_lab_img), to_t(aug_lab_rows))
        s_unl = self.student(to_t(aug_unl_img), to_t(aug_unl_rows))

        y_onehot = one_hot(torch.as_tensor(lab_y), self.num_classes)
        zero = torch.zeros(())

        # (3) losses
        l_ce = labeled_loss(s_lab.p_m, s_lab.p_i, s_lab.p_t, y_onehot)

        l_cc, l_ds_i, l_ds_t = zero, zero, zero
        if cfg.beta > 0:
            g_img = torch.cat([s_lab.g_img, s_unl.g_img])
            g_tab = torch.cat([s_lab.g_tab, s_unl.g_tab])
            l_cc = dcc.contrastive_consistency_loss(g_img, g_tab, cfg.kappa)
        if cfg.gamma > 0:
            z_ic = torch.cat([s_lab.z_img_specific, s_unl.z_img_specific])
            z_is = torch.cat([s_lab.z_img_shared, s_unl.z_img_shared])
            z_tc = torch.cat([s_lab.z_tab_specific, s_unl.z_tab_specific])
            z_ts = torch.cat([s_lab.z_tab_shared, s_unl.z_tab_shared])
            with dcc.frozen(self.varnets):
                l_ds_i = dcc.disentanglement_loss(z_ic, z_is, self.varnets.image)
                l_ds_t = dcc.disentanglement_loss(z_tc, z_ts, self.varnets.tabular)
        l_dcc = dcc.dcc_loss(l_cc, l_ds_i, l_ds_t, cfg.beta, cfg.gamma)

        l_uce, l_pt = zero, zero
        n_confident = 0
        if pl_active:
            n_confident = int(confident.sum())
            if cfg.lambda_u > 0:
                l_uce = cgpl.unlabeled_loss(s_unl.p_m, s_unl.p_i, s_unl.p_t,
                                            p_bar, p_bar_m, masks, cfg.tau)
            if cfg.lambda_p > 0 and self.store.complete:
                l_pt = pgls.prototypical_contrastive_loss(
                    s_lab.v, torch.as_tensor(lab_y), s_unl.v, pseudo_class,
                    confident, self.store.prototypes, cfg.kappa)

        total = overall_loss(l_ce, l_dcc, l_pt, l_uce,
                             cfg.alpha, cfg.lambda_p, cfg.lambda_u)
        components = {"loss": float(total.detach()), "l_ce": float(l_ce.detach()),
                      "l_cc": float(l_cc.detach()), "l_ds_i": float(l_ds_i.detach()),
                      "l_ds_t": float(l_ds_t.detach()), "l_uce": float(l_uce.detach()),
                      "l_pt": float(l_pt.detach())}
        if not torch.isfinite(total):
            raise NumericalError(f"non-finite loss: {components}")

        # (4) student update
        self.optimizer.zero_grad()
        total.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.student.parameters(),
                                           cfg.grad_clip)
        self.optimizer.step()

        # (5) variational-net update on detached representations
        if cfg.gamma > 0:
            vloss = -(dcc.varnet_loglik(z_ic.detach(), z_is.detach(),
                                        self.varnets.image)
                      + dcc.varnet_loglik(z_tc.detach(), z_ts.detach(),
                                          self.varnets.tabular))
            self.varnet_optimizer.zero_grad()
            vloss.backward()
            self.varnet_optimizer.step()
            components["varnet_loglik"] = -float(vloss.detach())

        # (6) EMA teacher update
        ema_update(self.teacher, self.student, cfg.ema_momentum)

        # (7) prototype accumulation from teacher embeddings
        if pl_active and (cfg.lambda_p > 0 or cfg.r < 1) and cfg.enable_pgls:
            self.store.accumulate_batch(teacher_lab_v, torch.as_tensor(lab_y),
                                        torch.ones(b))
            self.store.accumulate_batch(t_out.v, pseudo_class,
                                        confident.float())

        components["case_counts"] = case_counts
        components["n_confident"] = n_confident
        return components

    # ----------------------------------------------------------------- fit

    def fit(self, datasets: dict, metrics_path: str | Path | None = None,
            checkpoint_dir: str | Path | None = None) -> list[dict]:
        """Epoch loop with validation, early stopping, and best-checkpointing."""
        cfg = self.cfg
        train_lab, train_unl = datasets["train_labeled"], datasets["train_unlabeled"]
        if self.value_pools is None:
            train_tab = np.concatenate([train_lab.tabular, train_unl.tabular])
            self.value_pools = build_value_pools(train_tab)
        if checkpoint_dir is not None:
            checkpoint_dir = Path(checkpoint_dir)
            checkpoint_dir.mkdir(parents=True, exist_ok=True)

        while self.epoch < cfg.max_epochs:
            epoch_stats = self._run_epoch(train_lab, train_unl)
            self.store.finalize()
            val_metric = self.evaluate(datasets["val"], cfg.metric)
            diag = self.diagnostics(train_unl)
            record = {"schema_version": METRICS_SCHEMA_VERSION,
                      "epoch": self.epoch, **epoch_stats,
                      "val_metric": val_metric, **diag}
            self.history.append(record)
            if metrics_path is not None:
                with open(metrics_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")
            log.info("epoch %d: loss=%.4f val_%s=%.4f", self.epoch,
                     epoch_stats["loss"], cfg.metric, val_metric)

            improved = val_metric > self._best_val
            if improved:
                self._best_val = val_metric
                self._bad_epochs = 0
                if checkpoint_dir is not None:
                    self.save_checkpoint(checkpoint_dir / "best.pt")
            else:
                self._bad_epochs += 1
            self.epoch += 1
            if checkpoint_dir is not None:
                self.save_checkpoint(checkpoint_dir / "last.pt")
            if not improved and self._bad_epochs > cfg.patience:
                log.info("early stopping at epoch %d", self.epoch - 1)
                break
        return self.history

    def _run_epoch(self, train_lab: Dataset, train_unl: Dataset) -> dict:
        cfg = self.cfg
        epoch_seed = int(np.random.SeedSequence([cfg.seed, self.epoch])
                         .generate_state(1)[0])
        sums, n_steps = {}, 0
        for batch in batch_iterator(len(train_lab), len(train_unl),
                                    cfg.batch_size, cfg.mu, epoch_seed):
            li, ui = batch.labeled_idx, batch.unlabeled_idx
            stats = self.train_step(train_lab.images[li], train_lab.tabular[li],
                                    train_lab.labels[li],
                                    train_unl.images[ui], train_unl.tabular[ui])
            for k, v in stats.items():
                if isinstance(v, (int, float)):
                    sums[k] = sums.get(k, 0.0) + v
            n_steps += 1
        return {k: v / n_steps for k, v in sums.items()}

    # ----------------------------------------------------------- inference

    @torch.no_grad()
    def _forward_probs(self, dataset: Dataset, model: nn.Module,
                       chunk: int = 256):
        outs = []
        for start in range(0, len(dataset), chunk):
            imgs = torch.as_tensor(dataset.images[start:start + chunk])
            rows = torch.as_tensor(dataset.tabular[start:start + chunk])
            outs.append(model(imgs, rows))
        return outs

    @torch.no_grad()
    def predict_proba(self, dataset: Dataset) -> np.ndarray:
        """Student multimodal classifier on clean views."""
        self.student.eval()
        try:
            outs = self._forward_probs(dataset, self.student)
            return torch.cat([o.p_m for o in outs]).numpy()
        finally:
            self.student.train()

    def predict(self, dataset: Dataset) -> np.ndarray:
        return self.predict_proba(dataset).argmax(axis=1)

    def evaluate(self, dataset: Dataset, metric: str = "accuracy") -> float:
        probs = self.predict_proba(dataset)
        return metrics.score(probs, dataset.labels, metric)

    @torch.no_grad()
    def diagnostics(self, unlabeled: Dataset) -> dict:
        """Pseudo-label quality metrics against the hidden true labels."""
        cfg = self.cfg
        self.teacher.eval()
        outs = self._forward_probs(unlabeled, self.teacher)
        self.teacher.train()
        p_m = torch.cat([o.p_m for o in outs])
        p_i = torch.cat([o.p_i for o in outs])
        p_t = torch.cat([o.p_t for o in outs])
        v = torch.cat([o.v for o in outs])
        truth = torch.as_tensor(unlabeled.labels)

        cases = cgpl.determine_case(p_m, p_i, p_t)
        counts = [0, 0, 0, 0]
        for c in cases:
            counts[c.index] += 1
        n = len(cases)
        case_ratios = [c / n for c in counts]

        p = cgpl.make_pseudo_label(cases, p_m, p_i, p_t)
        q_acc_conf = q_acc_all = None
        if cfg.enable_pgls and cfg.r < 1 and self.store.complete:
            q = pgls.prototype_similarity(v, self.store.prototypes)
            p_bar, p_bar_m = pgls.smooth(p, p_m, q, cfg.r)
        else:
            q = None
            p_bar, p_bar_m = p, p_m
        confident = p_bar_m.max(dim=-1).values >= cfg.tau
        confident_ratio = float(confident.float().mean())
        if confident.any():
            pl_accuracy = float((p_bar.argmax(dim=-1) == truth)[confident]
                                .float().mean())
        else:
            pl_accuracy = None
        if q is not None:
            q_pred = q.argmax(dim=-1)
            q_acc_all = float((q_pred == truth).float().mean())
            if confident.any():
                q_acc_conf = float((q_pred == truth)[confident].float().mean())
        unlabeled_accuracy = float((p_bar.argmax(dim=-1) == truth).float().mean())
        return {"pl_accuracy": pl_accuracy, "confident_ratio": confident_ratio,
                "unlabeled_accuracy": unlabeled_accuracy,
                "q_accuracy_confident": q_acc_conf, "q_accuracy_all": q_acc_all,
                "case_ratios": case_ratios}

    # -------------------------------------------------------- persistence

    def save_checkpoint(self, path: str | Path):
        torch.save({
            "version": CHECKPOINT_VERSION,
            "student": self.student.state_dict(),
            "teacher": self.teacher.state_dict(),
            "varnets": self.varnets.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "varnet_optimizer": self.varnet_optimizer.state_dict(),
            "store": self.store.state_dict(),
            "epoch": self.epoch,
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "best_val": self._best_val,
            "bad_epochs": self._bad_epochs,
            "history": self.history,
        }, path)

    def load_checkpoint(self, path: str | Path):
        state = torch.load(path, weights_only=False)
        if state.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version: "
                              f"{state.get('version')}")
        self.student.load_state_dict(state["student"])
        self.teacher.load_state_dict(state["teacher"])
        self.varnets.load_state_dict(state["varnets"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.varnet_optimizer.load_state_dict(state["varnet_optimizer"])
        self.store.load_state_dict(state["store"])
        self.epoch = state["epoch"]
        self.rng.bit_generator.state = state["numpy_rng"]
        torch.set_rng_state(state["torch_rng"])
        self._best_val = state["best_val"]
        self._bad_epochs = state["bad_epochs"]
        self.history = list(state["history"])

"""Training loops: standard, adversarial, selection, random search.

The adversarial loop alternates per batch, 1:1. For each sampled batch
(x, y, z):

1. the classifier f produces logits;
2. the discriminator g consumes (logit, y) rows and predicts the group
   z; one Adam step updates g against its cross entropy (f frozen);
3. with the freshly updated g frozen, the classifier takes one Adam
   step on L_cls - lambda * L_adv, where the L_adv term reaches f only
   through d(L_adv)/d(logit), the gradient of g's loss w.r.t. its first
   input column.

The discriminator's power-iteration vector u advances once per batch,
during step 2's forward; step 3 re-runs g's forward with u frozen so
the classifier's adversarial gradient is exact for the current g.

Model selection: the standard arm keeps the epoch checkpoint with the
highest validation AUC-ROC; the adversarial arm keeps the checkpoint
with the lowest validation alignment score among epochs whose AUC-ROC
exceeds ``eq_auc_floor`` (ties go to the earliest epoch). Both
best-so-far checkpoints are tracked online so memory stays bounded.

All randomness derives from named substreams of the config seed, so a
run is bit-reproducible and the batch sequence is identical whether or
not a discriminator participates.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import LabeledDataset
from .errors import (
    NumericError,
    SelectionFailedError,
    ValidationError,
)
from .metrics import DEFAULT_THRESHOLD
from .neural import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    bce_with_logits,
    ce_with_logits,
    forward,
    init_params,
    predict_proba,
)
from .records import GROUP_COUNTS
from .report import FairnessReport, alignment_score, fairness_report
from .streams import (
    NS_BATCHES,
    NS_CLASSIFIER_INIT,
    NS_DISCRIMINATOR_INIT,
    NS_SEARCH,
    substream,
)

SENSITIVE_ATTRIBUTES = ("race", "gender", "age")


@dataclass(frozen=True)
class TrainConfig:
    classifier_hidden: tuple[int, ...] = (64,)
    discriminator_hidden: tuple[int, ...] = (32, 32)
    classifier_lr: float = 1e-3
    discriminator_lr: float = 1e-3
    adversary_weight: float = 1.0
    batch_size: int = 256
    epochs: int = 100
    batches_per_epoch: int = 100
    sensitive_attribute: Optional[str] = None
    seed: int = 0
    eq_auc_floor: float = 0.7
    threshold: float = DEFAULT_THRESHOLD
    classifier_layer_norm: bool = True
    discriminator_layer_norm: bool = False
    discriminator_spectral_norm: bool = True

    def validate(self):
        if self.adversary_weight < 0:
            raise ValidationError("adversary_weight: must be non-negative")
        if self.classifier_lr <= 0 or self.discriminator_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size: must be at least 1")
        if self.epochs < 0:
            raise ValidationError("epochs: must be non-negative")
        if self.batches_per_epoch < 1:
            raise ValidationError("batches_per_epoch: must be at least 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold: must lie in (0, 1)")
        if not 0.0 <= self.eq_auc_floor <= 1.0:
            raise ValidationError("eq_auc_floor: must lie in [0, 1]")
        if self.sensitive_attribute is not None:
            if self.sensitive_attribute not in SENSITIVE_ATTRIBUTES:
                raise ValidationError(
                    f"sensitive_attribute: unknown attribute "
                    f"{self.sensitive_attribute!r}"
                )
        if any(h < 1 for h in self.classifier_hidden):
            raise ValidationError("classifier_hidden: widths must be positive")
        if any(h < 1 for h in self.discriminator_hidden):
            raise ValidationError("discriminator_hidden: widths must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["classifier_hidden"] = list(self.classifier_hidden)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        return d


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    classifier_loss: float
    discriminator_loss: Optional[float]
    val_auc: Optional[float]
    val_alignment: Optional[float]


@dataclass
class TrainedModel:
    config: TrainConfig
    params: NetworkParams
    selected_epoch: int
    trace: list[EpochStats]
    best_auc_epoch: int
    best_auc_params: NetworkParams
    final_params: NetworkParams
    batches_consumed: int
    val_report: Optional[FairnessReport]


def sample_batch(
    dataset: LabeledDataset, batch_size: int, rng: np.random.Generator
):
    """Uniform-with-replacement batch from the training split.

    Returns (X, y, z) with z holding all three group-id vectors.
    """
    rows = dataset.rows_for("train")
    if len(rows) == 0:
        raise ValidationError("training split is empty")
    idx = rows[rng.integers(0, len(rows), size=batch_size)]
    X = dataset.X[idx]
    y = dataset.y[idx]
    z = {a: g[idx] for a, g in dataset.groups.items()}
    return X, y, z


def _validation_arrays(dataset: LabeledDataset):
    X_val, y_val, g_val = dataset.subset("val")
    return X_val, np.asarray(y_val, dtype=np.float64), g_val


def _safe_val_auc(y_val: np.ndarray, p_val: np.ndarray) -> Optional[float]:
    from .errors import UndefinedMetricError
    from .metrics import auc_roc

    if len(y_val) == 0:
        return None
    try:
        return auc_roc(y_val, p_val)
    except UndefinedMetricError:
        return None


def _run_training(
    dataset: LabeledDataset,
    config: TrainConfig,
    use_discriminator: bool,
    eq_selection: bool,
) -> TrainedModel:
    config.validate()
    attr = config.sensitive_attribute
    n_features = dataset.X.shape[1]
    if dataset.rows_for("train").size == 0:
        raise ValidationError("training split is empty")

    cls_spec = NetworkSpec.of(
        n_features,
        config.classifier_hidden,
        1,
        layer_norm=config.classifier_layer_norm,
        spectral_norm=False,
    )
    f = init_params(cls_spec, substream(config.seed, NS_CLASSIFIER_INIT))
    adam_f = AdamState.for_params(f)

    g = adam_g = None
    k = None
    if attr is not None:
        if attr not in dataset.groups:
            raise ValidationError(f"dataset has no group ids for {attr!r}")
        k = GROUP_COUNTS[attr]
    if use_discriminator:
        disc_spec = NetworkSpec.of(
            2,
            config.discriminator_hidden,
            k,
            layer_norm=config.discriminator_layer_norm,
            spectral_norm=config.discriminator_spectral_norm,
        )
        g = init_params(disc_spec, substream(config.seed, NS_DISCRIMINATOR_INIT))
        adam_g = AdamState.for_params(g)

    batch_rng = substream(config.seed, NS_BATCHES)
    X_val, y_val, g_val = _validation_arrays(dataset)

    trace: list[EpochStats] = []
    best_auc = -np.inf
    best_auc_epoch = 0
    best_auc_params = f.copy()
    best_align = np.inf
    best_align_epoch: Optional[int] = None
    best_align_params: Optional[NetworkParams] = None
    batches_consumed = 0
    recent_losses: list[float] = []

    for epoch in range(1, config.epochs + 1):
        cls_losses = []
        disc_losses = []
        for b in range(config.batches_per_epoch):
            Xb, yb, zb = sample_batch(dataset, config.batch_size, batch_rng)
            yb = np.asarray(yb, dtype=np.float64)
            out_f, cache_f = forward(f, Xb)
            logit = out_f[:, 0]

            if use_discriminator:
                zb_attr = zb[attr]
                Xd = np.column_stack([logit, yb])
                out_g, cache_g = forward(g, Xd, update_u=True)
                _, dlog_g = ce_with_logits(out_g, zb_attr)
                grads_g, _ = backward(g, cache_g, dlog_g)
                adam_step(g, grads_g, adam_g, config.discriminator_lr)

                out_g2, cache_g2 = forward(g, Xd, update_u=False)
                loss_g2, dlog_g2 = ce_with_logits(out_g2, zb_attr)
                _, dXd = backward(g, cache_g2, dlog_g2, need_input_grad=True)
                loss_f, dlogit = bce_with_logits(logit, yb)
                total_dlogit = dlogit - config.adversary_weight * dXd[:, 0]
                disc_losses.append(loss_g2)
            else:
                loss_f, total_dlogit = bce_with_logits(logit, yb)

            if not np.isfinite(loss_f):
                raise NumericError(
                    f"non-finite classifier loss at epoch {epoch} batch {b}; "
                    f"recent losses: {recent_losses[-5:]}"
                )
            grads_f, _ = backward(f, cache_f, total_dlogit.reshape(-1, 1))
            adam_step(f, grads_f, adam_f, config.classifier_lr)
            cls_losses.append(loss_f)
            recent_losses.append(loss_f)
            batches_consumed += 1

        p_val = predict_proba(f, X_val) if len(y_val) else np.zeros(0)
        val_auc = _safe_val_auc(y_val, p_val)
        val_align = (
            alignment_score(p_val, y_val, g_val[attr], k)
            if attr is not None and len(y_val)
            else None
        )
        trace.append(
            EpochStats(
                epoch=epoch,
                classifier_loss=float(np.mean(cls_losses)),
                discriminator_loss=(
                    float(np.mean(disc_losses)) if disc_losses else None
                ),
                val_auc=val_auc,
                val_alignment=val_align,
            )
        )
        if val_auc is not None and val_auc > best_auc:
            best_auc = val_auc
            best_auc_epoch = epoch
            best_auc_params = f.copy()
        if (
            eq_selection
            and val_auc is not None
            and val_auc > config.eq_auc_floor
            and val_align is not None
            and val_align < best_align
        ):
            best_align = val_align
            best_align_epoch = epoch
            best_align_params = f.copy()

    if eq_selection and trace:
        if best_align_params is None:
            raise SelectionFailedError(
                f"no epoch reached validation AUC > {config.eq_auc_floor}",
                best_checkpoint=best_auc_params,
                best_auc=None if best_auc == -np.inf else best_auc,
            )
        selected = best_align_params
        selected_epoch = best_align_epoch
    else:
        selected = best_auc_params
        selected_epoch = best_auc_epoch

    val_report = None
    if len(y_val):
        val_report = fairness_report(
            predict_proba(selected, X_val), y_val, g_val, config.threshold
        )
    return TrainedModel(
        config=config,
        params=selected,
        selected_epoch=selected_epoch,
        trace=trace,
        best_auc_epoch=best_auc_epoch,
        best_auc_params=best_auc_params,
        final_params=f,
        batches_consumed=batches_consumed,
        val_report=val_report,
    )


def train_standard(dataset: LabeledDataset, config: TrainConfig) -> TrainedModel:
    """Classifier-only arm; early stop on max validation AUC-ROC."""
    if config.sensitive_attribute is not None:
        raise ValidationError(
            "train_standard requires sensitive_attribute = none"
        )
    return _run_training(dataset, config, use_discriminator=False, eq_selection=False)


def train_adversarial(
    dataset: LabeledDataset,
    config: TrainConfig,
    disable_discriminator: bool = False,
) -> TrainedModel:
    """Adversarial arm against the configured sensitive attribute.

    ``disable_discriminator`` skips every discriminator computation
    while keeping the batch stream intact; with adversary_weight = 0 the
    parameter trajectory then matches train_standard bit for bit. It
    exists for that equivalence check and is not a training mode.
    """
    if config.sensitive_attribute is None:
        raise ValidationError(
            "train_adversarial requires a sensitive attribute"
        )
    if not disable_discriminator and config.adversary_weight <= 0:
        raise ValidationError("adversary_weight: must be positive")
    return _run_training(
        dataset,
        config,
        use_discriminator=not disable_discriminator,
        eq_selection=True,
    )


def select_eq_model(
    trace: Sequence[EpochStats],
    checkpoints: dict[int, NetworkParams],
    auc_floor: float = 0.7,
) -> tuple[NetworkParams, int]:
    """Lowest-alignment checkpoint among epochs with AUC above the floor.

    Ties break toward the earliest epoch. Raises a selection-failed
    error carrying the best-AUC checkpoint when no epoch qualifies.
    """
    if not trace:
        raise ValidationError("trace is empty")
    best_epoch = None
    best_align = np.inf
    for stats in trace:
        if stats.val_auc is None or stats.val_auc <= auc_floor:
            continue
        if stats.val_alignment is None:
            continue
        if stats.val_alignment < best_align:
            best_align = stats.val_alignment
            best_epoch = stats.epoch
    if best_epoch is None:
        auc_epochs = [s for s in trace if s.val_auc is not None]
        best_auc_stats = (
            max(auc_epochs, key=lambda s: s.val_auc) if auc_epochs else None
        )
        raise SelectionFailedError(
            f"no epoch reached validation AUC > {auc_floor}",
            best_checkpoint=(
                checkpoints.get(best_auc_stats.epoch) if best_auc_stats else None
            ),
            best_auc=best_auc_stats.val_auc if best_auc_stats else None,
        )
    if best_epoch not in checkpoints:
        raise ValidationError(f"no checkpoint stored for epoch {best_epoch}")
    return checkpoints[best_epoch], best_epoch


@dataclass(frozen=True)
class SearchGrid:
    classifier_layers: tuple[int, ...] = (1, 2)
    classifier_widths: tuple[int, ...] = (16, 32, 64)
    discriminator_layers: tuple[int, ...] = (1, 2)
    discriminator_widths: tuple[int, ...] = (16, 32)
    classifier_lrs: tuple[float, ...] = (1e-3, 3e-4, 1e-4)
    discriminator_lrs: tuple[float, ...] = (1e-3, 3e-4)
    adversary_weights: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    classifier_layer_norm: tuple[bool, ...] = (True, False)
    discriminator_layer_norm: tuple[bool, ...] = (True, False)
    discriminator_spectral_norm: tuple[bool, ...] = (True, False)
    n_trials: int = 100

    def validate(self):
        for name in (
            "classifier_layers", "classifier_widths", "discriminator_layers",
            "discriminator_widths", "classifier_lrs", "discriminator_lrs",
            "adversary_weights", "classifier_layer_norm",
            "discriminator_layer_norm", "discriminator_spectral_norm",
        ):
            if not getattr(self, name):
                raise ValidationError(f"{name}: candidate set is empty")
        if self.n_trials < 1:
            raise ValidationError("n_trials: must be at least 1")

    def architectures(self) -> list[tuple[int, int]]:
        """(layer count, width) combinations, for gradient-check sweeps."""
        out = []
        for n in sorted(set(self.classifier_layers) | set(self.discriminator_layers)):
            for w in sorted(set(self.classifier_widths) | set(self.discriminator_widths)):
                out.append((n, w))
        return out


@dataclass
class TrialResult:
    trial: int
    config: TrainConfig
    status: str  # ok | selection_failed | error
    val_auc: Optional[float]
    val_alignment: Optional[float]
    selected_epoch: Optional[int]
    trace: list[EpochStats] = field(default_factory=list)
    error: Optional[str] = None


def _draw_config(
    grid: SearchGrid, base: TrainConfig, rng: np.random.Generator
) -> TrainConfig:
    def pick(options):
        return options[int(rng.integers(0, len(options)))]

    cls_hidden = (pick(grid.classifier_widths),) * pick(grid.classifier_layers)
    disc_hidden = (pick(grid.discriminator_widths),) * pick(grid.discriminator_layers)
    return replace(
        base,
        classifier_hidden=cls_hidden,
        discriminator_hidden=disc_hidden,
        classifier_lr=pick(grid.classifier_lrs),
        discriminator_lr=pick(grid.discriminator_lrs),
        adversary_weight=pick(grid.adversary_weights),
        classifier_layer_norm=pick(grid.classifier_layer_norm),
        discriminator_layer_norm=pick(grid.discriminator_layer_norm),
        discriminator_spectral_norm=pick(grid.discriminator_spectral_norm),
        seed=int(rng.integers(0, 2**62)),
    )


def random_search(
    grid: SearchGrid,
    dataset: LabeledDataset,
    base_config: TrainConfig,
    n_trials: Optional[int] = None,
    seed: int = 0,
) -> list[TrialResult]:
    """Independent uniform draws from the grid, ranked best-first.

    Standard arm ranks by validation AUC-ROC; EQ arms rank by the
    selected checkpoint's alignment (AUC floor applied during
    selection). Failed trials sort last but stay in the list.
    """
    grid.validate()
    eq = base_config.sensitive_attribute is not None
    count = grid.n_trials if n_trials is None else n_trials
    if count < 1:
        raise ValidationError("n_trials: must be at least 1")
    results: list[TrialResult] = []
    for t in range(count):
        rng = substream(seed, NS_SEARCH, t)
        config = _draw_config(grid, base_config, rng)
        try:
            model = (
                train_adversarial(dataset, config)
                if eq
                else train_standard(dataset, config)
            )
            stats = model.trace[model.selected_epoch - 1] if model.trace else None
            results.append(
                TrialResult(
                    trial=t,
                    config=config,
                    status="ok",
                    val_auc=stats.val_auc if stats else None,
                    val_alignment=stats.val_alignment if stats else None,
                    selected_epoch=model.selected_epoch,
                    trace=model.trace,
                )
            )
        except SelectionFailedError as e:
            results.append(
                TrialResult(
                    trial=t,
                    config=config,
                    status="selection_failed",
                    val_auc=e.best_auc,
                    val_alignment=None,
                    selected_epoch=None,
                    error=str(e),
                )
            )
        except (NumericError, ValidationError) as e:
            results.append(
                TrialResult(
                    trial=t,
                    config=config,
                    status="error",
                    val_auc=None,
                    val_alignment=None,
                    selected_epoch=None,
                    error=str(e),
                )
            )
    return rank_trials(results, eq=eq)


def rank_trials(results: Sequence[TrialResult], eq: bool) -> list[TrialResult]:
    def key(r: TrialResult):
        failed = r.status != "ok"
        if eq:
            primary = r.val_alignment if r.val_alignment is not None else np.inf
        else:
            primary = -r.val_auc if r.val_auc is not None else np.inf
        return (failed, primary, r.trial)

    return sorted(results, key=key)


def _stats_to_dict(stats: EpochStats) -> dict:
    return {
        "epoch": stats.epoch,
        "classifier_loss": stats.classifier_loss,
        "discriminator_loss": stats.discriminator_loss,
        "val_auc": stats.val_auc,
        "val_alignment": stats.val_alignment,
    }


def write_run_manifest(path: Path | str, model: TrainedModel):
    """Stable-order JSON: config, trace, selection, final val metrics."""
    summary = None
    if model.val_report is not None:
        summary = {
            "auc": model.val_report.auc,
            "auc_pr": model.val_report.auc_pr,
            "brier": model.val_report.brier,
            "alignment": {
                a.attribute: a.alignment for a in model.val_report.attributes
            },
        }
    doc = {
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "trace": [_stats_to_dict(s) for s in model.trace],
        "selected_epoch": model.selected_epoch,
        "best_auc_epoch": model.best_auc_epoch,
        "batches_consumed": model.batches_consumed,
        "validation": summary,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trials_csv(path: Path | str, results: Sequence[TrialResult]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "trial", "classifier_hidden", "discriminator_hidden",
                "classifier_lr", "discriminator_lr", "adversary_weight",
                "classifier_layer_norm", "discriminator_layer_norm",
                "discriminator_spectral_norm", "trial_seed", "status",
                "val_auc", "val_alignment", "selected",
            ]
        )
        for r in results:
            c = r.config
            w.writerow(
                [
                    r.trial,
                    "x".join(str(h) for h in c.classifier_hidden),
                    "x".join(str(h) for h in c.discriminator_hidden),
                    repr(c.classifier_lr), repr(c.discriminator_lr),
                    repr(c.adversary_weight),
                    int(c.classifier_layer_norm),
                    int(c.discriminator_layer_norm),
                    int(c.discriminator_spectral_norm),
                    c.seed, r.status,
                    "NA" if r.val_auc is None else repr(r.val_auc),
                    "NA" if r.val_alignment is None else repr(r.val_alignment),
                    "NA" if r.selected_epoch is None else r.selected_epoch,
                ]
            )

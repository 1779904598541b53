"""Conditional GAN over the solution archive.

The generator maps (3-d Gaussian noise || normalized label) to a
10-feature vector through three hidden blocks of widths 64-128-64
(dense -> leaky-ReLU -> batchnorm) and a tanh output.  The discriminator
maps (features || label) through blocks of widths 128-64-32
(dense -> batchnorm -> leaky-ReLU -> dropout 0.4) to a sigmoid
real-vs-generated probability.  Both train with binary cross-entropy and
Adam(2e-4, 0.5, 0.999) on batches of 64.

Each training iteration updates the discriminator on one real batch
(target 1) and one generated batch (target 0), then updates the generator
through the frozen discriminator with the non-saturating objective
(generated batch, target 1).  Generator states plus loss/accuracy stats
are snapshotted at a fixed iteration interval; a quantile rule later picks
the snapshot states worth generating from.

Features are integers normalized to [-1,1] over their fixed field ranges;
labels are normalized to [-1,1] over the training subset's min/max, so the
label grids fed to the generator live in normalized space directly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .problem import FIELD_BOUNDS, FIELD_NAMES

N_FEATURES = len(FIELD_NAMES)
N_LABELS = 3

EXPERIMENT_NAMES: tuple[str, ...] = (
    "WorstHalfGHG",
    "WorstHalfLCC",
    "WorstHalfWalkScore",
    "WorstHalfAll",
    "BestHalfAll",
    "FullData",
)

SINGLE_OBJECTIVE_EXPERIMENTS = EXPERIMENT_NAMES[:3]
ALL_OBJECTIVE_EXPERIMENTS = EXPERIMENT_NAMES[3:]


class TrainingDivergedError(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: "TrainingSnapshot"):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class CganConfig:
    latent_dim: int = 3
    generator_hidden: tuple[int, int, int] = (64, 128, 64)
    discriminator_hidden: tuple[int, int, int] = (128, 64, 32)
    batch_size: int = 64
    snapshot_interval: int = 100
    dropout: float = 0.4
    leaky_alpha: float = 0.2
    bn_momentum: float = 0.8
    bn_epsilon: float = 0.001
    optimizer: nn.OptimizerConfig = nn.OptimizerConfig()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.latent_dim < 1 or self.batch_size < 1 or self.snapshot_interval < 1:
            raise ValueError("latent_dim, batch_size and snapshot_interval must be positive")


def generator_configs(cfg: CganConfig) -> tuple[nn.LayerConfig, ...]:
    """Hidden blocks dense -> leaky-ReLU -> batchnorm, tanh output."""
    widths = (cfg.latent_dim + N_LABELS,) + cfg.generator_hidden
    layers = [
        nn.LayerConfig(
            in_width=widths[i],
            out_width=widths[i + 1],
            activation="leaky_relu",
            batchnorm=True,
            bn_after_activation=True,
            leaky_alpha=cfg.leaky_alpha,
            bn_momentum=cfg.bn_momentum,
            bn_epsilon=cfg.bn_epsilon,
        )
        for i in range(len(widths) - 1)
    ]
    layers.append(nn.LayerConfig(in_width=widths[-1], out_width=N_FEATURES, activation="tanh"))
    return tuple(layers)


def discriminator_configs(cfg: CganConfig) -> tuple[nn.LayerConfig, ...]:
    """Hidden blocks dense -> batchnorm -> leaky-ReLU -> dropout, sigmoid output."""
    widths = (N_FEATURES + N_LABELS,) + cfg.discriminator_hidden
    layers = [
        nn.LayerConfig(
            in_width=widths[i],
            out_width=widths[i + 1],
            activation="leaky_relu",
            batchnorm=True,
            bn_after_activation=False,
            dropout=cfg.dropout,
            leaky_alpha=cfg.leaky_alpha,
            bn_momentum=cfg.bn_momentum,
            bn_epsilon=cfg.bn_epsilon,
        )
        for i in range(len(widths) - 1)
    ]
    layers.append(nn.LayerConfig(in_width=widths[-1], out_width=1, activation="sigmoid"))
    return tuple(layers)


@dataclass
class NormalizationSpec:
    """Affine [-1,1] maps for the integer features and the real labels.

    Feature ranges are the fixed field bounds; label ranges are fitted on
    the training subset.  A degenerate label (min == max) maps to 0 and is
    recorded in ``warnings``.
    """

    feature_bounds: tuple[tuple[int, int], ...] = FIELD_BOUNDS
    label_min: tuple[float, ...] = (0.0, 0.0, 0.0)
    label_max: tuple[float, ...] = (1.0, 1.0, 1.0)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def fit(cls, labels: np.ndarray) -> "NormalizationSpec":
        arr = np.asarray(labels, dtype=float).reshape(-1, N_LABELS)
        lo = arr.min(axis=0)
        hi = arr.max(axis=0)
        spec = cls(label_min=tuple(float(v) for v in lo), label_max=tuple(float(v) for v in hi))
        for j in range(N_LABELS):
            if lo[j] == hi[j]:
                spec.warnings.append(f"label {j} degenerate: min == max == {lo[j]}; mapped to 0")
        return spec

    def normalize_features(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float).reshape(-1, N_FEATURES)
        lo = np.array([b[0] for b in self.feature_bounds], dtype=float)
        hi = np.array([b[1] for b in self.feature_bounds], dtype=float)
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    def denormalize_features(self, normalized: np.ndarray) -> np.ndarray:
        """Map back to integers by rounding; out-of-range values survive."""
        x = np.asarray(normalized, dtype=float).reshape(-1, N_FEATURES)
        lo = np.array([b[0] for b in self.feature_bounds], dtype=float)
        hi = np.array([b[1] for b in self.feature_bounds], dtype=float)
        raw = lo + (x + 1.0) / 2.0 * (hi - lo)
        return np.floor(raw + 0.5).astype(int)

    def normalize_labels(self, labels: np.ndarray) -> np.ndarray:
        y = np.asarray(labels, dtype=float).reshape(-1, N_LABELS)
        lo = np.asarray(self.label_min)
        hi = np.asarray(self.label_max)
        span = hi - lo
        out = np.zeros_like(y)
        ok = span != 0.0
        out[:, ok] = 2.0 * (y[:, ok] - lo[ok]) / span[ok] - 1.0
        return out

    def denormalize_labels(self, normalized: np.ndarray) -> np.ndarray:
        y = np.asarray(normalized, dtype=float).reshape(-1, N_LABELS)
        lo = np.asarray(self.label_min)
        hi = np.asarray(self.label_max)
        return lo + (y + 1.0) / 2.0 * (hi - lo)

    def to_dict(self) -> dict:
        return {
            "feature_bounds": [list(b) for b in self.feature_bounds],
            "label_min": list(self.label_min),
            "label_max": list(self.label_max),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "NormalizationSpec":
        return cls(
            feature_bounds=tuple(tuple(b) for b in raw["feature_bounds"]),
            label_min=tuple(raw["label_min"]),
            label_max=tuple(raw["label_max"]),
            warnings=list(raw["warnings"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormalizationSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrainingSnapshot:
    iteration: int
    generator: nn.MlpParameters
    d_loss: float
    g_loss: float
    d_acc_real: float
    d_acc_fake: float


@dataclass
class TrainingResult:
    snapshots: list[TrainingSnapshot]
    generator: nn.MlpParameters
    discriminator: nn.MlpParameters
    d_loss: np.ndarray
    g_loss: np.ndarray
    d_acc_real: np.ndarray
    d_acc_fake: np.ndarray
    d_real_batches: int = 0
    d_fake_batches: int = 0
    g_batches: int = 0


def train(
    cfg: CganConfig,
    features_norm: np.ndarray,
    labels_norm: np.ndarray,
    iterations: int,
    rng: np.random.Generator | None = None,
) -> TrainingResult:
    """Adversarial training loop; returns snapshots plus full stat series.

    ``features_norm``/``labels_norm`` are the normalized training subset.
    Snapshots are taken every ``cfg.snapshot_interval`` iterations and at
    the final iteration.  Deterministic for a fixed rng state.
    """
    feats = np.asarray(features_norm, dtype=float)
    labs = np.asarray(labels_norm, dtype=float)
    n = len(feats)
    if iterations > 0 and n < cfg.batch_size:
        raise ValueError(f"training set has {n} rows, needs at least batch_size={cfg.batch_size}")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    generator = nn.init_params(generator_configs(cfg), rng)
    discriminator = nn.init_params(discriminator_configs(cfg), rng)
    g_state = nn.AdamState.zeros_like(generator)
    d_state = nn.AdamState.zeros_like(discriminator)

    batch = cfg.batch_size
    ones = np.ones((batch, 1))
    zeros = np.zeros((batch, 1))
    d_loss_series = np.zeros(iterations)
    g_loss_series = np.zeros(iterations)
    acc_real_series = np.zeros(iterations)
    acc_fake_series = np.zeros(iterations)
    result = TrainingResult(
        snapshots=[],
        generator=generator,
        discriminator=discriminator,
        d_loss=d_loss_series,
        g_loss=g_loss_series,
        d_acc_real=acc_real_series,
        d_acc_fake=acc_fake_series,
    )

    d_t = 0
    g_t = 0
    for it in range(1, iterations + 1):
        idx = rng.integers(0, n, size=batch)
        real_x = feats[idx]
        real_y = labs[idx]
        noise = rng.standard_normal((batch, cfg.latent_dim))

        fake_x, g_cache = nn.forward(generator, np.concatenate([noise, real_y], axis=1), "train", rng)

        p_real, cache = nn.forward(discriminator, np.concatenate([real_x, real_y], axis=1), "train", rng)
        loss_real, grad = nn.bce_loss(p_real, ones)
        grads, _ = nn.backward(discriminator, cache, grad)
        d_t += 1
        nn.adam_step(discriminator, grads, d_state, d_t, cfg.optimizer)
        result.d_real_batches += 1

        p_fake, cache = nn.forward(discriminator, np.concatenate([fake_x, real_y], axis=1), "train", rng)
        loss_fake, grad = nn.bce_loss(p_fake, zeros)
        grads, _ = nn.backward(discriminator, cache, grad)
        d_t += 1
        nn.adam_step(discriminator, grads, d_state, d_t, cfg.optimizer)
        result.d_fake_batches += 1

        # non-saturating generator objective through the frozen discriminator
        p_gen, cache = nn.forward(discriminator, np.concatenate([fake_x, real_y], axis=1), "eval")
        g_loss, grad = nn.bce_loss(p_gen, ones)
        _, grad_input = nn.backward(discriminator, cache, grad)
        g_grads, _ = nn.backward(generator, g_cache, grad_input[:, :N_FEATURES])
        g_t += 1
        nn.adam_step(generator, g_grads, g_state, g_t, cfg.optimizer)
        result.g_batches += 1

        d_loss = 0.5 * (loss_real + loss_fake)
        acc_real = float((p_real > 0.5).mean())
        acc_fake = float((p_fake < 0.5).mean())
        d_loss_series[it - 1] = d_loss
        g_loss_series[it - 1] = g_loss
        acc_real_series[it - 1] = acc_real
        acc_fake_series[it - 1] = acc_fake

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            snap = TrainingSnapshot(it, generator.copy(), d_loss, g_loss, acc_real, acc_fake)
            result.snapshots.append(snap)
            raise TrainingDivergedError(f"non-finite loss at iteration {it}", snap)

        if it % cfg.snapshot_interval == 0 or it == iterations:
            result.snapshots.append(
                TrainingSnapshot(it, generator.copy(), d_loss, g_loss, acc_real, acc_fake)
            )

    return result


def epochs_to_iterations(n_rows: int, batch_size: int, epochs: float) -> int:
    """One epoch is training once over the whole set, in full batches."""
    per_epoch = int(np.ceil(n_rows / batch_size))
    return int(np.ceil(per_epoch * epochs))


_FULL_AXIS = np.linspace(-1.0, 1.0, 5)
_LOW_AXIS = np.linspace(-1.0, -1.2, 5)
_HIGH_AXIS = np.linspace(1.0, 1.2, 5)

_TARGETED_AXES: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {
    # label order: (LCC, GHG, WalkScore)
    "WorstHalfGHG": (_FULL_AXIS, _LOW_AXIS, _FULL_AXIS),
    "WorstHalfLCC": (_LOW_AXIS, _FULL_AXIS, _FULL_AXIS),
    "WorstHalfWalkScore": (_FULL_AXIS, _FULL_AXIS, _HIGH_AXIS),
    "WorstHalfAll": (_LOW_AXIS, _LOW_AXIS, _HIGH_AXIS),
    "BestHalfAll": (_LOW_AXIS, _LOW_AXIS, _HIGH_AXIS),
    "FullData": (_LOW_AXIS, _LOW_AXIS, _HIGH_AXIS),
}


def build_label_grid(experiment: str) -> np.ndarray:
    """Normalized label grid for an experiment: 125 or 500 rows.

    Each axis carries 5 equally spaced values; targeted objectives sweep
    past the normalized training extreme (below -1 for minimised labels,
    above +1 for WalkScore), untargeted ones sweep the full [-1,1] range.
    The all-objective experiments append the three single-objective grids
    to their own, giving 5^3 + 3*5^3 = 500 labels.
    """
    if experiment not in _TARGETED_AXES:
        raise ValueError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENT_NAMES}")
    axes = _TARGETED_AXES[experiment]
    rows = [np.array(combo) for combo in itertools.product(*axes)]
    if experiment in ALL_OBJECTIVE_EXPERIMENTS:
        for single in SINGLE_OBJECTIVE_EXPERIMENTS:
            rows.extend(np.array(c) for c in itertools.product(*_TARGETED_AXES[single]))
    return np.array(rows)


@dataclass
class CandidateSet:
    """Generated candidates with full provenance, pre-vetting."""

    decisions: np.ndarray  # (m, 10) int, rounded denormalized features
    raw: np.ndarray  # (m, 10) float, generator outputs in [-1, 1]
    labels: np.ndarray  # (m, 3) float, conditioning labels (normalized)
    run_ids: np.ndarray  # (m,) str
    iterations: np.ndarray  # (m,) int, snapshot iteration of origin

    def __len__(self) -> int:
        return len(self.decisions)

    @classmethod
    def empty(cls) -> "CandidateSet":
        return cls(
            decisions=np.empty((0, N_FEATURES), dtype=int),
            raw=np.empty((0, N_FEATURES)),
            labels=np.empty((0, N_LABELS)),
            run_ids=np.empty((0,), dtype=object),
            iterations=np.empty((0,), dtype=int),
        )

    @classmethod
    def concat(cls, sets: list["CandidateSet"]) -> "CandidateSet":
        if not sets:
            return cls.empty()
        return cls(
            decisions=np.concatenate([s.decisions for s in sets]),
            raw=np.concatenate([s.raw for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            run_ids=np.concatenate([s.run_ids for s in sets]),
            iterations=np.concatenate([s.iterations for s in sets]),
        )

    def thin(self, target: int) -> "CandidateSet":
        """Deterministically subsample down to roughly ``target`` rows."""
        if target <= 0 or len(self) <= target:
            return self
        step = int(np.ceil(len(self) / target))
        sel = slice(0, None, step)
        return CandidateSet(
            decisions=self.decisions[sel],
            raw=self.raw[sel],
            labels=self.labels[sel],
            run_ids=self.run_ids[sel],
            iterations=self.iterations[sel],
        )


def generate(
    generator: nn.MlpParameters,
    labels: np.ndarray,
    count_per_label: int,
    rng: np.random.Generator,
    norm: NormalizationSpec,
    latent_dim: int = 3,
    run_id: str = "",
    iteration: int = -1,
) -> CandidateSet:
    """Produce candidate decision vectors conditioned on the given labels.

    Deterministic for a fixed rng state.  Outputs are denormalized and
    rounded but never clipped; constraint checks happen at vetting.
    """
    labels = np.asarray(labels, dtype=float).reshape(-1, N_LABELS)
    m = len(labels) * count_per_label
    if m == 0:
        return CandidateSet.empty()
    cond = np.repeat(labels, count_per_label, axis=0)
    noise = rng.standard_normal((m, latent_dim))
    raw, _ = nn.forward(generator, np.concatenate([noise, cond], axis=1), "eval")
    decisions = norm.denormalize_features(raw)
    return CandidateSet(
        decisions=decisions,
        raw=raw,
        labels=cond,
        run_ids=np.array([run_id] * m, dtype=object),
        iterations=np.full(m, iteration, dtype=int),
    )


def select_candidate_snapshots(snapshots: list[TrainingSnapshot]) -> list[TrainingSnapshot]:
    """Snapshot states worth generating from, by four quantile criteria.

    Union of: top quartile by real-batch accuracy (strong discriminator),
    bottom quartile by discriminator loss, bottom quartile by fake-batch
    accuracy (generator fooling it), bottom quartile by generator loss.
    Quantile thresholds are inclusive, so ties select together.
    """
    if not snapshots:
        raise ValueError("select_candidate_snapshots requires at least one snapshot")
    acc_real = np.array([s.d_acc_real for s in snapshots])
    acc_fake = np.array([s.d_acc_fake for s in snapshots])
    d_loss = np.array([s.d_loss for s in snapshots])
    g_loss = np.array([s.g_loss for s in snapshots])
    keep = (
        (acc_real >= np.quantile(acc_real, 0.75))
        | (d_loss <= np.quantile(d_loss, 0.25))
        | (acc_fake <= np.quantile(acc_fake, 0.25))
        | (g_loss <= np.quantile(g_loss, 0.25))
    )
    return [s for s, k in zip(snapshots, keep) if k]


def combine_runs(short_pool: CandidateSet, long_pool: CandidateSet) -> CandidateSet:
    """Concatenate the candidate pools of the short and the long run.

    Duplicates are retained here; de-duplication happens at vetting.
    """
    return CandidateSet.concat([short_pool, long_pool])

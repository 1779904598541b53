"""End-to-end experiment pipeline: GA archive -> C-GAN -> vetted solutions.

Six named experiments train the GAN on different slices of the archive
(worst half per objective, worst/best half in all three, or everything),
generate label-conditioned candidates from selected training snapshots of
one short and one long run, vet them against the original constraints,
and report optimality/diversity gains against the training subset.

Every stage persists its artifacts as CSV/JSON under the experiment output
directory, and a fixed master seed makes every byte of them reproducible;
wall-clock timings are quarantined in ``timings.csv`` so identical-seed
runs produce identical files otherwise.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cgan, metrics, nsga2, problem
from .cgan import EXPERIMENT_NAMES, CandidateSet, NormalizationSpec
from .nsga2 import GaConfig, Solution, SolutionArchive
from .problem import FIELD_NAMES

PLOT_LCC_CUTOFF = 10_000.0  # $/m^2, scatter-plot zoom filter
RUNNING_AVERAGE_WINDOW = 10

#: pre-vetting pool sizes matching the published candidate counts
PAPER_POOL_TARGET = {
    "WorstHalfGHG": 875,
    "WorstHalfLCC": 875,
    "WorstHalfWalkScore": 875,
    "WorstHalfAll": 2750,
    "BestHalfAll": 5000,
    "FullData": 4000,
}

#: short-run iteration counts; per-experiment tuning keeps the curves stable
PAPER_SHORT_ITERATIONS = {
    "WorstHalfGHG": 800,
    "WorstHalfLCC": 800,
    "WorstHalfWalkScore": 800,
    "WorstHalfAll": 2000,
    "BestHalfAll": 2000,
    "FullData": 2000,
}

#: cells the published results table left blank per experiment
UNPUBLISHED_CELLS = {
    "WorstHalfGHG": ("min_lcc", "max_walkscore"),
    "WorstHalfLCC": ("min_ghg", "max_walkscore"),
    "WorstHalfWalkScore": ("min_ghg", "min_lcc"),
    "WorstHalfAll": (),
    "BestHalfAll": (),
    "FullData": (),
}


@dataclass(frozen=True)
class ScaleSettings:
    """Run sizes; desk scale keeps CI fast, paper scale matches the source."""

    ga_population: int
    ga_generations: int
    short_iterations: int
    long_epochs: float
    pool_target: int


def scale_settings(name: str, paper_scale: bool = False) -> ScaleSettings:
    if name not in EXPERIMENT_NAMES:
        raise ValueError(f"unknown experiment {name!r}")
    if paper_scale:
        return ScaleSettings(
            ga_population=128,
            ga_generations=512,
            short_iterations=PAPER_SHORT_ITERATIONS[name],
            long_epochs=155.0,
            pool_target=PAPER_POOL_TARGET[name],
        )
    return ScaleSettings(
        ga_population=64,
        ga_generations=64,
        short_iterations=300,
        long_epochs=10.0,
        pool_target=max(1, PAPER_POOL_TARGET[name] // 10),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: name decides the training filter and label grid."""

    name: str
    settings: ScaleSettings
    seed: int = 0
    paper_scale: bool = False

    @classmethod
    def resolve(cls, name: str, seed: int = 0, paper_scale: bool = False) -> "ExperimentSpec":
        return cls(name=name, settings=scale_settings(name, paper_scale), seed=seed, paper_scale=paper_scale)


class StageFailureError(RuntimeError):
    """A pipeline stage failed; partial artifacts are left in place."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(timings: dict[str, float], name: str):
    t0 = time.perf_counter()
    try:
        yield
    except StageFailureError:
        raise
    except Exception as exc:
        raise StageFailureError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def objective_medians(feasible: list[Solution]) -> tuple[float, float, float]:
    objs = np.array([[s.objectives.lcc, s.objectives.ghg, s.objectives.walkscore] for s in feasible])
    med = np.median(objs, axis=0)
    return float(med[0]), float(med[1]), float(med[2])


def filter_training_set(archive: SolutionArchive, experiment: str) -> list[Solution]:
    """Training subset per the experiment's median predicate.

    Medians are taken over all feasible archive solutions.  The worst-half
    predicates are inclusive; BestHalfAll is the conjunction of their
    strict complements, so boundary solutions can belong to neither.
    """
    if experiment not in EXPERIMENT_NAMES:
        raise ValueError(f"unknown experiment {experiment!r}")
    feasible = archive.feasible()
    if len(feasible) < 2:
        raise ValueError("archive needs at least 2 feasible solutions")
    if experiment == "FullData":
        return feasible
    lcc_med, ghg_med, ws_med = objective_medians(feasible)

    def worst_ghg(s: Solution) -> bool:
        return s.objectives.ghg >= ghg_med

    def worst_lcc(s: Solution) -> bool:
        return s.objectives.lcc >= lcc_med

    def worst_ws(s: Solution) -> bool:
        return s.objectives.walkscore <= ws_med

    predicates = {
        "WorstHalfGHG": worst_ghg,
        "WorstHalfLCC": worst_lcc,
        "WorstHalfWalkScore": worst_ws,
        "WorstHalfAll": lambda s: worst_ghg(s) and worst_lcc(s) and worst_ws(s),
        "BestHalfAll": lambda s: not worst_ghg(s) and not worst_lcc(s) and not worst_ws(s),
    }
    subset = [s for s in feasible if predicates[experiment](s)]
    if not subset:
        raise ValueError(
            f"experiment {experiment!r} selects an empty training subset; try a different experiment"
        )
    return subset


def zero_walkscore_subset(archive: SolutionArchive) -> list[Solution]:
    """Feasible solutions with WalkScore exactly zero (degenerate-label runs)."""
    subset = [s for s in archive.feasible() if s.objectives.walkscore == 0.0]
    if not subset:
        raise ValueError("archive holds no zero-WalkScore solutions")
    return subset


@dataclass
class VetResult:
    """Outcome of constraint vetting and de-duplication of a candidate pool."""

    decisions: np.ndarray  # (k, 10) admissible, novel decision vectors
    objectives: np.ndarray  # (k, 3) exact (lcc, ghg, walkscore) from evaluate
    run_ids: np.ndarray
    iterations: np.ndarray
    labels: np.ndarray  # conditioning labels, kept for provenance only
    pool_size: int
    ratio: float | None
    rejected_infeasible: int = 0
    rejected_duplicate_archive: int = 0
    rejected_duplicate_pool: int = 0

    @property
    def admissible_count(self) -> int:
        return len(self.decisions)


def vet_candidates(pool: CandidateSet, archive: SolutionArchive, catalog=None) -> VetResult:
    """Keep candidates that satisfy the constraints and are novel.

    Novel means not byte-identical to any archive decision vector and not
    a repeat within the pool.  Exact labels always come from the original
    evaluation function, never from the conditioning labels.
    """
    archive_set = {s.decision for s in archive}
    seen: set[tuple[int, ...]] = set()
    kept_idx: list[int] = []
    kept_objs: list[tuple[float, float, float]] = []
    n_infeasible = n_dup_archive = n_dup_pool = 0
    for i in range(len(pool)):
        vec = tuple(int(v) for v in pool.decisions[i])
        if not problem.validate(vec).feasible:
            n_infeasible += 1
            continue
        if vec in archive_set:
            n_dup_archive += 1
            continue
        if vec in seen:
            n_dup_pool += 1
            continue
        seen.add(vec)
        objs = problem.evaluate(vec, catalog)
        kept_idx.append(i)
        kept_objs.append((objs.lcc, objs.ghg, objs.walkscore))

    idx = np.array(kept_idx, dtype=int)
    pool_size = len(pool)
    return VetResult(
        decisions=pool.decisions[idx] if len(idx) else np.empty((0, 10), dtype=int),
        objectives=np.array(kept_objs).reshape(-1, 3),
        run_ids=pool.run_ids[idx] if len(idx) else np.empty((0,), dtype=object),
        iterations=pool.iterations[idx] if len(idx) else np.empty((0,), dtype=int),
        labels=pool.labels[idx] if len(idx) else np.empty((0, 3)),
        pool_size=pool_size,
        ratio=(len(idx) / pool_size) if pool_size else None,
        rejected_infeasible=n_infeasible,
        rejected_duplicate_archive=n_dup_archive,
        rejected_duplicate_pool=n_dup_pool,
    )


def running_average(series: np.ndarray, window: int = RUNNING_AVERAGE_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` points (prefix mean early on)."""
    series = np.asarray(series, dtype=float)
    out = np.empty_like(series)
    csum = np.cumsum(series)
    for i in range(len(series)):
        start = max(0, i - window + 1)
        total = csum[i] - (csum[start - 1] if start > 0 else 0.0)
        out[i] = total / (i - start + 1)
    return out


@dataclass
class RunReport:
    """One results-table row plus everything needed to recompute it."""

    experiment: str
    seed: int
    config_hash: str
    n_train: int
    n_pool: int
    n_admissible: int
    admissibility_ratio: float | None
    min_ghg_train: float
    min_ghg_gen: float | None
    min_ghg_improved_pct: float | None
    min_lcc_train: float
    min_lcc_gen: float | None
    min_lcc_improved_pct: float | None
    max_walkscore_train: float
    max_walkscore_gen: float | None
    max_walkscore_improved_pct: float | None
    hv_train: float
    hv_gen: float | None
    hv_improved_pct: float | None
    unpublished_cells: tuple[str, ...]
    warnings: list[str] = field(default_factory=list)
    runtime_ratio: float | None = None
    timings: dict[str, float] = field(default_factory=dict)


REPORT_COLUMNS = (
    "experiment",
    "n_train",
    "n_pool",
    "n_admissible",
    "admissibility_ratio",
    "min_ghg_train",
    "min_ghg_gen",
    "min_ghg_improved_pct",
    "min_lcc_train",
    "min_lcc_gen",
    "min_lcc_improved_pct",
    "max_walkscore_train",
    "max_walkscore_gen",
    "max_walkscore_improved_pct",
    "hv_train",
    "hv_gen",
    "hv_improved_pct",
    "unpublished_cells",
    "warnings",
    "config_hash",
    "seed",
)


def write_report_csv(report: RunReport, path) -> None:
    def cell(v):
        return "" if v is None else _fmt(v)

    row = [
        report.experiment,
        report.n_train,
        report.n_pool,
        report.n_admissible,
        cell(report.admissibility_ratio),
        cell(report.min_ghg_train),
        cell(report.min_ghg_gen),
        cell(report.min_ghg_improved_pct),
        cell(report.min_lcc_train),
        cell(report.min_lcc_gen),
        cell(report.min_lcc_improved_pct),
        cell(report.max_walkscore_train),
        cell(report.max_walkscore_gen),
        cell(report.max_walkscore_improved_pct),
        cell(report.hv_train),
        cell(report.hv_gen),
        cell(report.hv_improved_pct),
        ";".join(report.unpublished_cells),
        ";".join(report.warnings),
        report.config_hash,
        report.seed,
    ]
    write_csv(path, REPORT_COLUMNS, [row])


def report_runtime_ratio(timings: dict[str, float]) -> float | None:
    """(GAN train + generate) wall-clock over GA wall-clock."""
    ga = timings.get("ga_optimize", 0.0)
    gan = timings.get("gan_train", 0.0) + timings.get("gan_generate", 0.0)
    if ga <= 0.0:
        return None
    return gan / ga


def write_timings_csv(timings: dict[str, float], path) -> None:
    rows = [[stage, repr(seconds)] for stage, seconds in timings.items()]
    ratio = report_runtime_ratio(timings)
    if ratio is not None:
        rows.append(["runtime_ratio_gan_over_ga", repr(ratio)])
    write_csv(path, ("stage", "seconds"), rows)


def _solution_rows(solutions: list[Solution]):
    for s in solutions:
        yield list(s.decision) + [s.objectives.lcc, s.objectives.ghg, s.objectives.walkscore, s.generation]


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _train_run(
    run_id: str,
    cfg: cgan.CganConfig,
    feats_norm: np.ndarray,
    labels_norm: np.ndarray,
    iterations: int,
    seed_seq: np.random.SeedSequence,
    out_dir: Path,
) -> cgan.TrainingResult:
    rng = np.random.default_rng(seed_seq)
    result = cgan.train(cfg, feats_norm, labels_norm, iterations, rng)
    curves_header = (
        "iteration",
        "d_loss",
        "g_loss",
        "d_acc_real",
        "d_acc_fake",
        "avg_d_loss",
        "avg_g_loss",
        "avg_d_acc_real",
        "avg_d_acc_fake",
    )
    avg = [running_average(x) for x in (result.d_loss, result.g_loss, result.d_acc_real, result.d_acc_fake)]
    rows = [
        [
            i + 1,
            result.d_loss[i],
            result.g_loss[i],
            result.d_acc_real[i],
            result.d_acc_fake[i],
            avg[0][i],
            avg[1][i],
            avg[2][i],
            avg[3][i],
        ]
        for i in range(iterations)
    ]
    write_csv(out_dir / f"curves_{run_id}.csv", curves_header, rows)

    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    stat_rows = []
    for snap in result.snapshots:
        from . import nn

        nn.save_params(snap.generator, snap_dir / f"{run_id}_{snap.iteration:06d}.npz")
        stat_rows.append([run_id, snap.iteration, snap.d_loss, snap.g_loss, snap.d_acc_real, snap.d_acc_fake])
    stats_path = out_dir / f"snapshots_{run_id}.csv"
    write_csv(stats_path, ("run_id", "iteration", "d_loss", "g_loss", "d_acc_real", "d_acc_fake"), stat_rows)
    return result


def _generate_pool(
    run_id: str,
    result: cgan.TrainingResult,
    grid: np.ndarray,
    norm: NormalizationSpec,
    latent_dim: int,
    count_per_label: int,
    seed_seq: np.random.SeedSequence,
) -> CandidateSet:
    rng = np.random.default_rng(seed_seq)
    selected = cgan.select_candidate_snapshots(result.snapshots)
    sets = [
        cgan.generate(
            snap.generator,
            grid,
            count_per_label,
            rng,
            norm,
            latent_dim=latent_dim,
            run_id=run_id,
            iteration=snap.iteration,
        )
        for snap in selected
    ]
    return CandidateSet.concat(sets)


def write_candidates_csv(pool: CandidateSet, path) -> None:
    header = (
        ("run_id", "iteration", "label_lcc", "label_ghg", "label_walkscore")
        + tuple(f"raw_{n}" for n in FIELD_NAMES)
        + FIELD_NAMES
    )
    rows = []
    for i in range(len(pool)):
        rows.append(
            [pool.run_ids[i], int(pool.iterations[i])]
            + [float(v) for v in pool.labels[i]]
            + [float(v) for v in pool.raw[i]]
            + [int(v) for v in pool.decisions[i]]
        )
    write_csv(path, header, rows)


def write_vetted_csv(vet: VetResult, path) -> None:
    header = FIELD_NAMES + (
        "lcc",
        "ghg",
        "walkscore",
        "run_id",
        "iteration",
        "label_lcc",
        "label_ghg",
        "label_walkscore",
    )
    rows = []
    for i in range(vet.admissible_count):
        rows.append(
            [int(v) for v in vet.decisions[i]]
            + [float(v) for v in vet.objectives[i]]
            + [vet.run_ids[i], int(vet.iterations[i])]
            + [float(v) for v in vet.labels[i]]
        )
    write_csv(path, header, rows)


def emit_plots(out_dir: Path, train_objs: np.ndarray, gen_objs: np.ndarray, render: bool = False) -> list[Path]:
    """Write scatter-plot data files (and optionally SVG renderings).

    Produces GHG-vs-LCC and WalkScore-vs-LCC point sets for the training
    and generated solutions, plus variants restricted to LCC <= 10 k$/m^2.
    Training-curve files are written by the training stage.
    """
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(exist_ok=True)
    written: list[Path] = []

    def scatter(tag: str, objs: np.ndarray) -> None:
        full = objs
        zoom = objs[objs[:, 0] <= PLOT_LCC_CUTOFF] if len(objs) else objs
        for suffix, data in (("", full), ("_lcc_filtered", zoom)):
            p1 = plots_dir / f"scatter_{tag}_ghg_vs_lcc{suffix}.csv"
            write_csv(p1, ("lcc", "ghg"), [[row[0], row[1]] for row in data])
            p2 = plots_dir / f"scatter_{tag}_walkscore_vs_lcc{suffix}.csv"
            write_csv(p2, ("lcc", "walkscore"), [[row[0], row[2]] for row in data])
            written.extend([p1, p2])

    scatter("train", train_objs.reshape(-1, 3))
    scatter("gen", gen_objs.reshape(-1, 3))

    if render:
        written.extend(render_plot_images(out_dir))
    return written


def render_plot_images(out_dir: Path) -> list[Path]:
    """Render the scatter data files as SVG images (requires matplotlib)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise RuntimeError("plot rendering requires the 'plots' extra (matplotlib)") from exc

    plots_dir = out_dir / "plots"
    written: list[Path] = []
    for y_name, y_col in (("ghg", "ghg"), ("walkscore", "walkscore")):
        for suffix in ("", "_lcc_filtered"):
            fig, ax = plt.subplots(figsize=(5, 4))
            for tag, marker, color in (("train", "x", "tab:red"), ("gen", "+", "tab:blue")):
                path = plots_dir / f"scatter_{tag}_{y_name}_vs_lcc{suffix}.csv"
                if not path.exists():
                    continue
                data = np.genfromtxt(path, delimiter=",", names=True)
                if data.size:
                    ax.scatter(
                        np.atleast_1d(data["lcc"]),
                        np.atleast_1d(data[y_col]),
                        marker=marker,
                        s=12,
                        alpha=0.5,
                        color=color,
                        label=tag,
                    )
            ax.set_xlabel("LCC ($/m^2)")
            ax.set_ylabel(y_name)
            ax.legend()
            out = plots_dir / f"scatter_{y_name}_vs_lcc{suffix}.svg"
            fig.savefig(out)
            plt.close(fig)
            written.append(out)
    return written


def _objective_rows(solutions: list[Solution]) -> np.ndarray:
    return np.array(
        [[s.objectives.lcc, s.objectives.ghg, s.objectives.walkscore] for s in solutions]
    ).reshape(-1, 3)


def build_report(
    spec: ExperimentSpec,
    train_objs: np.ndarray,
    vet: VetResult,
    warnings: list[str],
    config_hash: str,
) -> RunReport:
    """Compute the results-table row from the training and vetted sets."""
    anchors = metrics.fit_anchors(train_objs)
    hv_train = metrics.hypervolume(metrics.minmax_scale(train_objs, anchors).hv_points())
    best_train = metrics.extract_best(train_objs)

    if vet.admissible_count:
        gen_objs = vet.objectives
        hv_gen = metrics.hypervolume(metrics.minmax_scale(gen_objs, anchors).hv_points())
        best_gen = metrics.extract_best(gen_objs)
        imp = {
            "ghg": metrics.improvement_pct(best_train.min_ghg, best_gen.min_ghg, "min"),
            "lcc": metrics.improvement_pct(best_train.min_lcc, best_gen.min_lcc, "min"),
            "ws": metrics.improvement_pct(best_train.max_walkscore, best_gen.max_walkscore, "max"),
            "hv": metrics.improvement_pct(hv_train, hv_gen, "max"),
        }
        gen_cells = (best_gen.min_ghg, best_gen.min_lcc, best_gen.max_walkscore, hv_gen)
    else:
        imp = {"ghg": None, "lcc": None, "ws": None, "hv": None}
        gen_cells = (None, None, None, None)

    return RunReport(
        experiment=spec.name,
        seed=spec.seed,
        config_hash=config_hash,
        n_train=len(train_objs),
        n_pool=vet.pool_size,
        n_admissible=vet.admissible_count,
        admissibility_ratio=vet.ratio,
        min_ghg_train=best_train.min_ghg,
        min_ghg_gen=gen_cells[0],
        min_ghg_improved_pct=imp["ghg"],
        min_lcc_train=best_train.min_lcc,
        min_lcc_gen=gen_cells[1],
        min_lcc_improved_pct=imp["lcc"],
        max_walkscore_train=best_train.max_walkscore,
        max_walkscore_gen=gen_cells[2],
        max_walkscore_improved_pct=imp["ws"],
        hv_train=hv_train,
        hv_gen=gen_cells[3],
        hv_improved_pct=imp["hv"],
        unpublished_cells=UNPUBLISHED_CELLS[spec.name],
        warnings=list(warnings),
    )


def ensure_archive(
    out_dir: Path,
    seed: int,
    settings: ScaleSettings,
    timings: dict[str, float],
    catalog=None,
    archive: SolutionArchive | None = None,
) -> SolutionArchive:
    """Load the archive CSV if present, otherwise run the GA and persist it."""
    path = out_dir / "archive.csv"
    if archive is not None:
        if not path.exists():
            nsga2.write_archive_csv(archive, path)
        return archive
    if path.exists():
        with _stage(timings, "load_archive"):
            return nsga2.read_archive_csv(path)
    with _stage(timings, "ga_optimize"):
        ga_seed = int(np.random.SeedSequence([seed, 0]).generate_state(1)[0])
        cfg = GaConfig(
            population_size=settings.ga_population,
            generations=settings.ga_generations,
            rng_seed=ga_seed,
        )
        evaluate = (lambda d: problem.evaluate(d, catalog)) if catalog is not None else problem.evaluate
        archive = nsga2.run_nsga2(cfg, evaluate)
        nsga2.write_archive_csv(archive, path)
    return archive


def run_experiment(
    name: str,
    out_dir,
    seed: int = 0,
    paper_scale: bool = False,
    archive: SolutionArchive | None = None,
    catalog=None,
    training_filter=None,
    render_plots: bool = False,
    cgan_config: cgan.CganConfig | None = None,
) -> RunReport:
    """Execute the full pipeline for one experiment and persist everything.

    ``training_filter`` optionally replaces the named median filter (used
    for structural checks such as a forced all-zero-WalkScore subset).
    Raises StageFailureError after persisting a failure marker if any stage
    breaks; partial artifacts are retained.
    """
    spec = ExperimentSpec.resolve(name, seed=seed, paper_scale=paper_scale)
    settings = spec.settings
    base = Path(out_dir)
    exp_dir = base / name
    exp_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    cfg = cgan_config or cgan.CganConfig()
    config_hash = _config_hash(
        {
            "experiment": name,
            "seed": seed,
            "paper_scale": paper_scale,
            "settings": settings.__dict__,
            "cgan": {
                "latent_dim": cfg.latent_dim,
                "generator_hidden": list(cfg.generator_hidden),
                "discriminator_hidden": list(cfg.discriminator_hidden),
                "batch_size": cfg.batch_size,
                "snapshot_interval": cfg.snapshot_interval,
            },
        }
    )
    seed_root = np.random.SeedSequence([seed, 1])
    seq_short, seq_long, seq_gen_short, seq_gen_long = seed_root.spawn(4)

    try:
        archive = ensure_archive(base, seed, settings, timings, catalog=catalog, archive=archive)

        with _stage(timings, "filter"):
            subset = training_filter(archive) if training_filter else filter_training_set(archive, name)
            write_csv(
                exp_dir / "training_set.csv",
                FIELD_NAMES + ("lcc", "ghg", "walkscore", "generation"),
                _solution_rows(subset),
            )
            labels_raw = _objective_rows(subset)
            features = np.array([s.decision for s in subset], dtype=int)
            norm = NormalizationSpec.fit(labels_raw)
            norm.save(exp_dir / "normalization.json")
            feats_norm = norm.normalize_features(features)
            labels_norm = norm.normalize_labels(labels_raw)

        with _stage(timings, "gan_train"):
            long_iters = cgan.epochs_to_iterations(len(subset), cfg.batch_size, settings.long_epochs)
            short_result = _train_run(
                "short", cfg, feats_norm, labels_norm, settings.short_iterations, seq_short, exp_dir
            )
            long_result = _train_run("long", cfg, feats_norm, labels_norm, long_iters, seq_long, exp_dir)

        with _stage(timings, "gan_generate"):
            grid = cgan.build_label_grid(name)
            write_csv(
                exp_dir / "label_grid.csv",
                ("label_lcc", "label_ghg", "label_walkscore"),
                [[float(v) for v in row] for row in grid],
            )
            short_pool = _generate_pool("short", short_result, grid, norm, cfg.latent_dim, 1, seq_gen_short)
            long_pool = _generate_pool("long", long_result, grid, norm, cfg.latent_dim, 1, seq_gen_long)
            pool = cgan.combine_runs(short_pool, long_pool).thin(settings.pool_target)
            write_candidates_csv(pool, exp_dir / "candidates.csv")

        with _stage(timings, "vet"):
            vet = vet_candidates(pool, archive, catalog)
            write_vetted_csv(vet, exp_dir / "vetted.csv")

        with _stage(timings, "metrics"):
            train_objs = labels_raw
            report = build_report(spec, train_objs, vet, norm.warnings, config_hash)
            write_report_csv(report, exp_dir / "report.csv")

        with _stage(timings, "plots"):
            emit_plots(exp_dir, train_objs, vet.objectives, render=render_plots)
    except StageFailureError as failure:
        with open(exp_dir / "status.json", "w", encoding="utf-8") as fh:
            json.dump({"status": "failed", "stage": failure.stage, "error": str(failure.cause)}, fh, indent=2)
            fh.write("\n")
        write_timings_csv(timings, exp_dir / "timings.csv")
        raise

    report.runtime_ratio = report_runtime_ratio(timings)
    report.timings = dict(timings)
    write_timings_csv(timings, exp_dir / "timings.csv")
    with open(exp_dir / "status.json", "w", encoding="utf-8") as fh:
        json.dump({"status": "ok"}, fh, indent=2)
        fh.write("\n")
    return report

"""Leave-one-subject-out evaluation of generated data.

Each fold aligns the training subjects class by class, trains one model per
class, generates prior and posterior samples, and scores three classifiers
on the held-out subject under three training conditions:

* ``baseline``: aligned real training data;
* ``augmented``: real plus synthetic data;
* ``synthetic_only``: synthetic data alone.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import manifold
from .classify import make_classifier
from .dataio import RunConfig
from .errors import DegenerateTest, InvalidInput, SpdVaeError
from .generate import GenerationConfig, sample_posterior, sample_prior, validity_audit
from .preprocess import CovarianceDataset
from .stats import balanced_accuracy, wilcoxon_signed_rank
from . import vae
from .vae import TrainResult

log = logging.getLogger(__name__)

CONDITIONS = ("baseline", "augmented", "synthetic_only")
_PURPOSE = {"train": 1, "prior": 2, "posterior": 3, "scramble": 4, "fidelity": 5}


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for a (fold, class, purpose) combination."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class FoldPlan:
    test_subject: int
    train_subjects: tuple


def loso_split(dataset: CovarianceDataset) -> list[FoldPlan]:
    subjects = [int(s) for s in np.unique(dataset.subject_ids)]
    if len(subjects) < 2:
        raise InvalidInput(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    return [FoldPlan(s, tuple(t for t in subjects if t != s)) for s in subjects]


@dataclass
class AlignedFold:
    plan: FoldPlan
    train: CovarianceDataset
    test: CovarianceDataset
    class_targets: np.ndarray
    global_mean: np.ndarray


def align_training(train: CovarianceDataset, n_classes: int = 2, tol: float = 1e-8,
                   max_iter: int = 50) -> tuple[CovarianceDataset, np.ndarray, np.ndarray]:
    """Transport each subject's class-``k`` trials from their own Frechet mean
    to the class-``k`` mean of the pooled training set."""
    x = train.matrices
    aligned = np.empty_like(x)
    targets = []
    for k in range(n_classes):
        in_class = train.labels == k
        if not in_class.any():
            raise InvalidInput(f"no training samples for class {k}")
        target = manifold.frechet_mean(x[in_class], tol, max_iter)
        targets.append(target)
        for s in np.unique(train.subject_ids[in_class]):
            sel = in_class & (train.subject_ids == s)
            source = manifold.frechet_mean(x[sel], tol, max_iter)
            aligned[sel] = manifold.parallel_transport(x[sel], source, target)
    out = train.with_matrices(aligned)
    global_mean = manifold.frechet_mean(aligned, tol, max_iter)
    return out, np.stack(targets), global_mean


def align_subject(data: CovarianceDataset, target: np.ndarray, tol: float = 1e-8,
                  max_iter: int = 50) -> CovarianceDataset:
    """Label-agnostic transport of every subject in ``data`` onto ``target``."""
    aligned = np.empty_like(data.matrices)
    for s in np.unique(data.subject_ids):
        sel = data.subject_ids == s
        source = manifold.frechet_mean(data.matrices[sel], tol, max_iter)
        aligned[sel] = manifold.parallel_transport(data.matrices[sel], source, target)
    return data.with_matrices(aligned)


def prepare_fold(dataset: CovarianceDataset, plan: FoldPlan, cfg: RunConfig) -> AlignedFold:
    """Split and align. Nothing computed from the test subject feeds the
    training side."""
    n_classes = len(dataset.class_names)
    train_ds = dataset.subset(dataset.subject_ids != plan.test_subject)
    test_ds = dataset.subset(dataset.subject_ids == plan.test_subject)
    train_aligned, targets, global_mean = align_training(
        train_ds, n_classes, cfg.frechet_tol, cfg.frechet_max_iter)
    test_aligned = align_subject(test_ds, global_mean, cfg.frechet_tol, cfg.frechet_max_iter)
    return AlignedFold(plan, train_aligned, test_aligned, targets, global_mean)


def train_class_models(train: CovarianceDataset, cfg: RunConfig, fold_key: int) -> dict[int, TrainResult]:
    vae_cfg = cfg.vae_config(train.dim)
    train_cfg = cfg.train_config()
    models = {}
    for k in range(len(train.class_names)):
        seed = derive_seed(cfg.seed, fold_key, k, _PURPOSE["train"])
        models[k] = vae.train(train.matrices[train.labels == k], vae_cfg, train_cfg, seed=seed)
    return models


def generate_synthetic(models: dict[int, TrainResult], train: CovarianceDataset, cfg: RunConfig,
                       generator: str, fold_key: int, noise_scale: float | None = None) -> CovarianceDataset:
    """Synthetic dataset for one generator, labels by class model."""
    mats, labels = [], []
    scale = cfg.noise_scale if noise_scale is None else noise_scale
    for k, result in models.items():
        seed = derive_seed(cfg.seed, fold_key, k, _PURPOSE[generator])
        gcfg = GenerationConfig(generator, scale, cfg.prior_count, cfg.posterior_ratio, seed)
        if generator == "prior":
            out = sample_prior(result.model, gcfg)
        else:
            out = sample_posterior(result.model, train.matrices[train.labels == k], gcfg)
        mats.append(out)
        labels.append(np.full(len(out), k))
    mats = np.concatenate(mats)
    labels = np.concatenate(labels)
    ds = CovarianceDataset(mats, labels, np.zeros(len(labels), dtype=int), train.class_names)
    ds.metadata["provenance"] = {"mode": generator, "noise_scale": scale, "seed": cfg.seed, "fold": fold_key}
    return ds


def _usable(ds: CovarianceDataset) -> CovarianceDataset:
    """Drop matrices failing the validity check (only relevant for ablations)."""
    report = validity_audit(ds.matrices)
    return ds if report.valid.all() else ds.subset(report.valid)


def fit_and_score(name: str, train: CovarianceDataset, test: CovarianceDataset, cfg: RunConfig) -> float:
    clf = make_classifier(name, cfg.knn_k, cfg.svc_c, cfg.svc_tol, len(train.class_names))
    if name == "knn" and clf.k > len(train):
        raise InvalidInput(f"k={clf.k} exceeds training size {len(train)}")
    clf.fit(train.matrices, train.labels)
    return balanced_accuracy(clf.predict(test.matrices), test.labels)


def concat(a: CovarianceDataset, b: CovarianceDataset) -> CovarianceDataset:
    return CovarianceDataset(np.concatenate([a.matrices, b.matrices]),
                             np.concatenate([a.labels, b.labels]),
                             np.concatenate([a.subject_ids, b.subject_ids]), a.class_names)


# fidelity -------------------------------------------------------------------

@dataclass
class FidelityMetrics:
    variance_real: float
    variance_synthetic: float
    variance_ratio: float
    diversity_real: float
    diversity_synthetic: float

    def as_tuple(self):
        return self.variance_ratio, self.diversity_real, self.diversity_synthetic


def statistical_variance(mats: np.ndarray) -> float:
    """Mean over matrix entries of the across-sample (population) variance."""
    return float(np.mean(np.var(np.asarray(mats, dtype=float), axis=0)))


def geometric_diversity(mats: np.ndarray, max_pairs: int = 2000, seed: int = 0) -> float:
    """Mean AIRM distance over ordered pairs ``(i, j)``, self-pairs included.

    Exact when ``n^2 <= max_pairs``; otherwise ``max_pairs`` index pairs are
    drawn uniformly with a fixed seed.
    """
    mats = np.asarray(mats, dtype=float)
    n = len(mats)
    if n < 2:
        raise InvalidInput("geometric diversity needs at least 2 matrices")
    if n * n <= max_pairs:
        total = 0.0
        for i in range(n):
            total += float(np.sum(manifold.airm_distance(mats[i], mats)))
        return total / (n * n)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, max_pairs)
    j = rng.integers(0, n, max_pairs)
    return float(np.mean(manifold.airm_distance(mats[i], mats[j])))


def fidelity_metrics(real: CovarianceDataset, synthetic: CovarianceDataset, max_pairs: int = 2000,
                     seed: int = 0) -> FidelityMetrics:
    """Per-class variance and diversity, averaged over classes."""
    var_r, var_s, div_r, div_s = [], [], [], []
    for k in np.unique(real.labels):
        r = real.matrices[real.labels == k]
        s = synthetic.matrices[synthetic.labels == k]
        if len(r) == 0 or len(s) == 0:
            raise InvalidInput(f"class {k} is empty in one of the sets")
        var_r.append(statistical_variance(r))
        var_s.append(statistical_variance(s))
        div_r.append(geometric_diversity(r, max_pairs, seed))
        div_s.append(geometric_diversity(s, max_pairs, seed))
    vr, vs = float(np.mean(var_r)), float(np.mean(var_s))
    return FidelityMetrics(vr, vs, vs / vr, float(np.mean(div_r)), float(np.mean(div_s)))


NOISE_GRID = tuple(np.round(np.arange(0.1, 3.01, 0.1), 2))


def select_noise_scale(trace: list[dict]) -> float:
    """Largest scale whose synthetic diversity does not exceed the real one.

    Noise is raised until the synthetic spread reaches the real spread, so
    the selected point approaches the target from below. Falls back to the
    smallest scale when even that overshoots.
    """
    rows = sorted(trace, key=lambda r: r["noise_scale"])
    below = [r for r in rows if r["diversity_synthetic"] <= r["diversity_real"]]
    return (below[-1] if below else rows[0])["noise_scale"]


def noise_trace(models: dict[int, TrainResult], train: CovarianceDataset, cfg: RunConfig,
                grid=NOISE_GRID, fold_key: int = 0, generator: str = "prior", count: int = 400) -> list[dict]:
    """Fidelity metrics of ``count`` prior samples per class (or the usual
    posterior set) at each noise scale in ``grid``."""
    small = cfg.replace(prior_count=count)
    trace = []
    for scale in grid:
        synth = generate_synthetic(models, train, small, generator, fold_key, noise_scale=scale)
        fm = fidelity_metrics(train, _usable(synth), cfg.fidelity_max_pairs, cfg.seed)
        trace.append({"noise_scale": float(scale), **asdict(fm)})
    return trace


def average_traces(traces: list[list[dict]]) -> list[dict]:
    """Fold-average of per-scale fidelity rows (every field, including the
    variance ratio, is a plain mean over folds)."""
    out = []
    for rows in zip(*traces):
        scales = {r["noise_scale"] for r in rows}
        if len(scales) != 1:
            raise InvalidInput("traces were computed on different grids")
        out.append({"noise_scale": rows[0]["noise_scale"],
                    **{k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "noise_scale"}})
    return out


def tune_noise_scale(models: dict[int, TrainResult], train: CovarianceDataset, cfg: RunConfig,
                     grid=NOISE_GRID, fold_key: int = 0, generator: str = "prior",
                     count: int = 400) -> tuple[float, list]:
    """Pick the noise scale for one fold; see :func:`select_noise_scale`."""
    trace = noise_trace(models, train, cfg, grid, fold_key, generator, count)
    return select_noise_scale(trace), trace


# diagnostics ----------------------------------------------------------------

def scrambled_label_test(fold: AlignedFold, classifier: str, cfg: RunConfig, seed: int = 0) -> float:
    """Test balanced accuracy after fitting on permuted training labels."""
    rng = np.random.default_rng(seed)
    scrambled = fold.train.subset(np.arange(len(fold.train)))
    scrambled.labels = rng.permutation(scrambled.labels)
    return fit_and_score(classifier, scrambled, fold.test, cfg)


def scramble_check(dataset: CovarianceDataset, cfg: RunConfig, classifiers=None,
                   test_subject: int | None = None) -> dict:
    """Scrambled-label accuracies over ``cfg.scramble_permutations`` draws,
    plus the unscrambled control, for one fold."""
    plans = loso_split(dataset)
    plan = plans[0] if test_subject is None else next(p for p in plans if p.test_subject == test_subject)
    fold = prepare_fold(dataset, plan, cfg)
    out = {"test_subject": plan.test_subject, "classifiers": {}}
    for name in classifiers or cfg.classifiers:
        accs = [scrambled_label_test(fold, name, cfg, derive_seed(cfg.seed, plan.test_subject, i, _PURPOSE["scramble"]))
                for i in range(cfg.scramble_permutations)]
        out["classifiers"][name] = {
            "scrambled": accs,
            "scrambled_mean": float(np.mean(accs)),
            "control": fit_and_score(name, fold.train, fold.test, cfg),
        }
    return out


# full protocol --------------------------------------------------------------

@dataclass
class FoldResult:
    test_subject: int
    baseline: dict
    accuracy: dict
    fidelity: dict
    validity: dict
    histories: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    config: dict
    folds: list
    summary: dict
    fidelity: dict
    validity: dict
    bonferroni_threshold: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "bonferroni_threshold": self.bonferroni_threshold,
            "summary": self.summary,
            "fidelity": self.fidelity,
            "validity": self.validity,
            "folds": [
                {k: v for k, v in asdict(f).items() if k != "histories"} for f in self.folds
            ],
        }


def run_fold(dataset: CovarianceDataset, plan: FoldPlan, cfg: RunConfig) -> FoldResult:
    fold = prepare_fold(dataset, plan, cfg)
    key = plan.test_subject
    models = train_class_models(fold.train, cfg, key)
    baseline = {c: fit_and_score(c, fold.train, fold.test, cfg) for c in cfg.classifiers}
    accuracy, fidelity, validity = {}, {}, {}
    for gen in cfg.generators:
        synth = generate_synthetic(models, fold.train, cfg, gen, key)
        audit = validity_audit(synth.matrices)
        validity[gen] = audit.to_dict()
        usable = _usable(synth)
        fidelity[gen] = asdict(fidelity_metrics(
            fold.train, usable, cfg.fidelity_max_pairs, derive_seed(cfg.seed, key, 0, _PURPOSE["fidelity"])))
        augmented = concat(fold.train, usable)
        accuracy[gen] = {
            "baseline": dict(baseline),
            "augmented": {c: fit_and_score(c, augmented, fold.test, cfg) for c in cfg.classifiers},
            "synthetic_only": {c: fit_and_score(c, usable, fold.test, cfg) for c in cfg.classifiers},
        }
    histories = {k: r.history for k, r in models.items()}
    return FoldResult(key, baseline, accuracy, fidelity, validity, histories)


def _run_fold_safe(args):
    dataset, plan, cfg = args
    try:
        return run_fold(dataset, plan, cfg)
    except SpdVaeError as exc:
        raise type(exc)(f"fold with test subject {plan.test_subject}: {exc}") from exc


def _pvalue(a, b):
    try:
        return wilcoxon_signed_rank(a, b), None
    except (DegenerateTest, InvalidInput) as exc:
        return None, str(exc)


def _mean_std(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def summarize(folds: list[FoldResult], cfg: RunConfig) -> tuple[dict, dict, dict, float]:
    threshold = cfg.alpha / cfg.bonferroni_family
    summary = {}
    for gen in cfg.generators:
        summary[gen] = {}
        for clf in cfg.classifiers:
            base = [f.accuracy[gen]["baseline"][clf] for f in folds]
            bm, bs = _mean_std(base)
            cell = {"baseline": {"mean": bm, "std": bs}}
            for cond in ("augmented", "synthetic_only"):
                vals = [f.accuracy[gen][cond][clf] for f in folds]
                m, s = _mean_std(vals)
                p, why = _pvalue(vals, base)
                cell[cond] = {
                    "mean": m, "std": s, "improvement": m - bm, "p_value": p,
                    "significant": bool(p is not None and p < threshold),
                }
                if why is not None:
                    cell[cond]["p_value_note"] = why
            summary[gen][clf] = cell
    fidelity = {}
    validity = {}
    for gen in cfg.generators:
        keys = folds[0].fidelity[gen].keys()
        fidelity[gen] = {k: float(np.mean([f.fidelity[gen][k] for f in folds])) for k in keys}
        n = sum(f.validity[gen]["n"] for f in folds)
        bad = sum(f.validity[gen]["n_invalid"] for f in folds)
        validity[gen] = {"n": n, "n_invalid": bad, "pass_fraction": 1.0 - bad / n if n else 1.0,
                         "min_fold_pass_fraction": min(f.validity[gen]["pass_fraction"] for f in folds)}
    return summary, fidelity, validity, threshold


def run_experiment(dataset: CovarianceDataset, cfg: RunConfig, n_jobs: int | None = None) -> tuple[EvalReport, list]:
    """Full protocol over all folds; any fold failure aborts the run.

    Returns the report and the per-fold results (which carry training
    histories for curve export).
    """
    if len(dataset.class_names) != 2:
        raise InvalidInput("the evaluation protocol is defined for two classes")
    plans = loso_split(dataset)
    n_jobs = cfg.n_jobs if n_jobs is None else n_jobs
    jobs = [(dataset, p, cfg) for p in plans]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            folds = list(pool.map(_run_fold_safe, jobs))
    else:
        folds = [_run_fold_safe(j) for j in jobs]
    folds.sort(key=lambda f: f.test_subject)
    summary, fidelity, validity, threshold = summarize(folds, cfg)
    report = EvalReport(cfg.to_dict(), folds, summary, fidelity, validity, threshold)
    return report, folds


def improvement_rows(report: EvalReport) -> list[dict]:
    """Per-subject percentage-point improvements over baseline."""
    rows = []
    for f in report.folds:
        for gen, by_cond in f.accuracy.items():
            for cond in ("augmented", "synthetic_only"):
                for clf, acc in by_cond[cond].items():
                    rows.append({
                        "generator": gen, "classifier": clf, "condition": cond,
                        "subject": f.test_subject,
                        "improvement_pp": 100.0 * (acc - by_cond["baseline"][clf]),
                    })
    return rows

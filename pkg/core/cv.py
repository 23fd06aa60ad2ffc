"""Nested cross-validation for the decoding pipelines.

Outer folds estimate generalization; inside every outer-training set a
repeated inner cross-validation picks (rank, cost) for classification or
(rank, per-dimension lambda) for regression. Features depend on one trial
each, so they are computed once per rank for the whole dataset and sliced
by fold.
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import GroupKFold, KFold, StratifiedKFold

from core.decoder import (ClassifierKind, balanced_accuracy, mean_correlation, oversample_indices, predict,
                          predict_regression, ridge_fit, ridge_path, train_classifier)
from core.errors import DataError, InvalidArgumentError
from core.features import STANDARD_BANDS
from core.featurizer import FeatureBank, FeatureSpec
from core.models import CvConfig, CvReport, Dataset, FeatureLayout, FitRecord, FoldResult, SplitRule
from utils.logging import log_with_context
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

SCORE_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ClassifierSpec:
    kind: ClassifierKind = ClassifierKind.LINEAR_L2

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, 'kind', ClassifierKind(self.kind))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value}


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a (repeat, fold, ...) position."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def fold_ids(n_samples: int, k: int, rule: Union[SplitRule, str], seed: int,
             labels: Optional[np.ndarray] = None, groups: Optional[np.ndarray] = None) -> np.ndarray:
    """Fold number of every sample."""
    rule = SplitRule(rule)
    if k < 2:
        raise InvalidArgumentError(f"Need at least 2 folds, got {k}")
    if k > n_samples:
        raise InvalidArgumentError(f"Cannot split {n_samples} samples into {k} folds")

    placeholder = np.zeros((n_samples, 1))
    if rule == SplitRule.GROUPED:
        if groups is None:
            raise InvalidArgumentError("Grouped folds need group ids")
        n_groups = len(np.unique(groups))
        if k > n_groups:
            raise InvalidArgumentError(f"Cannot split {n_groups} groups into {k} folds")
        splits = GroupKFold(n_splits=k).split(placeholder, groups=groups)
    elif rule == SplitRule.TIME_SEQUENCE:
        splits = KFold(n_splits=k, shuffle=False).split(placeholder)
    elif labels is not None:
        try:
            splits = list(StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder, labels))
        except ValueError as e:
            raise DataError(f"Cannot stratify labels into {k} folds: {e}") from e
    else:
        splits = KFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder)

    folds = np.full(n_samples, -1, dtype=int)
    for fold, (_, test) in enumerate(splits):
        folds[test] = fold
    return folds


def make_folds(dataset: Dataset, k: int, rule: Union[SplitRule, str], seed: int) -> np.ndarray:
    labels = dataset.labels if dataset.task == "classification" else None
    return fold_ids(len(dataset), k, rule, seed, labels=labels, groups=dataset.groups)


def _inner_fold_count(k: int, rule: SplitRule, labels: Optional[np.ndarray], groups: Optional[np.ndarray],
                      n_samples: int) -> int:
    units = n_samples
    if rule == SplitRule.GROUPED and groups is not None:
        units = len(np.unique(groups))
    if units < k:
        logger.warning(f"Only {units} units in an outer-training set, using {units} inner folds instead of {k}")
    return min(k, units)


def permute_labels(dataset: Dataset, seed: int) -> Dataset:
    """Same trials with the labels shuffled, for chance-level runs."""
    if dataset.labels is None:
        raise InvalidArgumentError("Dataset has no labels to permute")
    shuffled = np.random.default_rng(seed).permutation(dataset.labels)
    return Dataset(trials=dataset.trials, labels=shuffled, targets=dataset.targets, groups=dataset.groups,
                   name=f"{dataset.name}-permuted", metadata={**dataset.metadata, "permutation_seed": seed})


class _NestedRun:
    """Shared outer loop; subclasses supply inner selection and outer scoring."""

    metric_kind = ""

    def __init__(self, dataset: Dataset, config: CvConfig, bank: FeatureBank, run_id: Optional[str]):
        self.dataset = dataset
        self.config = config
        self.bank = bank
        self.run_id = run_id
        self.ranks = bank.rank_grid(config.rank_grid)
        if not self.ranks:
            raise InvalidArgumentError("Rank grid is empty after clipping")
        bank.prepare(self.ranks)

    def stratify_labels(self, index: np.ndarray) -> Optional[np.ndarray]:
        return None

    def inner_splits(self, train: np.ndarray, repeat: int, fold: int) -> List[Tuple[np.ndarray, np.ndarray, int]]:
        config = self.config
        groups = None if self.dataset.groups is None else self.dataset.groups[train]
        labels = self.stratify_labels(train)
        k = _inner_fold_count(config.inner_folds, config.split_rule, labels, groups, len(train))
        splits = []
        for inner_repeat in range(config.inner_repeats):
            seed = derive_seed(config.seed, repeat, fold, inner_repeat)
            folds = fold_ids(len(train), k, config.split_rule, seed, labels=labels, groups=groups)
            for inner_fold in range(k):
                splits.append((train[folds != inner_fold], train[folds == inner_fold], seed))
        return splits

    def select(self, train: np.ndarray, repeat: int, fold: int,
               log: List[FitRecord]) -> Tuple[Optional[int], Any, float]:
        raise NotImplementedError

    def evaluate(self, train: np.ndarray, test: np.ndarray, rank: Optional[int], hyper: Any,
                 seed: int, seconds: Dict[str, float]) -> Tuple[float, Tuple[str, ...]]:
        raise NotImplementedError

    def run_fold(self, task: Tuple[int, int, np.ndarray]) -> Tuple[FoldResult, List[FitRecord]]:
        repeat, fold, assignment = task
        train = np.flatnonzero(assignment != fold)
        test = np.flatnonzero(assignment == fold)
        log: List[FitRecord] = []
        seconds: Dict[str, float] = {}

        started = time.perf_counter()
        rank, hyper, inner_score = self.select(train, repeat, fold, log)
        seconds["select"] = time.perf_counter() - started

        if self.config.track_indices:
            log.append(FitRecord(repeat=repeat, fold=fold, stage="outer", train_index=train.copy(),
                                 test_index=test.copy()))
        metric, flags = self.evaluate(train, test, rank, hyper, derive_seed(self.config.seed, repeat, fold), seconds)
        log_with_context(logger, "INFO", f"Outer fold {repeat}.{fold}: {self.metric_kind}={metric:.4f}",
                         run_id=self.run_id,
                         data={"repeat": repeat, "fold": fold, "metric": metric, "rank": rank,
                               "hyperparameter": hyper, "inner_score": inner_score, "flags": list(flags)})
        result = FoldResult(repeat=repeat, fold=fold, metric=metric, rank=rank, hyperparameter=hyper,
                            test_index=test, inner_score=inner_score, seconds=seconds)
        return result, log

    def run(self, extra_config: Dict[str, Any]) -> CvReport:
        config = self.config
        assignments = {
            repeat: make_folds(self.dataset, config.outer_folds, config.split_rule, derive_seed(config.seed, repeat))
            for repeat in range(config.outer_repeats)
        }
        tasks = [(repeat, fold, assignments[repeat])
                 for repeat in range(config.outer_repeats) for fold in range(config.outer_folds)]

        started = time.perf_counter()
        outcomes = parallel_map(self.run_fold, tasks, config.workers)
        folds = [result for result, _ in outcomes]
        fit_log = [record for _, records in outcomes for record in records]

        timings = {
            phase: float(sum(f.seconds.get(phase, 0.0) for f in folds))
            for phase in ("select", "fit", "predict")
        }
        timings["total"] = time.perf_counter() - started
        report = CvReport(metric_kind=self.metric_kind, folds=folds, fold_assignments=assignments,
                          config={"cv": config.to_dict(), "features": self.bank.spec.to_dict(), **extra_config},
                          timings=timings, fit_log=fit_log)
        log_with_context(logger, "INFO", f"Nested CV finished: {self.metric_kind} {report.mean:.4f} "
                                         f"+/- {report.std:.4f}",
                         run_id=self.run_id, data={"mean": report.mean, "std": report.std, "timings": timings})
        return report


def fit_classifier(bank: FeatureBank, labels: np.ndarray, classifier: ClassifierSpec, train: np.ndarray,
                   rank: Optional[int], cost: float, seed: int, oversample: bool = True):
    """Train on the ``train`` rows of the bank, oversampled inside the training set only."""
    if oversample:
        train = train[oversample_indices(labels[train], seed)]
    if classifier.kind == ClassifierKind.KERNEL_L2:
        gram = bank.gram(rank)
        return train_classifier(classifier.kind, gram[np.ix_(train, train)], labels[train], cost, seed=seed,
                                training_index=train)
    return train_classifier(classifier.kind, bank.features(rank)[train], labels[train], cost, seed=seed)


class _ClassificationRun(_NestedRun):
    metric_kind = "balanced-accuracy"

    def __init__(self, dataset: Dataset, config: CvConfig, bank: FeatureBank, classifier: ClassifierSpec,
                 run_id: Optional[str]):
        self.classifier = classifier
        self.labels = dataset.labels
        super().__init__(dataset, config, bank, run_id)

    def stratify_labels(self, index: np.ndarray) -> Optional[np.ndarray]:
        return self.labels[index]

    def fit(self, train: np.ndarray, rank: Optional[int], cost: float, seed: int):
        return fit_classifier(self.bank, self.labels, self.classifier, train, rank, cost, seed,
                              self.config.oversample)

    def predict(self, model, test: np.ndarray, rank: Optional[int]) -> np.ndarray:
        if self.classifier.kind == ClassifierKind.KERNEL_L2:
            return predict(model, self.bank.gram(rank)[np.ix_(test, model.training_index)])
        return predict(model, self.bank.features(rank)[test])

    def select(self, train: np.ndarray, repeat: int, fold: int,
               log: List[FitRecord]) -> Tuple[Optional[int], Any, float]:
        grid = [(rank, cost) for rank in self.ranks for cost in self.config.cost_grid]
        totals = np.zeros(len(grid))
        counted = 0
        for inner_train, inner_test, seed in self.inner_splits(train, repeat, fold):
            if len(np.unique(self.labels[inner_train])) < 2:
                logger.debug(f"Skipping single-class inner split in outer fold {repeat}.{fold}")
                continue
            if self.config.track_indices:
                log.append(FitRecord(repeat=repeat, fold=fold, stage="inner", train_index=inner_train,
                                     test_index=inner_test))
            for g, (rank, cost) in enumerate(grid):
                model = self.fit(inner_train, rank, cost, seed)
                totals[g] += balanced_accuracy(self.labels[inner_test],
                                               self.predict(model, inner_test, rank)).value
            counted += 1
        if counted == 0:
            raise DataError(f"No usable inner split in outer fold {repeat}.{fold}")
        means = totals / counted
        best = means.max()
        # ties go to the smaller rank, then the smaller cost
        candidates = [g for g in range(len(grid)) if means[g] >= best - SCORE_TIE_TOLERANCE]
        chosen = min(candidates, key=lambda g: (grid[g][0] or 0, grid[g][1]))
        rank, cost = grid[chosen]
        return rank, cost, float(means[chosen])

    def evaluate(self, train: np.ndarray, test: np.ndarray, rank: Optional[int], hyper: Any,
                 seed: int, seconds: Dict[str, float]) -> Tuple[float, Tuple[str, ...]]:
        started = time.perf_counter()
        model = self.fit(train, rank, hyper, seed)
        seconds["fit"] = time.perf_counter() - started
        started = time.perf_counter()
        predicted = self.predict(model, test, rank)
        seconds["predict"] = time.perf_counter() - started
        metric = balanced_accuracy(self.labels[test], predicted)
        return metric.value, metric.flags


class _RegressionRun(_NestedRun):
    metric_kind = "mean-correlation"

    def __init__(self, dataset: Dataset, config: CvConfig, bank: FeatureBank, run_id: Optional[str]):
        self.targets = dataset.targets
        # descending so argmin settles ties on the larger lambda
        self.lambdas = np.asarray(sorted(config.lambda_grid, reverse=True))
        super().__init__(dataset, config, bank, run_id)

    def select(self, train: np.ndarray, repeat: int, fold: int,
               log: List[FitRecord]) -> Tuple[Optional[int], Any, float]:
        n_dims = self.targets.shape[1]
        errors = np.zeros((len(self.ranks), len(self.lambdas), n_dims))
        for inner_train, inner_test, _ in self.inner_splits(train, repeat, fold):
            if self.config.track_indices:
                log.append(FitRecord(repeat=repeat, fold=fold, stage="inner", train_index=inner_train,
                                     test_index=inner_test))
            for r, rank in enumerate(self.ranks):
                X = self.bank.features(rank)
                weights, biases, _ = ridge_path(X[inner_train], self.targets[inner_train], self.lambdas)
                predicted = np.einsum('nd,kmd->knm', X[inner_test], weights) + biases[:, None, :]
                residual = predicted - self.targets[inner_test][None, :, :]
                errors[r] += np.sum(residual ** 2, axis=1)
        best_lambda = np.argmin(errors, axis=1)
        best_error = np.take_along_axis(errors, best_lambda[:, None, :], axis=1)[:, 0, :].mean(axis=1)
        r = int(np.argmin(best_error))
        chosen = self.lambdas[best_lambda[r]]
        # every inner repeat scores each outer-training sample once
        return self.ranks[r], chosen, float(best_error[r] / (len(train) * self.config.inner_repeats))

    def evaluate(self, train: np.ndarray, test: np.ndarray, rank: Optional[int], hyper: Any,
                 seed: int, seconds: Dict[str, float]) -> Tuple[float, Tuple[str, ...]]:
        X = self.bank.features(rank)
        started = time.perf_counter()
        model = ridge_fit(X[train], self.targets[train], hyper)
        seconds["fit"] = time.perf_counter() - started
        started = time.perf_counter()
        predicted = predict_regression(model, X[test])
        seconds["predict"] = time.perf_counter() - started
        metric = mean_correlation(self.targets[test], predicted)
        return metric.value, metric.flags + model.flags


def _check_classifier(feature_spec: FeatureSpec, classifier: ClassifierSpec) -> None:
    if (classifier.kind == ClassifierKind.KERNEL_L2) != feature_spec.kernel:
        raise InvalidArgumentError(f"Classifier {classifier.kind.value} does not match the "
                                   f"{'kernel' if feature_spec.kernel else 'feature-vector'} path")


def nested_cv_classify(dataset: Dataset, config: CvConfig, feature_spec: FeatureSpec,
                       classifier_spec: ClassifierSpec = ClassifierSpec(), run_id: Optional[str] = None,
                       bank: Optional[FeatureBank] = None) -> CvReport:
    if dataset.labels is None:
        raise InvalidArgumentError("Classification needs labels")
    if len(np.unique(dataset.labels)) < 2:
        raise InvalidArgumentError("Classification needs at least two classes")
    _check_classifier(feature_spec, classifier_spec)
    bank = bank or FeatureBank(dataset, feature_spec, workers=config.workers)
    log_with_context(logger, "INFO", f"Nested CV classification on {len(dataset)} trials", run_id=run_id,
                     data={"classifier": classifier_spec.kind.value, "layout": feature_spec.layout.value})
    run = _ClassificationRun(dataset, config, bank, classifier_spec, run_id)
    return run.run({"classifier": classifier_spec.to_dict()})


def nested_cv_regress(dataset: Dataset, config: CvConfig, feature_spec: FeatureSpec,
                      run_id: Optional[str] = None, bank: Optional[FeatureBank] = None) -> CvReport:
    if dataset.targets is None:
        raise InvalidArgumentError("Regression needs targets")
    if feature_spec.kernel:
        raise InvalidArgumentError("Ridge regression runs on feature vectors, not on the Gram matrix")
    bank = bank or FeatureBank(dataset, feature_spec, workers=config.workers)
    log_with_context(logger, "INFO", f"Nested CV regression on {len(dataset)} trials", run_id=run_id,
                     data={"targets": int(dataset.targets.shape[1]), "layout": feature_spec.layout.value})
    return _RegressionRun(dataset, config, bank, run_id).run({"regression": "ridge"})


def rank_sweep(dataset: Dataset, config: CvConfig, feature_spec: FeatureSpec,
               classifier_spec: ClassifierSpec = ClassifierSpec(), ranks: Optional[Sequence[int]] = None,
               run_id: Optional[str] = None) -> Dict[int, CvReport]:
    """Outer CV at each fixed rank, with the cost still tuned by the inner CV."""
    if not feature_spec.uses_rank:
        raise InvalidArgumentError(f"Layout {feature_spec.layout.value} has no rank to sweep")
    bank = FeatureBank(dataset, feature_spec, workers=config.workers)
    sweep = bank.rank_grid(ranks if ranks is not None else config.rank_grid)
    reports = {}
    for rank in sweep:
        logger.info(f"Rank sweep: rank {rank}")
        fixed = replace(config, rank_grid=(rank,))
        reports[rank] = nested_cv_classify(dataset, fixed, feature_spec, classifier_spec, run_id=run_id, bank=bank)
    return reports


def band_accuracy(dataset: Dataset, config: CvConfig, classifier_spec: ClassifierSpec = ClassifierSpec(),
                  bands: Sequence[Tuple[float, float]] = STANDARD_BANDS,
                  inner_layout: FeatureLayout = FeatureLayout.SNDM, car: bool = False,
                  run_id: Optional[str] = None) -> Dict[Tuple[float, float], CvReport]:
    """Classification accuracy with the frequency-filtered features of each band on its own."""
    if classifier_spec.kind == ClassifierKind.KERNEL_L2:
        raise InvalidArgumentError("Per-band decoding uses feature vectors, not the Gram matrix")
    base: Optional[FeatureBank] = None
    reports = {}
    for band in bands:
        spec = FeatureSpec(layout=FeatureLayout.BAND_CONCATENATED, bands=(band,), inner_layout=inner_layout, car=car)
        bank = base.with_spec(spec) if base is not None else FeatureBank(dataset, spec, workers=config.workers)
        base = base or bank
        logger.info(f"Band decoding: [{band[0]}, {band[1]}) Hz")
        reports[tuple(band)] = nested_cv_classify(dataset, config, spec, classifier_spec, run_id=run_id, bank=bank)
    return reports


def modal_choice(report: CvReport) -> Tuple[Optional[int], Any]:
    """Most frequent (rank, hyperparameter) over the outer folds; ties go to the first seen."""
    counts: Dict[Tuple, int] = {}
    values: Dict[Tuple, Tuple[Optional[int], Any]] = {}
    for fold in report.folds:
        key = (fold.rank, tuple(np.ravel(fold.hyperparameter).tolist()))
        counts[key] = counts.get(key, 0) + 1
        values.setdefault(key, (fold.rank, fold.hyperparameter))
    best = max(counts, key=lambda k: counts[k])
    return values[best]


def fit_final_model(bank: FeatureBank, report: CvReport, classifier_spec: Optional[ClassifierSpec] = None,
                    config: Optional[CvConfig] = None):
    """Model on every sample with the modal hyperparameters of a nested run."""
    dataset = bank.dataset
    config = config or CvConfig()
    rank, hyper = modal_choice(report)
    everything = np.arange(len(dataset))
    if report.metric_kind == _RegressionRun.metric_kind:
        model = ridge_fit(bank.features(rank), dataset.targets, hyper)
    else:
        model = fit_classifier(bank, dataset.labels, classifier_spec or ClassifierSpec(), everything, rank, hyper,
                               derive_seed(config.seed, config.outer_repeats), config.oversample)
    provenance = {"rank": rank, "features": bank.spec.to_dict(), "metric": report.metric_kind,
                  "cv_mean": report.mean}
    return replace(model, provenance=provenance)

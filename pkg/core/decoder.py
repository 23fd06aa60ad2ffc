"""Linear and precomputed-kernel decoders with class balancing and metrics.

The hinge-loss L2-SVM is solved in the dual by coordinate descent with the
bias carried as a constant feature. The linear backend keeps the primal
weight vector, the kernel backend keeps the Gram-matrix product; both
visit coordinates in the same seeded order, so on features whose inner
products equal the Gram matrix the two produce the same model.
"""
import logging
from abc import ABC, abstractmethod
from enum import Enum
from itertools import combinations
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from sklearn.linear_model import LogisticRegression

from core.errors import InvalidArgumentError
from core.models import FeatureVector, KernelModel, LinearModel, Metric, Regularization

logger = logging.getLogger(__name__)

SOLVER_TOLERANCE = 1e-6
MAX_EPOCHS = 100_000
SYMMETRY_TOLERANCE = 1e-10

FeatureInput = Union[np.ndarray, Sequence[FeatureVector]]


class ClassifierKind(Enum):
    LINEAR_L2 = "linear-l2"
    KERNEL_L2 = "kernel-l2"
    L1_LOGISTIC = "l1-logistic"


def as_matrix(X: FeatureInput) -> np.ndarray:
    if isinstance(X, np.ndarray):
        matrix = X
    else:
        matrix = np.vstack([x.values if isinstance(x, FeatureVector) else np.asarray(x) for x in X])
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    return matrix


def _check_classification(y: np.ndarray, n_samples: int, C: float) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if y.shape != (n_samples,):
        raise InvalidArgumentError(f"Expected {n_samples} labels, got shape {y.shape}")
    classes = np.unique(y)
    if len(classes) < 2:
        raise InvalidArgumentError("Classification needs at least two classes")
    if not C > 0:
        raise InvalidArgumentError(f"Cost must be positive, got {C}")
    return classes


class _DualBackend(ABC):
    @abstractmethod
    def diagonal(self) -> np.ndarray:
        pass

    @abstractmethod
    def margin(self, i: int) -> float:
        pass

    @abstractmethod
    def update(self, i: int, step: float) -> None:
        pass

    @abstractmethod
    def quadratic(self, alpha: np.ndarray) -> float:
        pass


class _LinearBackend(_DualBackend):
    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = np.hstack([X, np.ones((X.shape[0], 1))])
        self.y = y
        self.w = np.zeros(self.X.shape[1])

    def diagonal(self) -> np.ndarray:
        return np.einsum('ij,ij->i', self.X, self.X)

    def margin(self, i: int) -> float:
        return float(self.X[i] @ self.w)

    def update(self, i: int, step: float) -> None:
        self.w += step * self.y[i] * self.X[i]

    def quadratic(self, alpha: np.ndarray) -> float:
        return float(self.w @ self.w)


class _KernelBackend(_DualBackend):
    def __init__(self, gram: np.ndarray, y: np.ndarray):
        self.K = gram + 1.0
        self.y = y
        self.u = np.zeros(gram.shape[0])

    def diagonal(self) -> np.ndarray:
        return np.diag(self.K).copy()

    def margin(self, i: int) -> float:
        return float(self.u[i])

    def update(self, i: int, step: float) -> None:
        self.u += step * self.y[i] * self.K[:, i]

    def quadratic(self, alpha: np.ndarray) -> float:
        return float((alpha * self.y) @ self.u)


def _dual_coordinate_descent(backend: _DualBackend, y: np.ndarray, C: float, seed: int,
                             tol: float = SOLVER_TOLERANCE, max_epochs: int = MAX_EPOCHS) -> np.ndarray:
    n_samples = len(y)
    alpha = np.zeros(n_samples)
    diagonal = backend.diagonal()
    rng = np.random.default_rng(seed)
    previous = 0.0
    for epoch in range(max_epochs):
        largest_step = 0.0
        for i in rng.permutation(n_samples):
            if diagonal[i] <= 0:
                continue
            gradient = y[i] * backend.margin(i) - 1.0
            current = alpha[i]
            if (current <= 0.0 and gradient >= 0.0) or (current >= C and gradient <= 0.0):
                continue
            updated = min(max(current - gradient / diagonal[i], 0.0), C)
            step = updated - current
            if step != 0.0:
                alpha[i] = updated
                backend.update(i, step)
                largest_step = max(largest_step, abs(step))
        objective = 0.5 * backend.quadratic(alpha) - alpha.sum()
        if largest_step == 0.0 or abs(previous - objective) <= tol * max(abs(objective), 1e-12):
            logger.debug(f"Dual coordinate descent converged after {epoch + 1} epochs")
            return alpha
        previous = objective
    logger.warning(f"Dual coordinate descent stopped at the {max_epochs}-epoch limit")
    return alpha


def _pair_labels(y: np.ndarray, first: int, second: int) -> Tuple[np.ndarray, np.ndarray]:
    index = np.flatnonzero((y == first) | (y == second))
    signs = np.where(y[index] == first, 1.0, -1.0)
    return index, signs


def train_linear_l2svm(X: FeatureInput, y: Sequence[int], C: float, seed: int = 0,
                       tol: float = SOLVER_TOLERANCE, max_epochs: int = MAX_EPOCHS) -> LinearModel:
    X = as_matrix(X)
    y = np.asarray(y, dtype=int)
    classes = _check_classification(y, X.shape[0], C)
    pairs = tuple(combinations(classes.tolist(), 2))
    weights = np.zeros((len(pairs), X.shape[1]))
    bias = np.zeros(len(pairs))
    for p, (first, second) in enumerate(pairs):
        index, signs = _pair_labels(y, first, second)
        backend = _LinearBackend(X[index], signs)
        _dual_coordinate_descent(backend, signs, C, seed, tol, max_epochs)
        weights[p] = backend.w[:-1]
        bias[p] = backend.w[-1]
    return LinearModel(weights=weights, bias=bias, regularization=Regularization.L2_HINGE, hyperparameter=C,
                       classes=classes, pairs=pairs)


def train_kernel_l2svm(G: np.ndarray, y: Sequence[int], C: float, seed: int = 0,
                       training_index: Optional[Sequence[int]] = None,
                       tol: float = SOLVER_TOLERANCE, max_epochs: int = MAX_EPOCHS) -> KernelModel:
    """C-SVC on a precomputed Gram matrix; predictions need kernel rows against the training samples."""
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=int)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidArgumentError(f"Gram matrix must be square, got shape {G.shape}")
    asymmetry = float(np.max(np.abs(G - G.T))) if G.size else 0.0
    if asymmetry > SYMMETRY_TOLERANCE * max(1.0, float(np.max(np.abs(G)))):
        raise InvalidArgumentError(f"Gram matrix is not symmetric (max deviation {asymmetry:.3e})")
    classes = _check_classification(y, G.shape[0], C)
    pairs = tuple(combinations(classes.tolist(), 2))
    coefficients: List[np.ndarray] = []
    supports: List[np.ndarray] = []
    bias = np.zeros(len(pairs))
    for p, (first, second) in enumerate(pairs):
        index, signs = _pair_labels(y, first, second)
        backend = _KernelBackend(G[np.ix_(index, index)], signs)
        alpha = _dual_coordinate_descent(backend, signs, C, seed, tol, max_epochs)
        active = alpha > 0
        coefficients.append(alpha[active] * signs[active])
        supports.append(index[active])
        bias[p] = float(np.sum(alpha * signs))
    if training_index is None:
        training_index = np.arange(G.shape[0])
    return KernelModel(coefficients=tuple(coefficients), bias=bias, support_index=tuple(supports),
                       training_index=np.asarray(training_index, dtype=int), cost=C, classes=classes, pairs=pairs)


def train_l1_classifier(X: FeatureInput, y: Sequence[int], C: float, seed: int = 0,
                        tol: float = SOLVER_TOLERANCE, max_iter: int = 1000) -> LinearModel:
    """L1-regularized logistic regression, one-vs-rest for more than two classes."""
    X = as_matrix(X)
    y = np.asarray(y, dtype=int)
    classes = _check_classification(y, X.shape[0], C)
    positives = classes[1:] if len(classes) == 2 else classes
    weights = np.zeros((len(positives), X.shape[1]))
    bias = np.zeros(len(positives))
    for row, positive in enumerate(positives):
        solver = LogisticRegression(penalty='l1', solver='liblinear', C=C, tol=tol, max_iter=max_iter,
                                    random_state=seed)
        solver.fit(X, (y == positive).astype(int))
        weights[row] = solver.coef_[0]
        bias[row] = solver.intercept_[0]
    return LinearModel(weights=weights, bias=bias, regularization=Regularization.L1_LOGISTIC, hyperparameter=C,
                       classes=classes)


def decision_function(model: Union[LinearModel, KernelModel], X: FeatureInput) -> np.ndarray:
    """Decision values, one column per class pair (SVM) or per positive class (L1).

    For a KernelModel, ``X`` holds kernel rows against ``model.training_index``.
    """
    X = as_matrix(X)
    if isinstance(model, KernelModel):
        columns = [X[:, support] @ coef + b
                   for support, coef, b in zip(model.support_index, model.coefficients, model.bias)]
        return np.column_stack(columns)
    return X @ model.weights.T + model.bias


def predict(model: Union[LinearModel, KernelModel], X: FeatureInput) -> np.ndarray:
    decisions = decision_function(model, X)
    classes = model.classes
    if isinstance(model, LinearModel) and model.regularization == Regularization.L1_LOGISTIC:
        if len(classes) == 2:
            return np.where(decisions[:, 0] > 0, classes[1], classes[0])
        return classes[np.argmax(decisions, axis=1)]

    position = {c: k for k, c in enumerate(classes.tolist())}
    votes = np.zeros((decisions.shape[0], len(classes)), dtype=int)
    for p, (first, second) in enumerate(model.pairs):
        winner = np.where(decisions[:, p] > 0, position[first], position[second])
        votes[np.arange(len(winner)), winner] += 1
    # argmax picks the first maximum, i.e. the smallest class id on ties
    return classes[np.argmax(votes, axis=1)]


def ridge_path(X: np.ndarray, Y: np.ndarray, lambdas: Sequence[float],
               fit_intercept: bool = True) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Ridge weights for every lambda from one SVD.

    Returns weights (n_lambda, M, D), biases (n_lambda, M) and whether the
    minimum-norm solution was needed for a zero lambda.
    """
    X = as_matrix(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise InvalidArgumentError(f"Need matching, nonempty X and Y, got {X.shape[0]} and {Y.shape[0]} rows")
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise InvalidArgumentError("Lambda must be nonnegative")

    x_mean = X.mean(axis=0) if fit_intercept else np.zeros(X.shape[1])
    y_mean = Y.mean(axis=0) if fit_intercept else np.zeros(Y.shape[1])
    U, s, Vt = scipy.linalg.svd(X - x_mean, full_matrices=False)
    projected = U.T @ (Y - y_mean)
    cutoff = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    deficient = bool(np.any(s <= cutoff)) or X.shape[1] > X.shape[0] - int(fit_intercept)

    weights = np.zeros((len(lambdas), Y.shape[1], X.shape[1]))
    minimum_norm = False
    for k, lam in enumerate(lambdas):
        if lam == 0:
            shrink = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
            minimum_norm = minimum_norm or deficient
        else:
            shrink = s / (s ** 2 + lam)
        weights[k] = (Vt.T @ (shrink[:, None] * projected)).T
    biases = y_mean[None, :] - np.einsum('kmd,d->km', weights, x_mean)
    return weights, biases, minimum_norm


def ridge_fit(X: FeatureInput, Y: np.ndarray, lam: Union[float, Sequence[float]],
              fit_intercept: bool = True) -> LinearModel:
    """Per-dimension ridge: minimizes ||X w_m - Y_m||^2 + lam_m ||w_m||^2, bias unpenalized via centering."""
    X = as_matrix(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    lam_per_dim = np.broadcast_to(np.asarray(lam, dtype=float), (Y.shape[1],)).copy()
    unique = np.unique(lam_per_dim)
    weights_by_lambda, biases_by_lambda, minimum_norm = ridge_path(X, Y, unique, fit_intercept)
    weights = np.zeros((Y.shape[1], X.shape[1]))
    bias = np.zeros(Y.shape[1])
    for m, value in enumerate(lam_per_dim):
        k = int(np.searchsorted(unique, value))
        weights[m] = weights_by_lambda[k, m]
        bias[m] = biases_by_lambda[k, m]
    flags = ()
    if minimum_norm:
        logger.warning("Ridge with lambda=0 on rank-deficient X, using the minimum-norm solution")
        flags = ("minimum-norm",)
    hyper = float(lam_per_dim[0]) if np.ndim(lam) == 0 else lam_per_dim
    return LinearModel(weights=weights, bias=bias, regularization=Regularization.L2_RIDGE, hyperparameter=hyper,
                       flags=flags)


def predict_regression(model: LinearModel, X: FeatureInput) -> np.ndarray:
    return as_matrix(X) @ model.weights.T + model.bias


def oversample_indices(y: Sequence[int], seed: int) -> np.ndarray:
    """Indices that repeat minority classes up to the majority count.

    Each minority class is repeated whole as often as it fits, then topped
    up with a seeded draw without replacement.
    """
    y = np.asarray(y, dtype=int)
    classes, counts = np.unique(y, return_counts=True)
    target = counts.max()
    rng = np.random.default_rng(seed)
    chosen = []
    for c, count in zip(classes, counts):
        index = np.flatnonzero(y == c)
        repeats, remainder = divmod(target, count)
        chosen.append(np.tile(index, repeats))
        if remainder:
            chosen.append(rng.choice(index, size=remainder, replace=False))
    return np.sort(np.concatenate(chosen))


def oversample_balance(X: FeatureInput, y: Sequence[int], seed: int) -> Tuple[np.ndarray, np.ndarray]:
    X = as_matrix(X)
    y = np.asarray(y, dtype=int)
    index = oversample_indices(y, seed)
    return X[index], y[index]


def balanced_accuracy(y_true: Sequence[int], y_pred: Sequence[int]) -> Metric:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise InvalidArgumentError("Need equally sized, nonempty label arrays")
    recalls = [np.mean(y_pred[y_true == c] == c) for c in np.unique(y_true)]
    return Metric(kind="balanced-accuracy", value=float(np.mean(recalls)))


def mean_correlation(Y_true: np.ndarray, Y_pred: np.ndarray) -> Metric:
    Y_true = np.asarray(Y_true, dtype=float)
    Y_pred = np.asarray(Y_pred, dtype=float)
    if Y_true.ndim == 1:
        Y_true = Y_true[:, None]
    if Y_pred.ndim == 1:
        Y_pred = Y_pred[:, None]
    if Y_true.shape != Y_pred.shape:
        raise InvalidArgumentError(f"Shape mismatch {Y_true.shape} vs {Y_pred.shape}")
    if Y_true.shape[0] < 3:
        raise InvalidArgumentError("Mean correlation needs at least 3 samples")

    correlations = np.zeros(Y_true.shape[1])
    flags = []
    for m in range(Y_true.shape[1]):
        a = Y_true[:, m] - Y_true[:, m].mean()
        b = Y_pred[:, m] - Y_pred[:, m].mean()
        denominator = np.sqrt((a @ a) * (b @ b))
        if denominator == 0:
            flags.append(f"zero-variance dimension {m}")
            continue
        correlations[m] = float(np.clip((a @ b) / denominator, -1.0, 1.0))
    for flag in flags:
        logger.warning(f"Correlation set to 0 for {flag}")
    return Metric(kind="mean-correlation", value=float(correlations.mean()), flags=tuple(flags),
                  per_dimension=correlations)


def train_classifier(kind: Union[ClassifierKind, str], X: np.ndarray, y: np.ndarray, C: float,
                     seed: int = 0, training_index: Optional[Sequence[int]] = None) -> Any:
    """Dispatch on classifier kind; for the kernel kind ``X`` is the training Gram matrix."""
    kind = ClassifierKind(kind)
    if kind == ClassifierKind.KERNEL_L2:
        return train_kernel_l2svm(X, y, C, seed=seed, training_index=training_index)
    if kind == ClassifierKind.LINEAR_L2:
        return train_linear_l2svm(X, y, C, seed=seed)
    return train_l1_classifier(X, y, C, seed=seed)

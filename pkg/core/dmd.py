"""Exact dynamic mode decomposition of Hankel-stacked trials."""
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from core.errors import InvalidArgumentError
from core.models import DmdResult, StackedPair, SvdTruncation, TrialMatrix
from core.signals import choose_stack_factor, hankel_stack

logger = logging.getLogger(__name__)

SVD_RELATIVE_TOLERANCE = 1e-10
ZERO_EIGENVALUE = 1e-12
CONJUGATE_TOLERANCE = 1e-9


class SvdFactors(NamedTuple):
    U: np.ndarray
    s: np.ndarray
    Vh: np.ndarray


class ModePhysics(NamedTuple):
    frequency: float
    growth_rate: float
    degenerate: bool


def stacked_svd(pair: StackedPair) -> SvdFactors:
    """Thin SVD of the stacked snapshot matrix, reusable for every rank."""
    try:
        U, s, Vh = scipy.linalg.svd(pair.X, full_matrices=False, lapack_driver='gesdd')
    except np.linalg.LinAlgError:
        logger.warning("gesdd did not converge, retrying with gesvd")
        U, s, Vh = scipy.linalg.svd(pair.X, full_matrices=False, lapack_driver='gesvd')
    return SvdFactors(U=U, s=s, Vh=Vh)


def truncate_svd(s: np.ndarray, rank: int) -> SvdTruncation:
    if s.size == 0 or s[0] <= 0:
        return SvdTruncation(rank=rank, singular_values=s, effective_rank=0, tolerance=0.0)
    tolerance = SVD_RELATIVE_TOLERANCE * s[0]
    above = int(np.count_nonzero(s > tolerance))
    return SvdTruncation(rank=rank, singular_values=s, effective_rank=min(rank, above), tolerance=tolerance)


def eig_to_physics(lam: complex, dt: float) -> ModePhysics:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    freqs, growth, degenerate = _physics(np.asarray([lam], dtype=complex), dt)
    return ModePhysics(frequency=float(freqs[0]), growth_rate=float(growth[0]), degenerate=bool(degenerate[0]))


def _physics(eigenvalues: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    magnitude = np.abs(eigenvalues)
    degenerate = magnitude < ZERO_EIGENVALUE
    angle = np.angle(eigenvalues)
    # fold -pi onto pi so frequencies lie in (-1/2dt, 1/2dt]
    angle = np.where(angle <= -np.pi, np.pi, angle)
    freqs = np.where(degenerate, 0.0, angle / (2 * np.pi * dt))
    growth = np.where(degenerate, 0.0, magnitude ** (1.0 / dt))
    return freqs, growth, degenerate


def _conjugate_groups(eigenvalues: np.ndarray) -> List[List[int]]:
    """Indices grouped into conjugate pairs (positive imaginary part first) and singletons."""
    used = np.zeros(len(eigenvalues), dtype=bool)
    groups: List[List[int]] = []
    for k, lam in enumerate(eigenvalues):
        if used[k]:
            continue
        used[k] = True
        scale = CONJUGATE_TOLERANCE * max(1.0, abs(lam))
        if abs(lam.imag) <= scale:
            groups.append([k])
            continue
        candidates = np.flatnonzero(~used & (np.abs(eigenvalues - np.conj(lam)) <= scale))
        if candidates.size == 0:
            groups.append([k])
            continue
        j = int(candidates[0])
        used[j] = True
        groups.append([k, j] if lam.imag > 0 else [j, k])
    return groups


def _order_modes(eigenvalues: np.ndarray, amplitudes: np.ndarray, limit: int) -> np.ndarray:
    groups = _conjugate_groups(eigenvalues)
    magnitude = np.abs(amplitudes)
    groups.sort(key=lambda g: (-max(magnitude[g]), min(g)))
    order: List[int] = []
    for group in groups:
        if len(order) >= limit:
            break
        # a pair straddling the cut is kept whole, so up to limit + 1 modes survive
        order.extend(group)
    return np.asarray(order, dtype=int)


def _empty_result(n_channels: int, rank: int, dt: float, truncation: SvdTruncation,
                  warnings: Sequence[str]) -> DmdResult:
    empty = np.zeros(0)
    return DmdResult(
        modes=np.zeros((n_channels, 0), dtype=complex),
        eigenvalues=empty.astype(complex),
        frequencies=empty,
        growth_rates=empty,
        amplitudes=empty.astype(complex),
        rank_used=0,
        dt=dt,
        degenerate=np.zeros(0, dtype=bool),
        svd=truncation,
        warnings=tuple(warnings),
    )


def dmd_from_svd(pair: StackedPair, factors: SvdFactors, rank: int, dt: float) -> DmdResult:
    if rank < 1:
        raise InvalidArgumentError(f"Rank must be at least 1, got {rank}")
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")

    warnings: List[str] = []
    available = len(factors.s)
    if rank > available:
        message = f"rank {rank} exceeds {available} available singular values, clamped"
        logger.warning(message)
        warnings.append(message)

    truncation = truncate_svd(factors.s, min(rank, available))
    n_channels = pair.n_channels
    K = truncation.effective_rank
    if K == 0:
        logger.debug("All-zero snapshot matrix, returning empty decomposition")
        return _empty_result(n_channels, rank, dt, truncation, warnings)

    U = factors.U[:, :K]
    s = factors.s[:K]
    V = factors.Vh[:K].conj().T

    projected = (pair.Xp @ V) / s
    reduced = U.conj().T @ projected
    eigenvalues, W = scipy.linalg.eig(reduced)
    stacked_modes = projected @ W

    # b = Phi^+ x(0) against the raw stacked modes
    amplitudes, *_ = scipy.linalg.lstsq(stacked_modes, pair.X[:, 0].astype(complex))

    modes = stacked_modes[:n_channels]
    norms = np.linalg.norm(modes, axis=0)
    zero_norm = norms <= np.finfo(float).tiny
    safe_norms = np.where(zero_norm, 1.0, norms)
    modes = np.where(zero_norm[None, :], 0.0, modes / safe_norms)
    amplitudes = np.where(zero_norm, 0.0, amplitudes * norms)

    order = _order_modes(eigenvalues, amplitudes, limit=min(K, n_channels))
    eigenvalues = eigenvalues[order]
    freqs, growth, degenerate = _physics(eigenvalues, dt)
    degenerate = degenerate | zero_norm[order]
    if np.any(degenerate):
        message = f"{int(degenerate.sum())} degenerate modes (zero eigenvalue or zero spatial norm)"
        logger.warning(message)
        warnings.append(message)

    return DmdResult(
        modes=modes[:, order],
        eigenvalues=eigenvalues,
        frequencies=freqs,
        growth_rates=growth,
        amplitudes=amplitudes[order],
        rank_used=K,
        dt=dt,
        degenerate=degenerate,
        svd=truncation,
        warnings=tuple(warnings),
    )


def exact_dmd(pair: StackedPair, rank: int, dt: float) -> DmdResult:
    return dmd_from_svd(pair, stacked_svd(pair), rank, dt)


def decompose_trial(trial: TrialMatrix, rank: int, h: Optional[int] = None) -> DmdResult:
    if h is None:
        h = choose_stack_factor(trial.n_channels, trial.n_samples)
    return exact_dmd(hankel_stack(trial, h), rank, trial.dt)


def reconstruct(result: DmdResult, times: Sequence[float], stacked_dim: Optional[int] = None) -> np.ndarray:
    """Evaluate sum_k phi_k * r_k**t * exp(2*pi*i*f_k*t) * b_k at each time.

    ``stacked_dim`` limits the output to the leading rows of the mode
    matrix; by default every retained channel is returned.
    """
    if result.n_modes == 0:
        raise InvalidArgumentError("Cannot reconstruct from an empty decomposition")
    rows = result.n_channels if stacked_dim is None else int(stacked_dim)
    if not 1 <= rows <= result.n_channels:
        raise InvalidArgumentError(f"stacked_dim must be within 1..{result.n_channels}, got {stacked_dim}")

    times = np.asarray(times, dtype=float)
    dynamics = (result.growth_rates[:, None] ** times[None, :]) * \
        np.exp(2j * np.pi * result.frequencies[:, None] * times[None, :])
    return result.modes[:rows] @ (result.amplitudes[:, None] * dynamics)


def imaginary_residual(reconstruction: np.ndarray) -> float:
    """Largest imaginary magnitude relative to the largest real magnitude."""
    scale = np.max(np.abs(reconstruction.real)) if reconstruction.size else 0.0
    if scale == 0:
        return float(np.max(np.abs(reconstruction.imag))) if reconstruction.size else 0.0
    return float(np.max(np.abs(reconstruction.imag)) / scale)

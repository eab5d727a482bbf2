"""Count-based CTC over the binary alphabet {blank, object}.

A count c expands to c 'object' symbols; the extended label interleaves
blanks, giving 2c+1 states where even states are blank and odd states are
object. Two consecutive objects are identical symbols, so the usual CTC
skip transition (s-2 -> s) never applies: every state is entered either from
itself or from its left neighbour. All recursions run in log space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from ..errors import InfeasibleCount, NonDistribution, ShapeMismatch
from .lstm import BLANK, OBJECT, FrameLogProbs

NEG_INF = -np.inf
MAX_BRUTE_FORCE_T = 16


@dataclass(frozen=True)
class CountLabel:
    count: int

    @property
    def expanded(self) -> Tuple[int, ...]:
        """The count as a symbol sequence, e.g. 3 -> (o, o, o)."""
        return (OBJECT,) * self.count

    def extended(self) -> "ExtendedLabel":
        return ExtendedLabel.from_count(self.count)


@dataclass(frozen=True)
class ExtendedLabel:
    symbols: Tuple[int, ...]

    @classmethod
    def from_count(cls, count: int) -> "ExtendedLabel":
        return cls(tuple(OBJECT if s % 2 else BLANK for s in range(2 * count + 1)))

    @property
    def count(self) -> int:
        return (len(self.symbols) - 1) // 2

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class AlphaBetaTables:
    """Forward variables include the emission at t; backward variables exclude it."""

    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood: float

    def occupancy(self) -> np.ndarray:
        """Log posterior of being in state s at frame t."""
        with np.errstate(invalid="ignore"):
            return self.alpha + self.beta - self.log_likelihood


@dataclass(frozen=True)
class Alignment:
    """A length-T path over {blank, object}."""

    path: Tuple[int, ...]

    @property
    def emitted_runs(self) -> List[Tuple[int, int]]:
        """Maximal object runs as inclusive (start, end) frame pairs."""
        runs = []
        start = None
        for t, symbol in enumerate(self.path):
            if symbol == OBJECT and start is None:
                start = t
            elif symbol != OBJECT and start is not None:
                runs.append((start, t - 1))
                start = None
        if start is not None:
            runs.append((start, len(self.path) - 1))
        return runs

    @property
    def count(self) -> int:
        return len(self.emitted_runs)

    def log_prob(self, logp: FrameLogProbs) -> float:
        return float(logp.values[np.arange(len(self.path)), list(self.path)].sum())

    def to_json(self, order: str) -> dict:
        return {"order": order, "runs": [list(run) for run in self.emitted_runs], "count": self.count}


def is_feasible(T: int, count: int) -> bool:
    """A length-T path can collapse to `count` objects iff T >= 2c - 1."""
    return count == 0 or (count > 0 and T >= 2 * count - 1)


def _check_feasible(logp: FrameLogProbs, count: int) -> None:
    if count < 0 or not is_feasible(logp.T, count):
        raise InfeasibleCount(count, logp.T)


def forward_backward(logp: FrameLogProbs, count: int) -> AlphaBetaTables:
    _check_feasible(logp, count)
    ext = np.asarray(ExtendedLabel.from_count(count).symbols)
    T, S = logp.T, len(ext)
    emit = logp.values[:, ext]
    pad = np.array([NEG_INF])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, :min(S, 2)] = emit[0, :min(S, 2)]
    for t in range(1, T):
        prev = alpha[t - 1]
        alpha[t] = np.logaddexp(prev, np.concatenate((pad, prev[:-1]))) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, max(S - 2, 0):] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        beta[t] = np.logaddexp(nxt, np.concatenate((nxt[1:], pad)))

    log_likelihood = float(logsumexp(alpha[T - 1, max(S - 2, 0):]))
    return AlphaBetaTables(alpha=alpha, beta=beta, log_likelihood=log_likelihood)


def cctc_loss(logp: FrameLogProbs, count: int, tol: float = 1e-6) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of `count` objects and its gradient w.r.t. the logits.

    The gradient is softmax(logits) minus the posterior symbol occupancy, so it
    can be handed straight to the network's backward pass.
    """
    logp.check_normalized(tol)
    tables = forward_backward(logp, count)
    loss = -tables.log_likelihood
    if not np.isfinite(loss):
        return loss, np.full_like(logp.values, np.nan)
    occ = np.exp(tables.occupancy())
    gamma = np.stack([occ[:, 0::2].sum(axis=1), occ[:, 1::2].sum(axis=1)], axis=1)
    return loss, logp.probs - gamma


def batch_cctc_loss(logp: np.ndarray, counts: Sequence[int], tol: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """`cctc_loss` over N sequences of one length, as (N,) losses and (N, T, 2) gradients.

    Each sequence keeps its own 2c+1 states; the state axis is padded to the
    largest count and padded states never emit.
    """
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 3 or logp.shape[2] != 2 or logp.shape[1] == 0:
        raise ShapeMismatch(f"batched log-probabilities must be (N, T, 2), got {logp.shape}")
    N, T, _ = logp.shape
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (N,):
        raise ShapeMismatch(f"expected {N} counts, got shape {counts.shape}")
    for count in counts:
        if count < 0 or not is_feasible(T, int(count)):
            raise InfeasibleCount(int(count), T)
    err = np.abs(logsumexp(logp, axis=2))
    if not np.all(err <= tol):
        n, t = np.unravel_index(int(np.argmax(np.where(np.isfinite(err), err, np.inf))), err.shape)
        raise NonDistribution(f"sequence {n} frame {t} log-probabilities do not sum to one", field="logP")

    sizes = 2 * counts + 1
    states = np.arange(int(sizes.max()))
    valid = states[None, :] < sizes[:, None]
    final = valid & (states[None, :] >= sizes[:, None] - 2)
    emit = np.where(valid[:, None, :], logp[:, :, states % 2], NEG_INF)
    pad = np.full((N, 1), NEG_INF)

    alpha = np.full(emit.shape, NEG_INF)
    alpha[:, 0, :2] = emit[:, 0, :2]
    for t in range(1, T):
        prev = alpha[:, t - 1]
        alpha[:, t] = np.logaddexp(prev, np.concatenate((pad, prev[:, :-1]), axis=1)) + emit[:, t]

    beta = np.full(emit.shape, NEG_INF)
    beta[:, T - 1] = np.where(final, 0.0, NEG_INF)
    for t in range(T - 2, -1, -1):
        nxt = beta[:, t + 1] + emit[:, t + 1]
        beta[:, t] = np.logaddexp(nxt, np.concatenate((nxt[:, 1:], pad), axis=1))

    log_likelihood = logsumexp(np.where(final, alpha[:, T - 1], NEG_INF), axis=1)
    with np.errstate(invalid="ignore"):
        occ = np.exp(alpha + beta - log_likelihood[:, None, None])
    gamma = np.stack([occ[..., 0::2].sum(axis=2), occ[..., 1::2].sum(axis=2)], axis=2)
    grads = np.exp(logp) - gamma
    grads[~np.isfinite(log_likelihood)] = np.nan
    return -log_likelihood, grads


def _all_paths(T: int) -> np.ndarray:
    codes = np.arange(2 ** T)
    return ((codes[:, None] >> np.arange(T)[::-1]) & 1).astype(np.int64)


def _collapsed_counts(paths: np.ndarray) -> np.ndarray:
    starts = paths[:, 1:] & (1 - paths[:, :-1])
    return paths[:, 0] + starts.sum(axis=1)


def _check_brute_force(logp: FrameLogProbs) -> None:
    if logp.T > MAX_BRUTE_FORCE_T:
        raise InfeasibleCount(0, logp.T, f"brute force enumerates 2^T paths; T={logp.T} exceeds {MAX_BRUTE_FORCE_T}")


def brute_force_likelihood(logp: FrameLogProbs, count: int) -> float:
    """log of the total probability of every binary path that collapses to `count` objects."""
    _check_brute_force(logp)
    paths = _all_paths(logp.T)
    path_logp = logp.values[np.arange(logp.T), paths].sum(axis=1)
    selected = path_logp[_collapsed_counts(paths) == count]
    if selected.size == 0:
        return NEG_INF
    return float(logsumexp(selected))


def brute_force_best_path(logp: FrameLogProbs, count: int) -> Tuple[float, Alignment]:
    """Most probable count-consistent path by enumeration (first path wins ties)."""
    _check_brute_force(logp)
    paths = _all_paths(logp.T)
    path_logp = logp.values[np.arange(logp.T), paths].sum(axis=1)
    path_logp = np.where(_collapsed_counts(paths) == count, path_logp, NEG_INF)
    best = int(np.argmax(path_logp))
    return float(path_logp[best]), Alignment(tuple(int(s) for s in paths[best]))


def decode_best_path(logp: FrameLogProbs) -> Tuple[int, Alignment]:
    """Per-frame argmax; a tie between blank and object resolves to blank."""
    path = np.where(logp.values[:, OBJECT] > logp.values[:, BLANK], OBJECT, BLANK)
    alignment = Alignment(tuple(int(s) for s in path))
    return alignment.count, alignment


def decode_constrained(logp: FrameLogProbs, count: int) -> Alignment:
    """Viterbi over the extended label states, forced to emit exactly `count` objects.

    Ties between predecessors, and between the two final states, go to the
    smaller state index.
    """
    _check_feasible(logp, count)
    ext = np.asarray(ExtendedLabel.from_count(count).symbols)
    T, S = logp.T, len(ext)
    emit = logp.values[:, ext]
    states = np.arange(S)

    delta = np.full((T, S), NEG_INF)
    delta[0, :min(S, 2)] = emit[0, :min(S, 2)]
    back = np.zeros((T, S), dtype=np.int64)
    for t in range(1, T):
        stay = delta[t - 1]
        move = np.concatenate(([NEG_INF], stay[:-1]))
        take_move = (move >= stay) & (states > 0)
        back[t] = np.where(take_move, states - 1, states)
        delta[t] = np.where(take_move, move, stay) + emit[t]

    if S > 1 and delta[T - 1, S - 2] >= delta[T - 1, S - 1]:
        s = S - 2
    else:
        s = S - 1
    path = [0] * T
    for t in range(T - 1, -1, -1):
        path[t] = int(ext[s])
        s = back[t, s]
    return Alignment(tuple(path))


def runs_to_frames(alignment: Alignment) -> List[int]:
    """One critical frame per emitted run: the floor midpoint."""
    return [(start + end) // 2 for start, end in alignment.emitted_runs]

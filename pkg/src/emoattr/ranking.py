"""Pairwise ranking functions trained with a squared-slack ranking SVM.

For an oriented emotion pair, samples of the ``high`` emotion must score
above samples of the ``low`` emotion (ordered pairs) while samples of the
same emotion should score alike (unordered pairs). Eliminating the slacks at
their optimum leaves the unconstrained primal

    J(w) = 1/2 |w|^2 + C * [ sum_O max(0, 1 - w.d)^2 + sum_U (w.d)^2 ]

with ``d = x_i - x_j``. It is piecewise quadratic and strongly convex, so
Newton's method on the current active set with an exact line search
converges in a handful of iterations.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .corpus import LabeledFeatures
from .emotions import EmotionPair, all_pairs
from .errors import InsufficientData, InvalidConfig, InvalidInput, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_MAX_ORDERED = 2000
DEFAULT_MAX_UNORDERED = 2000
_ROUNDING = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    C: float = 1e-4
    grad_tol: float = 1e-6
    max_newton_iters: int = 50
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidConfig(f"C must be positive, got {self.C}")
        if not self.grad_tol > 0:
            raise InvalidConfig(f"grad_tol must be positive, got {self.grad_tol}")
        if int(self.max_newton_iters) != self.max_newton_iters or self.max_newton_iters < 1:
            raise InvalidConfig(f"max_newton_iters must be a positive integer, got {self.max_newton_iters}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidConfig(f"seed must be an unsigned integer, got {self.seed}")


def _as_pairs(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInput(f"index pairs must have shape (k, 2), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered pairs ``(i, j)`` (i ranks above j) and unordered pairs.

    ``sample_indices`` lists every training row of the two emotions; the
    trained model's normalization bounds are taken over these rows. When it
    is omitted, the rows referenced by the pairs are used instead.
    """

    ordered: np.ndarray
    unordered: np.ndarray
    dataset_ref: str = ""
    pair: Optional[EmotionPair] = None
    sample_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        o, u = _as_pairs(self.ordered), _as_pairs(self.unordered)
        for name, arr in (("ordered", o), ("unordered", u)):
            if np.any(arr < 0):
                raise InvalidInput(f"negative index in {name} pairs")
            if np.any(arr[:, 0] == arr[:, 1]):
                raise InvalidInput(f"{name} pairs contain a self pair (i, i)")
        seen = {(int(i), int(j)) for i, j in u} | {(int(j), int(i)) for i, j in u}
        if any((int(i), int(j)) in seen for i, j in o):
            raise InvalidInput("a pair appears in both the ordered and unordered sets")
        object.__setattr__(self, "ordered", o)
        object.__setattr__(self, "unordered", u)
        if self.sample_indices is not None:
            object.__setattr__(self, "sample_indices", np.asarray(self.sample_indices, dtype=np.int64))

    def __len__(self):
        return len(self.ordered) + len(self.unordered)

    def rows(self) -> np.ndarray:
        if self.sample_indices is not None:
            return self.sample_indices
        return np.unique(np.concatenate([self.ordered.ravel(), self.unordered.ravel()]))

    def check_against(self, n_rows: int):
        rows = self.rows()
        if rows.size and rows.max() >= n_rows:
            raise InvalidInput(f"constraint index {int(rows.max())} out of range for {n_rows} feature rows")


def _sample_flat(rng: np.random.Generator, total: int, cap: Optional[int]) -> np.ndarray:
    if cap is None or total <= cap:
        return np.arange(total)
    return np.sort(rng.choice(total, size=cap, replace=False))


def build_constraints(
    data: LabeledFeatures,
    pair: EmotionPair,
    max_ordered: Optional[int] = DEFAULT_MAX_ORDERED,
    max_unordered: Optional[int] = DEFAULT_MAX_UNORDERED,
    seed: int = 0,
) -> ConstraintSet:
    """Cross-class ordered pairs and within-class unordered pairs for ``pair``.

    When a set exceeds its cap (``None`` means uncapped) it is subsampled
    uniformly without replacement with a generator seeded by ``seed``.
    """
    for cap in (max_ordered, max_unordered):
        if cap is not None and cap < 1:
            raise InvalidConfig(f"pair caps must be positive or None, got {cap}")
    hi, lo = data.indices_of(pair.high), data.indices_of(pair.low)
    for emo, idx in ((pair.high, hi), (pair.low, lo)):
        if idx.size == 0:
            raise InsufficientData(f"no training samples of {emo} for pair {pair}")
    rng = np.random.default_rng(seed)

    flat = _sample_flat(rng, hi.size * lo.size, max_ordered)
    ordered = np.column_stack([hi[flat // lo.size], lo[flat % lo.size]])

    within = []
    for idx in (hi, lo):
        a, b = np.triu_indices(idx.size, k=1)
        within.append(np.column_stack([idx[a], idx[b]]))
    within = np.concatenate(within)
    unordered = within[_sample_flat(rng, len(within), max_unordered)]

    return ConstraintSet(
        ordered=ordered,
        unordered=unordered,
        dataset_ref=data.name,
        pair=pair,
        sample_indices=np.concatenate([hi, lo]),
    )


def difference_matrices(constraints: ConstraintSet, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``x_i - x_j`` for the ordered and unordered pairs."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    constraints.check_against(X.shape[0])
    o, u = constraints.ordered, constraints.unordered
    return X[o[:, 0]] - X[o[:, 1]], X[u[:, 0]] - X[u[:, 1]]


def _objective(w, DO, DU, C) -> float:
    hinge = np.maximum(0.0, 1.0 - DO @ w)
    tie = DU @ w
    return 0.5 * float(w @ w) + C * (float(hinge @ hinge) + float(tie @ tie))


def _gradient(w, DO, DU, C) -> np.ndarray:
    hinge = np.maximum(0.0, 1.0 - DO @ w)
    return w - 2.0 * C * (DO.T @ hinge) + 2.0 * C * (DU.T @ (DU @ w))


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what}")
    return value


def objective(weights, constraints: ConstraintSet, features, C: float) -> float:
    w = np.asarray(weights, dtype=np.float64)
    DO, DU = difference_matrices(constraints, features)
    if DO.shape[1] != w.size:
        raise InvalidInput(f"weights of length {w.size} for {DO.shape[1]}-dimensional features")
    return _finite(_objective(w, DO, DU, C), "objective")


def gradient(weights, constraints: ConstraintSet, features, C: float) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    DO, DU = difference_matrices(constraints, features)
    if DO.shape[1] != w.size:
        raise InvalidInput(f"weights of length {w.size} for {DO.shape[1]}-dimensional features")
    return _finite(_gradient(w, DO, DU, C), "gradient")


def _exact_step(w, p, DO, DU, C) -> float:
    """Minimizer over t >= 0 of J(w + t p).

    The derivative along the ray is continuous, non-decreasing and piecewise
    linear; its kinks are where an ordered pair enters or leaves the active
    set. Walk the kinks in order and stop in the first segment containing
    the root.
    """
    a, b = DO @ w, DO @ p
    u, v = DU @ w, DU @ p
    alpha0 = float(w @ p) + 2.0 * C * float(u @ v)
    beta0 = float(p @ p) + 2.0 * C * float(v @ v)

    active = (a < 1.0) | ((a == 1.0) & (b < 0.0))
    s1 = float(np.sum(b[active] * (1.0 - a[active])))
    s2 = float(np.sum(b[active] ** 2))

    with np.errstate(divide="ignore", invalid="ignore"):
        t_kink = (1.0 - a) / b
    # leaving: active now, b > 0; entering: inactive now, b < 0
    moving = (b != 0.0) & (t_kink > 0.0) & np.where(b > 0.0, active, ~active)
    order = np.argsort(t_kink[moving], kind="stable")
    tk = t_kink[moving][order]
    sign = np.where(b[moving][order] > 0.0, -1.0, 1.0)
    bm, am = b[moving][order], a[moving][order]
    S1 = s1 + np.concatenate([[0.0], np.cumsum(sign * bm * (1.0 - am))])
    S2 = s2 + np.concatenate([[0.0], np.cumsum(sign * bm * bm)])
    roots = -(alpha0 - 2.0 * C * S1) / (beta0 + 2.0 * C * S2)
    ends = np.concatenate([tk, [np.inf]])
    k = int(np.argmax(roots <= ends))
    return max(0.0, float(roots[k]))


@dataclass(frozen=True)
class RankModel:
    pair: EmotionPair
    weights: np.ndarray
    score_min: float
    score_max: float
    config: SolverConfig = field(default_factory=SolverConfig)
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    final_objective: float = float("nan")
    converged: bool = False
    iterations: int = 0
    objective_history: tuple = ()

    @property
    def dim(self) -> int:
        return self.weights.size

    @property
    def standardized(self) -> bool:
        return self.mean is not None


def _fit_standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _prepare(constraints, features, config):
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(constraints) == 0:
        raise InsufficientData(f"no constraints to train pair {constraints.pair or '?'}")
    constraints.check_against(X.shape[0])
    mean = std = None
    if config.standardize:
        mean, std = _fit_standardization(X[constraints.rows()])
        X = (X - mean) / std
    DO, DU = difference_matrices(constraints, X)
    return X, DO, DU, mean, std


def train_rank_svm(constraints: ConstraintSet, features, config: SolverConfig = SolverConfig()) -> RankModel:
    """Minimize the ranking primal by active-set Newton iterations.

    Runs until the gradient norm drops to ``config.grad_tol`` or
    ``config.max_newton_iters`` steps are taken. Hitting the iteration
    limit is not an error: the model comes back with ``converged=False``.
    """
    X, DO, DU, mean, std = _prepare(constraints, features, config)
    C = config.C
    d = X.shape[1]
    tie_hessian = DU.T @ DU

    w = np.zeros(d)
    J = _objective(w, DO, DU, C)
    history = [J]
    converged = False
    iters = 0
    while True:
        g = _finite(_gradient(w, DO, DU, C), "gradient")
        if np.linalg.norm(g) <= config.grad_tol:
            converged = True
            break
        if iters >= config.max_newton_iters:
            break
        act = DO[DO @ w < 1.0]
        H = np.eye(d) + 2.0 * C * (act.T @ act + tie_hessian)
        p = -cho_solve(cho_factor(H), g)
        t = _exact_step(w, p, DO, DU, C)
        w_new = w + t * p
        J_new = _objective(w_new, DO, DU, C)
        iters += 1
        if J_new > J + _ROUNDING * max(1.0, abs(J)):
            logger.debug("pair %s: rejected step at iteration %d (%.3e > %.3e)", constraints.pair, iters, J_new, J)
            break
        # the exact step cannot increase J, so a rise below rounding level is noise
        w, J = w_new, J_new
        history.append(J)
    _finite(w, "weights")

    scores = _row_scores(X[constraints.rows()], w)
    pair = constraints.pair or EmotionPair("high", "low")
    if not converged:
        logger.warning("pair %s did not converge in %d Newton iterations", pair, iters)
    return RankModel(
        pair=pair,
        weights=w,
        score_min=float(scores.min()),
        score_max=float(scores.max()),
        config=config,
        mean=mean,
        std=std,
        final_objective=J,
        converged=converged,
        iterations=iters,
        objective_history=tuple(history),
    )


def _row_scores(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    # one reduction per row, so a sample scores identically alone or in a batch
    # and the stored bounds normalize to exactly 0 and 1
    return np.sum(A * w, axis=-1)


def score(model: RankModel, x) -> np.ndarray | float:
    """Ranking score ``w . x`` (``x`` standardized first if the model was).

    Accepts a single vector or a matrix of row vectors.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != model.dim or arr.ndim > 2:
        raise InvalidInput(f"expected {model.dim}-dimensional features, got shape {arr.shape}")
    if model.standardized:
        arr = (arr - model.mean) / model.std
    out = _row_scores(arr, model.weights)
    return float(out) if np.ndim(out) == 0 else out


def _train_one(data, pair, config, max_ordered, max_unordered):
    cons = build_constraints(data, pair, max_ordered, max_unordered, seed=config.seed)
    return train_rank_svm(cons, data.features, config)


def train_pair_models(
    data: LabeledFeatures,
    emotions: Iterable[str],
    config: SolverConfig = SolverConfig(),
    max_ordered: Optional[int] = DEFAULT_MAX_ORDERED,
    max_unordered: Optional[int] = DEFAULT_MAX_UNORDERED,
    jobs: int = 1,
) -> list[RankModel]:
    """One model per unordered emotion pair, in :func:`all_pairs` order."""
    pairs = all_pairs(emotions)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_train_one, data, p, config, max_ordered, max_unordered) for p in pairs]
            return [f.result() for f in futures]
    return [_train_one(data, p, config, max_ordered, max_unordered) for p in pairs]


# --- independent verification oracle -------------------------------------

ORACLE_MAX_DIM = 16
ORACLE_MAX_PAIRS = 50
ORACLE_ITERATIONS = 1_000_000


def _gd_loop(DO, DU, C, L, iters):
    d = DO.shape[1]
    w = np.zeros(d)
    g = np.zeros(d)
    for k in range(iters):
        for t in range(d):
            g[t] = w[t]
        for r in range(DO.shape[0]):
            m = 0.0
            for t in range(d):
                m += DO[r, t] * w[t]
            if m < 1.0:
                coef = -2.0 * C * (1.0 - m)
                for t in range(d):
                    g[t] += coef * DO[r, t]
        for r in range(DU.shape[0]):
            m = 0.0
            for t in range(d):
                m += DU[r, t] * w[t]
            coef = 2.0 * C * m
            for t in range(d):
                g[t] += coef * DU[r, t]
        step = 1.0 / (L * (1.0 + k / iters))
        for t in range(d):
            w[t] -= step * g[t]
    return w


try:
    from numba import njit

    _gd_loop_fast = njit(cache=True)(_gd_loop)
except ImportError:  # pragma: no cover
    _gd_loop_fast = _gd_loop


def oracle_solve(
    constraints: ConstraintSet,
    features,
    config: SolverConfig = SolverConfig(),
    iterations: int = ORACLE_ITERATIONS,
) -> np.ndarray:
    """Reference minimizer of the same primal by plain gradient descent.

    Step sizes ``1 / (L (1 + k/N))`` shrink monotonically from ``1/L``
    where ``L`` bounds the gradient's Lipschitz constant. Meant for tiny
    instances only, as ground truth in tests. Returns weights in the
    (possibly standardized) training space.
    """
    X, DO, DU, _, _ = _prepare(constraints, features, config)
    if X.shape[1] > ORACLE_MAX_DIM or len(constraints) > ORACLE_MAX_PAIRS:
        raise InvalidInput(
            f"oracle limited to dim <= {ORACLE_MAX_DIM} and <= {ORACLE_MAX_PAIRS} pairs, "
            f"got dim {X.shape[1]} with {len(constraints)} pairs"
        )
    D = np.vstack([DO, DU])
    L = 1.0 + 2.0 * config.C * float(np.linalg.norm(D, 2) ** 2)
    w = _gd_loop_fast(np.ascontiguousarray(DO), np.ascontiguousarray(DU), float(config.C), L, int(iterations))
    return _finite(np.asarray(w), "oracle weights")

"""Binary soft-margin SVM with an RBF kernel, trained by SMO.

The dual problem

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K(x_i, x_j)
    s.t.   0 <= a_i <= C,  y^T a = 0

is solved by sequential minimal optimization. Each step picks the maximal
violating pair with second-order selection and solves that two-variable
subproblem analytically. Iteration stops when the KKT gap
``max_{I_up} -y G - min_{I_low} -y G`` falls below ``tol``.

Leaf is the positive class (+1), wood the negative one (-1).
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, ParseError, SingleClassError
from .io import LEAF, WOOD

log = logging.getLogger(__name__)

MODEL_MAGIC = "leafwood-svm"
MODEL_VERSION = 1
_TAU = 1e-12
# Full kernel matrix up to this many training rows, LRU row cache beyond.
_FULL_KERNEL_MAX = 3000
_CACHE_BYTES = 256 * 2**20
PREDICT_CHUNK = 8192


@dataclass(frozen=True)
class ScalingParams:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, rows):
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.std

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))


def standardize(features, params: ScalingParams | None = None):
    """Scale rows to zero mean and unit variance per column.

    With ``params`` given the stored transform is applied instead of being
    refitted. Constant columns get ``std = 1``.

    Returns
    -------
    (scaled rows, ScalingParams)
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("standardize needs a non-empty 2-D array")
    if params is None:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        # Test constancy on the raw values: roundoff in the mean can leave a
        # tiny nonzero std for a constant column.
        varies = (np.ptp(x, axis=0) > 0) & (std > 0)
        mean = np.where(varies, mean, x[0])
        std = np.where(varies, std, 1.0)
        params = ScalingParams(mean, std)
    return params.apply(x), params


@dataclass(frozen=True)
class SvmHyperparams:
    C: float = 10.0
    gamma: float = 0.2
    tol: float = 1e-3
    max_iter: int = 1_000_000

    def __post_init__(self):
        if not (self.C > 0 and self.gamma > 0 and self.tol > 0 and self.max_iter > 0):
            raise ValueError("SVM hyperparameters must be positive")


def rbf(u, v, gamma: float) -> float:
    d = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(a, b, gamma: float) -> np.ndarray:
    """Kernel matrix ``K[i, j] = exp(-gamma * |a_i - b_j|^2)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
          - 2.0 * a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


class _KernelRows:
    """Kernel rows of the training matrix, fully precomputed or LRU cached."""

    def __init__(self, x, gamma):
        self.x = x
        self.gamma = gamma
        n = x.shape[0]
        if n <= _FULL_KERNEL_MAX:
            self.full = np.exp(-gamma * self._sqdist_all(x))
        else:
            self.full = None
            self.cache = OrderedDict()
            self.capacity = max(2, _CACHE_BYTES // (8 * n))

    @staticmethod
    def _sqdist_all(x):
        sq = np.empty((x.shape[0], x.shape[0]))
        for i in range(x.shape[0]):
            d = x - x[i]
            sq[i] = np.einsum("ij,ij->i", d, d)
        return sq

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        hit = self.cache.get(i)
        if hit is not None:
            self.cache.move_to_end(i)
            return hit
        d = self.x - self.x[i]
        r = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self.cache[i] = r
        if len(self.cache) > self.capacity:
            self.cache.popitem(last=False)
        return r


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    n_iter: int
    gap: float
    objective: float  # dual objective in maximisation form, e^T a - 1/2 a^T Q a


def _bias(alpha, v, C, up, low):
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(np.mean(v[free]))
    hi = np.max(v[up]) if np.any(up) else np.min(v[low])
    lo = np.min(v[low]) if np.any(low) else hi
    return 0.5 * (hi + lo)


def smo(kernel, y, C: float, tol: float = 1e-3, max_iter: int = 1_000_000,
        check_monotone: bool = False) -> SmoResult:
    """Solve the SVM dual for labels ``y`` in {+1, -1}.

    ``kernel`` is either an (n, n) kernel matrix or an object exposing
    ``row(i)``. The RBF diagonal is assumed to be 1 for row objects.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if isinstance(kernel, np.ndarray):
        mat = kernel
        row = mat.__getitem__
        diag = np.diag(mat).copy()
    else:
        row = kernel.row
        diag = np.ones(n)
    pos = y > 0
    alpha = np.zeros(n)
    grad = -np.ones(n)
    obj_prev = 0.0
    it = 0
    while True:
        v = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        v_up = np.where(up, v, -np.inf)
        i = int(np.argmax(v_up))
        m_up = v_up[i]
        v_low = np.where(low, v, np.inf)
        m_low = float(np.min(v_low))
        gap = float(m_up - m_low)
        if gap < tol:
            break
        if it >= max_iter:
            objective = float(np.sum(alpha) - 0.5 * np.dot(alpha, grad + 1.0))
            raise ConvergenceError(
                f"SMO did not reach KKT tolerance {tol} within {max_iter} iterations "
                f"(gap {gap:.3g})",
                {"iterations": it, "gap": gap, "objective": objective,
                 "n_support": int(np.count_nonzero(alpha))},
            )
        k_i = row(i)
        b = m_up - v
        cand = low & (b > 0)
        a = diag[i] + diag - 2.0 * k_i
        a = np.where(a > 0, a, _TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        k_j = row(j)

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = diag[i] + diag[j] - 2.0 * k_i[j]
        if quad <= 0:
            quad = _TAU
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += y * (yi * (ai - ai_old) * k_i + yj * (aj - aj_old) * k_j)
        it += 1
        if check_monotone:
            obj = float(np.sum(alpha) - 0.5 * np.dot(alpha, grad + 1.0))
            scale = max(1.0, abs(obj))
            if obj < obj_prev - 1e-9 * scale:
                raise AssertionError(f"dual objective decreased at iteration {it}: "
                                     f"{obj_prev!r} -> {obj!r}")
            obj_prev = obj
    v = -y * grad
    up = np.where(pos, alpha < C, alpha > 0)
    low = np.where(pos, alpha > 0, alpha < C)
    bias = _bias(alpha, v, C, up, low)
    objective = float(np.sum(alpha) - 0.5 * np.dot(alpha, grad + 1.0))
    return SmoResult(alpha, bias, it, gap, objective)


@dataclass
class SvmModel:
    """Trained classifier. Support vectors are stored already standardised."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    scaling: ScalingParams
    C: float = 10.0
    tol: float = 1e-3
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        self.dual_coef = np.asarray(self.dual_coef, dtype=np.float64).ravel()
        if self.dual_coef.size == 0:
            raise ValueError("an SVM model needs at least one support vector")
        if self.support_vectors.shape[0] != self.dual_coef.size:
            raise ValueError("support vector / coefficient count mismatch")

    @property
    def n_support(self):
        return self.dual_coef.size

    def decision_function(self, features) -> np.ndarray:
        """Decision values for raw (unscaled) feature rows."""
        x = self.scaling.apply(np.atleast_2d(features))
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], PREDICT_CHUNK):
            sl = slice(start, start + PREDICT_CHUNK)
            out[sl] = rbf_matrix(x[sl], self.support_vectors, self.gamma) @ self.dual_coef
        return out + self.bias

    def predict(self, features) -> np.ndarray:
        return np.where(self.decision_function(features) >= 0, LEAF, WOOD).astype(np.int8)


def _signed(classes):
    return np.where(np.asarray(classes) == LEAF, 1.0, -1.0)


def train(ts, hp: SvmHyperparams | None = None, seed: int = 0, scale: bool = True,
          check_monotone: bool = False) -> SvmModel:
    """Fit an SVM to a training set.

    Rows are shuffled with ``seed`` before optimisation, so the working-pair
    tie order is fixed by the seed. Support vectors are stored in training-set
    order.
    """
    hp = hp or SvmHyperparams()
    ts.require_both_classes()
    x_raw = ts.features
    if scale:
        x, params = standardize(x_raw)
    else:
        params = ScalingParams.identity(x_raw.shape[1])
        x = params.apply(x_raw)
    y = _signed(ts.classes)
    perm = np.random.default_rng(seed).permutation(len(y))
    kernel = _KernelRows(x[perm], hp.gamma)
    res = smo(kernel.full if kernel.full is not None else kernel, y[perm], hp.C,
              hp.tol, hp.max_iter, check_monotone)
    alpha = np.empty_like(res.alpha)
    alpha[perm] = res.alpha
    sv = np.flatnonzero(alpha > 0)
    log.debug("SMO: %d iterations, gap %.3g, %d support vectors", res.n_iter, res.gap, sv.size)
    return SvmModel(x[sv], alpha[sv] * y[sv], res.bias, hp.gamma, params, hp.C, hp.tol,
                    info={"iterations": res.n_iter, "gap": res.gap,
                          "objective": res.objective, "alpha": alpha})


def predict(model: SvmModel, fv) -> int:
    """Class of a single feature row (leaf when the decision value is >= 0)."""
    return int(model.predict(np.asarray(fv, dtype=np.float64)[None, :])[0])


def classify_cloud(model: SvmModel, features) -> np.ndarray:
    """Labels for every feature row, in input order."""
    return model.predict(features)


def dual_objective(alpha, x, y, gamma) -> float:
    """``e^T a - 1/2 a^T Q a`` for standardised rows ``x``."""
    q = rbf_matrix(x, x, gamma) * np.outer(y, y)
    return float(np.sum(alpha) - 0.5 * alpha @ q @ alpha)


# --- model files -------------------------------------------------------------


def _floats(values):
    return " ".join(repr(float(v)) for v in values)


def save_model(model: SvmModel, path) -> None:
    dim = model.support_vectors.shape[1]
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        "kernel rbf",
        f"C {model.C!r}",
        f"gamma {model.gamma!r}",
        f"tol {model.tol!r}",
        f"dim {dim}",
        f"scale_mean {_floats(model.scaling.mean)}",
        f"scale_std {_floats(model.scaling.std)}",
        f"bias {model.bias!r}",
        f"n_support {model.n_support}",
        "# coef sv_1 ... sv_dim",
    ]
    for c, row in zip(model.dual_coef.tolist(), model.support_vectors.tolist()):
        lines.append(_floats([c] + row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SvmModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].split()[:1] != [MODEL_MAGIC]:
        raise ParseError("not a leafwood SVM model file", path, 1)
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError("missing model version", path, 1) from None
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}", path, 1)
    header = {}
    body_start = None
    for no, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            body_start = no
            break
        key, _, value = line.partition(" ")
        header[key] = value
    try:
        if header.get("kernel") != "rbf":
            raise ParseError("only rbf kernels are supported", path)
        dim = int(header["dim"])
        n_sv = int(header["n_support"])
        scaling = ScalingParams(np.array([float(v) for v in header["scale_mean"].split()]),
                                np.array([float(v) for v in header["scale_std"].split()]))
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[body_start:] if ln.strip()])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed model file ({exc})", path) from None
    if rows.shape != (n_sv, dim + 1):
        raise ParseError(f"expected {n_sv} support vectors of dimension {dim}", path)
    return SvmModel(rows[:, 1:], rows[:, 0], float(header["bias"]), float(header["gamma"]),
                    scaling, float(header["C"]), float(header["tol"]))


# --- model selection ---------------------------------------------------------

GRID_C = (1.0, 10.0, 100.0)
GRID_GAMMA = (0.05, 0.2, 1.0)


def grid_search(ts, base: SvmHyperparams | None = None, folds: int = 5, seed: int = 0,
                scale: bool = True, grid_c=GRID_C, grid_gamma=GRID_GAMMA):
    """Pick (C, gamma) by k-fold cross-validated accuracy on the training set.

    Ties go to the earlier grid entry. Returns the chosen hyperparameters and
    a list of ``(C, gamma, accuracy)`` rows.
    """
    from .sampling import TrainingSet

    base = base or SvmHyperparams()
    ts.require_both_classes()
    n = len(ts)
    fold_of = np.random.default_rng(seed).permutation(n) % folds
    table = []
    best = None
    for c in grid_c:
        for g in grid_gamma:
            hp = replace(base, C=c, gamma=g)
            correct = 0
            for f in range(folds):
                test = fold_of == f
                part = TrainingSet(ts.indices[~test], ts.classes[~test], ts.features[~test])
                if len(set(part.classes.tolist())) < 2 or not np.any(test):
                    raise SingleClassError("a cross-validation fold lacks one class")
                model = train(part, hp, seed=seed, scale=scale)
                correct += int(np.sum(model.predict(ts.features[test]) == ts.classes[test]))
            acc = correct / n
            table.append((c, g, acc))
            if best is None or acc > best[2]:
                best = (c, g, acc)
    return replace(base, C=best[0], gamma=best[1]), table

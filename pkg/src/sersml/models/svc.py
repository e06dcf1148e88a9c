"""Soft-margin support-vector classification solved by SMO.

Each binary problem minimises ``0.5 a'Qa - e'a`` subject to ``0 <= a <= C``
and ``y'a = 0`` with ``Q_ij = y_i y_j K(x_i, x_j)``. The working pair is the
maximal-violating ``i`` together with the second-order choice of ``j``; the
solver stops once the KKT gap drops below ``tol``. Multiclass problems use
one-vs-one voting.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from sersml.errors import ConfigError, DimensionMismatch, NonConvergence

KERNELS = ("linear", "rbf", "poly")
_TAU = 1e-12


@dataclass(frozen=True)
class SvcConfig:
    C: float = 1.0
    kernel: str = "linear"
    degree: int = 3
    gamma: float | None = None  # None: 1 / (n_features * var(X))
    coef0: float = 0.0
    tol: float = 1e-3
    max_passes: int | None = None  # None: max(100_000, 100 * n)

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}")
        if self.degree < 1:
            raise ConfigError("degree must be >= 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")


def auto_gamma(X: np.ndarray) -> float:
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def kernel_matrix(A, B, kernel: str, gamma: float = 1.0, degree: int = 3, coef0: float = 0.0) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if kernel == "linear":
        return A @ B.T
    if kernel == "poly":
        return (gamma * (A @ B.T) + coef0) ** degree
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    objective: float  # dual objective in maximisation form: sum(a) - 0.5 a'Qa
    iterations: int
    converged: bool
    gap: float


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_passes: int | None = None) -> SmoResult:
    """Solve one binary dual problem given its kernel matrix and +/-1 labels."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    max_passes = max(100_000, 100 * n) if max_passes is None else max_passes
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    gap = np.inf
    it = 0
    converged = False
    while it < max_passes:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged, gap = True, 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        g_max = yG[i]
        g_min = yG[low].min()
        gap = g_max - g_min
        if gap < tol:
            converged = True
            break
        cand = low & (yG < g_max)
        b = g_max - yG[cand]
        a = QD[i] + QD[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Q[i, j]
            delta = (-G[i] - G[j]) / (quad if quad > 0 else _TAU)
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Q[i, j]
            delta = (G[i] - G[j]) / (quad if quad > 0 else _TAU)
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)
        it += 1

    rho = _rho(alpha, y, G, C)
    objective = float(alpha.sum() - 0.5 * alpha @ Q @ alpha)
    return SmoResult(alpha, rho, objective, it, converged, float(gap))


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = alpha >= C
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = ~ub_mask
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float(0.5 * (ub + lb))


@dataclass(frozen=True, eq=False)
class BinarySvc:
    """Decision ``sum(coef * K(sv, x)) - rho``; positive means ``pos_class``."""

    pos_class: int
    neg_class: int
    support: np.ndarray  # support vectors (rows)
    coef: np.ndarray  # alpha_i * y_i
    rho: float
    objective: float
    converged: bool

    def to_dict(self) -> dict:
        return {"pos_class": self.pos_class, "neg_class": self.neg_class,
                "support": self.support.tolist(), "coef": self.coef.tolist(), "rho": self.rho,
                "objective": self.objective, "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "BinarySvc":
        sv = np.array(d["support"], dtype=np.float64)
        return cls(d["pos_class"], d["neg_class"], sv, np.array(d["coef"], dtype=np.float64),
                   float(d["rho"]), float(d["objective"]), bool(d["converged"]))


@dataclass(frozen=True, eq=False)
class SvcModel:
    machines: tuple[BinarySvc, ...]
    n_classes: int
    n_features: int
    config: SvcConfig
    gamma: float
    classes_seen: tuple[int, ...] = field(default=())

    kind = "svc"

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        c = self.config
        out = np.empty((X.shape[0], len(self.machines)))
        for k, m in enumerate(self.machines):
            if m.support.shape[0] == 0:
                out[:, k] = -m.rho
                continue
            Kx = kernel_matrix(m.support, X, c.kernel, self.gamma, c.degree, c.coef0)
            out[:, k] = m.coef @ Kx - m.rho
        return out

    def predict(self, X) -> np.ndarray:
        return svc_predict(self, X)

    def to_dict(self) -> dict:
        c = self.config
        return {
            "config": {"C": c.C, "kernel": c.kernel, "degree": c.degree, "gamma": c.gamma,
                       "coef0": c.coef0, "tol": c.tol, "max_passes": c.max_passes},
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "gamma": self.gamma,
            "classes_seen": list(self.classes_seen),
            "machines": [m.to_dict() for m in self.machines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvcModel":
        machines = []
        for m in d["machines"]:
            bm = BinarySvc.from_dict(m)
            if bm.support.size == 0:
                bm = BinarySvc(bm.pos_class, bm.neg_class, np.empty((0, d["n_features"])), bm.coef,
                               bm.rho, bm.objective, bm.converged)
            machines.append(bm)
        return cls(tuple(machines), int(d["n_classes"]), int(d["n_features"]),
                   SvcConfig(**d["config"]), float(d["gamma"]), tuple(d.get("classes_seen", ())))


def svc_fit(X, y, config: SvcConfig = SvcConfig(), n_classes: int | None = None) -> SvcModel:
    """Fit one-vs-one SMO machines for every pair of classes present in ``y``.

    Raises :class:`NonConvergence` (carrying the best-so-far model) when a
    sub-problem exhausts ``max_passes``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatch("X must be (n, d) with one label per row")
    present = tuple(int(c) for c in np.unique(y))
    if len(present) < 2:
        raise ConfigError("support-vector classification needs at least two classes")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    gamma = config.gamma if config.gamma is not None else auto_gamma(X)
    K = kernel_matrix(X, X, config.kernel, gamma, config.degree, config.coef0)
    machines = []
    stalled = []
    for a, b in itertools.combinations(present, 2):
        rows = np.flatnonzero((y == a) | (y == b))
        sign = np.where(y[rows] == a, 1.0, -1.0)
        res = smo_solve(K[np.ix_(rows, rows)], sign, config.C, config.tol, config.max_passes)
        sv = res.alpha > 0
        machines.append(BinarySvc(a, b, X[rows[sv]], (res.alpha * sign)[sv], res.rho,
                                  res.objective, res.converged))
        if not res.converged:
            stalled.append((a, b, res.gap))
    model = SvcModel(tuple(machines), n_classes, X.shape[1], config, gamma, present)
    if stalled:
        raise NonConvergence(f"SMO did not reach tol={config.tol} for class pairs {stalled}", model)
    return model


def svc_predict(model: SvcModel, X) -> np.ndarray:
    """One-vs-one majority vote.

    Ties between classes with equal votes go to the one with the larger summed
    decision value, then to the lower index.
    """
    F = model.decision_values(X)
    n = F.shape[0]
    votes = np.zeros((n, model.n_classes))
    conf = np.zeros((n, model.n_classes))
    rows = np.arange(n)
    for k, m in enumerate(model.machines):
        f = F[:, k]
        winner = np.where(f > 0, m.pos_class, m.neg_class)
        np.add.at(votes, (rows, winner), 1)
        conf[:, m.pos_class] += f
        conf[:, m.neg_class] -= f
    unseen = np.setdiff1d(np.arange(model.n_classes), model.classes_seen)
    conf[:, unseen] = -np.inf
    preds = np.empty(n, dtype=np.int64)
    for r in range(n):
        top = np.flatnonzero(votes[r] == votes[r].max())
        preds[r] = int(top[np.argmax(conf[r, top])])
    return preds

"""Age residualization, z-scoring, and elastic-net feature selection.

Fitting routines only ever see the CN (age model) or CN+AD (normalization,
selection) partitions; the pipeline never hands them MCI rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstantAges,
    DataError,
    EmptyMask,
    NoFeatureSelected,
    TooFewSubjects,
)

CONST_SD = 1e-12


@dataclass
class FeatureMatrix:
    subject_ids: list[str]
    col_names: list[str]
    values: np.ndarray  # (n_subjects, n_features) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("feature matrix must be 2D")
        if self.values.shape != (len(self.subject_ids), len(self.col_names)):
            raise DataError(
                f"matrix {self.values.shape} inconsistent with "
                f"{len(self.subject_ids)} subjects x {len(self.col_names)} features"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("feature matrix contains non-finite entries")

    def rows(self, indices) -> "FeatureMatrix":
        idx = list(indices)
        return FeatureMatrix(
            subject_ids=[self.subject_ids[i] for i in idx],
            col_names=self.col_names,
            values=self.values[idx],
        )

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("subject_id," + ",".join(self.col_names) + "\n")
            for sid, row in zip(self.subject_ids, self.values):
                f.write(sid + "," + ",".join(f"{v:.12g}" for v in row) + "\n")

    @classmethod
    def load_csv(cls, path) -> "FeatureMatrix":
        with open(path) as f:
            header = f.readline().rstrip("\n").split(",")
            if header[0] != "subject_id":
                raise DataError(f"{path}: first column must be subject_id")
            ids, rows = [], []
            for line in f:
                parts = line.rstrip("\n").split(",")
                ids.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
        return cls(subject_ids=ids, col_names=header[1:],
                   values=np.array(rows, dtype=np.float64))


@dataclass
class AgeModel:
    intercept: np.ndarray  # (p,)
    slope: np.ndarray  # (p,)
    cn_mean: np.ndarray  # (p,)


@dataclass
class ZScoreModel:
    mean: np.ndarray
    sd: np.ndarray  # sample sd (n-1); features below CONST_SD flagged constant

    @property
    def constant(self) -> np.ndarray:
        return self.sd < CONST_SD


@dataclass
class ElasticNetParams:
    lambda1: float | None = None  # fixed L1 weight; None -> target search
    lambda2: float = 1.0
    target_nonzeros: int = 50
    max_iterations: int = 1000
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.lambda1 is not None and self.lambda1 < 0:
            raise DataError("lambda1 must be >= 0")
        if self.lambda2 < 0:
            raise DataError("lambda2 must be >= 0")
        if not (self.tolerance > 0):
            raise DataError("tolerance must be > 0")
        if self.lambda1 is None and self.target_nonzeros < 1:
            raise DataError("target_nonzeros must be >= 1")


@dataclass
class SelectionMask:
    selected: np.ndarray  # (p,) bool
    coefficients: np.ndarray  # (p,) fitted EN coefficients
    lambda1: float
    lambda2: float
    iterations: int
    converged: bool
    objective: float
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())


def fit_age_correction(x_cn: np.ndarray, ages) -> AgeModel:
    """Per-feature OLS of feature against age, on CN subjects only."""
    x = np.asarray(x_cn, dtype=np.float64)
    a = np.asarray(ages, dtype=np.float64)
    if x.shape[0] < 3:
        raise TooFewSubjects(f"age model needs >= 3 CN subjects, got {x.shape[0]}")
    if x.shape[0] != a.size:
        raise DataError("ages length does not match row count")
    var = float(((a - a.mean()) ** 2).sum())
    if var <= 0:
        raise ConstantAges("CN ages are constant")
    am = a.mean()
    slope = ((a - am)[:, None] * (x - x.mean(axis=0))).sum(axis=0) / var
    intercept = x.mean(axis=0) - slope * am
    return AgeModel(intercept=intercept, slope=slope, cn_mean=x.mean(axis=0))


def apply_age_correction(x: np.ndarray, ages, m: AgeModel) -> np.ndarray:
    """Residual re-centered on the CN mean: x - (b0 + b1*age) + cn_mean."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(ages, dtype=np.float64)
    pred = m.intercept[None, :] + np.outer(a, m.slope)
    return x - pred + m.cn_mean[None, :]


def zscore_fit(x_train: np.ndarray) -> ZScoreModel:
    x = np.asarray(x_train, dtype=np.float64)
    if x.shape[0] < 2:
        raise TooFewSubjects(f"z-score needs >= 2 training rows, got {x.shape[0]}")
    return ZScoreModel(mean=x.mean(axis=0), sd=x.std(axis=0, ddof=1))


def zscore_apply(x: np.ndarray, m: ZScoreModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = np.where(m.constant, 1.0, m.sd)
    out = (x - m.mean[None, :]) / sd[None, :]
    out[:, m.constant] = 0.0
    return out


def _enet_objective(x, y, beta, lam1, lam2):
    n = x.shape[0]
    r = y - x @ beta
    return float(0.5 / n * r @ r + lam1 * np.abs(beta).sum() + 0.5 * lam2 * beta @ beta)


def _enet_cd(x, y, lam1, lam2, max_iter, tol, beta0=None, history=None):
    """Cyclic coordinate descent on
    (1/2n)||y - X b||^2 + lam1 ||b||_1 + (lam2/2) ||b||^2.
    Coordinates are visited in canonical column order."""
    n, p = x.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    col_sq = (x * x).sum(axis=0) / n
    resid = y - x @ beta
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for j in range(p):
            bj = beta[j]
            rho = (x[:, j] @ resid) / n + col_sq[j] * bj
            denom = col_sq[j] + lam2
            if denom <= 0:
                new = 0.0
            else:
                new = np.sign(rho) * max(abs(rho) - lam1, 0.0) / denom
            if new != bj:
                resid += x[:, j] * (bj - new)
                beta[j] = new
                max_change = max(max_change, abs(new - bj))
        if history is not None:
            history.append(_enet_objective(x, y, beta, lam1, lam2))
        if max_change < tol:
            converged = True
            break
    return beta, it, converged


def enet_kkt_residual(x, y, beta, lam1, lam2) -> float:
    """Max violation of the subgradient optimality conditions at beta."""
    n = x.shape[0]
    grad = x.T @ (x @ beta - y) / n + lam2 * beta
    res = 0.0
    for j in range(x.shape[1]):
        if beta[j] != 0:
            res = max(res, abs(grad[j] + lam1 * np.sign(beta[j])))
        else:
            res = max(res, max(abs(grad[j]) - lam1, 0.0))
    return float(res)


def elastic_net_fit(x: np.ndarray, y: np.ndarray, p: ElasticNetParams,
                    collect_objective: bool = False) -> SelectionMask:
    """Fit the elastic net on z-scored features and +/-1 labels.

    With a fixed lambda1 a single fit is run and NoFeatureSelected is raised
    if everything is shrunk away.  In target mode lambda1 is bisected on a
    log grid until the nonzero count lands within +/-10% of the target
    (capped at the feature count); warm starts move along the path.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise DataError("labels must be in {-1, +1}")
    if len(set(y.tolist())) < 2:
        raise DataError("both classes required")
    n, nfeat = x.shape

    def run(lam1, beta0=None):
        history = [] if collect_objective else None
        beta, iters, conv = _enet_cd(
            x, y, lam1, p.lambda2, p.max_iterations, p.tolerance, beta0, history
        )
        return beta, iters, conv, history

    if p.lambda1 is not None:
        beta, iters, conv, history = run(p.lambda1)
        selected = beta != 0
        if not selected.any():
            raise NoFeatureSelected(f"lambda1={p.lambda1} shrunk every coefficient to 0")
        return SelectionMask(
            selected=selected, coefficients=beta, lambda1=p.lambda1,
            lambda2=p.lambda2, iterations=iters, converged=conv,
            objective=_enet_objective(x, y, beta, p.lambda1, p.lambda2),
            objective_history=history or [],
        )

    target = min(p.target_nonzeros, nfeat)
    lo_ok = max(1, int(np.floor(0.9 * target)))
    hi_ok = int(np.ceil(1.1 * target))
    lam_max = float(np.max(np.abs(x.T @ y)) / n)
    if lam_max <= 0:
        lam_max = 1.0
    lo, hi = np.log(lam_max * 1e-6), np.log(lam_max)
    best = None
    beta_warm = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lam1 = float(np.exp(mid))
        beta, iters, conv, history = run(lam1, beta_warm)
        beta_warm = beta
        nnz = int((beta != 0).sum())
        if best is None or abs(nnz - target) < abs(best[0] - target):
            best = (nnz, lam1, beta, iters, conv, history)
        if lo_ok <= nnz <= hi_ok:
            best = (nnz, lam1, beta, iters, conv, history)
            break
        if nnz > target:
            lo = mid  # more shrinkage
        else:
            hi = mid
    nnz, lam1, beta, iters, conv, history = best
    if nnz == 0:
        # fall back to the weakest penalty on the grid
        lam1 = float(np.exp(np.log(lam_max * 1e-6)))
        beta, iters, conv, history = run(lam1)
        nnz = int((beta != 0).sum())
        if nnz == 0:
            raise NoFeatureSelected("no lambda1 on the search grid selects a feature")
    return SelectionMask(
        selected=beta != 0, coefficients=beta, lambda1=lam1, lambda2=p.lambda2,
        iterations=iters, converged=conv,
        objective=_enet_objective(x, y, beta, lam1, p.lambda2),
        objective_history=history or [],
    )


def select_features(fm: FeatureMatrix, mask: SelectionMask) -> FeatureMatrix:
    """Column subset in canonical order, names preserved."""
    if not mask.selected.any():
        raise EmptyMask("selection mask is empty")
    if mask.selected.size != len(fm.col_names):
        raise DataError(
            f"mask over {mask.selected.size} features, matrix has {len(fm.col_names)}"
        )
    idx = np.nonzero(mask.selected)[0]
    return FeatureMatrix(
        subject_ids=fm.subject_ids,
        col_names=[fm.col_names[i] for i in idx],
        values=fm.values[:, idx],
    )


def save_selection(mask: SelectionMask, col_names: list[str], path) -> None:
    with open(path, "w") as f:
        f.write(f"# elastic net selection: lambda1={mask.lambda1:.12g} "
                f"lambda2={mask.lambda2:.12g} n={mask.n_selected}\n")
        for j in np.nonzero(mask.selected)[0]:
            f.write(f"{col_names[j]} {mask.coefficients[j]:.12g}\n")


def load_selection(path) -> list[tuple[str, float]]:
    out = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            name, coef = line.rsplit(" ", 1)
            out.append((name, float(coef)))
    return out

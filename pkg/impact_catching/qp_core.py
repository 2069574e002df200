"""
Dense convex QP solver and strict-priority task hierarchy

qp_solve:
    min 1/2 x^T H x + g^T x
    s.t. A_eq x = b_eq
         lb <= A_in x <= ub
         var_lb <= x <= var_ub

solved with a Mehrotra predictor-corrector primal-dual interior point method
on the stacked one-sided form C x + s = d, s >= 0.

solve_hierarchy cascades one QP per priority level. After each level the task
rows A_k are locked to their optimal values inside a narrow band, so lower
levels can never degrade higher ones by more than the lock tolerance. A final
min ||x||^2 level makes the solution unique.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import linprog

from impact_catching.config import HESSIAN_REGULARIZATION, LOCK_TOLERANCE, QP_MAX_ITERATIONS, QP_TOLERANCE
from impact_catching.errors import DimensionError

logger = logging.getLogger(__name__)

STATUS_SOLVED = "solved"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True, eq=False)
class QPProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    var_lb: np.ndarray | None = None
    var_ub: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.g)
        if np.shape(self.H) != (n, n):
            raise DimensionError(f"H must be {n}x{n}, got {np.shape(self.H)}")
        if (self.A_eq is None) != (self.b_eq is None):
            raise DimensionError("A_eq and b_eq must be given together")
        if self.A_eq is not None and np.shape(self.A_eq) != (len(self.b_eq), n):
            raise DimensionError(f"A_eq must be {len(self.b_eq)}x{n}, got {np.shape(self.A_eq)}")
        if self.A_in is not None:
            m = len(self.A_in)
            if np.shape(self.A_in) != (m, n):
                raise DimensionError(f"A_in must have {n} columns, got {np.shape(self.A_in)}")
            for name in ("lb", "ub"):
                bound = getattr(self, name)
                if bound is not None and np.shape(bound) != (m,):
                    raise DimensionError(f"{name} must have {m} entries")
        for name in ("var_lb", "var_ub"):
            bound = getattr(self, name)
            if bound is not None and np.shape(bound) != (n,):
                raise DimensionError(f"{name} must have {n} entries")

    @property
    def n(self) -> int:
        return len(self.g)

    def equalities(self) -> tuple[np.ndarray, np.ndarray]:
        if self.A_eq is None:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.asarray(self.A_eq, dtype=float), np.asarray(self.b_eq, dtype=float)

    def stacked_inequalities(self) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int, float]]]:
        """
        One-sided form C x <= d, skipping infinite bounds

        The third element tells for each row which bound it came from:
        ("in" | "box", index, +1 for upper and -1 for lower).
        """
        rows, rhs, origin = [], [], []

        def add(block, lower, upper, kind):
            for i, row in enumerate(block):
                if upper is not None and np.isfinite(upper[i]):
                    rows.append(row)
                    rhs.append(upper[i])
                    origin.append((kind, i, 1.0))
                if lower is not None and np.isfinite(lower[i]):
                    rows.append(-row)
                    rhs.append(-lower[i])
                    origin.append((kind, i, -1.0))

        if self.A_in is not None:
            add(np.asarray(self.A_in, dtype=float), self.lb, self.ub, "in")
        if self.var_lb is not None or self.var_ub is not None:
            add(np.eye(self.n), self.var_lb, self.var_ub, "box")
        if not rows:
            return np.zeros((0, self.n)), np.zeros(0), origin
        return np.array(rows), np.array(rhs, dtype=float), origin

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass(frozen=True)
class QPSolution:
    x: np.ndarray
    status: str
    iterations: int
    kkt_residuals: dict
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))  # equality multipliers
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))  # stacked inequality multipliers
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    in_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    box_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED


def _residuals(H, g, A, b, C, d, x, y, z, s):
    r_dual = H @ x + g + A.T @ y + C.T @ z
    r_eq = A @ x - b
    r_in = C @ x + s - d
    return r_dual, r_eq, r_in


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    negative = dv < 0
    if not np.any(negative):
        return 1.0
    return float(min(1.0, np.min(-v[negative] / dv[negative])))


def _kkt_report(H, g, A, b, C, d, x, y, z) -> dict:
    inf = lambda v: float(np.max(np.abs(v))) if len(v) else 0.0  # noqa: E731
    gap = d - C @ x
    return {
        "stationarity": inf(H @ x + g + A.T @ y + C.T @ z),
        "primal_eq": inf(A @ x - b),
        "primal_in": float(max(0.0, np.max(-gap))) if len(gap) else 0.0,
        "dual_feasibility": float(max(0.0, np.max(-z))) if len(z) else 0.0,
        "complementarity": inf(z * np.maximum(gap, 0.0)),
    }


def _is_feasible(A, b, C, d) -> bool:
    n = A.shape[1] if A.size else C.shape[1]
    result = linprog(
        np.zeros(n),
        A_ub=C if len(C) else None, b_ub=d if len(d) else None,
        A_eq=A if len(A) else None, b_eq=b if len(b) else None,
        bounds=[(None, None)] * n, method="highs",
    )
    return result.status != 2


def qp_solve(
    p: QPProblem,
    warm_start=None,
    tol: float = QP_TOLERANCE,
    max_iterations: int = QP_MAX_ITERATIONS,
) -> QPSolution:
    """
    Solve a convex QP

    warm_start may be a previous QPSolution (primal and dual values reused)
    or a primal guess x.
    """
    H = 0.5 * (np.asarray(p.H, dtype=float) + np.asarray(p.H, dtype=float).T)
    g = np.asarray(p.g, dtype=float)
    A, b = p.equalities()
    C, d, origin = p.stacked_inequalities()
    n, me, mi = p.n, len(b), len(d)

    x = np.zeros(n)
    y = np.zeros(me)
    z = np.ones(mi)
    s = np.ones(mi)
    if isinstance(warm_start, QPSolution) and len(warm_start.x) == n:
        x = warm_start.x.copy()
        if len(warm_start.y) == me:
            y = warm_start.y.copy()
        if len(warm_start.z) == mi:
            z = np.maximum(warm_start.z, 0.0)
        s = np.maximum(d - C @ x, 0.0)
    elif warm_start is not None and np.shape(warm_start) == (n,):
        x = np.asarray(warm_start, dtype=float).copy()
        s = np.maximum(d - C @ x, 1.0)
    else:
        # least-squares start on the equality and inequality rows
        K = np.block([[H + C.T @ C + 1e-8 * np.eye(n), A.T], [A, -1e-8 * np.eye(me)]])
        sol = np.linalg.lstsq(K, np.concatenate([-g + C.T @ d, b]), rcond=None)[0]
        x = sol[:n]
        s = np.maximum(d - C @ x, 1.0)

    dual_scale = 1.0 + float(np.max(np.abs(g), initial=0.0))
    primal_scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    status = STATUS_MAX_ITERATIONS
    iterations = 0
    stalled = 0

    def converged():
        r_dual, r_eq, r_in = _residuals(H, g, A, b, C, d, x, y, z, s)
        mu_ = float(s @ z) / mi if mi else 0.0
        ok = (
            np.max(np.abs(r_dual), initial=0.0) <= tol * dual_scale
            and np.max(np.abs(r_eq), initial=0.0) <= tol * primal_scale
            and np.max(np.abs(r_in), initial=0.0) <= tol * primal_scale
            and mu_ <= tol
        )
        return ok, r_dual, r_eq, r_in, mu_

    if isinstance(warm_start, QPSolution) and mi:
        ok, *_ = converged()
        if not ok:
            # push the warm start back inside the cone
            s = np.maximum(s, 1e-2)
            z = np.maximum(z, 1e-2)

    for iterations in range(max_iterations + 1):
        ok, r_dual, r_eq, r_in, mu = converged()
        if ok:
            status = STATUS_SOLVED
            break
        if iterations == max_iterations:
            break
        if mi and (np.max(z) > 1e12 or np.max(np.abs(y), initial=0.0) > 1e12):
            break

        w = z / s if mi else np.zeros(0)
        K = np.block([[H + C.T @ (w[:, None] * C), A.T], [A, -1e-12 * np.eye(me)]])

        def newton(r_sz):
            rhs_x = -r_dual - C.T @ (w * r_in - r_sz / s) if mi else -r_dual
            rhs = np.concatenate([rhs_x, -r_eq])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.full(len(rhs), np.nan)
            if not np.all(np.isfinite(sol)):
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            dx, dy = sol[:n], sol[n:]
            if not mi:
                return dx, dy, np.zeros(0), np.zeros(0)
            dz = w * (C @ dx + r_in) - r_sz / s
            ds = -(r_sz + s * dz) / z
            return dx, dy, dz, ds

        if mi:
            # predictor
            dx, dy, dz, ds = newton(s * z)
            alpha = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + alpha * ds) @ (z + alpha * dz)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        else:
            dx, dy, dz, ds = newton(np.zeros(0))
            alpha = 1.0

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        stalled = stalled + 1 if alpha < 1e-10 else 0
        if stalled >= 20:
            break

    if status != STATUS_SOLVED and not _is_feasible(A, b, C, d):
        status = STATUS_INFEASIBLE

    in_mult = np.zeros(0 if p.A_in is None else len(p.A_in))
    box_mult = np.zeros(n)
    for (kind, i, sign), zi in zip(origin, z):
        (in_mult if kind == "in" else box_mult)[i] += sign * zi
    if status != STATUS_SOLVED:
        logger.debug(f"QP ended with status {status} after {iterations} iterations")
    return QPSolution(
        x=x, status=status, iterations=iterations,
        kkt_residuals=_kkt_report(H, g, A, b, C, d, x, y, z),
        y=y, z=z, s=s, in_multipliers=in_mult, box_multipliers=box_mult, objective=p.objective(x),
    )


# ============================================================
# Strict hierarchy
# ============================================================
@dataclass(frozen=True, eq=False)
class TaskLevel:
    """Objective 1/2 x^T H x + g^T x of one priority level, optionally with explicit task rows"""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    name: str = ""

    @classmethod
    def least_squares(cls, A, b, name: str = "") -> "TaskLevel":
        """1/2 ||A x - b||^2 up to a constant"""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls(A.T @ A, -A.T @ b, A, name)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def task_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Rows R and offsets c with objective = 1/2 ||R x||^2 + c^T R x (+ const)

        Rows come from A when given, otherwise from the range of H; a linear
        term outside that range adds one more row with unit curvature-free offset.
        """
        H = 0.5 * (self.H + self.H.T)
        if self.A is not None:
            R = np.atleast_2d(self.A)
        else:
            eigval, eigvec = np.linalg.eigh(H)
            keep = eigval > 1e-12 * max(1.0, float(np.max(np.abs(eigval), initial=0.0)))
            R = (np.sqrt(eigval[keep])[:, None] * eigvec[:, keep].T) if np.any(keep) else np.zeros((0, len(H)))
        c = np.linalg.lstsq(R.T, self.g, rcond=None)[0] if len(R) else np.zeros(0)
        g_out = self.g - R.T @ c
        if np.linalg.norm(g_out) > 1e-12 * (1.0 + np.linalg.norm(self.g)):
            R = np.vstack([R, g_out / np.linalg.norm(g_out)])
            c = np.append(c, np.nan)  # marks the pure linear row
        return R, c


@dataclass(frozen=True, eq=False)
class TaskStack:
    levels: list[TaskLevel]
    constraints: QPProblem
    lock_tolerance: float = LOCK_TOLERANCE
    regularization: float = HESSIAN_REGULARIZATION


@dataclass(frozen=True)
class HierarchyResult:
    x: np.ndarray
    status: str
    objectives: list[float]  # per level, at the final solution
    stage_objectives: list[float]  # per level, right after that level was solved
    iterations: int
    failed_level: int | None = None
    solutions: tuple = ()

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED


def _lock_rows(level: TaskLevel, x_star: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Band around the achieved task values, sized so the objective moves at most tol"""
    R, c = level.task_rows()
    values = R @ x_star
    grad = np.where(np.isnan(c), 1.0, values + np.nan_to_num(c))
    band = 0.5 * tol / np.maximum(1.0, len(R) * np.abs(grad))
    return R, values - band, values + band


def solve_hierarchy(stack: TaskStack, warm_start=None) -> HierarchyResult:
    base = stack.constraints
    n = base.n
    A_in = np.zeros((0, n)) if base.A_in is None else np.asarray(base.A_in, dtype=float)
    lb = np.full(len(A_in), -np.inf) if base.lb is None else np.asarray(base.lb, dtype=float)
    ub = np.full(len(A_in), np.inf) if base.ub is None else np.asarray(base.ub, dtype=float)

    levels = list(stack.levels) + [TaskLevel(np.eye(n), np.zeros(n), np.eye(n), "regularizer")]
    stage_objectives: list[float] = []
    solutions: list[QPSolution] = []
    total_iterations = 0
    x = np.zeros(n)
    previous = warm_start if isinstance(warm_start, (list, tuple)) else None

    for k, level in enumerate(levels):
        problem = QPProblem(
            H=level.H + stack.regularization * np.eye(n), g=level.g,
            A_eq=base.A_eq, b_eq=base.b_eq,
            A_in=A_in if len(A_in) else None, lb=lb if len(A_in) else None, ub=ub if len(A_in) else None,
            var_lb=base.var_lb, var_ub=base.var_ub,
        )
        start = previous[k] if previous is not None and k < len(previous) else None
        solution = qp_solve(problem, warm_start=start)
        total_iterations += solution.iterations
        solutions.append(solution)
        if not solution.solved:
            logger.debug(f"hierarchy level {k} ({level.name or 'unnamed'}) failed: {solution.status}")
            return HierarchyResult(x, solution.status, [], stage_objectives, total_iterations, k, tuple(solutions))
        x = solution.x
        stage_objectives.append(level.objective(x))
        if k < len(levels) - 1:
            R, lo, hi = _lock_rows(level, x, stack.lock_tolerance)
            A_in = np.vstack([A_in, R])
            lb = np.concatenate([lb, lo])
            ub = np.concatenate([ub, hi])

    objectives = [level.objective(x) for level in levels]
    return HierarchyResult(x, STATUS_SOLVED, objectives, stage_objectives, total_iterations, None, tuple(solutions))


# ============================================================
# Problem dumps
# ============================================================
def dump_problem(p: QPProblem, path: str | Path) -> Path:
    """Write a problem as YAML arrays for offline debugging"""
    raw = {}
    for name in ("H", "g", "A_eq", "b_eq", "A_in", "lb", "ub", "var_lb", "var_ub"):
        value = getattr(p, name)
        if value is not None:
            raw[name] = np.where(np.isfinite(value), value, np.sign(value) * 1e300).tolist()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(raw, f)
    return path


def load_problem(path: str | Path) -> QPProblem:
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f)

    def restore(value):
        array = np.array(value, dtype=float)
        return np.where(np.abs(array) >= 1e300, np.sign(array) * np.inf, array)

    return QPProblem(**{name: restore(value) for name, value in raw.items()})

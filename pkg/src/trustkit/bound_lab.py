"""Numerical verification of the isometry-bounded inner-product deviation.

For unit-norm k-sparse x, x' and an operator A with isometry constant
delta_2k, the similarity error |x^T A^T A x' - x^T x'| never exceeds
delta_2k. This module checks that bound trial-by-trial, validates the
polarization identity it rests on, and runs the operator-ensemble sweep
that maps mean/max deviation against the estimated constant.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import sensing
from .errors import ContractError, ParameterError

_NORM_TOL = 1e-9
BOUND_SLACK = 1e-9  # numerical slack allowed on deviation <= delta


@dataclass
class BoundTrial:
    """A single (operator, pair) evaluation of the deviation bound."""

    operator: sensing.SensingOperator
    x: np.ndarray
    x_prime: np.ndarray
    deviation: float
    delta_bound: float | None

    @property
    def within_bound(self) -> bool:
        if self.delta_bound is None:
            return True
        return self.deviation <= self.delta_bound + BOUND_SLACK


def _require_unit(v: np.ndarray, label: str) -> None:
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > _NORM_TOL:
        raise ContractError(f"{label} must be unit-norm, got |{label}| = {norm!r}")


def inner_product_deviation(op: sensing.SensingOperator, x: np.ndarray,
                            x_prime: np.ndarray) -> float:
    """|(Ax)^T(Ax') - x^T x'| for unit-norm inputs.

    Evaluated both directly and through the polarization expansion
    ((|A(x+x')|^2 - |A(x-x')|^2) / 4); the two routes must agree to 1e-12.
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    _require_unit(x, "x")
    _require_unit(x_prime, "x'")
    ax = sensing.apply(op, x)
    axp = sensing.apply(op, x_prime)
    direct = abs(float(ax @ axp) - float(x @ x_prime))
    a_sum = sensing.apply(op, x + x_prime)
    a_diff = sensing.apply(op, x - x_prime)
    polarized = abs(
        (float(a_sum @ a_sum) - float(a_diff @ a_diff)) / 4.0 - float(x @ x_prime)
    )
    if abs(direct - polarized) > 1e-12:
        raise ContractError(
            f"deviation routes disagree: direct {direct!r} vs polarized {polarized!r}"
        )
    return direct


def verify_polarization(op: sensing.SensingOperator, x: np.ndarray,
                        x_prime: np.ndarray, tol: float = 1e-10) -> bool:
    """Check |A(x+x')|^2 - |A(x-x')|^2 = 4 (Ax)^T(Ax'), and the same with A = I."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    ax = sensing.apply(op, x)
    axp = sensing.apply(op, x_prime)
    a_sum = sensing.apply(op, x + x_prime)
    a_diff = sensing.apply(op, x - x_prime)
    lhs_a = float(a_sum @ a_sum) - float(a_diff @ a_diff)
    ok_a = abs(lhs_a - 4.0 * float(ax @ axp)) <= tol
    s = x + x_prime
    d = x - x_prime
    lhs_i = float(s @ s) - float(d @ d)
    ok_i = abs(lhs_i - 4.0 * float(x @ x_prime)) <= tol
    return ok_a and ok_i


@dataclass
class SweepCell:
    kind: str
    m: int
    n: int
    k: int
    mean_dev: float
    max_dev: float
    delta: float
    delta_method: str
    trials: int
    postsoftmax_mean_dev: float  # descriptive only; no bound is claimed on it

    @property
    def delta_is_exact(self) -> bool:
        return self.delta_method == sensing.EXACT_ENUMERATION

    @property
    def violates_bound(self) -> bool:
        return self.delta_is_exact and self.max_dev > self.delta + BOUND_SLACK


@dataclass
class SweepResult:
    cells: list[SweepCell] = field(default_factory=list)

    def violations(self) -> list[SweepCell]:
        return [c for c in self.cells if c.violates_bound]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("kind,m,n,k,mean_dev,max_dev,delta,delta_method,trials,postsoftmax_mean_dev\n")
        for c in self.cells:
            buf.write(
                f"{c.kind},{c.m},{c.n},{c.k},{c.mean_dev!r},{c.max_dev!r},"
                f"{c.delta!r},{c.delta_method},{c.trials},{c.postsoftmax_mean_dev!r}\n"
            )
        return buf.getvalue()

    def to_matrix(self, kind: str, value: str = "mean_dev") -> str:
        """Gnuplot-ready matrix (rows = m, cols = k) for one kind and fixed n."""
        cells = [c for c in self.cells if c.kind == kind]
        ms = sorted({c.m for c in cells})
        ks = sorted({c.k for c in cells})
        lines = ["# rows: m = " + " ".join(map(str, ms)) + "; cols: k = " + " ".join(map(str, ks))]
        for m in ms:
            row = []
            for k in ks:
                match = [c for c in cells if c.m == m and c.k == k]
                row.append(repr(getattr(match[0], value)) if match else "nan")
            lines.append(" ".join(row))
        return "\n".join(lines) + "\n"


def _cell_rng_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(0xCE, index))


def _postsoftmax_row_gap(x, x_prime, ax, axp) -> float:
    """Mean |softmax-row| gap between the 2x2 similarity matrices of the
    pair in signal and measurement domains. Descriptive companion output:
    the theorem bounds pre-softmax entries only."""
    g_x = np.array([[x @ x, x @ x_prime], [x_prime @ x, x_prime @ x_prime]])
    g_y = np.array([[ax @ ax, ax @ axp], [axp @ ax, axp @ axp]])

    def rows(g):
        e = np.exp(g - g.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    return float(np.mean(np.abs(rows(g_y) - rows(g_x))))


def _run_cell(kind: str, m: int, n: int, k: int, index: int, trials: int, seed: int,
              enumeration_cap: int, mc_budget: int) -> SweepCell:
    rng = np.random.default_rng(_cell_rng_seed(seed, index))
    op_seed = int(rng.integers(0, 2**31 - 1))
    op = sensing.sample_operator(kind, m, n, op_seed)
    devs = np.empty(trials)
    post = np.empty(trials)
    for t in range(trials):
        x = _unit_ksparse(rng, n, k)
        xp = _unit_ksparse(rng, n, k)
        devs[t] = inner_product_deviation(op, x, xp)
        post[t] = _postsoftmax_row_gap(x, xp, sensing.apply(op, x), sensing.apply(op, xp))
    if math.comb(n, 2 * k) <= enumeration_cap:
        est = sensing.estimate_rip(op, k, sensing.EXACT_ENUMERATION, cap=enumeration_cap)
    else:
        est = sensing.estimate_rip(op, k, sensing.MONTE_CARLO, budget=mc_budget, seed=op_seed)
    return SweepCell(
        kind=kind, m=m, n=n, k=k,
        mean_dev=float(devs.mean()), max_dev=float(devs.max()),
        delta=est.delta, delta_method=est.method, trials=trials,
        postsoftmax_mean_dev=float(post.mean()),
    )


def attention_similarity_sweep(kinds, ms, ns, ks, trials: int, seed: int,
                               enumeration_cap: int = sensing.ENUMERATION_CAP,
                               mc_budget: int = 2000, workers: int = 0) -> SweepResult:
    """Mean/max deviation and delta estimate per (kind, m, n, k) cell.

    Cells run in deterministic grid order; pair supports are drawn
    independently, so joint supports of size <= 2k arise by construction
    (overlaps are kept, which the bound permits). Cells are independent:
    ``workers > 1`` fans them out and merges back in grid order, so the
    output is identical to a serial run.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    specs = []
    index = 0
    for kind in kinds:
        for n in ns:
            for m in ms:
                if not _cell_valid(kind, m, n):
                    continue
                for k in ks:
                    if 2 * k > min(m, n):
                        continue
                    specs.append((kind, m, n, k, index))
                    index += 1

    def run(spec):
        kind, m, n, k, idx = spec
        return _run_cell(kind, m, n, k, idx, trials, seed, enumeration_cap, mc_budget)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run, specs))
    else:
        cells = [run(s) for s in specs]
    return SweepResult(cells=cells)


def _cell_valid(kind: str, m: int, n: int) -> bool:
    if kind == sensing.ORTHONORMAL_SQUARE:
        return m == n
    if kind == sensing.TALL_ORTHONORMAL:
        return m >= n
    if kind == sensing.GAUSSIAN_FAT:
        return m < n
    if kind == sensing.FOURIER_MASKED:
        return m % 2 == 0 and 0 < m <= 2 * n
    return False


def _unit_ksparse(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    vals = rng.standard_normal(k)
    x[support] = vals / np.linalg.norm(vals)
    return x

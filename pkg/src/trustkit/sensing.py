"""Sensing operators, k-sparse signal generation, and isometry-constant estimation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DimensionError, EnumerationCapExceeded, ParameterError

ORTHONORMAL_SQUARE = "orthonormal_square"
TALL_ORTHONORMAL = "tall_orthonormal"
GAUSSIAN_FAT = "gaussian_fat"
FOURIER_MASKED = "fourier_masked"
DENSE = "dense"  # free-shape Gaussian draw or estimated map; no ensemble invariant
IDENTITY = "identity"

KINDS = (ORTHONORMAL_SQUARE, TALL_ORTHONORMAL, GAUSSIAN_FAT, FOURIER_MASKED, DENSE, IDENTITY)

ENUMERATION_CAP = 1_000_000


@dataclass
class SensingOperator:
    """Linear map y = A x + w, materialized as a dense m x n matrix.

    Immutable after construction; the masked-Fourier kind keeps its
    frequency index list alongside the real-stacked coefficient rows.
    """

    kind: str
    m: int
    n: int
    seed: int
    matrix: np.ndarray
    column_normalized: bool = False
    mask: np.ndarray | None = None
    _noise_rng: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self.matrix.shape != (self.m, self.n):
            raise DimensionError(
                f"operator matrix shape {self.matrix.shape} != ({self.m}, {self.n})"
            )
        if self._noise_rng is None:
            self._noise_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=self.seed, spawn_key=(0xA0,))
            )


def sample_operator(kind: str, m: int, n: int, seed: int,
                    column_normalized: bool = False) -> SensingOperator:
    """Draw a deterministic operator of the given ensemble.

    Gaussian entries are i.i.d. N(0, 1/m); orthonormal kinds come from the
    QR factorization of a Gaussian draw (R-diagonal signs fixed so the
    result is canonical).
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown operator kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    mask = None
    if kind == ORTHONORMAL_SQUARE:
        if m != n:
            raise ParameterError(f"orthonormal_square requires m == n, got {m}x{n}")
        a = _orthonormal_columns(rng, n, n)
    elif kind == TALL_ORTHONORMAL:
        if m < n:
            raise ParameterError(f"tall_orthonormal requires m >= n, got {m}x{n}")
        a = _orthonormal_columns(rng, m, n)
    elif kind == GAUSSIAN_FAT:
        if m >= n:
            raise ParameterError(f"gaussian_fat requires m < n, got {m}x{n}")
        a = rng.standard_normal((m, n)) / math.sqrt(m)
        if column_normalized:
            a = a / np.linalg.norm(a, axis=0, keepdims=True)
    elif kind == FOURIER_MASKED:
        if m % 2 != 0 or not 0 < m <= 2 * n:
            raise ParameterError(
                f"fourier_masked requires even m with 0 < m <= 2n, got m={m}, n={n}"
            )
        mask = _center_weighted_mask(rng, n, m // 2)
        a = _fourier_rows(n, mask)
    elif kind == IDENTITY:
        if m != n:
            raise ParameterError(f"identity requires m == n, got {m}x{n}")
        a = np.eye(n)
    else:  # DENSE: i.i.d. Gaussian of any shape (the square forward model)
        a = rng.standard_normal((m, n)) / math.sqrt(m)
        if column_normalized:
            a = a / np.linalg.norm(a, axis=0, keepdims=True)
    return SensingOperator(kind, m, n, seed, np.ascontiguousarray(a),
                           column_normalized=column_normalized, mask=mask)


def fourier_from_keep(n: int, keep: float, seed: int) -> SensingOperator:
    """Masked-Fourier operator keeping roughly `keep * n` frequencies."""
    if not 0 < keep <= 1:
        raise ParameterError(f"keep fraction must be in (0, 1], got {keep}")
    kept = max(1, round(keep * n))
    return sample_operator(FOURIER_MASKED, 2 * kept, n, seed)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _center_weighted_mask(rng: np.random.Generator, n: int, kept: int) -> np.ndarray:
    """Frequency indices sampled without replacement, weighted toward DC."""
    freq_dist = np.minimum(np.arange(n), n - np.arange(n))
    weights = np.exp(-0.5 * (freq_dist / max(1.0, n / 8.0)) ** 2) + 1e-6
    idx = rng.choice(n, size=kept, replace=False, p=weights / weights.sum())
    return np.sort(idx)


def _fourier_rows(n: int, mask: np.ndarray) -> np.ndarray:
    """Real/imaginary parts of kept unitary-DFT rows, stacked as separate rows.

    Rows are rescaled by sqrt(n / kept) so a generic unit vector keeps unit
    energy on average; the adjoint is then the (scaled) zero-filled inverse
    DFT restricted to the kept coefficients.
    """
    t = np.arange(n)
    phases = -2.0 * np.pi * np.outer(mask, t) / n
    scale = math.sqrt(n / len(mask)) / math.sqrt(n)
    a = np.empty((2 * len(mask), n))
    a[0::2] = np.cos(phases) * scale
    a[1::2] = np.sin(phases) * scale
    return a


def apply(op: SensingOperator, x: np.ndarray, noise_sigma: float = 0.0,
          rng: np.random.Generator | None = None) -> np.ndarray:
    """y = A x + w with w ~ N(0, sigma^2) from the operator's seeded stream.

    Pass an explicit rng to draw noise from a caller-owned stream instead
    (used for per-sample seed derivation in parallel generation).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (op.n,):
        raise DimensionError(f"apply expects length-{op.n} vector, got shape {x.shape}")
    if noise_sigma < 0:
        raise ParameterError(f"noise_sigma must be >= 0, got {noise_sigma}")
    y = op.matrix @ x
    if noise_sigma > 0:
        stream = rng if rng is not None else op._noise_rng
        y = y + noise_sigma * stream.standard_normal(op.m)
    return y


def adjoint(op: SensingOperator, r: np.ndarray) -> np.ndarray:
    """A^T r (the conjugate-transpose map for the real-stacked Fourier kind)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (op.m,):
        raise DimensionError(f"adjoint expects length-{op.m} vector, got shape {r.shape}")
    return op.matrix.T @ r


@dataclass
class SparseSignal:
    """A k-sparse vector: sorted support indices plus the values they carry."""

    n: int
    support: np.ndarray
    values: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.intp)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.support.size != self.values.size:
            raise DimensionError("support and values must have equal length")
        if self.support.size and (
            np.any(np.diff(self.support) <= 0)
            or self.support[0] < 0
            or self.support[-1] >= self.n
        ):
            raise ParameterError("support indices must be strictly increasing and < n")

    @property
    def k(self) -> int:
        return int(self.support.size)

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.support] = self.values
        return x


def generate_ksparse(n: int, k: int, seed: int, value_dist: str = "gaussian",
                     normalize: bool = True) -> SparseSignal:
    """Uniformly random support of size k with values from value_dist."""
    if k > n or k < 0:
        raise ParameterError(f"need 0 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    support = np.sort(rng.choice(n, size=k, replace=False)) if k else np.empty(0, dtype=np.intp)
    if value_dist == "gaussian":
        values = rng.standard_normal(k)
    elif value_dist == "uniform":
        values = rng.uniform(-1.0, 1.0, size=k)
    elif value_dist == "pm_one":
        values = rng.choice([-1.0, 1.0], size=k)
    else:
        raise ParameterError(f"unknown value_dist {value_dist!r}")
    if normalize and k:
        values = values / np.linalg.norm(values)
    return SparseSignal(n=n, support=support, values=values)


EXACT_ENUMERATION = "exact_enumeration"
MONTE_CARLO = "monte_carlo"


@dataclass
class RipEstimate:
    """Isometry constant of order 2k: exact over all supports, or a sampled lower bound."""

    order: int
    delta: float
    method: str
    count: int

    @property
    def is_lower_bound(self) -> bool:
        return self.method == MONTE_CARLO


def estimate_rip(op: SensingOperator, k: int, method: str = EXACT_ENUMERATION,
                 budget: int = 10_000, seed: int = 0,
                 cap: int = ENUMERATION_CAP) -> RipEstimate:
    """Estimate delta_2k, the smallest c with (1-c)|z|^2 <= |Az|^2 <= (1+c)|z|^2
    over 2k-sparse z.

    Exact enumeration scans every size-2k support and the eigenvalues of its
    Gram matrix; it refuses (never silently falls back) when C(n, 2k) exceeds
    the cap. Monte Carlo maxes |(|Az|^2 - 1)| over random unit 2k-sparse
    draws and is therefore a lower bound.
    """
    order = 2 * k
    if order > min(op.m, op.n):
        raise ParameterError(
            f"RIP order 2k={order} exceeds min(m, n)={min(op.m, op.n)}"
        )
    if method == EXACT_ENUMERATION:
        n_supports = math.comb(op.n, order)
        if n_supports > cap:
            raise EnumerationCapExceeded(
                f"C({op.n}, {order}) = {n_supports} supports exceeds cap {cap}; "
                "request monte_carlo explicitly instead"
            )
        delta = 0.0
        for s in combinations(range(op.n), order):
            sub = op.matrix[:, s]
            eigs = np.linalg.eigvalsh(sub.T @ sub)
            delta = max(delta, float(np.max(np.abs(eigs - 1.0))))
        return RipEstimate(order=order, delta=delta, method=method, count=n_supports)
    if method == MONTE_CARLO:
        if budget < 1:
            raise ParameterError(f"monte_carlo budget must be >= 1, got {budget}")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xB1,)))
        delta = 0.0
        for _ in range(budget):
            support = rng.choice(op.n, size=order, replace=False)
            z = rng.standard_normal(order)
            z /= np.linalg.norm(z)
            az = op.matrix[:, support] @ z
            delta = max(delta, abs(float(az @ az) - 1.0))
        return RipEstimate(order=order, delta=delta, method=method, count=budget)
    raise ParameterError(f"unknown RIP method {method!r}")


# ---- serialization ----------------------------------------------------------


def save_operator(op: SensingOperator, path: str | Path) -> None:
    """JSON header next to a little-endian f64 blob (dense kinds) or an
    embedded index list (masked Fourier)."""
    path = Path(path)
    header = {
        "kind": op.kind,
        "m": op.m,
        "n": op.n,
        "seed": op.seed,
        "flags": {"column_normalized": op.column_normalized},
    }
    if op.kind == FOURIER_MASKED:
        header["mask"] = [int(i) for i in op.mask]
    else:
        header["coefficients"] = path.with_suffix(".bin").name
        path.with_suffix(".bin").write_bytes(
            np.ascontiguousarray(op.matrix, dtype="<f8").tobytes()
        )
    path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")


def load_operator(path: str | Path) -> SensingOperator:
    path = Path(path)
    header = json.loads(path.read_text())
    kind, m, n = header["kind"], header["m"], header["n"]
    if kind == FOURIER_MASKED:
        mask = np.asarray(header["mask"], dtype=np.intp)
        matrix = _fourier_rows(n, mask)
        return SensingOperator(kind, m, n, header["seed"], matrix,
                               column_normalized=header["flags"]["column_normalized"],
                               mask=mask)
    blob = (path.parent / header["coefficients"]).read_bytes()
    matrix = np.frombuffer(blob, dtype="<f8")
    if matrix.size != m * n:
        raise DimensionError(
            f"coefficient blob holds {matrix.size} values, expected {m * n}"
        )
    return SensingOperator(kind, m, n, header["seed"], matrix.reshape(m, n).copy(),
                           column_normalized=header["flags"]["column_normalized"])

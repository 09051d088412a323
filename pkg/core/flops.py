"""
Analytic floating point operation accounting for the dense triangular kernels.

Counts follow the usual dense linear algebra conventions: one fused
multiply-add is two flops and only the dominant loops of each kernel are
counted. Counts describe the structure-exploiting algorithm a kernel
implements, independent of the LAPACK routine that executes it.
"""

from collections import defaultdict
from typing import Dict, Iterable, Optional

# Buckets that are reported but not part of an update's headline cost
EXCLUDED_BUCKETS = ("retriangularize",)


class FlopCounter:
    """
    Per-call flop accumulator with named buckets
    """

    def __init__(self):
        self.buckets: Dict[str, float] = defaultdict(float)

    def add(self, bucket: str, flops: float) -> None:
        self.buckets[bucket] += float(flops)

    @property
    def total(self) -> float:
        """Headline count, excluding bookkeeping buckets"""
        return sum(v for k, v in self.buckets.items() if k not in EXCLUDED_BUCKETS)

    @property
    def total_with_excluded(self) -> float:
        return sum(self.buckets.values())

    def merge(self, other: "FlopCounter") -> "FlopCounter":
        for key, value in other.buckets.items():
            self.buckets[key] += value
        return self

    def as_dict(self) -> Dict[str, float]:
        return dict(sorted(self.buckets.items()))

    def __repr__(self) -> str:
        return f"FlopCounter(total={self.total:.0f}, buckets={self.as_dict()})"


def count(counter: Optional[FlopCounter], bucket: str, flops: float) -> None:
    """Add to the counter when one is attached"""
    if counter is not None:
        counter.add(bucket, flops)


def householder_qr_flops(rows: int, cols: int) -> float:
    """R-only Householder QR of a dense rows x cols matrix"""
    if rows <= 0 or cols <= 0:
        return 0.0
    return 2.0 * rows * cols * cols - (2.0 / 3.0) * cols ** 3


def stacked_qr_flops(dense_rows: int, cols: int) -> float:
    """QR of a dense block stacked on an upper triangular cols x cols block"""
    return 2.0 * dense_rows * cols * cols


def cholesky_flops(n: int) -> float:
    return n ** 3 / 3.0


def triangular_solve_flops(n: int, rhs_cols: int, rhs_triangular: bool = False) -> float:
    """Solve with an n x n triangular factor; a triangular right-hand side halves the work"""
    if rhs_triangular:
        return n ** 3 / 3.0
    return float(n * n * rhs_cols)


def trapezoid_solve_flops(k: int, n: int) -> float:
    """Solve a k x k triangular system against a k x n upper trapezoidal right-hand side"""
    return k ** 3 / 3.0 + float(k * k * max(n - k, 0))


def triangular_product_flops(columns: Iterable[int], rhs_cols: int) -> float:
    """Upper triangular rows restricted to the given columns times a dense block"""
    return 2.0 * rhs_cols * sum(int(c) + 1 for c in columns)


def gram_flops(rows: int, inner: int) -> float:
    """Symmetric product A A^T of a rows x inner matrix (one triangle)"""
    return float(rows * rows * inner)


def gemm_flops(a: int, b: int, c: int) -> float:
    return 2.0 * a * b * c


def mean_update_flops(m: int, ncols: int, k: int, n: int) -> float:
    """H^T R^-1 r followed by the two triangular mat-vecs of the mean correction"""
    return 2.0 * m * ncols + 2.0 * k * k + 2.0 * k * max(n - k, 0)


# Leading-order predictions of the update forms (n state, m measurement rows)

def predicted_update_flops(backend: str, m: int, n: int) -> float:
    if backend == "llt":
        return 2.0 * m * n * n + (2.0 / 3.0) * n ** 3
    if backend == "pqr":
        return 3.0 * m * n * n + (1.0 / 3.0) * n ** 3
    if backend == "potter":
        return 6.0 * m * n * n
    if backend == "carlson":
        return 3.5 * m * n * n
    if backend == "kaminski":
        return 2.0 * m * m * n + 5.0 * m * n * n + (4.0 / 3.0) * n ** 3
    raise ValueError(f"Unknown backend: {backend}")

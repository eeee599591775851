"""Curvature diagnostics: Gershgorin disc statistics, eigenvalue perturbation
under off-diagonal Gaussian noise, 2-D DFT and SNR, factored-curvature
diagonal summaries, PCA and the training-trajectory recorder.

The symmetric eigensolver is a cyclic Jacobi iteration (off-diagonal norm
tolerance 1e-12), adequate for the diagnostic matrix sizes used here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .tensor import Rng


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("expected a square matrix")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise InputError("matrix must be symmetric")
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = max(1.0, np.abs(a).max())
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)
    return eigvals[order], v[:, order]


@dataclass
class DiscSet:
    centers: np.ndarray
    radii: np.ndarray
    dominance: np.ndarray  # |a_ii| / R_i, inf where R_i == 0
    eigenvalues: np.ndarray
    contained: bool  # every eigenvalue inside the union of discs

    def to_csv(self, path, layer: str = "") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "row", "center", "radius"])
            for i, (c, r) in enumerate(zip(self.centers, self.radii)):
                w.writerow([layer, i, repr(float(c)), repr(float(r))])


def gershgorin(matrix: np.ndarray, eig_tol: float = 1e-9) -> DiscSet:
    """Disc centers/radii plus an eigensolver-backed containment check."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("expected a square matrix")
    centers = np.diag(a).copy()
    radii = np.sum(np.abs(a), axis=1) - np.abs(centers)
    with np.errstate(divide="ignore"):
        dominance = np.where(radii > 0, np.abs(centers) / np.where(radii > 0, radii, 1.0), np.inf)
    if np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        eigvals, _ = jacobi_eigh(a)
    else:
        eigvals = np.sort(np.linalg.eigvals(a).real)  # non-symmetric fallback
    contained = all(
        np.any(np.abs(lam - centers) <= radii + eig_tol) for lam in eigvals
    )
    return DiscSet(centers, radii, dominance, eigvals, contained)


def kaiser_count(eigvals: np.ndarray) -> int:
    """Number of eigenvalues with magnitude above 1."""
    return int(np.sum(np.abs(eigvals) > 1.0))


@dataclass
class PerturbResult:
    eig_mags_before: np.ndarray  # sorted descending
    eig_mags_after: np.ndarray
    kaiser_before: int
    kaiser_after: int


def perturb_offdiag(matrix: np.ndarray, sigma: float, seed: int) -> PerturbResult:
    """Add symmetric N(0, sigma^2) noise off-diagonal and compare spectra."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("expected a square matrix")
    n = a.shape[0]
    noise = np.zeros_like(a)
    if sigma > 0:
        rng = Rng(seed)
        upper = rng.normal((n, n)) * sigma
        iu = np.triu_indices(n, 1)
        noise[iu] = upper[iu]
        noise = noise + noise.T  # keep the perturbed matrix symmetric
    before, _ = jacobi_eigh(a)
    after, _ = jacobi_eigh(a + noise)
    mags_b = np.sort(np.abs(before))[::-1]
    mags_a = np.sort(np.abs(after))[::-1]
    return PerturbResult(mags_b, mags_a, kaiser_count(before), kaiser_count(after))


def fft2(matrix: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT: F[k,l] = sum_pq A[p,q] e^{-2*pi*i(pk/m + ql/n)}."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError("expected a 2-D matrix")
    return np.fft.fft2(a)


@dataclass
class SnrResult:
    db: float
    infinite: bool = False


def snr(m: np.ndarray, m_hat: np.ndarray) -> SnrResult:
    """10*log10( sum_i |m_ii|^2 / sum_{j>i} |m_hat_ij|^2 )."""
    m = np.asarray(m)
    m_hat = np.asarray(m_hat)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m_hat.shape != m.shape:
        raise DimensionError("expected equally sized square matrices")
    num = float(np.sum(np.abs(np.diag(m)) ** 2))
    iu = np.triu_indices(m.shape[0], 1)
    den = float(np.sum(np.abs(m_hat[iu]) ** 2))
    if den == 0.0:
        return SnrResult(math.inf, infinite=True)
    return SnrResult(10.0 * math.log10(num / den), infinite=False)


def fim_hist_stats(diag: np.ndarray) -> dict[str, float]:
    """Streaming summary of one step's curvature diagonal."""
    v = np.asarray(diag, dtype=np.float64).ravel()
    if v.size == 0:
        raise InputError("empty diagonal")
    q = np.quantile(v, [0.01, 0.25, 0.50, 0.75, 0.99])
    return {
        "mean": float(v.mean()),
        "std": float(v.std()),
        "q01": float(q[0]),
        "q25": float(q[1]),
        "q50": float(q[2]),
        "q75": float(q[3]),
        "q99": float(q[4]),
    }


def pca2(dataset: np.ndarray) -> np.ndarray:
    """Project N x d data onto the top-2 principal components.

    Columns are centered; component sign is fixed by making each eigenvector's
    largest-magnitude entry positive.
    """
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise DimensionError("expected an N x d matrix with N, d >= 2")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    top = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
    for j in range(top.shape[1]):
        k = np.argmax(np.abs(top[:, j]))
        if top[k, j] < 0:
            top[:, j] = -top[:, j]
    return xc @ top


@dataclass
class TrajectoryLog:
    """Per-epoch record of the tracked 2-D first-layer weight and its loss."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def record(self, epoch: int, w1, loss: float) -> "TrajectoryLog":
        w1 = np.asarray(w1, dtype=np.float64).ravel()
        if w1.size != 2:
            raise DimensionError("tracked weight must be 2-dimensional")
        if self.rows and epoch <= self.rows[-1][0]:
            raise InputError("epochs must be strictly increasing")
        self.rows.append((int(epoch), float(w1[0]), float(w1[1]), float(loss)))
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "w1", "w2", "loss"])
            for row in self.rows:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def record_trajectory(log: TrajectoryLog, epoch: int, w1, loss: float) -> TrajectoryLog:
    return log.record(epoch, w1, loss)

"""Per-point local geometric features.

For every point the neighbourhood is the point itself plus its k nearest
neighbours. From it we take

* ``c_lambda``: smallest eigenvalue of the neighbourhood covariance over the
  eigenvalue sum. It is 0 for flat or linear patches and 1/3 for isotropic
  scatter.
* ``rho``: mean distance from the point to its k neighbours.

The feature row fed to the classifier is ``(x, y, z, c_lambda, rho)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .spatial import CHUNK, knn_many

# Covariances whose trace falls below this (m^2) count as degenerate.
EPS_TRACE = 1e-12


def local_covariance(cloud, nbh) -> np.ndarray:
    """Covariance of a centre point together with its neighbours.

    The centre is included as one of the ``k + 1`` samples and the divisor
    is ``k + 1`` (population form).
    """
    pts = np.vstack([cloud.points[nbh.center_index][None, :],
                     cloud.points[nbh.neighbor_indices]])
    return covariance_batch(pts[None])[0]


def covariance_batch(groups: np.ndarray) -> np.ndarray:
    """Population covariance for each group of shape (m, n, 3) -> (m, 3, 3)."""
    mean = groups.mean(axis=1, keepdims=True)
    centered = groups - mean
    cov = np.einsum("mni,mnj->mij", centered, centered) / groups.shape[1]
    # Exact symmetry regardless of summation order.
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


def _null_vector(mat, lam):
    """Unit vector spanning the null space of ``mat - lam*I`` (rank-2 case)."""
    m = mat - lam[:, None, None] * np.eye(3)
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    crosses = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.einsum("mcd,mcd->mc", crosses, crosses)
    best = np.argmax(norms, axis=1)
    v = crosses[np.arange(len(best)), best]
    ok = norms[np.arange(len(best)), best] > 0
    v = np.where(ok[:, None], v, np.array([0.0, 0.0, 1.0]))
    return _unit(v)


def _complement(v):
    """Two unit vectors completing ``v`` to an orthonormal basis."""
    absv = np.abs(v)
    axis = np.argmin(absv, axis=1)
    e = np.zeros_like(v)
    e[np.arange(len(axis)), axis] = 1.0
    u = _unit(np.cross(v, e))
    w = np.cross(v, u)
    return u, w


def eigh_sym3(mats):
    """Eigen-decomposition of a batch of symmetric 3x3 matrices.

    The trigonometric closed form gives first estimates. The eigenvalue
    farthest from the other two is then refined by a Rayleigh quotient on
    its eigenvector. The remaining pair comes from the exact 2x2 problem in
    the orthogonal complement. This keeps every eigenvalue accurate to
    roundoff relative to the matrix norm, even for repeated eigenvalues,
    where the bare trigonometric form loses about half the digits.

    Parameters
    ----------
    mats : array_like, shape (m, 3, 3) or (3, 3)

    Returns
    -------
    values : ndarray, shape (m, 3)
        Eigenvalues in descending order.
    v_min : ndarray, shape (m, 3)
        Unit eigenvector of the smallest eigenvalue. For a zero matrix it is
        ``(0, 0, 1)``.
    """
    a = np.asarray(mats, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    m = a.shape[0]
    # Power-of-two rescaling keeps squares and determinants clear of
    # underflow and overflow without perturbing any mantissa.
    scale = np.ldexp(1.0, np.frexp(np.abs(a).max(axis=(1, 2)))[1])
    scale = np.where(np.abs(a).max(axis=(1, 2)) > 0, scale, 1.0)
    a = a / scale[:, None, None]

    q = np.trace(a, axis1=1, axis2=2) / 3.0
    p1 = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
    p2 = ((a[:, 0, 0] - q) ** 2 + (a[:, 1, 1] - q) ** 2 + (a[:, 2, 2] - q) ** 2
          + 2.0 * p1)
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    b = (a - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_hi = q + 2.0 * p * np.cos(phi)
    lam_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)

    # r >= 0: the top eigenvalue is the isolated one; otherwise the bottom.
    top_isolated = r >= 0
    lam_iso = np.where(top_isolated, lam_hi, lam_lo)
    v_iso = _null_vector(a, lam_iso)
    lam_iso = np.einsum("mi,mij,mj->m", v_iso, a, v_iso)

    u, w = _complement(v_iso)
    au = np.einsum("mij,mj->mi", a, u)
    aw = np.einsum("mij,mj->mi", a, w)
    a11 = np.einsum("mi,mi->m", u, au)
    a12 = np.einsum("mi,mi->m", u, aw)
    a22 = np.einsum("mi,mi->m", w, aw)
    mid = 0.5 * (a11 + a22)
    rad = np.hypot(0.5 * (a11 - a22), a12)
    mu_hi = mid + rad
    mu_lo = mid - rad

    # Eigenvector of mu_lo inside span{u, w}.
    c1 = np.stack([a12, mu_lo - a11], axis=1)
    c2 = np.stack([mu_lo - a22, a12], axis=1)
    n1 = np.einsum("mi,mi->m", c1, c1)
    n2 = np.einsum("mi,mi->m", c2, c2)
    coef = np.where((n1 >= n2)[:, None], c1, c2)
    degenerate = np.maximum(n1, n2) == 0
    coef = np.where(degenerate[:, None], np.array([1.0, 0.0]), coef)
    v_pair_lo = _unit(coef[:, :1] * u + coef[:, 1:] * w)

    vals = np.empty((m, 3))
    vals[:, 0] = np.where(top_isolated, lam_iso, mu_hi)
    vals[:, 1] = np.where(top_isolated, mu_hi, mu_lo)
    vals[:, 2] = np.where(top_isolated, mu_lo, lam_iso)
    v_min = np.where(top_isolated[:, None], v_pair_lo, v_iso)

    # Scalar matrices: every direction is an eigenvector.
    flat = p == 0
    if np.any(flat):
        vals[flat] = q[flat, None]
        v_min[flat] = (0.0, 0.0, 1.0)
    # Roundoff can swap near-equal values; keep the contract strictly sorted.
    vals = -np.sort(-vals, axis=1) * scale[:, None]
    if single:
        return vals[0], v_min[0]
    return vals, v_min


def eigenvalues_sym3(mat) -> np.ndarray:
    """Eigenvalues of a symmetric 3x3 matrix (or batch), descending."""
    return eigh_sym3(mat)[0]


def change_of_curvature(eigs) -> np.ndarray | float:
    """Smallest eigenvalue over the eigenvalue sum, clipped to [0, 1/3].

    Normalising the eigenvalues to sum 1 and dividing by that sum again
    gives the same value. Traces below ``EPS_TRACE`` map to 0.
    """
    e = np.asarray(eigs, dtype=np.float64)
    total = e.sum(axis=-1)
    safe = np.where(total >= EPS_TRACE, total, 1.0)
    c = np.where(total >= EPS_TRACE, e[..., 2] / safe, 0.0)
    c = np.clip(c, 0.0, 1.0 / 3.0)
    return float(c) if c.ndim == 0 else c


def local_density(nbh_or_distances) -> float:
    d = getattr(nbh_or_distances, "distances", nbh_or_distances)
    return float(np.mean(d))


def _feature_block(points, centers, nbr, dist):
    groups = np.concatenate([points[centers][:, None, :], points[nbr]], axis=1)
    vals, _ = eigh_sym3(covariance_batch(groups))
    out = np.empty((len(centers), 5))
    out[:, :3] = points[centers]
    out[:, 3] = change_of_curvature(vals)
    out[:, 4] = dist.mean(axis=1)
    return out


def compute_features(cloud, index, k: int = 100, indices=None, workers: int = 1) -> np.ndarray:
    """Feature rows ``(x, y, z, c_lambda, rho)``.

    Parameters
    ----------
    cloud : PointCloud
    index : SpatialIndex
        Built over ``cloud``.
    k : int
        Neighbourhood size, excluding the point itself.
    indices : array_like, optional
        Points to compute; defaults to every point in cloud order.
    workers : int
        Thread count. Output is identical for any value.

    Returns
    -------
    numpy.ndarray, shape (len(indices), 5)
    """
    centers = np.arange(len(cloud)) if indices is None else np.asarray(indices, dtype=np.int64)
    out = np.empty((len(centers), 5))

    def run(start):
        sl = slice(start, min(start + CHUNK, len(centers)))
        nbr, dist = knn_many(index, centers[sl], k)
        out[sl] = _feature_block(cloud.points, centers[sl], nbr, dist)

    starts = range(0, len(centers), CHUNK)
    if workers > 1 and len(centers) > CHUNK:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out

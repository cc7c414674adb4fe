"""Core two-view geometry.

Sampson error, the 8-point and 7-point fundamental-matrix solvers,
similarity-based expansion of a single feature match into four point
correspondences, and ground-truth fundamental matrices from known cameras.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class DegenerateConfiguration(Exception):
    """Input points do not constrain a fundamental matrix."""


class NoEpipolarGeometry(Exception):
    """Camera pair has coincident centers; no fundamental matrix exists."""


class InvalidFeature(Exception):
    """Feature has a non-positive scale or non-finite geometry."""


class PointPair(NamedTuple):
    """A pixel correspondence: x1 in image 1, x2 in image 2 (each a 2-vector)."""

    x1: np.ndarray
    x2: np.ndarray


class FundamentalMatrix:
    """3x3 rank-2 matrix in canonical form.

    Construction zeroes the smallest singular value, rescales to unit
    Frobenius norm, and flips the sign so the largest-magnitude entry is
    positive. Two estimates of the same epipolar geometry therefore compare
    directly as arrays.
    """

    __slots__ = ("m",)

    def __init__(self, m: np.ndarray):
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("fundamental matrix must be a finite 3x3 array")
        u, s, vt = np.linalg.svd(m)
        if s[1] <= 1e-15 * max(s[0], 1e-300):
            raise DegenerateConfiguration("matrix has rank < 2")
        f = (u[:, :2] * s[:2]) @ vt[:2, :]
        f /= np.linalg.norm(f)
        # argmax of |entries| is deterministic (first maximum in row-major order)
        if f.flat[np.abs(f).argmax()] < 0:
            f = -f
        f.setflags(write=False)
        self.m = f

    def __repr__(self) -> str:  # pragma: no cover
        return f"FundamentalMatrix({self.m.tolist()})"


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics K, world-to-camera rotation R, translation t."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if abs(np.linalg.det(R) - 1.0) > 1e-8 or np.abs(R.T @ R - np.eye(3)).max() > 1e-10:
            raise ValueError("R must be a proper rotation")
        if abs(K[1, 0]) > 0 or abs(K[2, 0]) > 0 or abs(K[2, 1]) > 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("K must be upper triangular with positive diagonal")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (n,3) world points; returns (n,2) pixels and (n,) depths."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        cam = pts @ self.R.T + self.t
        pix = cam @ self.K.T
        return pix[:, :2] / pix[:, 2:3], cam[:, 2]


def hom(points: np.ndarray) -> np.ndarray:
    """Append a unit homogeneous coordinate to (n,2) pixel points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hstack([pts, np.ones((len(pts), 1))])


def sampson_distances(f: np.ndarray, x1h: np.ndarray, x2h: np.ndarray) -> np.ndarray:
    """First-order geometric distances (pixels) for homogeneous point arrays.

    This is the square root of the classic Sampson error. A vanishing
    denominator yields +inf (nan when the numerator also vanishes maps to
    +inf as well), so degenerate rows never count as support.
    """
    a = x1h @ f.T          # rows: (F x1)^T
    b = x2h @ f            # rows: (F^T x2)^T
    num = np.abs(np.einsum("ij,ij->i", x2h, a))
    den = np.sqrt(a[:, 0] ** 2 + a[:, 1] ** 2 + b[:, 0] ** 2 + b[:, 1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = num / den
    return np.where(np.isnan(d), np.inf, d)


def sampson_distance(f: FundamentalMatrix | np.ndarray, pair: PointPair) -> float:
    """Sampson distance in pixels for one correspondence."""
    m = f.m if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
    return float(sampson_distances(m, hom(pair.x1), hom(pair.x2))[0])


def _pairs_to_arrays(pairs: Sequence[PointPair]) -> tuple[np.ndarray, np.ndarray]:
    x1 = np.asarray([p.x1 for p in pairs], dtype=float).reshape(-1, 2)
    x2 = np.asarray([p.x2 for p in pairs], dtype=float).reshape(-1, 2)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValueError("point pairs must be finite")
    return x1, x2


def _hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin and RMS radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(((pts - centroid) ** 2).sum(axis=1).mean())
    if rms < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _design_matrix(x1h: np.ndarray, x2h: np.ndarray) -> np.ndarray:
    # row i = kron(x2_i, x1_i); F flattened row-major solves A f = 0
    return np.einsum("ni,nj->nij", x2h, x1h).reshape(-1, 9)


def eight_point(pairs: Sequence[PointPair]) -> FundamentalMatrix:
    """Hartley-normalized linear solver for n >= 8 correspondences.

    Raises DegenerateConfiguration when the design matrix has rank < 8
    (e.g. all points collinear in one image).
    """
    if len(pairs) < 8:
        raise DegenerateConfiguration(f"need >= 8 pairs, got {len(pairs)}")
    x1, x2 = _pairs_to_arrays(pairs)
    t1 = _hartley_transform(x1)
    t2 = _hartley_transform(x2)
    a = _design_matrix(hom(x1) @ t1.T, hom(x2) @ t2.T)
    _, s, vt = np.linalg.svd(a)
    if s[7] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("design matrix rank < 8")
    f_norm = vt[-1].reshape(3, 3)
    return FundamentalMatrix(t2.T @ f_norm @ t1)


def _cubic_coeffs(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Coefficients [c3, c2, c1, c0] of det(f1 + lam * f2)."""
    d0 = np.linalg.det(f1)
    d1 = np.linalg.det(f1 + f2)
    dm1 = np.linalg.det(f1 - f2)
    d2 = np.linalg.det(f1 + 2.0 * f2)
    c0 = d0
    c2 = 0.5 * (d1 + dm1) - c0
    c3 = ((d2 - c0 - 4.0 * c2) - (d1 - dm1)) / 6.0
    c1 = 0.5 * (d1 - dm1) - c3
    return np.array([c3, c2, c1, c0])


def seven_point(pairs: Sequence[PointPair]) -> list[FundamentalMatrix]:
    """Minimal solver: 1-3 fundamental matrices through exactly 7 pairs."""
    if len(pairs) != 7:
        raise DegenerateConfiguration(f"need exactly 7 pairs, got {len(pairs)}")
    x1, x2 = _pairs_to_arrays(pairs)
    t1 = _hartley_transform(x1)
    t2 = _hartley_transform(x2)
    a = _design_matrix(hom(x1) @ t1.T, hom(x2) @ t2.T)
    _, s, vt = np.linalg.svd(a)
    if s[6] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("design matrix rank < 7")
    f1 = vt[-2].reshape(3, 3)
    f2 = vt[-1].reshape(3, 3)
    coeffs = _cubic_coeffs(f1, f2)
    scale = np.abs(coeffs).max()
    if scale == 0.0:
        raise DegenerateConfiguration("singular matrix pencil")
    coeffs = coeffs / scale

    candidates: list[np.ndarray] = []
    if abs(coeffs[0]) < 1e-12:
        # root at infinity: f2 itself is (near) rank 2
        candidates.append(f2)
    nz = np.nonzero(np.abs(coeffs) > 1e-12)[0]
    if len(nz):
        roots = np.roots(coeffs[nz[0]:])
        for r in roots:
            if abs(r.imag) <= 1e-8 * (1.0 + abs(r.real)):
                candidates.append(f1 + r.real * f2)

    out: list[FundamentalMatrix] = []
    for cand in candidates:
        try:
            fm = FundamentalMatrix(t2.T @ cand @ t1)
        except DegenerateConfiguration:
            continue
        out.append(fm)
    if not out:
        raise DegenerateConfiguration("no real rank-2 solution")
    return out[:3]


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


_EXPAND_OFFSETS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def expand_match_similarity(p1, p2, offset_scale: float = 5.0) -> list[PointPair]:
    """Expand one feature match into 4 point pairs via the local similarity.

    Besides the feature centers, three virtual points are placed at
    offset_scale * scale along each feature's orientation, its perpendicular,
    and its negation; the image-2 points are the image-1 offsets mapped by
    the similarity (rotation by the orientation difference, scaled by the
    scale ratio) anchored at p2.
    """
    for p in (p1, p2):
        if not (p.scale > 0.0) or not np.isfinite(p.orientation):
            raise InvalidFeature("feature needs positive scale and finite orientation")
    c1 = np.array([p1.x, p1.y], dtype=float)
    c2 = np.array([p2.x, p2.y], dtype=float)
    r1 = _rot2(p1.orientation) * (offset_scale * p1.scale)
    r2 = _rot2(p2.orientation) * (offset_scale * p2.scale)
    pairs = [PointPair(c1, c2)]
    for u in _EXPAND_OFFSETS:
        pairs.append(PointPair(c1 + r1 @ u, c2 + r2 @ u))
    return pairs


def f_from_two_2kp(a, b, feats1, feats2, offset_scale: float = 5.0) -> FundamentalMatrix:
    """Fundamental matrix from two 2keypoint matches (4 real correspondences).

    Each of the four feature matches is expanded to 4 point pairs, and the
    8-point solver is run on the 16 pairs. The two matches must not share a
    feature index in either image.
    """
    idx1 = (a.p1, a.n1, b.p1, b.n1)
    idx2 = (a.p2, a.n2, b.p2, b.n2)
    if len(set(idx1)) < 4 or len(set(idx2)) < 4:
        raise DegenerateConfiguration("2keypoint matches share a feature index")
    pairs: list[PointPair] = []
    for i1, i2 in zip(idx1, idx2):
        pairs.extend(expand_match_similarity(feats1[i1], feats2[i2], offset_scale))
    return eight_point(pairs)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def fundamental_from_cameras(c1: CameraModel, c2: CameraModel) -> FundamentalMatrix:
    """Ground-truth F with x2^T F x1 = 0 for projections of any world point."""
    baseline = c1.center - c2.center
    if np.linalg.norm(baseline) < 1e-12 * (1.0 + np.linalg.norm(c1.center)):
        raise NoEpipolarGeometry("camera centers coincide")
    r_rel = c2.R @ c1.R.T
    t_rel = c2.t - r_rel @ c1.t
    f = np.linalg.inv(c2.K).T @ _skew(t_rel) @ r_rel @ np.linalg.inv(c1.K)
    return FundamentalMatrix(f)

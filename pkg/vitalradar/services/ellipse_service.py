"""
Ellipse modeling of 2D body silhouettes.

A split-and-refit scheme: start with one direct least-squares ellipse, then
repeatedly split the worst-covered cluster in two and refit each half, until
every point lies within the coverage tolerance or the ellipse budget is spent.
A split peels off the part ellipse that most cluster points agree with; the
principal-axis 2-means split is the fallback.
"""

import logging
import math

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from vitalradar.core.exceptions import FitException
from vitalradar.schemas.posture_schemas import Ellipse, normalize_rotation

logger = logging.getLogger(__name__)

MIN_POINTS = 6
BOUNDARY_SAMPLES = 256
BOUNDARY_SPACING = 0.002
MAX_BOUNDARY_SAMPLES = 8192
# Seed arcs and consensus
ARC_NEIGHBORS = 12
MAX_SEEDS = 48
INLIER_TOL = 0.008
CONSENSUS_ITERATIONS = 5
TORSO_LABEL = "torso"


def fit_conic(points: np.ndarray) -> np.ndarray:
    """
    Direct least-squares ellipse-specific conic fit (Halir & Flusser).

    Args:
        points: (N, 2) coordinates, N >= 6

    Returns:
        Conic coefficients (A, B, C, D, E, F) of A x^2 + B xy + C y^2 + D x + E y + F = 0

    Raises:
        FitException: If the scatter matrices are singular or no ellipse solution exists
    """
    x, y = np.asarray(points, dtype=float).T
    d1 = np.column_stack((x**2, x * y, y**2))
    d2 = np.column_stack((x, y, np.ones_like(x)))
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise FitException("conic fit on degenerate point set") from exc

    m = s1 + s2 @ t
    m = np.vstack((m[2] / 2.0, -m[1], m[0] / 2.0))
    _, vectors = np.linalg.eig(m)
    vectors = np.real(vectors)
    condition = 4.0 * vectors[0] * vectors[2] - vectors[1] ** 2
    candidates = np.flatnonzero(condition > 0)
    if candidates.size == 0:
        raise FitException("no ellipse-specific conic solution")
    a1 = vectors[:, candidates[0]]
    return np.concatenate((a1, t @ a1))


def conic_to_ellipse(coefficients: np.ndarray, label: str | None = None) -> Ellipse:
    """
    Center, semi-axes and rotation of an ellipse conic.

    Raises:
        FitException: If the conic is not a real ellipse
    """
    a, b, c, d, e, f = coefficients
    matrix = np.array([[a, b / 2.0], [b / 2.0, c]])
    try:
        center = -0.5 * np.linalg.solve(matrix, np.array([d, e]))
    except np.linalg.LinAlgError as exc:
        raise FitException("conic has no center") from exc
    scale = center @ matrix @ center - f
    if scale == 0 or not np.isfinite(scale):
        raise FitException("degenerate conic")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix / scale)
    if not np.all(np.isfinite(eigenvalues)) or np.any(eigenvalues <= 0):
        raise FitException("conic is not an ellipse")
    # Smallest eigenvalue belongs to the major axis
    major = eigenvectors[:, 0]
    return Ellipse(
        center=(float(center[0]), float(center[1])),
        semi_axes=(float(1.0 / math.sqrt(eigenvalues[0])), float(1.0 / math.sqrt(eigenvalues[1]))),
        rotation=normalize_rotation(math.atan2(major[1], major[0])),
        label=label,
    )


def fit_single_ellipse(points: np.ndarray) -> Ellipse:
    """
    One ellipse through a point set, fitted in normalized coordinates.

    Raises:
        FitException: If fewer than 6 points are given or the fit is degenerate
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < MIN_POINTS:
        raise FitException(f"ellipse fit needs at least {MIN_POINTS} points, got {len(points)}")
    origin = points.mean(axis=0)
    scale = float(np.sqrt(np.mean(np.sum((points - origin) ** 2, axis=1))))
    if scale == 0:
        raise FitException("ellipse fit on coincident points")
    normalized = (points - origin) / scale
    singular = np.linalg.svd(normalized, compute_uv=False)
    if singular[-1] <= 1e-9 * singular[0]:
        raise FitException("ellipse fit on collinear points")
    unit = conic_to_ellipse(fit_conic(normalized))
    return Ellipse(
        center=tuple(origin + scale * np.asarray(unit.center)),
        semi_axes=(unit.semi_axes[0] * scale, unit.semi_axes[1] * scale),
        rotation=unit.rotation,
    )


def outline_distance(points: np.ndarray, ellipse: Ellipse) -> np.ndarray:
    """Distance of every point to the ellipse outline, sampled every 2 mm"""
    n = math.ceil(ellipse.perimeter / BOUNDARY_SPACING)
    outline = ellipse.boundary(min(MAX_BOUNDARY_SAMPLES, max(BOUNDARY_SAMPLES, n)))
    distances, _ = cKDTree(outline).query(np.asarray(points, dtype=float).reshape(-1, 2))
    return distances


def point_distances(points: np.ndarray, ellipses: list[Ellipse]) -> np.ndarray:
    """Distance of every point to every ellipse outline, shape (N, n_ellipses)"""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.column_stack([outline_distance(points, e) for e in ellipses])


def coverage_residual(points: np.ndarray, ellipses: list[Ellipse]) -> float:
    """Largest distance from any point to its nearest ellipse"""
    return float(point_distances(points, ellipses).min(axis=1).max())


def _split(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2-means split seeded at the extremes along the principal axis; returns boolean masks"""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    projection = centered @ vt[0]
    seeds = points[[int(np.argmin(projection)), int(np.argmax(projection))]]
    _, labels = kmeans2(points, seeds, minit="matrix", iter=20)
    return labels == 0, labels == 1


def _dominant_part(points: np.ndarray) -> tuple[Ellipse, np.ndarray] | None:
    """
    The ellipse that explains most of a cluster.

    Each seed point gets an ellipse fitted to its nearest neighbors, i.e. a
    short arc of one outline. The arc fit with most inliers wins and is
    refitted on its inliers until the inlier set stops growing.

    Returns:
        (ellipse, inlier mask), or None when no arc can be fitted
    """
    tree = cKDTree(points)
    k = min(ARC_NEIGHBORS, len(points))
    seeds = np.unique(np.linspace(0, len(points) - 1, min(MAX_SEEDS, len(points))).round().astype(int))

    best: Ellipse | None = None
    best_inliers = np.zeros(len(points), dtype=bool)
    for seed in seeds:
        _, neighbors = tree.query(points[seed], k=k)
        try:
            candidate = fit_single_ellipse(points[neighbors])
        except FitException:
            continue
        inliers = outline_distance(points, candidate) <= INLIER_TOL
        if inliers.sum() > best_inliers.sum():
            best, best_inliers = candidate, inliers
    if best is None:
        return None

    for _ in range(CONSENSUS_ITERATIONS):
        try:
            refit = fit_single_ellipse(points[best_inliers])
        except FitException:
            break
        inliers = outline_distance(points, refit) <= INLIER_TOL
        if inliers.sum() < best_inliers.sum():
            break
        grew = inliers.sum() > best_inliers.sum()
        best, best_inliers = refit, inliers
        if not grew:
            break
    return best, best_inliers


def _split_cluster(points: np.ndarray) -> tuple[Ellipse, Ellipse, np.ndarray] | None:
    """
    Split one cluster into its dominant part and the rest.

    Falls back to a principal-axis 2-means split when no part stands out.

    Returns:
        (first, second, mask) with mask selecting the points of first, or
        None when the cluster is a single part or cannot be split
    """
    part = _dominant_part(points)
    if part is not None and part[1].sum() >= MIN_POINTS:
        first, mask = part
        if len(points) - mask.sum() < MIN_POINTS:
            return None
    else:
        mask, _ = _split(points)
        if not MIN_POINTS <= mask.sum() <= len(points) - MIN_POINTS:
            return None
        try:
            first = fit_single_ellipse(points[mask])
        except FitException:
            return None
    try:
        second = fit_single_ellipse(points[~mask])
    except FitException:
        return None
    return first, second, mask


def fit_ellipses(
    points: np.ndarray,
    max_ellipses: int = 9,
    coverage_tol: float = 0.03,
    template: list[Ellipse] | None = None,
) -> list[Ellipse]:
    """
    Model a 2D shape with an automatically chosen number of ellipses.

    Clusters are tried worst-covered first; the first one that splits is
    replaced by its two children. The set with the smallest worst point
    distance seen so far is returned, so the residual never grows with
    max_ellipses.

    Args:
        points: (N, 2) silhouette points in the body plane
        max_ellipses: Ellipse budget
        coverage_tol: Stop once every point lies within this distance (m)
        template: Labeled part ellipses; when given, fitted ellipses are
            labeled by matching to it

    Returns:
        Fitted ellipses, labeled when a template is given

    Raises:
        FitException: If fewer than 6 points are given or the first fit is degenerate
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < MIN_POINTS:
        raise FitException(f"ellipse modeling needs at least {MIN_POINTS} points, got {len(points)}")

    ellipses = [fit_single_ellipse(points)]
    assignment = np.zeros(len(points), dtype=int)
    coverage = point_distances(points, ellipses).min(axis=1)
    residual, best = float(coverage.max()), ellipses

    while coverage.max() > coverage_tol and len(ellipses) < max_ellipses:
        worst = np.array([coverage[assignment == k].max(initial=0.0) for k in range(len(ellipses))])
        split = None
        for k in np.argsort(-worst, kind="stable"):
            members = np.flatnonzero(assignment == k)
            if worst[k] <= coverage_tol or len(members) < 2 * MIN_POINTS:
                continue
            split = _split_cluster(points[members])
            if split is not None:
                break
        if split is None:
            logger.debug("No cluster left to split at %d ellipses", len(ellipses))
            break

        first, second, mask = split
        ellipses = ellipses[:k] + [first, second] + ellipses[k + 1 :]
        assignment = np.where(assignment > k, assignment + 1, assignment)
        assignment[members[~mask]] = k + 1
        coverage = point_distances(points, ellipses).min(axis=1)
        if coverage.max() <= residual:
            residual, best = float(coverage.max()), ellipses

    logger.info("Fitted %d ellipses, worst point distance %.4f m", len(best), residual)
    if template is not None:
        best = label_ellipses(best, template)
    return best


def label_ellipses(ellipses: list[Ellipse], template: list[Ellipse]) -> list[Ellipse]:
    """
    Label fitted ellipses by minimum-cost matching of centers to a template.

    The fitted ellipse closest to the template torso is always the torso;
    the rest are matched by the Hungarian algorithm. Surplus ellipses stay
    unlabeled.
    """
    if not ellipses or not template:
        return list(ellipses)
    centers = np.array([e.center for e in ellipses])
    template_centers = np.array([t.center for t in template])
    labels: list[str | None] = [None] * len(ellipses)

    remaining_fit = list(range(len(ellipses)))
    remaining_template = list(range(len(template)))
    torso = next((i for i, t in enumerate(template) if t.label == TORSO_LABEL), None)
    if torso is not None:
        nearest = int(np.linalg.norm(centers - template_centers[torso], axis=1).argmin())
        labels[nearest] = TORSO_LABEL
        remaining_fit.remove(nearest)
        remaining_template.remove(torso)

    if remaining_fit and remaining_template:
        cost = cdist(centers[remaining_fit], template_centers[remaining_template])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            labels[remaining_fit[r]] = template[remaining_template[c]].label

    return [e.model_copy(update={"label": label}) for e, label in zip(ellipses, labels)]

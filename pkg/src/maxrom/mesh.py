"""Triangular meshes of a square domain with tagged material inclusions."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, MeshQualityError

VACUUM_TAG = 0
MIN_AREA = 1e-14
_SHAPES = ("disk", "square")


@dataclass(frozen=True)
class Inclusion:
    """A centred region whose triangles receive ``tag``.

    ``shape`` is ``"disk"`` (``x^2 + y^2 < radius^2``) or ``"square"``
    (``max(|x|, |y|) < radius``).
    """

    shape: str
    radius: float
    tag: int

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise InvalidArgumentError(f"unknown inclusion shape {self.shape!r}")
        if not self.radius > 0:
            raise InvalidArgumentError(f"inclusion radius must be positive, got {self.radius}")
        if self.tag == VACUUM_TAG:
            raise InvalidArgumentError(f"tag {VACUUM_TAG} is reserved for vacuum")

    def contains(self, x, y):
        if self.shape == "disk":
            return x * x + y * y < self.radius * self.radius
        return np.maximum(np.abs(x), np.abs(y)) < self.radius


@dataclass(frozen=True)
class Mesh:
    """Conforming triangle mesh.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 2)
    triangles : ndarray of int, shape (n_tri, 3)
        Counter-clockwise vertex indices.
    tags : ndarray of int, shape (n_tri,)
        Material tag per triangle.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        tags = np.ascontiguousarray(self.tags, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise InvalidArgumentError(f"nodes must have shape (n, 2), got {nodes.shape}")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise InvalidArgumentError(f"triangles must have shape (m, 3), got {tri.shape}")
        if tags.shape != (tri.shape[0],):
            raise InvalidArgumentError("one material tag per triangle is required")
        if tri.size and (tri.min() < 0 or tri.max() >= nodes.shape[0]):
            raise InvalidArgumentError("triangle references a node that does not exist")

        area2 = _signed_area2(nodes, tri)
        if np.any(np.abs(area2) < 2 * MIN_AREA):
            bad = int(np.argmax(np.abs(area2) < 2 * MIN_AREA))
            raise MeshQualityError(f"triangle {bad} is degenerate (area {area2[bad] / 2:.3e})")
        flip = area2 < 0
        if flip.any():
            tri = tri.copy()
            tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()

        for name, value in (("nodes", nodes), ("triangles", tri), ("tags", tags)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        edges = boundary_edges(tri)
        edges.setflags(write=False)
        object.__setattr__(self, "boundary_edges", edges)

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    def areas(self):
        return 0.5 * _signed_area2(self.nodes, self.triangles)


def _signed_area2(nodes, tri):
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    return (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (
        p2[:, 0] - p0[:, 0]
    )


def boundary_edges(triangles):
    """Edges (node pairs, oriented as in their triangle) used by one triangle only."""
    local = np.array([[0, 1], [1, 2], [2, 0]])
    edges = triangles[:, local].reshape(-1, 2)
    keys = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshQualityError("an edge is shared by more than two triangles")
    return edges[counts[inverse] == 1]


def tag_by_inclusions(centroids, inclusions):
    """Tag of the innermost inclusion containing each centroid (vacuum otherwise)."""
    tags = np.full(centroids.shape[0], VACUUM_TAG, dtype=np.int64)
    # paint from the outermost region inwards so inner ones win
    for inc in sorted(inclusions, key=lambda c: -c.radius):
        tags[inc.contains(centroids[:, 0], centroids[:, 1])] = inc.tag
    return tags


def generate_mesh(half_width, resolution, inclusions=()):
    """Structured triangulation of ``[-half_width, half_width]^2``.

    Each of the ``resolution^2`` cells is split along a diagonal whose
    direction alternates in a checkerboard pattern, so the mesh is symmetric
    under ``x -> -x`` and ``y -> -y`` for even resolutions.

    Parameters
    ----------
    half_width : float
    resolution : int
        Cells per side, at least 2.
    inclusions : sequence of Inclusion
        Centred regions; a triangle gets the tag of the smallest region that
        contains its centroid.
    """
    if resolution < 2:
        raise InvalidArgumentError(f"resolution must be >= 2, got {resolution}")
    if not half_width > 0:
        raise InvalidArgumentError(f"half_width must be positive, got {half_width}")
    inclusions = list(inclusions)
    radii = [inc.radius for inc in inclusions]
    if len(set(radii)) != len(radii):
        raise InvalidArgumentError(f"inclusions with identical radii overlap: {radii}")
    for inc in inclusions:
        if inc.radius > half_width:
            raise InvalidArgumentError(
                f"inclusion radius {inc.radius} does not fit in half-width {half_width}"
            )

    n = resolution
    ticks = np.linspace(-half_width, half_width, n + 1)
    X, Y = np.meshgrid(ticks, ticks, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i  # lower-left
    b = a + 1  # lower-right
    c = a + n + 2  # upper-right
    d = a + n + 1  # upper-left
    even = (i + j) % 2 == 0
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2

    centroids = nodes[triangles].mean(axis=1)
    return Mesh(nodes, triangles, tag_by_inclusions(centroids, inclusions))


def write_mesh(mesh, path):
    """Write the plain-text mesh format (``nodes N`` / ``triangles M`` blocks)."""
    lines = [f"nodes {mesh.nodes.shape[0]}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k} {t}" for (i, j, k), t in zip(mesh.triangles.tolist(), mesh.tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Parse the plain-text mesh format; indices are zero-based."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]

    def header(pos, word):
        if pos >= len(rows) or len(rows[pos]) != 2 or rows[pos][0] != word:
            raise InvalidArgumentError(f"{path}: expected '{word} <count>' on line {pos + 1}")
        return int(rows[pos][1])

    n_nodes = header(0, "nodes")
    try:
        nodes = np.array([[float(v) for v in r] for r in rows[1 : 1 + n_nodes]])
        pos = 1 + n_nodes
        n_tri = header(pos, "triangles")
        body = np.array([[int(v) for v in r] for r in rows[pos + 1 : pos + 1 + n_tri]])
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: malformed mesh entry ({exc})") from None
    if nodes.shape != (n_nodes, 2) or body.shape != (n_tri, 4):
        raise InvalidArgumentError(f"{path}: truncated or malformed mesh body")
    return Mesh(nodes, body[:, :3], body[:, 3])

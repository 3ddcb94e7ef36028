"""Quadrilateral meshes with high-order node positions and contravariant metric terms.

Local conventions
-----------------
Node ``(i, j)`` of an element sits at reference coordinates ``(xi_i, eta_j)``.
Local faces: 0 is ``xi = -1`` (i = 0), 1 is ``xi = +1`` (i = N), 2 is ``eta = -1``
(j = 0), 3 is ``eta = +1`` (j = N).  Face nodes are ordered by the running index
along the face.  Corner vertices are listed counter-clockwise starting at
``(-1, -1)``, so face 0 runs v0 -> v3, face 1 v1 -> v2, face 2 v0 -> v1 and face 3
v3 -> v2.
"""

from dataclasses import dataclass, field

import numpy as np

from .operators import interpolation_matrix, lgl_nodes_weights, sbp

BOUNDARY_TAGS = ("slip-wall", "outflow", "periodic")
FACE_VERTICES = ((0, 3), (1, 2), (0, 1), (3, 2))


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(eq=False)
class QuadMesh:
    """Conforming curvilinear quadrilateral mesh.

    Arrays are indexed ``[element, i, j, ...]``; face arrays ``[element, face, ...]``.
    ``neighbor`` is -1 on physical boundaries, where ``tags`` holds the boundary
    condition name.
    """

    N: int
    coords: np.ndarray
    jac: np.ndarray
    ja1: np.ndarray
    ja2: np.ndarray
    neighbor: np.ndarray
    neighbor_face: np.ndarray
    flipped: np.ndarray
    tags: np.ndarray
    dim: int = 2
    _face_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_elements(self):
        return self.coords.shape[0]

    @property
    def ops(self):
        return sbp(self.N)

    @property
    def is_boundary(self):
        return self.neighbor < 0

    def face_values(self, arr):
        """Restrict a nodal array ``(E, n, n, ...)`` to faces ``(E, 4, n, ...)``."""
        N = self.N
        return np.stack([arr[:, 0], arr[:, N], arr[:, :, 0], arr[:, :, N]], axis=1)

    def _exchange_index(self):
        if "ext" not in self._face_cache:
            E, n = self.n_elements, self.N + 1
            s = np.arange(n)
            ee = np.empty((E, 4, n), dtype=np.intp)
            ff = np.empty((E, 4, n), dtype=np.intp)
            ss = np.empty((E, 4, n), dtype=np.intp)
            for e in range(E):
                for f in range(4):
                    nb = self.neighbor[e, f]
                    if nb < 0:
                        ee[e, f], ff[e, f], ss[e, f] = e, f, s
                    else:
                        ee[e, f] = nb
                        ff[e, f] = self.neighbor_face[e, f]
                        ss[e, f] = s[::-1] if self.flipped[e, f] else s
            self._face_cache["ext"] = (ee, ff, ss)
        return self._face_cache["ext"]

    def exchange(self, face_arr):
        """Values seen across each face: ``out[e, f, s] = face_arr[neighbour's matching node]``.

        Boundary faces receive their own interior values; boundary conditions
        overwrite them afterwards.
        """
        ee, ff, ss = self._exchange_index()
        return face_arr[ee, ff, ss]

    @property
    def face_normals(self):
        """Outward scaled normals ``(E, 4, n, 2)``: the contravariant vector with the sign of the face."""
        if "normals" not in self._face_cache:
            N = self.N
            self._face_cache["normals"] = np.stack(
                [-self.ja1[:, 0], self.ja1[:, N], -self.ja2[:, :, 0], self.ja2[:, :, N]], axis=1)
        return self._face_cache["normals"]

    @property
    def face_owner_metric(self):
        """Node-local contravariant vector of the face direction ``(E, 4, n, 2)`` (no sign)."""
        if "owner_metric" not in self._face_cache:
            N = self.N
            self._face_cache["owner_metric"] = np.stack(
                [self.ja1[:, 0], self.ja1[:, N], self.ja2[:, :, 0], self.ja2[:, :, N]], axis=1)
        return self._face_cache["owner_metric"]

    def tag_mask(self, tag):
        return self.tags == tag

    def mass(self):
        """Diagonal mass ``J w_i w_j`` per node."""
        w = self.ops.weights
        return self.jac * w[None, :, None] * w[None, None, :]

    def area(self):
        return float(self.mass().sum())

    def conformity_defect(self):
        """Largest mismatch of nodal coordinates across interior faces."""
        fx = self.face_values(self.coords)
        ext = self.exchange(fx)
        interior = ~self.is_boundary
        if not interior.any():
            return 0.0
        d = np.abs(fx - ext)[interior]
        # periodic faces join different physical points; compare interior faces only
        periodic = self._periodic_faces()
        if periodic is not None:
            d = np.abs(fx - ext)[interior & ~periodic]
            if d.size == 0:
                return 0.0
        return float(d.max())

    def _periodic_faces(self):
        return self._face_cache.get("periodic")

    def free_stream_defect(self):
        """Max over nodes of ``|D_xi Ja1 + D_eta Ja2|`` (discrete metric identity)."""
        D = self.ops.D
        div = np.einsum("im,emjk->eijk", D, self.ja1) + np.einsum("jm,eimk->eijk", D, self.ja2)
        return float(np.abs(div).max())


def compute_metrics(coords, ops):
    """Jacobian and contravariant vectors from nodal coordinates ``(E, n, n, 2)``.

    ``Ja1 = (y_eta, -x_eta)``, ``Ja2 = (-y_xi, x_xi)``, ``J = x_xi y_eta - x_eta y_xi``.
    Raises :class:`MeshError` naming the first element with ``J <= 0``.
    """
    D = ops.D
    d_xi = np.einsum("im,emjk->eijk", D, coords)
    d_eta = np.einsum("jm,eimk->eijk", D, coords)
    x_xi, y_xi = d_xi[..., 0], d_xi[..., 1]
    x_eta, y_eta = d_eta[..., 0], d_eta[..., 1]
    jac = x_xi * y_eta - x_eta * y_xi
    bad = np.flatnonzero((jac <= 0).reshape(jac.shape[0], -1).any(axis=1))
    if bad.size:
        raise MeshError(f"non-positive Jacobian (folded or inverted element) in element {bad[0]}")
    ja1 = np.stack([y_eta, -x_eta], axis=-1)
    ja2 = np.stack([-y_xi, x_xi], axis=-1)
    return jac, ja1, ja2


def _make_mesh(N, coords, neighbor, neighbor_face, flipped, tags, dim=2, periodic=None):
    ops = sbp(N)
    jac, ja1, ja2 = compute_metrics(coords, ops)
    mesh = QuadMesh(N=N, coords=coords, jac=jac, ja1=ja1, ja2=ja2, neighbor=neighbor,
                    neighbor_face=neighbor_face, flipped=flipped, tags=tags, dim=dim)
    if periodic is not None:
        mesh._face_cache["periodic"] = periodic
    return mesh


def _normalize_boundary(boundary):
    sides = ("left", "right", "bottom", "top")
    if boundary is None or isinstance(boundary, str):
        tag = boundary or "periodic"
        boundary = {s: tag for s in sides}
    else:
        boundary = dict(boundary)
    for s in sides:
        tag = boundary.get(s)
        if tag not in BOUNDARY_TAGS:
            raise MeshError(f"invalid boundary tag {tag!r} for side {s!r}")
    for a, b in (("left", "right"), ("bottom", "top")):
        if (boundary[a] == "periodic") != (boundary[b] == "periodic"):
            raise MeshError(f"periodic boundary on {a!r} requires periodic {b!r}")
    return boundary


def build_cartesian(domain, nx, ny, N, boundary="periodic", dim=2):
    """Uniform Cartesian mesh of the rectangle ``domain = (x0, x1, y0, y1)``.

    ``boundary`` is a tag for all sides or a dict keyed by ``left``, ``right``,
    ``bottom``, ``top``.  Element ``e = ix * ny + iy``.
    """
    x0, x1, y0, y1 = map(float, domain)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate domain {domain}")
    boundary = _normalize_boundary(boundary)
    xi, _ = lgl_nodes_weights(N)
    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    E = nx * ny
    n = N + 1
    coords = np.empty((E, n, n, 2))
    neighbor = np.full((E, 4), -1, dtype=np.intp)
    neighbor_face = np.full((E, 4), -1, dtype=np.intp)
    tags = np.full((E, 4), "", dtype=object)
    periodic = np.zeros((E, 4), dtype=bool)
    for ix in range(nx):
        xs = x0 + dx * ix + 0.5 * dx * (xi + 1.0)
        for iy in range(ny):
            e = ix * ny + iy
            ys = y0 + dy * iy + 0.5 * dy * (xi + 1.0)
            coords[e, :, :, 0] = xs[:, None]
            coords[e, :, :, 1] = ys[None, :]
            for f, (jx, jy, side, opp) in enumerate(
                    ((ix - 1, iy, "left", 1), (ix + 1, iy, "right", 0),
                     (ix, iy - 1, "bottom", 3), (ix, iy + 1, "top", 2))):
                inside = 0 <= jx < nx and 0 <= jy < ny
                if inside or boundary[side] == "periodic":
                    neighbor[e, f] = (jx % nx) * ny + (jy % ny)
                    neighbor_face[e, f] = opp
                    periodic[e, f] = not inside
                else:
                    tags[e, f] = boundary[side]
    flipped = np.zeros((E, 4), dtype=bool)
    return _make_mesh(N, coords, neighbor, neighbor_face, flipped, tags, dim=dim, periodic=periodic)


def build_interval(x0, x1, nx, N, boundary="periodic"):
    """One-dimensional mesh stored as a single periodic row of 2D elements.

    The transverse extent is [-1, 1] so that ``J = dx/2`` and ``Ja1 = (1, 0)``
    as on a genuine interval.
    """
    if isinstance(boundary, str):
        boundary = {"left": boundary, "right": boundary}
    bnd = {"left": boundary["left"], "right": boundary["right"], "bottom": "periodic", "top": "periodic"}
    return build_cartesian((x0, x1, -1.0, 1.0), nx, 1, N, bnd, dim=1)


def warp_mesh(mesh, mapping, mapping_degree=None):
    """Apply ``mapping(x, y) -> (X, Y)`` to every element.

    Mapped positions are sampled at the LGL nodes of ``mapping_degree`` and the
    resulting polynomial is evaluated at the solution nodes, so element edges are
    polynomials of that degree.  Connectivity is kept.
    """
    N = mesh.N
    M = N if mapping_degree is None else int(mapping_degree)
    xN, _ = lgl_nodes_weights(N)
    xM, _ = lgl_nodes_weights(M)
    to_M = interpolation_matrix(xN, xM)
    to_N = interpolation_matrix(xM, xN)
    c = np.einsum("ai,bj,eijk->eabk", to_M, to_M, mesh.coords)
    X, Y = mapping(c[..., 0], c[..., 1])
    mapped = np.stack(np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float)), axis=-1)
    coords = np.einsum("ia,jb,eabk->eijk", to_N, to_N, mapped)
    new = _make_mesh(N, coords, mesh.neighbor.copy(), mesh.neighbor_face.copy(), mesh.flipped.copy(),
                     mesh.tags.copy(), dim=mesh.dim, periodic=mesh._periodic_faces())
    return new


def sine_warp(x, y, amplitude=0.1):
    """Smooth curvilinear mapping of [-1, 1]^2 onto itself."""
    X = x + amplitude * np.sin(np.pi * y) * np.cos(0.5 * np.pi * x)
    Y = y + amplitude * np.sin(np.pi * x) * np.cos(0.5 * np.pi * y)
    return X, Y


# --- unstructured meshes ---------------------------------------------------------


def _edge_curve(points, ref):
    """Evaluate the polynomial through ``points`` (at LGL nodes) at reference positions ``ref``."""
    M = len(points) - 1
    xM, _ = lgl_nodes_weights(M)
    return interpolation_matrix(xM, ref) @ points


def transfinite_element(edges, N):
    """Node coordinates of one element from its four edge curves (Gordon-Hall blending).

    ``edges[f]`` holds points along face ``f`` in local face orientation.
    """
    r, _ = lgl_nodes_weights(N)
    G = [_edge_curve(np.asarray(edges[f], float), r) for f in range(4)]
    # corners: (-1,-1), (1,-1), (1,1), (-1,1)
    c00, c10, c11, c01 = G[0][0], G[1][0], G[1][-1], G[0][-1]
    xi = r[:, None, None]
    eta = r[None, :, None]
    lx0, lx1 = 0.5 * (1 - xi), 0.5 * (1 + xi)
    ly0, ly1 = 0.5 * (1 - eta), 0.5 * (1 + eta)
    X = (lx0 * G[0][None, :, :] + lx1 * G[1][None, :, :]
         + ly0 * G[2][:, None, :] + ly1 * G[3][:, None, :]
         - (lx0 * ly0 * c00 + lx1 * ly0 * c10 + lx1 * ly1 * c11 + lx0 * ly1 * c01))
    return X


def build_unstructured(vertices, elements, N, boundary_tags, curved=None):
    """Mesh from corner vertices and element connectivity.

    Parameters
    ----------
    vertices : (V, 2) array
    elements : (E, 4) int array, counter-clockwise corner ids
    boundary_tags : dict ``(element, face) -> tag`` for every unmatched face
    curved : optional dict ``(element, face) -> (M+1, 2) points`` along the face
        in local orientation, sampled at the degree-M LGL nodes.  The shared
        neighbour face is curved accordingly.
    """
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.intp)
    E = len(elements)
    curved = dict(curved or {})
    faces = {}
    neighbor = np.full((E, 4), -1, dtype=np.intp)
    neighbor_face = np.full((E, 4), -1, dtype=np.intp)
    flipped = np.zeros((E, 4), dtype=bool)
    for e, ev in enumerate(elements):
        for f, (a, b) in enumerate(FACE_VERTICES):
            key = frozenset((ev[a], ev[b]))
            faces.setdefault(key, []).append((e, f, ev[a]))
    for key, owners in faces.items():
        if len(owners) > 2:
            raise MeshError(f"face shared by more than two elements: elements {[o[0] for o in owners]}")
        if len(owners) == 2:
            (e1, f1, s1), (e2, f2, s2) = owners
            neighbor[e1, f1], neighbor_face[e1, f1] = e2, f2
            neighbor[e2, f2], neighbor_face[e2, f2] = e1, f1
            flipped[e1, f1] = flipped[e2, f2] = s1 != s2
    tags = np.full((E, 4), "", dtype=object)
    for (e, f), tag in boundary_tags.items():
        if tag not in BOUNDARY_TAGS or tag == "periodic":
            raise MeshError(f"invalid boundary tag {tag!r} on element {e} face {f}")
        if neighbor[e, f] >= 0:
            raise MeshError(f"interior face {e}:{f} carries boundary tag {tag!r}")
        tags[e, f] = tag
    missing = [(e, f) for e in range(E) for f in range(4) if neighbor[e, f] < 0 and not tags[e, f]]
    if missing:
        e, f = missing[0]
        raise MeshError(f"untagged boundary face {e}:{f} (nonconforming or missing tag)")
    # propagate curved edges to the neighbour in its own orientation
    for (e, f), pts in list(curved.items()):
        nb = neighbor[e, f]
        if nb >= 0 and (nb, neighbor_face[e, f]) not in curved:
            p = np.asarray(pts, float)
            curved[(nb, neighbor_face[e, f])] = p[::-1] if flipped[e, f] else p
    n = N + 1
    coords = np.empty((E, n, n, 2))
    for e, ev in enumerate(elements):
        edges = []
        for f, (a, b) in enumerate(FACE_VERTICES):
            if (e, f) in curved:
                edges.append(np.asarray(curved[(e, f)], float))
            else:
                edges.append(np.stack([vertices[ev[a]], vertices[ev[b]]]))
        coords[e] = transfinite_element(edges, N)
    return _make_mesh(N, coords, neighbor, neighbor_face, flipped, tags)


@dataclass
class QuadMeshFile:
    """In-memory form of a QUADMESH v1 file (geometry only, no polynomial degree)."""

    vertices: np.ndarray
    elements: np.ndarray
    boundary_tags: dict
    curved: dict

    def build(self, N):
        return build_unstructured(self.vertices, self.elements, N, self.boundary_tags, self.curved)


def write_quad_mesh(path, vertices, elements, boundary_tags, curved=None, comment=None):
    """Write the plain-text QUADMESH v1 format.

    Layout: header ``QUADMESH v1``; ``<nodes> <elements>``; node lines ``x y``;
    element lines ``v0 v1 v2 v3``; ``CURVED <k>`` then ``face-id M x0 y0 ... xM yM``;
    ``BOUNDARY <k>`` then ``face-id tag``.  ``face-id = 4 * element + local face``.
    Lines starting with ``#`` are comments.
    """
    curved = curved or {}
    with open(path, "w") as fh:
        fh.write("QUADMESH v1\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"{len(vertices)} {len(elements)}\n")
        for x, y in vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for ev in elements:
            fh.write(" ".join(str(int(v)) for v in ev) + "\n")
        fh.write(f"CURVED {len(curved)}\n")
        for (e, f), pts in sorted(curved.items()):
            pts = np.asarray(pts, float)
            flat = " ".join(f"{v:.17g}" for v in pts.ravel())
            fh.write(f"{4 * e + f} {len(pts) - 1} {flat}\n")
        fh.write(f"BOUNDARY {len(boundary_tags)}\n")
        for (e, f), tag in sorted(boundary_tags.items()):
            fh.write(f"{4 * e + f} {tag}\n")


def parse_quad_mesh(path):
    """Parse a QUADMESH v1 file into a :class:`QuadMeshFile`; errors carry the line number."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(k + 1, ln.strip()) for k, ln in enumerate(raw)
             if ln.strip() and not ln.strip().startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", len(raw))
        item = lines[pos]
        pos += 1
        return item

    lno, head = take()
    if head != "QUADMESH v1":
        raise MeshFormatError(f"expected header 'QUADMESH v1', got {head!r}", lno)
    lno, counts = take()
    try:
        nv, ne = (int(t) for t in counts.split())
    except ValueError:
        raise MeshFormatError("expected '<nodes> <elements>'", lno) from None
    vertices = np.empty((nv, 2))
    for k in range(nv):
        lno, ln = take()
        try:
            vertices[k] = [float(t) for t in ln.split()]
        except ValueError:
            raise MeshFormatError("expected node line 'x y'", lno) from None
    elements = np.empty((ne, 4), dtype=np.intp)
    seen = {}
    for k in range(ne):
        lno, ln = take()
        try:
            ev = [int(t) for t in ln.split()]
            if len(ev) != 4:
                raise ValueError
        except ValueError:
            raise MeshFormatError("expected element line with 4 node ids", lno) from None
        if min(ev) < 0 or max(ev) >= nv or len(set(ev)) != 4:
            raise MeshFormatError(f"invalid node ids {ev}", lno)
        key = frozenset(ev)
        if key in seen:
            raise MeshFormatError(f"duplicate element (same nodes as line {seen[key]})", lno)
        seen[key] = lno
        elements[k] = ev
    curved = {}
    boundary = {}
    face_lines = {}
    while pos < len(lines):
        lno, ln = take()
        parts = ln.split()
        if len(parts) != 2 or parts[0] not in ("CURVED", "BOUNDARY"):
            raise MeshFormatError(f"expected 'CURVED <k>' or 'BOUNDARY <k>', got {ln!r}", lno)
        try:
            k = int(parts[1])
        except ValueError:
            raise MeshFormatError("section count must be an integer", lno) from None
        for _ in range(k):
            lno, ln = take()
            t = ln.split()
            try:
                fid = int(t[0])
            except (ValueError, IndexError):
                raise MeshFormatError("expected face id", lno) from None
            if not 0 <= fid < 4 * ne:
                raise MeshFormatError(f"face id {fid} out of range", lno)
            e, f = divmod(fid, 4)
            if parts[0] == "CURVED":
                try:
                    M = int(t[1])
                    pts = np.array([float(v) for v in t[2:]]).reshape(M + 1, 2)
                except (ValueError, IndexError):
                    raise MeshFormatError("expected 'face-id M x0 y0 ... xM yM'", lno) from None
                curved[(e, f)] = pts
            else:
                if len(t) != 2 or t[1] not in BOUNDARY_TAGS or t[1] == "periodic":
                    raise MeshFormatError(f"bad boundary tag in {ln!r}", lno)
                boundary[(e, f)] = t[1]
                face_lines[(e, f)] = lno
    mf = QuadMeshFile(vertices, elements, boundary, curved)
    # connectivity problems are reported against the offending boundary line when possible
    try:
        build_unstructured(vertices, elements, 1, boundary, curved=None)
    except MeshError as err:
        msg = str(err)
        line = None
        for (e, f), ln_ in face_lines.items():
            if f"{e}:{f}" in msg:
                line = ln_
        raise MeshFormatError(msg, line if line is not None else len(raw)) from None
    return mf


def read_quad_mesh(path, N):
    """Read a QUADMESH v1 file and build the degree-``N`` mesh."""
    return parse_quad_mesh(path).build(N)

"""Right-hand side assembly.

Three routes lead to the nodal time derivative:

* :func:`dg_rhs_direct` evaluates the split-form DGSEM sums directly and serves
  as the reference;
* :func:`staggered_fluxes` rewrites the same scheme as differences of staggered
  fluxes between neighbouring nodes;
* :func:`fv_fluxes` builds first-order subcell fluxes on the LGL grid.

Staggered fields store, for each node ``(i, j)`` and each reference direction,
the flux towards the previous node (``gl``) and towards the next node (``gr``):
``gl1[e, i, j] = Gamma_(i, i-1) j`` and ``gr1[e, i, j] = Gamma_(i, i+1) j``.
The assembled update is ``J du/dt = (gl1 - gr1) / w_i + (gl2 - gr2) / w_j``.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .mesh import QuadMesh
from .physics import (
    FLUX_VARIANTS,
    JUMP_VARIANTS,
    PhysicsParams,
    contravariant_volume_flux,
    interface_conservative,
    interface_flux,
    interface_noncons,
    manning_source,
    noncons_jump,
    noncons_local,
    noncons_local_factor,
    noncons_pair_factor,
    noncons_symmetric,
    velocity,
    volume_flux,
)

FORMULAS = ("new", "alternative", "local-symmetric")


class UnsupportedFormulationError(ValueError):
    pass


class NonFiniteStateError(FloatingPointError):
    pass


class BoundaryConditionError(ValueError):
    pass


def check_formulation(variant, formula):
    """Reject flux/formula pairs that do not reproduce the DGSEM."""
    if variant not in FLUX_VARIANTS:
        raise UnsupportedFormulationError(f"unknown flux variant {variant!r}")
    if formula not in FORMULAS:
        raise UnsupportedFormulationError(f"unknown formula {formula!r}; expected one of {FORMULAS}")
    if variant in JUMP_VARIANTS and formula == "local-symmetric":
        raise UnsupportedFormulationError(
            f"formula 'local-symmetric' needs a symmetric non-conservative factor; {variant!r} is in jump form")
    if variant == "wintermeyer-symmetric" and formula != "local-symmetric":
        raise UnsupportedFormulationError(
            f"formula {formula!r} requires the non-conservative term in local-times-jump form, "
            "which 'wintermeyer-symmetric' does not provide")


@dataclass
class StaggeredFluxField:
    gl1: np.ndarray
    gr1: np.ndarray
    gl2: np.ndarray
    gr2: np.ndarray

    def max_abs(self, interior_only=False):
        """Largest entry; with ``interior_only`` the element-surface entries are skipped."""
        if not interior_only:
            return float(max(np.abs(a).max() for a in (self.gl1, self.gr1, self.gl2, self.gr2)))
        return float(max(np.abs(self.gl1[:, 1:]).max(), np.abs(self.gr1[:, :-1]).max(),
                         np.abs(self.gl2[:, :, 1:]).max(), np.abs(self.gr2[:, :, :-1]).max()))


@dataclass
class BlendField:
    """Blending coefficients at subcell interfaces.

    ``a1[e, k, j]`` belongs to the interface between nodes ``(k-1, j)`` and
    ``(k, j)``; ``k = 0`` and ``k = N+1`` are the element faces.  ``a2`` is the
    analogue in the second direction with shape ``(E, n, n+1)``.
    """

    a1: np.ndarray
    a2: np.ndarray

    @classmethod
    def constant(cls, n_elements, n, value):
        return cls(np.full((n_elements, n + 1, n), float(value)), np.full((n_elements, n, n + 1), float(value)))

    @classmethod
    def from_nodal(cls, alpha_node):
        """Interface coefficients from nodal ones with the max rule; faces take the adjacent node."""
        a = np.asarray(alpha_node, dtype=float)
        a1 = np.concatenate([a[:, :1], interface_alpha(a[:, :-1], a[:, 1:]), a[:, -1:]], axis=1)
        a2 = np.concatenate([a[:, :, :1], interface_alpha(a[:, :, :-1], a[:, :, 1:]), a[:, :, -1:]], axis=2)
        return cls(a1, a2)

    @classmethod
    def from_element(cls, alpha_elem, n):
        a = np.asarray(alpha_elem, dtype=float)[:, None, None]
        return cls(np.broadcast_to(a, (a.shape[0], n + 1, n)).copy(),
                   np.broadcast_to(a, (a.shape[0], n, n + 1)).copy())

    def validate(self):
        for a in (self.a1, self.a2):
            if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
                raise ValueError("blending coefficients must lie in [0, 1]")
        return self

    def maximum(self, other):
        return BlendField(np.maximum(self.a1, other.a1), np.maximum(self.a2, other.a2))

    def node_max(self):
        """Largest coefficient over the interfaces touching each node ``(E, n, n)``."""
        return np.maximum.reduce([self.a1[:, :-1], self.a1[:, 1:], self.a2[:, :, :-1], self.a2[:, :, 1:]])


def interface_alpha(alpha_left, alpha_right):
    """Interface coefficient between two nodes: the larger nodal value."""
    return np.maximum(alpha_left, alpha_right)


class Prim(NamedTuple):
    h: np.ndarray
    hv1: np.ndarray
    hv2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    b: np.ndarray

    @classmethod
    def from_state(cls, u, b, params):
        h, hv1, hv2 = u[..., 0], u[..., 1], u[..., 2]
        return cls(h, hv1, hv2, velocity(h, hv1, params), velocity(h, hv2, params), np.asarray(b, float))

    def map(self, fn):
        return Prim(*(fn(q) for q in self))


def _swap(a):
    return np.ascontiguousarray(np.swapaxes(a, 1, 2))


# --- boundary data -----------------------------------------------------------------


def apply_boundary_conditions(u_face, b_face, mesh, u_ext=None, b_ext=None):
    """Exterior states on every face ``(E, 4, n, 3)`` and ``(E, 4, n)``.

    Interior and periodic faces receive the neighbour's values.  Slip walls mirror
    the normal velocity and copy ``h`` and ``b``; outflow copies the interior.
    """
    if u_ext is None:
        u_ext = mesh.exchange(u_face)
    if b_ext is None:
        b_ext = mesh.exchange(b_face)
    u_ext = np.array(u_ext, dtype=float, copy=True)
    b_ext = np.array(b_ext, dtype=float, copy=True)
    bnd = mesh.is_boundary
    if not bnd.any():
        return u_ext, b_ext
    tags = mesh.tags
    known = (tags == "slip-wall") | (tags == "outflow")
    bad = bnd & ~known
    if bad.any():
        e, f = np.argwhere(bad)[0]
        raise BoundaryConditionError(f"boundary face {e}:{f} has no valid tag ({tags[e, f]!r})")
    u_ext[bnd] = u_face[bnd]
    b_ext[bnd] = b_face[bnd]
    wall = tags == "slip-wall"
    if wall.any():
        nrm = mesh.face_owner_metric[wall]
        nhat = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
        m = u_face[wall][..., 1:3]
        mn = np.sum(m * nhat, axis=-1, keepdims=True)
        u_ext[wall, ..., 1:3] = m - 2.0 * mn * nhat
    return u_ext, b_ext


def surface_terms(u, b, mesh, params, variant="ersing-jump"):
    """Staggered flux at the element faces, including the non-conservative surface term.

    Entry ``[e, f, s]`` is ``Gamma_(0, L)`` for faces 0 and 2 and ``Gamma_(N, R)``
    for faces 1 and 3, evaluated with the owner's node-local metric.
    """
    uf = mesh.face_values(u)
    bf = mesh.face_values(b)
    ue, be = apply_boundary_conditions(uf, bf, mesh)
    I = Prim.from_state(uf, bf, params)
    X = Prim.from_state(ue, be, params)
    ja = mesh.face_owner_metric
    sigma = np.array([-1.0, 1.0, -1.0, 1.0])[None, :, None]
    flux, nc = interface_flux(variant, *I, *X, ja[..., 0], ja[..., 1], ja[..., 0], ja[..., 1], params, sigma)
    return flux + nc


# --- the reference DGSEM -------------------------------------------------------------


def _direct_direction(u, b, ja, ops, params, variant):
    """``sum_m S_im (f~*_(i,m) + Phi~*_(i,m))`` along axis 1."""
    uL, uR = u[:, :, None, :], u[:, None, :, :]
    bL, bR = b[:, :, None], b[:, None, :]
    jaL, jaR = ja[:, :, None], ja[:, None, :]
    f1, f2 = volume_flux(uL, uR, params, variant)
    avg = 0.5 * (jaL + jaR)
    flux = f1 * avg[..., 0:1] + f2 * avg[..., 1:2]
    loc = noncons_local(uL, jaL, params, variant)
    if variant in JUMP_VARIANTS:
        pair = noncons_jump(uL, bL, uR, bR, variant)
    else:
        pair = noncons_symmetric(bL, bR, jaL, jaR)
    return np.einsum("im,eimjc->eijc", ops.S, flux + loc * pair)


def dg_rhs_direct(u, b, mesh, params, variant="ersing-jump"):
    """Nodal ``du/dt`` of the split-form DGSEM on a curvilinear mesh (reference path)."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NonFiniteStateError("state contains NaN or Inf")
    ops = mesh.ops
    N, w = ops.N, ops.weights
    surf = surface_terms(u, b, mesh, params, variant)
    r1 = _direct_direction(u, b, mesh.ja1, ops, params, variant)
    r1[:, N] += surf[:, 1]
    r1[:, 0] -= surf[:, 0]
    total = r1 / w[None, :, None, None]
    if mesh.dim == 2:
        r2 = _swap(_direct_direction(_swap(u), _swap(b), _swap(mesh.ja2), ops, params, variant))
        r2[:, :, N] += surf[:, 3]
        r2[:, :, 0] -= surf[:, 2]
        total = total + r2 / w[None, None, :, None]
    return -total / mesh.jac[..., None]


# --- staggered flux differencing ----------------------------------------------------


def _pair_row_sum(S, factors):
    """``sum_m S_lm prod_k (f_k[l] + f_k[m])`` along axis 1 without forming node pairs.

    The product expands into terms ``prod_{k not in T} f_k[l] * (S prod_{k in T} f_k)[l]``.
    """
    n = len(factors)
    s = S.sum(axis=1)[None, :, None]
    out = 0.0
    for mask in range(1 << n):
        inner = [f for k, f in enumerate(factors) if mask >> k & 1]
        outer = [f for k, f in enumerate(factors) if not mask >> k & 1]
        if inner:
            prod = inner[0]
            for f in inner[1:]:
                prod = prod * f
            term = S @ prod
        else:
            term = s
        for f in outer:
            term = term * f
        out = out + term
    return out


def _line_sums(P, ja, S, variant, g):
    """Row sums ``A_l = sum_m S_lm f~*_(l,m)`` and ``P_l = sum_m S_lm Phi^pair_(l,m)`` along axis 1.

    The conservative flux is a sum of products of pairwise averages, so its row
    sums are evaluated in separable form; the pair factors are formed explicitly.
    """
    j1, j2 = ja[..., 0], ja[..., 1]
    m1 = _pair_row_sum(S, [P.hv1, j1]) + _pair_row_sum(S, [P.hv2, j2])
    A = np.empty(P.h.shape + (3,))
    A[..., 0] = 0.25 * m1
    A[..., 1] = 0.125 * (_pair_row_sum(S, [P.hv1, j1, P.v1]) + _pair_row_sum(S, [P.hv2, j2, P.v1]))
    A[..., 2] = 0.125 * (_pair_row_sum(S, [P.hv1, j1, P.v2]) + _pair_row_sum(S, [P.hv2, j2, P.v2]))
    if variant != "ersing-jump":
        Sh = S @ P.h
        for c, jc in ((1, j1), (2, j2)):
            A[..., c] += 0.25 * g * P.h * (jc * Sh + S @ (P.h * jc))
    L = P.map(lambda q: q[:, :, None, :])
    R = P.map(lambda q: q[:, None, :, :])
    j1L, j2L = ja[:, :, None, :, 0], ja[:, :, None, :, 1]
    j1R, j2R = ja[:, None, :, :, 0], ja[:, None, :, :, 1]
    p1, p2 = noncons_pair_factor(variant, L.h + L.b, R.h + R.b, L.b, R.b, j1L, j2L, j1R, j2R)
    Sx = S[None, :, :, None]
    P1 = (Sx * p1).sum(axis=2)
    P2 = P1 if p2 is p1 else (Sx * p2).sum(axis=2)
    return A, P1, P2


def _line_staggered(P, ja, surf_lo, surf_hi, ops, variant, formula, g):
    N = ops.N
    A, P1, P2 = _line_sums(P, ja, ops.S, variant, g)
    loc1, loc2 = noncons_local_factor(variant, P.h, ja[..., 0], ja[..., 1], g)
    CA = np.cumsum(A, axis=1)
    C1 = np.cumsum(P1, axis=1)
    C2 = C1 if P2 is P1 else np.cumsum(P2, axis=1)
    gl = np.empty_like(A)
    gr = np.empty_like(A)
    gr[:, :N] = CA[:, :N]
    gl[:, 1:] = CA[:, :N]
    if formula == "local-symmetric":
        e1 = e2 = 0.0
    else:
        H = P.h + P.b
        q1, q2 = noncons_pair_factor(variant, H, H[:, :1], P.b, P.b[:, :1], 0, 0, 0, 0)
        e1, e2 = 2.0 * q1, 2.0 * q2
    if formula == "new":
        gr[:, :N, :, 1] += loc1[:, :N] * (C1[:, :N] + e1[:, :N])
        gr[:, :N, :, 2] += loc2[:, :N] * (C2[:, :N] + e2[:, :N])
        gl[:, 1:, :, 1] += loc1[:, 1:] * (C1[:, :N] + e1[:, 1:])
        gl[:, 1:, :, 2] += loc2[:, 1:] * (C2[:, :N] + e2[:, 1:])
    else:
        gr[:, :N, :, 1] += loc1[:, :N] * C1[:, :N]
        gr[:, :N, :, 2] += loc2[:, :N] * C2[:, :N]
        gl[:, 1:, :, 1] += loc1[:, 1:] * C1[:, :N]
        gl[:, 1:, :, 2] += loc2[:, 1:] * C2[:, :N]
        if formula == "alternative":
            gl[:, N, :, 1] += loc1[:, N] * e1[:, N]
            gl[:, N, :, 2] += loc2[:, N] * e2[:, N]
    gl[:, 0] = surf_lo
    gr[:, N] = surf_hi
    return gl, gr


def staggered_fluxes(u, b, mesh, params, variant="ersing-jump", formula="new", surf=None):
    """Staggered DG fluxes whose differences reproduce :func:`dg_rhs_direct`.

    ``formula`` selects the new symmetric-at-interfaces expressions, the
    alternative ones with the correction only in ``Gamma_(N, N-1)``, or the
    local-times-symmetric expressions for a symmetric non-conservative factor.
    """
    check_formulation(variant, formula)
    u = np.asarray(u, dtype=float)
    ops = mesh.ops
    g = params.g
    if surf is None:
        surf = surface_terms(u, b, mesh, params, variant)
    P = Prim.from_state(u, b, params)
    gl1, gr1 = _line_staggered(P, mesh.ja1, surf[:, 0], surf[:, 1], ops, variant, formula, g)
    if mesh.dim == 2:
        gl2, gr2 = _line_staggered(P.map(_swap), _swap(mesh.ja2), surf[:, 2], surf[:, 3],
                                   ops, variant, formula, g)
        gl2, gr2 = _swap(gl2), _swap(gr2)
    else:
        gl2 = gr2 = np.zeros_like(gl1)
    return StaggeredFluxField(gl1, gr1, gl2, gr2)


def staggered_fluxes_new(u, b, mesh, params, variant="ersing-jump", surf=None):
    if variant not in JUMP_VARIANTS:
        raise UnsupportedFormulationError(f"{variant!r} has no local-times-jump factorization")
    return staggered_fluxes(u, b, mesh, params, variant, "new", surf)


def staggered_fluxes_alternative(u, b, mesh, params, variant="ersing-jump", surf=None):
    if variant not in JUMP_VARIANTS:
        raise UnsupportedFormulationError(f"{variant!r} has no local-times-jump factorization")
    return staggered_fluxes(u, b, mesh, params, variant, "alternative", surf)


# --- subcell finite volumes --------------------------------------------------------


def subcell_normals(ja, ops):
    """Scaled normals at the subcell interfaces ``k - 1/2``, ``k = 0..N+1``, along axis 1.

    ``n_{k+1/2} = Ja_0 + sum_{l<=k} sum_m Q_lm Ja_m``: they start and end at the
    face metrics and their differences reproduce the discrete metric divergence,
    so the subcell scheme keeps free streams on curved elements.
    """
    inc = np.einsum("lm,emjd->eljd", ops.Q, ja)
    first = ja[:, :1]
    return np.concatenate([first, first + np.cumsum(inc, axis=1)], axis=1)


def _line_fv(P, ja, nsub, surf_lo, surf_hi, N, variant, params):
    lo = P.map(lambda q: q[:, :-1])
    hi = P.map(lambda q: q[:, 1:])
    n = nsub[:, 1:N + 1]
    C = interface_conservative(variant, *lo, *hi, n[..., 0], n[..., 1], params, 1.0)
    nc_lo = interface_noncons(variant, lo.h, lo.b, hi.h, hi.b, ja[:, :-1, :, 0], ja[:, :-1, :, 1], params)
    nc_hi = interface_noncons(variant, hi.h, hi.b, lo.h, lo.b, ja[:, 1:, :, 0], ja[:, 1:, :, 1], params)
    shape = P.h.shape + (3,)
    gl = np.empty(shape)
    gr = np.empty(shape)
    gr[:, :N] = C + nc_lo
    gl[:, 1:] = C + nc_hi
    gl[:, 0] = surf_lo
    gr[:, N] = surf_hi
    return gl, gr


def fv_fluxes(u, b, mesh, params, variant="ersing-jump", surf=None, normals=None):
    """First-order subcell fluxes on the LGL grid; element-face entries equal the DG surface terms."""
    u = np.asarray(u, dtype=float)
    ops = mesh.ops
    N = ops.N
    if surf is None:
        surf = surface_terms(u, b, mesh, params, variant)
    if normals is None:
        normals = (subcell_normals(mesh.ja1, ops), subcell_normals(_swap(mesh.ja2), ops))
    P = Prim.from_state(u, b, params)
    gl1, gr1 = _line_fv(P, mesh.ja1, normals[0], surf[:, 0], surf[:, 1], N, variant, params)
    if mesh.dim == 2:
        gl2, gr2 = _line_fv(P.map(_swap), _swap(mesh.ja2), normals[1], surf[:, 2], surf[:, 3], N,
                            variant, params)
        gl2, gr2 = _swap(gl2), _swap(gr2)
    else:
        gl2 = gr2 = np.zeros_like(gl1)
    return StaggeredFluxField(gl1, gr1, gl2, gr2)


# --- assembly ------------------------------------------------------------------------


def blend_fields(dg, fv, alpha):
    """Per-interface convex combination of two staggered fields."""
    alpha.validate()
    a1, a2 = alpha.a1[..., None], alpha.a2[..., None]
    lo1, hi1 = a1[:, :-1], a1[:, 1:]
    lo2, hi2 = a2[:, :, :-1], a2[:, :, 1:]
    return StaggeredFluxField(
        (1 - lo1) * dg.gl1 + lo1 * fv.gl1,
        (1 - hi1) * dg.gr1 + hi1 * fv.gr1,
        (1 - lo2) * dg.gl2 + lo2 * fv.gl2,
        (1 - hi2) * dg.gr2 + hi2 * fv.gr2,
    )


def assemble(field, mesh):
    """Nodal ``du/dt`` from staggered fluxes."""
    w = mesh.ops.weights
    d = (field.gl1 - field.gr1) / w[None, :, None, None]
    if mesh.dim == 2:
        d = d + (field.gl2 - field.gr2) / w[None, None, :, None]
    return d / mesh.jac[..., None]


def blend_assemble(dg, fv, alpha, mesh):
    """``du/dt`` of the hybrid scheme; ``alpha = None`` means pure DG."""
    if alpha is None:
        return assemble(dg, mesh)
    return assemble(blend_fields(dg, fv, alpha), mesh)


# --- driver-facing operator -------------------------------------------------------


@dataclass
class StageData:
    """Everything a limiter may need for one right-hand-side evaluation."""

    u: np.ndarray
    t: float
    dt: Optional[float]
    dg: StaggeredFluxField
    fv: StaggeredFluxField
    rhs_dg: np.ndarray
    rhs_fv: np.ndarray


@dataclass(eq=False)
class Semidiscretization:
    """Spatial operator ``u -> du/dt`` of the hybrid DG/FV scheme.

    ``limiter`` is any object with ``blend(sd, stage) -> BlendField | None``;
    ``None`` gives the plain DGSEM.  ``source(t)`` returns an extra nodal source.
    """

    mesh: QuadMesh
    b: np.ndarray
    params: PhysicsParams = PhysicsParams()
    variant: str = "ersing-jump"
    formula: str = "new"
    limiter: object = None
    source: Optional[Callable] = None

    def __post_init__(self):
        check_formulation(self.variant, self.formula)
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != self.mesh.jac.shape:
            raise ValueError(f"bathymetry shape {self.b.shape} does not match mesh nodes {self.mesh.jac.shape}")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("bathymetry must be finite")
        ops = self.mesh.ops
        self._normals = (subcell_normals(self.mesh.ja1, ops), subcell_normals(_swap(self.mesh.ja2), ops))
        self.last_alpha = None

    @property
    def n_nodes(self):
        return self.mesh.N + 1

    def fluxes(self, u):
        """``(dg, fv)`` staggered fields sharing the same surface terms."""
        surf = surface_terms(u, self.b, self.mesh, self.params, self.variant)
        dg = staggered_fluxes(u, self.b, self.mesh, self.params, self.variant, self.formula, surf)
        fv = fv_fluxes(u, self.b, self.mesh, self.params, self.variant, surf, self._normals)
        return dg, fv

    def sources(self, u, t):
        s = manning_source(u, self.params) if self.params.manning_n > 0 else 0.0
        if self.source is not None:
            s = s + self.source(t)
        return s

    def rhs(self, u, t, dt=None):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise NonFiniteStateError("state contains NaN or Inf")
        src = self.sources(u, t)
        if self.limiter is None:
            self.last_alpha = None
            dg = staggered_fluxes(u, self.b, self.mesh, self.params, self.variant, self.formula)
            return assemble(dg, self.mesh) + src
        dg, fv = self.fluxes(u)
        stage = StageData(u, t, dt, dg, fv, assemble(dg, self.mesh) + src, assemble(fv, self.mesh) + src)
        alpha = self.limiter.blend(self, stage)
        self.last_alpha = alpha
        rhs = stage.rhs_dg if alpha is None else blend_assemble(dg, fv, alpha, self.mesh) + src
        record = getattr(self.limiter, "record", None)
        if record is not None and dt is not None:
            record(self, stage, rhs)
        return rhs

    def __call__(self, u, t, dt=None):
        return self.rhs(u, t, dt)

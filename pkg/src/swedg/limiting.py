"""Blending coefficients: Zalesak-type FCT on the total height, a modal smoothness
indicator, frozen coefficients, and the wet/dry fallback."""

from dataclasses import dataclass, field

import numpy as np

from .operators import legendre_vandermonde
from .semidiscretization import BlendField


class InfeasibleBoundsError(RuntimeError):
    pass


@dataclass
class NodalBounds:
    H_min: np.ndarray
    H_max: np.ndarray
    H_fv: np.ndarray

    def slack(self):
        return bounds_slack(self.H_fv)


def bounds_slack(H):
    """Roundoff allowance ``1e-12 (1 + |H|)``."""
    return 1e-12 * (1.0 + np.abs(H))


def stencil_extrema(q, mesh):
    """Min and max of ``q`` over each node, its in-element neighbours and the node across a face."""
    lo = q.copy()
    hi = q.copy()
    axes = (1, 2) if mesh.dim == 2 else (1,)
    for ax in axes:
        a = np.moveaxis(q, ax, 1)
        l = np.moveaxis(lo, ax, 1)
        h = np.moveaxis(hi, ax, 1)
        np.minimum(l[:, 1:], a[:, :-1], out=l[:, 1:])
        np.minimum(l[:, :-1], a[:, 1:], out=l[:, :-1])
        np.maximum(h[:, 1:], a[:, :-1], out=h[:, 1:])
        np.maximum(h[:, :-1], a[:, 1:], out=h[:, :-1])
    ext = mesh.exchange(mesh.face_values(q))
    N = mesh.N
    faces = [(slice(None), 0), (slice(None), N)]
    if mesh.dim == 2:
        faces += [(slice(None), slice(None), 0), (slice(None), slice(None), N)]
    for f, idx in enumerate(faces):
        lo[idx] = np.minimum(lo[idx], ext[:, f])
        hi[idx] = np.maximum(hi[idx], ext[:, f])
    return lo, hi


def fv_predictor_bounds(u, b, mesh, dt, rhs_fv):
    """Local bounds of the total height from the first-order predictor ``u + dt * rhs_fv``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    H_fv = u[..., 0] + b + dt * rhs_fv[..., 0]
    H_min, H_max = stencil_extrema(H_fv, mesh)
    return NodalBounds(H_min, H_max, H_fv)


def _antidiffusive_contributions(dg, fv, mesh, dt):
    """Per-node increments of ``H`` carried by each adjacent subcell interface ``(E, n, n, k)``."""
    w = mesh.ops.weights
    scale = dt / mesh.jac
    parts = [
        (dg.gl1[..., 0] - fv.gl1[..., 0]) / w[None, :, None],
        -(dg.gr1[..., 0] - fv.gr1[..., 0]) / w[None, :, None],
    ]
    if mesh.dim == 2:
        parts += [
            (dg.gl2[..., 0] - fv.gl2[..., 0]) / w[None, None, :],
            -(dg.gr2[..., 0] - fv.gr2[..., 0]) / w[None, None, :],
        ]
    return np.stack(parts, axis=-1) * scale[..., None]


def zalesak_fct(dg, fv, bounds, u, b, dt, mesh, rhs_dg=None):
    """Blending coefficients that keep the forward-Euler update of ``H`` within ``bounds``.

    Nodal coefficients follow from the classic ratios ``R = min(1, Q / P)`` on
    the total height; interfaces take the larger nodal value.  Elements whose
    unlimited DG update already satisfies the bounds keep ``alpha = 0``.
    """
    if np.any(bounds.H_min > bounds.H_fv + bounds.slack()) or np.any(bounds.H_max < bounds.H_fv - bounds.slack()):
        raise InfeasibleBoundsError("low-order predictor violates its own bounds")
    c = _antidiffusive_contributions(dg, fv, mesh, dt)
    P_plus = np.sum(np.maximum(c, 0.0), axis=-1)
    P_minus = np.sum(np.minimum(c, 0.0), axis=-1)
    # a tenth of the slack keeps R continuous when Q and P are both at roundoff level
    tol = 0.1 * bounds.slack()
    Q_plus = np.maximum(bounds.H_max - bounds.H_fv, 0.0) + tol
    Q_minus = np.minimum(bounds.H_min - bounds.H_fv, 0.0) - tol
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        R_plus = np.where(P_plus > 0, np.minimum(1.0, Q_plus / P_plus), 1.0)
        R_minus = np.where(P_minus < 0, np.minimum(1.0, Q_minus / P_minus), 1.0)
    alpha = np.clip(1.0 - np.minimum(R_plus, R_minus), 0.0, 1.0)
    if rhs_dg is not None:
        H_dg = u[..., 0] + b + dt * rhs_dg[..., 0]
        eps = bounds.slack()
        ok = (H_dg >= bounds.H_min - eps) & (H_dg <= bounds.H_max + eps)
        alpha[ok.reshape(ok.shape[0], -1).all(axis=1)] = 0.0
    return BlendField.from_nodal(alpha)


def wet_dry_fallback(u, params):
    """Boolean mask of elements that contain a node shallower than ``h_partial_dry``."""
    h = u[..., 0]
    return (h < params.h_partial_dry).reshape(h.shape[0], -1).any(axis=1)


def _apply_fallback(alpha, mask):
    if alpha is None or not mask.any():
        return alpha
    alpha.a1[mask] = 1.0
    alpha.a2[mask] = 1.0
    return alpha


# --- modal indicator --------------------------------------------------------------


@dataclass(frozen=True)
class ModalIndicatorParams:
    alpha_max: float = 0.5
    alpha_min: float = 0.001
    sharpness: float = 9.21024
    smoothing: bool = True

    def threshold(self, N):
        return 0.5 * 10.0 ** (-1.8 * (N + 1) ** 0.25)


def modal_energy(h, ops):
    """Largest of the two top-mode energy fractions of ``h`` per element."""
    N = ops.N
    Vinv = np.linalg.inv(legendre_vandermonde(ops.nodes, N))
    m = np.einsum("ai,bj,eij->eab", Vinv, Vinv, h)
    m2 = m * m
    total = m2.sum(axis=(1, 2))
    clip1 = m2[:, :N, :N].sum(axis=(1, 2))
    clip2 = m2[:, :N - 1, :N - 1].sum(axis=(1, 2)) if N >= 2 else np.zeros_like(total)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(total > 0, (total - clip1) / total, 0.0)
        f2 = np.where(clip1 > 0, (clip1 - clip2) / clip1, 0.0)
    return np.maximum(f1, f2)


def modal_indicator(h, ops, params=ModalIndicatorParams(), mesh=None):
    """Element blending coefficient from the modal energy of ``h``, in ``[0, alpha_max]``.

    A logistic ramp centred at the threshold maps energy to ``[0, 1]``; values
    below ``alpha_min`` drop to 0, values above ``1 - alpha_min`` rise to 1, and
    the result is scaled by ``alpha_max``.  With a mesh, each element also takes
    half of its largest face neighbour.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        h = h[None]
    T = params.threshold(ops.N)
    E = modal_energy(h, ops)
    with np.errstate(over="ignore"):
        a = 1.0 / (1.0 + np.exp(-params.sharpness / T * (E - T)))
    a = np.where(a < params.alpha_min, 0.0, a)
    a = np.where(a > 1.0 - params.alpha_min, 1.0, a)
    a = params.alpha_max * a
    if mesh is not None and params.smoothing:
        nb = mesh.neighbor
        nb_alpha = np.where(nb >= 0, a[np.where(nb >= 0, nb, 0)], 0.0)
        a = np.maximum(a, 0.5 * nb_alpha.max(axis=1))
    return a


# --- limiter strategies -------------------------------------------------------------


@dataclass
class BoundStats:
    checks: int = 0
    violations: int = 0
    max_excess: float = 0.0
    min_depth: float = np.inf

    def update(self, H_new, bounds, h_new=None):
        eps = bounds.slack()
        excess = np.maximum(bounds.H_min - eps - H_new, H_new - bounds.H_max - eps)
        self.checks += H_new.size
        self.violations += int(np.count_nonzero(excess > 0))
        self.max_excess = max(self.max_excess, float(excess.max(initial=-np.inf)))
        if h_new is not None:
            self.min_depth = min(self.min_depth, float(h_new.min()))


@dataclass
class FixedBlend:
    """Frozen coefficients, e.g. random node-wise values or a constant."""

    alpha: BlendField

    def blend(self, sd, stage):
        return self.alpha


@dataclass
class FCTLimiter:
    """Stage-wise Zalesak limiting of the total height.

    ``positivity`` raises the lower bound to the bed so the depth stays
    non-negative; ``wet_dry`` switches elements with nearly dry nodes to pure FV.
    """

    positivity: bool = False
    wet_dry: bool = False
    stats: BoundStats = field(default_factory=BoundStats)
    last_bounds: NodalBounds = None

    def blend(self, sd, stage):
        if stage.dt is None:
            raise ValueError("FCT limiting needs the stage time step")
        u, b, mesh = stage.u, sd.b, sd.mesh
        bounds = fv_predictor_bounds(u, b, mesh, stage.dt, stage.rhs_fv)
        if self.positivity:
            bounds.H_min = np.minimum(bounds.H_fv, np.maximum(bounds.H_min, b))
        alpha = zalesak_fct(stage.dg, stage.fv, bounds, u, b, stage.dt, mesh, rhs_dg=stage.rhs_dg)
        if self.wet_dry:
            alpha = _apply_fallback(alpha, wet_dry_fallback(u, sd.params))
        self.last_bounds = bounds
        return alpha

    def record(self, sd, stage, rhs):
        H_new = stage.u[..., 0] + sd.b + stage.dt * rhs[..., 0]
        self.stats.update(H_new, self.last_bounds, stage.u[..., 0] + stage.dt * rhs[..., 0])


@dataclass
class ElementIndicatorLimiter:
    """Element-wise blending from the modal indicator (one coefficient per element)."""

    params: ModalIndicatorParams = ModalIndicatorParams()
    wet_dry: bool = False

    def blend(self, sd, stage):
        a = modal_indicator(stage.u[..., 0], sd.mesh.ops, self.params, sd.mesh)
        alpha = BlendField.from_element(a, sd.mesh.N + 1)
        if self.wet_dry:
            alpha = _apply_fallback(alpha, wet_dry_fallback(stage.u, sd.params))
        return alpha


@dataclass
class WetDryLimiter:
    """Pure DG except in elements that are nearly dry."""

    def blend(self, sd, stage):
        mask = wet_dry_fallback(stage.u, sd.params)
        if not mask.any():
            return None
        alpha = BlendField.constant(sd.mesh.n_elements, sd.mesh.N + 1, 0.0)
        return _apply_fallback(alpha, mask)


def random_nodal_alpha(seed, n_elements, n):
    """Uniform ``[0, 1)`` nodal coefficients from a counter-based generator.

    Node ``(e, i, j)`` draws from a Philox stream keyed by ``seed`` with the
    counter set to its global index, so values do not depend on traversal order.
    """
    out = np.empty((n_elements, n, n))
    for e in range(n_elements):
        for i in range(n):
            for j in range(n):
                idx = (e * n + i) * n + j
                bg = np.random.Philox(key=int(seed), counter=[idx, 0, 0, 0])
                out[e, i, j] = np.random.Generator(bg).random()
    return out

"""Shallow-water algebra: fluxes, two-point fluxes, non-conservative terms and wet/dry helpers.

States are arrays whose last axis holds ``(h, h*v1, h*v2)``.  Metric vectors
``ja`` have a trailing axis of length 2.  Everything here is a pure function
of its inputs and broadcasts over leading axes.
"""

from dataclasses import dataclass

import numpy as np

FLUX_VARIANTS = ("ersing-jump", "wintermeyer-jump", "wintermeyer-symmetric")
JUMP_VARIANTS = ("ersing-jump", "wintermeyer-jump")


@dataclass(frozen=True)
class PhysicsParams:
    g: float = 9.81
    eps_num: float = 1e-13
    tau_vel: float = 1e-8
    h_partial_dry: float = 1e-4
    manning_n: float = 0.0
    # wet/dry interface treatment; only the channel case switches it on
    hydrostatic_reconstruction: bool = False

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("gravitational acceleration must be positive")
        for name in ("eps_num", "tau_vel", "h_partial_dry"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.manning_n < 0:
            raise ValueError("manning_n must be non-negative")


def velocity(h, hv, params):
    """Velocity component recovered from momentum with the desingularization rule.

    Wet nodes (``h**2 > tau_vel``) get the plain quotient; nearly dry nodes get
    ``2 h hv / (h**2 + tau_vel)``; nodes with ``h <= 5 eps_num`` get zero.
    """
    h = np.asarray(h, dtype=float)
    hv = np.asarray(hv, dtype=float)
    h2 = h * h
    wet = h > 5.0 * params.eps_num
    safe_h = np.where(wet, h, 1.0)
    out = np.where(h2 > params.tau_vel, hv / safe_h, 2.0 * h * hv / (h2 + params.tau_vel))
    return np.where(wet, out, 0.0)


def desingularize(u, params):
    """Return a copy of ``u`` with momenta replaced by ``h * velocity(h, hv)``."""
    u = np.array(u, dtype=float, copy=True)
    h = u[..., 0]
    for c in (1, 2):
        u[..., c] = h * velocity(h, u[..., c], params)
    return u


def dry_state_projection(u, params):
    """Clip roundoff-negative depths to zero and zero the momenta of dry nodes (``h < eps_num``).

    Wet nodes are returned bitwise unchanged.
    """
    u = np.array(u, dtype=float, copy=True)
    dry = u[..., 0] < params.eps_num
    if np.any(dry):
        u[..., 0] = np.where(dry, np.maximum(u[..., 0], 0.0), u[..., 0])
        u[..., 1:] = np.where(dry[..., None], 0.0, u[..., 1:])
    return u


def physical_flux(u, params):
    """Advective flux pair ``(f1, f2)``; the hydrostatic pressure lives in the non-conservative term."""
    u = np.asarray(u, dtype=float)
    h, hv1, hv2 = u[..., 0], u[..., 1], u[..., 2]
    v1 = velocity(h, hv1, params)
    v2 = velocity(h, hv2, params)
    f1 = np.stack([hv1, hv1 * v1, hv1 * v2], axis=-1)
    f2 = np.stack([hv2, hv2 * v1, hv2 * v2], axis=-1)
    return f1, f2


def entropy_vars(u, b, params):
    """Entropy variables ``(g (h + b) - |v|^2 / 2, v1, v2)``."""
    u = np.asarray(u, dtype=float)
    h = u[..., 0]
    v1 = velocity(h, u[..., 1], params)
    v2 = velocity(h, u[..., 2], params)
    w0 = params.g * (h + b) - 0.5 * (v1 * v1 + v2 * v2)
    return np.stack([w0, v1, v2], axis=-1)


# --- two-point kernels on primitive arrays ---------------------------------
#
# The kernels below take unpacked arrays (h, hv1, hv2, v1, v2) so that callers
# in the hot loops compute velocities once per node.


def contravariant_volume_flux(variant, hL, hv1L, hv2L, v1L, v2L, hR, hv1R, hv2R, v1R, v2R, n1, n2, g):
    """Symmetric two-point flux contracted with the direction ``(n1, n2)``."""
    mass = 0.5 * ((hv1L + hv1R) * n1 + (hv2L + hv2R) * n2)
    a1 = 0.5 * (v1L + v1R)
    a2 = 0.5 * (v2L + v2R)
    mom1 = mass * a1
    mom2 = mass * a2
    if variant != "ersing-jump":
        p = 0.5 * g * (hL * hR)
        mom1 = mom1 + p * n1
        mom2 = mom2 + p * n2
    return np.stack(np.broadcast_arrays(mass, mom1, mom2), axis=-1)


def noncons_local_factor(variant, h, ja1, ja2, g):
    """Node-local factor of the non-conservative two-point term (momentum rows only)."""
    if variant == "wintermeyer-symmetric":
        gh = g * h
        return gh, gh
    return 0.5 * g * h * ja1, 0.5 * g * h * ja2


def noncons_pair_factor(variant, HL, HR, bL, bR, jaL1, jaL2, jaR1, jaR2):
    """Two-point factor (momentum rows): a jump for the jump variants, a symmetric average otherwise."""
    if variant == "ersing-jump":
        j = HR - HL
        return j, j
    if variant == "wintermeyer-jump":
        j = bR - bL
        return j, j
    bavg = 0.5 * (bL + bR)
    return 0.5 * (jaL1 + jaR1) * bavg, 0.5 * (jaL2 + jaR2) * bavg


def _check_variant(variant):
    if variant not in FLUX_VARIANTS:
        raise ValueError(f"unknown flux variant {variant!r}; expected one of {FLUX_VARIANTS}")


# --- pointwise API -----------------------------------------------------------


def _unpack(u, params):
    u = np.asarray(u, dtype=float)
    h, hv1, hv2 = u[..., 0], u[..., 1], u[..., 2]
    return h, hv1, hv2, velocity(h, hv1, params), velocity(h, hv2, params)


def volume_flux(uL, uR, params, variant="ersing-jump"):
    """Block two-point flux ``(f1*, f2*)`` for one of the three formulations."""
    _check_variant(variant)
    L = _unpack(uL, params)
    R = _unpack(uR, params)
    f1 = contravariant_volume_flux(variant, *L, *R, 1.0, 0.0, params.g)
    f2 = contravariant_volume_flux(variant, *L, *R, 0.0, 1.0, params.g)
    return f1, f2


def volume_flux_ersing(uL, uR, params):
    return volume_flux(uL, uR, params, "ersing-jump")


def noncons_local(u, ja, params, variant="ersing-jump"):
    """``(0, g h ja_1 / 2, g h ja_2 / 2)`` for the jump variants; ``(0, g h, g h)`` for the symmetric one."""
    u = np.asarray(u, dtype=float)
    ja = np.asarray(ja, dtype=float)
    l1, l2 = noncons_local_factor(variant, u[..., 0], ja[..., 0], ja[..., 1], params.g)
    return np.stack(np.broadcast_arrays(np.zeros_like(l1), l1, l2), axis=-1)


def noncons_jump(uL, bL, uR, bR, variant="ersing-jump"):
    """Jump factor ``(0, [[r]], [[r]])`` with ``r = h + b`` (ersing) or ``r = b`` (wintermeyer)."""
    if variant not in JUMP_VARIANTS:
        raise ValueError(f"{variant!r} has no local-times-jump factorization")
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    HL = uL[..., 0] + bL
    HR = uR[..., 0] + bR
    j1, j2 = noncons_pair_factor(variant, HL, HR, bL, bR, 0, 0, 0, 0)
    return np.stack(np.broadcast_arrays(np.zeros_like(j1), j1, j2), axis=-1)


def noncons_symmetric(bL, bR, jaL, jaR):
    """Symmetric factor ``(0, {ja_1}{b}, {ja_2}{b})`` of the local-times-symmetric formulation."""
    jaL = np.asarray(jaL, dtype=float)
    jaR = np.asarray(jaR, dtype=float)
    s1, s2 = noncons_pair_factor("wintermeyer-symmetric", 0, 0, bL, bR,
                                 jaL[..., 0], jaL[..., 1], jaR[..., 0], jaR[..., 1])
    return np.stack(np.broadcast_arrays(np.zeros_like(s1), s1, s2), axis=-1)


def dissipation_matrix_H(uL, uR, params):
    """Symmetric matrix mapping entropy-variable jumps to conservative jumps.

    Returns ``(H, ok)``; ``ok`` is False (and ``H`` zero) where the mean depth is
    not positive.
    """
    hL, _, _, v1L, v2L = _unpack(uL, params)
    hR, _, _, v1R, v2R = _unpack(uR, params)
    g = params.g
    ah = 0.5 * (hL + hR)
    a1 = 0.5 * (v1L + v1R)
    a2 = 0.5 * (v2L + v2R)
    ok = ah > 0
    H = np.empty(np.shape(ah) + (3, 3))
    H[..., 0, 0] = 1.0
    H[..., 0, 1] = H[..., 1, 0] = a1
    H[..., 0, 2] = H[..., 2, 0] = a2
    H[..., 1, 1] = g * ah + a1 * a1
    H[..., 2, 2] = g * ah + a2 * a2
    H[..., 1, 2] = H[..., 2, 1] = a1 * a2
    H = H / g
    H = np.where(np.asarray(ok)[..., None, None], H, 0.0)
    return H, ok


def max_wavespeed(uL, uR, normal, params):
    """Local Lax-Friedrichs speed ``max(|v.n| + sqrt(g h))`` over both states (unit normal)."""
    normal = np.asarray(normal, dtype=float)
    hL, _, _, v1L, v2L = _unpack(uL, params)
    hR, _, _, v1R, v2R = _unpack(uR, params)
    return _lambda_max(hL, v1L, v2L, hR, v1R, v2R, normal[..., 0], normal[..., 1], params.g)


def _lambda_max(hL, v1L, v2L, hR, v1R, v2R, nhat1, nhat2, g):
    cL = np.abs(v1L * nhat1 + v2L * nhat2) + np.sqrt(g * np.maximum(hL, 0.0))
    cR = np.abs(v1R * nhat1 + v2R * nhat2) + np.sqrt(g * np.maximum(hR, 0.0))
    return np.maximum(cL, cR)


def reconstruct_heights(hL, bL, hR, bR, params):
    """Interface depths and total heights ``(hL*, HL*, hR*, HR*)``.

    With hydrostatic reconstruction the depths are taken relative to the higher
    bed, which keeps wet/dry fronts positive and lake-at-rest exact; otherwise the
    nodal values are returned unchanged.
    """
    if params.hydrostatic_reconstruction:
        hLs = np.maximum(0.0, hL - np.maximum(0.0, bR - bL))
        hRs = np.maximum(0.0, hR - np.maximum(0.0, bL - bR))
        bs = np.maximum(bL, bR)
        return hLs, hLs + bs, hRs, hRs + bs
    return hL, hL + bL, hR, hR + bR


def interface_conservative(variant, hL, hv1L, hv2L, v1L, v2L, bL, hR, hv1R, hv2R, v1R, v2R, bR,
                           n1, n2, params, sigma=1.0):
    """Two-point flux along ``(n1, n2)`` plus entropy-variable Lax-Friedrichs dissipation.

    ``sigma`` is +1 when ``R`` lies in the positive reference direction and -1
    otherwise, so swapping the arguments and ``sigma`` gives the same value.
    """
    g = params.g
    hfL, HL, hfR, HR = reconstruct_heights(hL, bL, hR, bR, params)
    if params.hydrostatic_reconstruction:
        hv1L, hv2L, hv1R, hv2R = hfL * v1L, hfL * v2L, hfR * v1R, hfR * v2R
    flux = contravariant_volume_flux(variant, hfL, hv1L, hv2L, v1L, v2L,
                                     hfR, hv1R, hv2R, v1R, v2R, n1, n2, g)
    nrm = np.sqrt(n1 * n1 + n2 * n2)
    safe = np.where(nrm > 0, nrm, 1.0)
    lam = _lambda_max(hL, v1L, v2L, hR, v1R, v2R, n1 / safe, n2 / safe, g)
    # H(uL, uR) applied to the entropy-variable jump, written row by row
    a1 = 0.5 * (v1L + v1R)
    a2 = 0.5 * (v2L + v2R)
    ah = 0.5 * (hfL + hfR)
    dv1 = v1R - v1L
    dv2 = v2R - v2L
    dw0 = g * (HR - HL) - 0.5 * ((v1R * v1R + v2R * v2R) - (v1L * v1L + v2L * v2L))
    r0 = (dw0 + a1 * dv1 + a2 * dv2) / g
    r1 = a1 * r0 + ah * dv1
    r2 = a2 * r0 + ah * dv2
    coef = np.where(ah > 0, -0.5 * sigma * lam * nrm, 0.0)
    return flux + np.stack(np.broadcast_arrays(coef * r0, coef * r1, coef * r2), axis=-1)


def interface_noncons(variant, hL, bL, hR, bR, jaL1, jaL2, params):
    """Owner-side non-conservative interface term with the owner's local metric for both arguments."""
    _, HL, _, HR = reconstruct_heights(hL, bL, hR, bR, params)
    l1, l2 = noncons_local_factor(variant, hL, jaL1, jaL2, params.g)
    if variant == "wintermeyer-symmetric":
        p1, p2 = noncons_pair_factor(variant, HL, HR, bL, bR, jaL1, jaL2, jaL1, jaL2)
    else:
        p1, p2 = noncons_pair_factor(variant, HL, HR, bL, bR, 0, 0, 0, 0)
    nc1 = l1 * p1
    return np.stack(np.broadcast_arrays(np.zeros_like(nc1), nc1, l2 * p2), axis=-1)


def interface_flux(variant, hL, hv1L, hv2L, v1L, v2L, bL, hR, hv1R, hv2R, v1R, v2R, bR,
                   n1, n2, jaL1, jaL2, params, sigma=1.0):
    """Numerical interface flux and the owner's non-conservative term, seen from the owner ``L``.

    ``(n1, n2)`` contracts the conservative flux and scales the dissipation;
    ``(jaL1, jaL2)`` is the owner's node-local metric used in the non-conservative
    term.  Returns ``(flux, noncons)`` with a trailing axis of length 3.
    """
    flux = interface_conservative(variant, hL, hv1L, hv2L, v1L, v2L, bL, hR, hv1R, hv2R, v1R, v2R, bR,
                                  n1, n2, params, sigma)
    return flux, interface_noncons(variant, hL, bL, hR, bR, jaL1, jaL2, params)


def surface_flux(uL, bL, uR, bR, jaL, params, sigma=1.0, variant="ersing-jump"):
    """Interface flux between owner ``uL`` and neighbour ``uR`` using the owner's metric ``jaL``."""
    _check_variant(variant)
    jaL = np.asarray(jaL, dtype=float)
    L = _unpack(uL, params)
    R = _unpack(uR, params)
    return interface_flux(variant, *L, bL, *R, bR, jaL[..., 0], jaL[..., 1],
                          jaL[..., 0], jaL[..., 1], params, sigma)


def manning_source(u, params):
    """Manning bed-friction source ``-g n^2 |v| v h^(-1/3)`` on the momentum equations."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    if params.manning_n == 0.0:
        return out
    h = u[..., 0]
    v1 = velocity(h, u[..., 1], params)
    v2 = velocity(h, u[..., 2], params)
    speed = np.sqrt(v1 * v1 + v2 * v2)
    wet = h > 5.0 * params.eps_num
    coef = np.where(wet, -params.g * params.manning_n**2 * speed / np.cbrt(np.where(wet, h, 1.0)), 0.0)
    out[..., 1] = coef * v1
    out[..., 2] = coef * v2
    return out


def entropy_residual(u_i, b_i, u_m, b_m, ja_i, ja_m, params):
    """Entropy production of one node pair caused by metric jumps.

    ``-(1/2) ([[ (g h / 2) (v1, v2) ]] . [[Ja]]) [[h + b]]``; vanishes when the
    metric is equal at both nodes or the total height is continuous.
    """
    ja_i = np.asarray(ja_i, dtype=float)
    ja_m = np.asarray(ja_m, dtype=float)
    h_i, _, _, v1_i, v2_i = _unpack(u_i, params)
    h_m, _, _, v1_m, v2_m = _unpack(u_m, params)
    half_g = 0.5 * params.g
    d1 = half_g * (h_m * v1_m - h_i * v1_i)
    d2 = half_g * (h_m * v2_m - h_i * v2_i)
    dja = ja_m - ja_i
    jump_H = (h_m + b_m) - (h_i + b_i)
    return -0.5 * (d1 * dja[..., 0] + d2 * dja[..., 1]) * jump_H

"""Convex and concave envelopes of a flux on [0, rho_bar].

The analytic construction runs a monotone-chain hull over the convex arcs
of f (intervals where f'' >= 0), bridging them with tangent lines found by
polynomial root isolation plus bisection polish. The concave envelope is
the reflected convex envelope of -f. A dense sampled hull is kept as an
independent test oracle.

Interior structure (tangent chords between fixed arcs) does not depend on
rho_bar, so bridge computations are memoized per flux; only the terminal
bridge to the moving endpoint (rho_bar, f(rho_bar)) is new work per call.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from .flux import (
    DomainError,
    Flux,
    InternalError,
    _bisect,
    curvature_sign_intervals,
)

TANGENCY_TOL = 1e-10
SWEEP_LEVELS = 512
SWEEP_TOL = 1e-9


class EnvelopeError(InternalError):
    def __init__(self, msg, interval=None):
        self.interval = interval
        super().__init__(msg if interval is None else f"{msg} on {interval}")


@dataclass(frozen=True)
class Segment:
    u_lo: float
    u_hi: float
    shape: str  # "follows_flux" | "linear"
    slope: float = float("nan")
    intercept: float = float("nan")

    @property
    def is_linear(self):
        return self.shape == "linear"


@dataclass(frozen=True)
class Envelope:
    rho_bar: float
    kind: str  # "convex" | "concave"
    segments: tuple
    partition: tuple
    flux: Flux = field(repr=False, compare=False, default=None)
    approximate: bool = False

    def _seg_index(self, u):
        edges = np.asarray(self.partition[1:-1])
        return np.searchsorted(edges, u, side="right")

    def value(self, u):
        u_arr = np.clip(np.asarray(u, dtype=float), 0.0, self.rho_bar)
        idx = self._seg_index(u_arr)
        out = np.empty_like(u_arr, dtype=float)
        for i, seg in enumerate(self.segments):
            m = idx == i
            if not np.any(m):
                continue
            if seg.is_linear:
                out[m] = seg.intercept + seg.slope * u_arr[m]
            else:
                out[m] = self.flux.value(u_arr[m])
        return float(out) if np.ndim(u) == 0 else out

    def slope(self, u):
        """Envelope derivative h'(u). Values beyond rho_bar clamp to the end."""
        u_arr = np.clip(np.asarray(u, dtype=float), 0.0, self.rho_bar)
        idx = self._seg_index(u_arr)
        out = np.empty_like(u_arr, dtype=float)
        for i, seg in enumerate(self.segments):
            m = idx == i
            if not np.any(m):
                continue
            out[m] = seg.slope if seg.is_linear else self.flux.deriv(u_arr[m])
        return float(out) if np.ndim(u) == 0 else out

    @property
    def signature(self):
        return tuple("L" if s.is_linear else "F" for s in self.segments)

    @property
    def terminal(self):
        return self.segments[-1]

    def linear_segments(self):
        return [s for s in self.segments if s.is_linear]


# ---------------------------------------------------------------------------
# analytic construction (always on the convex side; concave goes through -f)
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("kind", "lo", "hi", "cin", "cout", "br_slope", "br_b")

    def __init__(self, kind, lo, hi):
        self.kind = kind  # "point" | "arc"
        self.lo = lo
        self.hi = hi
        self.cin = lo
        self.cout = hi if kind == "point" else lo
        self.br_slope = None  # bridge line arriving from the left
        self.br_b = None


@functools.lru_cache(maxsize=64)
def _negated(f: Flux):
    return f.negated()


@functools.lru_cache(maxsize=64)
def _convex_arcs(f: Flux):
    """Maximal closed intervals of [0, domain_max] with f'' >= 0."""
    return tuple(
        (a, b) for a, b, sign in curvature_sign_intervals(f, 0.0, f.domain_max) if sign > 0
    )


def _tangency_candidates(f: Flux, x0, y0, lo, hi):
    """Roots in [lo, hi] of T(u) = f(u) - y0 - f'(u)(u - x0)."""
    out = []
    for p_lo, p_hi, coeffs in f.pieces:
        a, b = max(lo, p_lo), min(hi, p_hi)
        if a > b:
            continue
        c = np.asarray(coeffs, dtype=float)
        d = P.polyder(c)
        t_poly = P.polysub(P.polysub(c, [y0]), P.polymul(d, [-x0, 1.0]))
        t_poly = np.trim_zeros(np.asarray(t_poly), "b")
        if len(t_poly) <= 1:
            continue
        scale = max(1.0, float(np.max(np.abs(t_poly))))
        for r in P.polyroots(t_poly):
            if abs(r.imag) <= 1e-8 * scale and a - 1e-10 <= r.real <= b + 1e-10:
                out.append(min(max(float(r.real), a), b))
    return sorted(out)


def _t_resid(f, x0, y0, u):
    return f.value(u) - y0 - f.deriv(u) * (u - x0)


def _tangent_from_point(f: Flux, x0, y0, lo, hi):
    """Tangency point on the convex arc [lo, hi] of the support line through
    (x0, y0). Returns (tau, clamped). T is monotone on the arc for external
    points, so the root is unique; out-of-arc roots clamp to an endpoint."""
    t_lo, t_hi = _t_resid(f, x0, y0, lo), _t_resid(f, x0, y0, hi)
    if t_lo == 0.0:
        return lo, False
    if t_hi == 0.0:
        return hi, False
    if t_lo * t_hi < 0.0:
        # Newton polish from the isolated root; T' = -f''(u)(u - x0)
        for r in _tangency_candidates(f, x0, y0, lo, hi):
            u = min(max(r, lo), hi)
            good = True
            for _ in range(3):
                dv = -f.deriv(u, 2) * (u - x0)
                if dv == 0.0:
                    good = False
                    break
                u -= _t_resid(f, x0, y0, u) / dv
                if not lo - 1e-9 <= u <= hi + 1e-9:
                    good = False
                    break
            if good:
                u = min(max(u, lo), hi)
                scale = 1.0 + abs(y0) + abs(f.value(u))
                if abs(_t_resid(f, x0, y0, u)) <= 1e-10 * scale:
                    return u, False
        return _bisect(lambda u: _t_resid(f, x0, y0, u), lo, hi), False
    # no sign change: the support line attaches at an arc end.
    # All tangents above the point -> corner at the far end from the point.
    if x0 <= lo:  # T decreasing on the arc
        return (hi, True) if t_lo > 0.0 else (lo, True)
    return (hi, True) if t_hi < 0.0 else (lo, True)


def _line_through(x0, y0, x1, y1):
    s = (y1 - y0) / (x1 - x0)
    return s, y0 - s * x0


def _support_line(f: Flux, x0, y0, x1, y1):
    # chords over tiny gaps lose the slope to cancellation; the tangent at
    # the midpoint is the same line to higher order
    if abs(x1 - x0) < 1e-6 * max(1.0, abs(x0), abs(x1)):
        xm = 0.5 * (x0 + x1)
        s = f.deriv(xm)
        return s, f.value(xm) - s * xm
    return _line_through(x0, y0, x1, y1)


def _line_valid(f: Flux, slope, b, lo, hi, tol):
    """Is slope*u + b <= f(u) on [lo, hi] (within tol)?"""
    if hi - lo <= 0.0:
        return True
    m, _, _, _ = f.extreme_values(lo, hi, slope=slope)
    scale = 1.0 + abs(b) + max(abs(f.value(lo)), abs(f.value(hi)))
    return m >= b - tol * scale


def _common_tangent(f: Flux, a_lo, a_hi, b_lo, b_hi):
    """Lower common tangent of two convex arcs, A left of B.

    Solved as a scalar root in the A-side tangency sigma: the line tangent
    at sigma must also be tangent where it first supports B.
    """

    def g(sigma):
        x0, y0 = sigma, f.value(sigma)
        tau, _ = _tangent_from_point(f, x0, y0, b_lo, b_hi)
        if abs(tau - sigma) < 1e-14 * max(1.0, abs(tau)):
            return 0.0
        return f.deriv(sigma) - (f.value(tau) - y0) / (tau - sigma)

    n = 33
    sig = np.linspace(a_lo, a_hi, n)
    vals = [g(s) for s in sig]
    for i in range(n - 1):
        if vals[i] == 0.0:
            s_star = sig[i]
            break
        if vals[i] * vals[i + 1] < 0.0:
            s_star = brentq(g, sig[i], sig[i + 1], xtol=1e-13, rtol=1e-15)
            break
    else:
        if vals[-1] == 0.0:
            s_star = a_hi
        else:
            return None
    tau, _ = _tangent_from_point(f, s_star, f.value(s_star), b_lo, b_hi)
    slope = f.deriv(s_star)
    return slope, f.value(s_star) - slope * s_star, s_star, tau


def _bridge_raw(f: Flux, a_kind, a_lo, a_hi, b_kind, b_lo, b_hi, tol):
    """Lower support line between two x-ordered graph objects.

    Returns (slope, intercept, contact_on_a, contact_on_b) or None when the
    objects touch (zero-length bridge).
    """
    if a_kind == "point" and b_kind == "point":
        if b_lo - a_hi < 1e-14 * max(1.0, abs(b_lo)):
            return None
        s, b = _support_line(f, a_hi, f.value(a_hi), b_lo, f.value(b_lo))
        return s, b, a_hi, b_lo
    if a_kind == "point" and b_kind == "arc":
        x0, y0 = a_hi, f.value(a_hi)
        tau, _ = _tangent_from_point(f, x0, y0, b_lo, b_hi)
        if abs(tau - x0) < 1e-14 * max(1.0, abs(tau)):
            return None
        s, b = _support_line(f, x0, y0, tau, f.value(tau))
        return s, b, x0, tau
    if a_kind == "arc" and b_kind == "point":
        x0, y0 = b_lo, f.value(b_lo)
        tau, _ = _tangent_from_point(f, x0, y0, a_lo, a_hi)
        if abs(tau - x0) < 1e-14 * max(1.0, abs(x0)):
            return None
        s, b = _support_line(f, tau, f.value(tau), x0, y0)
        return s, b, tau, x0
    # arc-arc: genuine common tangent, else clamped candidates
    ct = _common_tangent(f, a_lo, a_hi, b_lo, b_hi)
    if ct is not None:
        slope, b, sig, tau = ct
        if _line_valid(f, slope, b, a_lo, a_hi, tol) and _line_valid(
            f, slope, b, b_lo, b_hi, tol
        ):
            return slope, b, sig, tau
    for cand in (
        _bridge_raw(f, "point", a_hi, a_hi, "arc", b_lo, b_hi, tol),
        _bridge_raw(f, "arc", a_lo, a_hi, "point", b_lo, b_lo, tol),
        _bridge_raw(f, "point", a_hi, a_hi, "point", b_lo, b_lo, tol),
        # support line can pivot on the left end of A (the whole arc sits
        # above it); the arc-side clamp handles the mirrored case on B
        _bridge_raw(f, "point", a_lo, a_lo, "arc", b_lo, b_hi, tol),
        _bridge_raw(f, "point", a_lo, a_lo, "point", b_lo, b_lo, tol),
    ):
        if cand is None:
            continue
        slope, b, ca, cb = cand
        if _line_valid(f, slope, b, a_lo, a_hi, tol) and _line_valid(
            f, slope, b, b_lo, b_hi, tol
        ):
            return cand
    raise EnvelopeError("no admissible bridge found", (a_lo, b_hi))


@functools.lru_cache(maxsize=4096)
def _bridge_cached(f: Flux, key):
    return _bridge_raw(f, *key)


def _bridge(f, a: _Node, b: _Node, tol):
    key = (a.kind, a.lo, a.hi, b.kind, b.lo, b.hi, tol)
    return _bridge_cached(f, key)


def _chain(f: Flux, objects, tol):
    """Monotone-chain lower hull over x-ordered point/arc objects."""
    stack = [objects[0]]
    for new in objects[1:]:
        while True:
            top = stack[-1]
            br = _bridge(f, top, new, tol)
            if br is None:
                # objects touch; contact continues through the shared point
                if new.kind == "point":
                    top.cout = top.hi
                    new = None
                else:
                    new.cin = new.lo
                    new.cout = new.lo
                    stack.append(new)
                    new = None
                break
            slope, b, ca, cb = br
            if len(stack) > 1 and slope <= stack[-1].br_slope + 1e-13 * (
                1.0 + abs(slope)
            ):
                stack.pop()
                continue
            top.cout = ca
            new.cin = cb
            new.cout = cb if new.kind == "point" else max(cb, new.cin)
            new.br_slope = slope
            new.br_b = b
            stack.append(new)
            new = None
            break
    return stack


def _emit(f: Flux, stack, rho_bar, kind, tol):
    len_tol = 1e-12 * max(1.0, rho_bar)
    segs = []
    prev_out = 0.0
    for i, nd in enumerate(stack):
        if i > 0 and nd.cin - prev_out > len_tol:
            segs.append(
                Segment(prev_out, nd.cin, "linear", nd.br_slope, nd.br_b)
            )
        elif i > 0 and nd.cin < prev_out - 1e-9 * max(1.0, rho_bar):
            raise EnvelopeError("contacts out of order", (prev_out, nd.cin))
        if nd.kind == "arc" and nd.cout - nd.cin > len_tol:
            segs.append(Segment(nd.cin, nd.cout, "follows_flux"))
        prev_out = max(prev_out, nd.cout)
    if rho_bar - prev_out > len_tol:
        # trailing gap can only be a line to the endpoint; should not happen
        raise EnvelopeError("hull does not reach the right endpoint", (prev_out, rho_bar))

    # merge collinear neighbours, snap endpoints
    merged = []
    for s in segs:
        if merged and merged[-1].is_linear and s.is_linear:
            prev = merged[-1]
            scale = 1.0 + max(abs(prev.slope), abs(s.slope))
            if abs(prev.slope - s.slope) <= 1e-8 * scale:
                merged[-1] = Segment(prev.u_lo, s.u_hi, "linear", prev.slope, prev.intercept)
                continue
            raise EnvelopeError(
                f"corner between linear segments (slopes {prev.slope:.6g}, {s.slope:.6g})",
                (prev.u_lo, s.u_hi),
            )
        merged.append(s)
    if not merged:
        merged = [Segment(0.0, rho_bar, "follows_flux")]
    # force exact partition endpoints
    first, last = merged[0], merged[-1]
    merged[0] = Segment(0.0, first.u_hi, first.shape, first.slope, first.intercept)
    last = merged[-1]
    merged[-1] = Segment(last.u_lo, rho_bar, last.shape, last.slope, last.intercept)
    partition = tuple([s.u_lo for s in merged] + [rho_bar])
    return Envelope(rho_bar, kind, tuple(merged), partition, flux=f)


def _validate(env: Envelope, f: Flux, sign, tol):
    """sign=+1 for convex (env <= f), -1 for concave."""
    rho = env.rho_bar
    us = np.unique(
        np.concatenate([np.linspace(0.0, rho, 257), np.asarray(env.partition)])
    )
    gap = sign * (f.value(us) - env.value(us))
    scale = 1.0 + float(np.max(np.abs(f.value(us))))
    if np.min(gap) < -1e-8 * scale:
        i = int(np.argmin(gap))
        raise EnvelopeError(
            f"envelope crosses the flux by {-np.min(gap):.3e}", (us[i], us[i])
        )
    for a in env.partition:
        if abs(f.value(a) - env.value(a)) > 1e-7 * scale:
            raise EnvelopeError(f"envelope != f at partition point {a!r}")
    for a in env.partition[1:-1]:
        if abs(env.slope(a + 0.0) - f.deriv(a)) > max(1e-6, 1e4 * tol) * (
            1.0 + abs(f.deriv(a))
        ):
            # interior partition points are tangencies
            raise EnvelopeError(f"tangency residual too large at {a!r}")


def convex_envelope(f: Flux, rho_bar, tol=TANGENCY_TOL):
    """Greatest convex minorant of f on [0, rho_bar] with minimal partition."""
    rho_bar = float(rho_bar)
    if not 0.0 < rho_bar <= f.domain_max * (1 + 1e-12):
        raise DomainError(f"rho_bar {rho_bar} outside (0, domain_max]")
    arcs = []
    for a, b in _convex_arcs(f):
        a, b = max(a, 0.0), min(b, rho_bar)
        if b - a > 1e-13 * max(1.0, rho_bar):
            arcs.append((a, b))
    objects = []
    if arcs and arcs[0][0] <= 1e-13 * max(1.0, rho_bar):
        nd = _Node("arc", arcs[0][0], arcs[0][1])
        nd.cin = nd.cout = 0.0
        objects.append(nd)
        rest = arcs[1:]
    else:
        objects.append(_Node("point", 0.0, 0.0))
        rest = arcs
    for a, b in rest:
        objects.append(_Node("arc", a, b))
    objects.append(_Node("point", rho_bar, rho_bar))
    stack = _chain(f, objects, tol)
    env = _emit(f, stack, rho_bar, "convex", tol)
    _validate(env, f, +1, tol)
    return env


def concave_envelope(f: Flux, rho_bar, tol=TANGENCY_TOL):
    """Least concave majorant; reflected convex envelope of -f."""
    neg = convex_envelope(_negated(f), rho_bar, tol)
    segs = tuple(
        Segment(s.u_lo, s.u_hi, s.shape, -s.slope, -s.intercept)
        if s.is_linear
        else Segment(s.u_lo, s.u_hi, s.shape)
        for s in neg.segments
    )
    env = Envelope(neg.rho_bar, "concave", segs, neg.partition, flux=f)
    _validate(env, f, -1, tol)
    return env


def envelopes(f: Flux, rho_bar, tol=TANGENCY_TOL):
    return convex_envelope(f, rho_bar, tol), concave_envelope(f, rho_bar, tol)


# ---------------------------------------------------------------------------
# dense-hull oracle (tests only)
# ---------------------------------------------------------------------------


def envelope_oracle(f: Flux, rho_bar, n_samples, kind="convex"):
    """Sampled monotone-chain hull; ground truth for the analytic code."""
    if n_samples < 64:
        raise DomainError("oracle needs n_samples >= 64")
    xs = np.linspace(0.0, float(rho_bar), int(n_samples))
    ys = f.value(xs)
    if kind == "concave":
        ys = -ys
    hull = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            i1, i2 = hull[-2], hull[-1]
            cross = (xs[i2] - xs[i1]) * (ys[i] - ys[i1]) - (ys[i2] - ys[i1]) * (
                xs[i] - xs[i1]
            )
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    # group hull edges: adjacent sample indices follow the flux, gaps are lines
    segs = []
    partition = [0.0]
    run_start = hull[0]
    prev = hull[0]
    sign = 1.0 if kind == "convex" else -1.0
    for idx in hull[1:]:
        if idx == prev + 1:
            prev = idx
            continue
        if prev > run_start:
            segs.append(Segment(xs[run_start], xs[prev], "follows_flux"))
            partition.append(xs[prev])
        s, b = _line_through(xs[prev], sign * ys[prev], xs[idx], sign * ys[idx])
        segs.append(Segment(xs[prev], xs[idx], "linear", s, b))
        partition.append(xs[idx])
        run_start = idx
        prev = idx
    if prev > run_start:
        segs.append(Segment(xs[run_start], xs[prev], "follows_flux"))
        partition.append(xs[prev])
    if partition[-1] != xs[-1]:
        partition.append(xs[-1])
    # drop duplicate leading partition point
    part = [partition[0]]
    for p in partition[1:]:
        if p > part[-1]:
            part.append(p)
    return Envelope(
        float(rho_bar), kind, tuple(segs), tuple(part), flux=f, approximate=True
    )


# ---------------------------------------------------------------------------
# critical-level catalogue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalLevelCatalogue:
    levels: tuple  # event-inducing rho_bar values, ascending
    classes: tuple  # per level: "branching" | "merging" | "transforming"
    dips_negative: tuple  # per level: does f dip below zero underneath it
    signatures: tuple  # ((lo, hi, conv_sig, conc_sig), ...) over (0, rho_max]
    rho_max: float

    def levels_below(self, rho):
        return [
            (lv, cls, e)
            for lv, cls, e in zip(self.levels, self.classes, self.dips_negative)
            if lv < rho
        ]

    def class_of(self, level):
        for lv, cls in zip(self.levels, self.classes):
            if abs(lv - level) <= 1e-9 * max(1.0, abs(lv)):
                return cls
        return None


def _signature_at(f, rho, tol):
    conv = convex_envelope(f, rho, tol)
    conc = concave_envelope(f, rho, tol)
    return conv.signature, conc.signature


def _admissible(sig_pair):
    conv_sig, conc_sig = sig_pair
    return not (conv_sig[-1] == "L" and conc_sig[-1] == "L")


def critical_levels(f: Flux, rho_max, tol=SWEEP_TOL, n_sweep=SWEEP_LEVELS):
    """All rho_bar in (0, rho_max] where an envelope signature changes,
    classified by the event each level induces when the run crosses it."""
    rho_max = float(rho_max)
    if rho_max > f.domain_max * (1 + 1e-12):
        raise DomainError("rho_max exceeds domain_max")
    grid = np.linspace(rho_max / n_sweep, rho_max, n_sweep)
    sigs = [_signature_at(f, r, TANGENCY_TOL) for r in grid]

    boundaries = []

    def refine(lo, hi, sig_lo, sig_hi, depth=0):
        if sig_lo == sig_hi:
            return
        if depth > 40:
            raise DomainError(
                f"signature sweep cannot separate levels near {lo:.9g}; "
                "increase the sweep resolution"
            )
        a, b = lo, hi
        sa = sig_lo
        while b - a > tol * max(1.0, b):
            mid = 0.5 * (a + b)
            sm = _signature_at(f, mid, TANGENCY_TOL)
            if sm == sa:
                a = mid
            else:
                b, sig_hi_local = mid, sm
        boundary = 0.5 * (a + b)
        boundaries.append(boundary)
        delta = max(tol * 10 * max(1.0, boundary), 1e-12)
        s_above = _signature_at(f, min(boundary + delta, rho_max), TANGENCY_TOL)
        s_below = _signature_at(f, max(boundary - delta, grid[0] * 1e-6), TANGENCY_TOL)
        if s_below != sig_lo:
            refine(lo, boundary - delta, sig_lo, s_below, depth + 1)
        if s_above != sig_hi:
            refine(boundary + delta, hi, s_above, sig_hi, depth + 1)

    for i in range(len(grid) - 1):
        if sigs[i] != sigs[i + 1]:
            refine(grid[i], grid[i + 1], sigs[i], sigs[i + 1])

    boundaries.sort()
    for x, y in zip(boundaries, boundaries[1:]):
        if y - x < 100 * tol * max(1.0, y):
            raise DomainError(
                f"critical levels {x:.9g} and {y:.9g} too close to separate; "
                "increase the sweep resolution"
            )

    levels, classes, dip_flags_acc = [], [], []
    scale_f = 1.0 + max(abs(f.value(rho_max)), 1.0)
    # sign condition on f is global: a genuine shock reverses direction only
    # if f dips negative somewhere, not necessarily below the level itself
    f_min_global, _, _, _ = f.extreme_values(0.0, rho_max)
    for b in boundaries:
        delta = max(1e-6 * b, 20 * tol * max(1.0, b))
        above = _signature_at(f, min(b + delta, rho_max), TANGENCY_TOL)
        below = _signature_at(f, b - delta, TANGENCY_TOL)
        adm_a, adm_b = _admissible(above), _admissible(below)
        if adm_a and not adm_b:
            cls = "merging"
        elif not adm_a:
            cls = None  # band bottom or band-internal: never reached from above
        else:
            cls = "branching"
            if above[1] == ("L",) and below[1] and below[1][0] == "F":
                cls = "transforming"
            elif above[0] == ("L",) and below[0] and below[0][0] == "F":
                cls = "transforming"
        if cls is None:
            continue
        dips_negative = bool(f_min_global < -1e-10 * scale_f)
        if cls == "transforming" and abs(f.value(b)) > 1e-6 * scale_f:
            # a full chord degenerating away from zero level splits instead
            cls = "branching"
        levels.append(b)
        classes.append(cls)
        dip_flags_acc.append(dips_negative)

    # signature intervals between all boundaries
    edges = [0.0] + boundaries + [rho_max]
    intervals = []
    for lo, hi in zip(edges, edges[1:]):
        if hi - lo <= tol:
            continue
        mid = 0.5 * (lo + hi)
        cs, ks = _signature_at(f, mid, TANGENCY_TOL)
        intervals.append((lo, hi, cs, ks))
    return CriticalLevelCatalogue(
        tuple(levels), tuple(classes), tuple(dip_flags_acc), tuple(intervals), rho_max
    )

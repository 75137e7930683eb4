"""Piecewise-polynomial flux functions.

A flux is a C1 piecewise polynomial f on an interval [lo, domain_max].
Everything downstream (envelopes, shock speeds, event detection) reduces
to polynomial evaluation and root isolation on these pieces, which keeps
tangency computations robust.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from numpy.polynomial import polynomial as P

JOIN_TOL = 1e-9
CHORD_FLOOR = 1e-12
ROOT_TOL = 1e-12


class EnvlawError(Exception):
    """Base class for all engine errors."""


class DomainError(EnvlawError):
    """Bad input or configuration. CLI exit code 1."""


class InternalError(EnvlawError):
    """Solver self-consistency failure. CLI exit code 2."""


class DegenerateChordError(DomainError):
    """Chord endpoints too close for a meaningful slope."""


class DegenerateInflectionBand(DomainError):
    """f'' vanishes identically on a subinterval (affine piece)."""

    def __init__(self, lo, hi):
        self.band = (float(lo), float(hi))
        super().__init__(f"f'' vanishes identically on [{lo!r}, {hi!r}]")


class NonSmoothJoinError(DomainError):
    """Value or first derivative mismatch at a piece breakpoint."""

    def __init__(self, breakpoint, dv, ds):
        self.breakpoint = float(breakpoint)
        super().__init__(
            f"pieces do not join C1 at u={breakpoint!r} "
            f"(value gap {dv:.3e}, slope gap {ds:.3e})"
        )


def _bisect(fn, lo, hi, iters=90):
    """Plain bracketing bisection. fn(lo) and fn(hi) must differ in sign."""
    flo = fn(lo)
    if flo == 0.0:
        return lo
    fhi = fn(hi)
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise InternalError(f"bisection bracket [{lo}, {hi}] has no sign change")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
        if hi - lo < ROOT_TOL:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Flux:
    """pieces: ((lo, hi, coeffs), ...) with coeffs in ascending degree.

    Pieces must be contiguous and join C1. Evaluation outside the covered
    interval extends the first/last piece (grid solvers overshoot a little).
    """

    pieces: tuple
    domain_max: float
    name: str = ""

    def __post_init__(self):
        pieces = tuple(
            (float(lo), float(hi), tuple(float(c) for c in coeffs))
            for lo, hi, coeffs in self.pieces
        )
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "domain_max", float(self.domain_max))
        if not pieces:
            raise DomainError("flux needs at least one piece")
        for (a_lo, a_hi, _), (b_lo, b_hi, _) in zip(pieces, pieces[1:]):
            if a_hi >= b_hi or abs(a_hi - b_lo) > 1e-14 * max(1.0, abs(a_hi)):
                raise DomainError("flux pieces must be contiguous and increasing")
        self._check_joins()
        # interior breakpoints, used by searchsorted during evaluation
        object.__setattr__(
            self, "_bps", np.array([hi for _, hi, _ in pieces[:-1]], dtype=float)
        )
        # per-piece derivative coefficient ladders; scalar evaluation is the
        # inner loop of every envelope build, so these are precomputed once
        ladders = []
        for _, _, c in pieces:
            row = [tuple(c)]
            cur = c
            while len(cur) > 1:
                cur = tuple(float(v) for v in P.polyder(cur))
                row.append(cur)
            ladders.append(tuple(row))
        object.__setattr__(self, "_dcoeffs", tuple(ladders))

    def _check_joins(self):
        for (lo, hi, ca), (lo2, hi2, cb) in zip(self.pieces, self.pieces[1:]):
            va, vb = P.polyval(hi, ca), P.polyval(hi, cb)
            sa = P.polyval(hi, P.polyder(ca)) if len(ca) > 1 else 0.0
            sb = P.polyval(hi, P.polyder(cb)) if len(cb) > 1 else 0.0
            scale = 1.0 + max(abs(va), abs(vb))
            if abs(va - vb) > JOIN_TOL * scale or abs(sa - sb) > JOIN_TOL * scale:
                raise NonSmoothJoinError(hi, abs(va - vb), abs(sa - sb))

    # -- evaluation ---------------------------------------------------------

    def _coeff_for(self, u, order=0):
        """Pick the piece for scalar u and differentiate its coefficients."""
        idx = int(np.searchsorted(self._bps, u, side="right"))
        row = self._dcoeffs[idx]
        return row[order] if order < len(row) else (0.0,)

    def value(self, u):
        return self.deriv(u, 0)

    def deriv(self, u, k=1):
        if isinstance(u, float) or np.ndim(u) == 0:
            u = float(u)
            acc = 0.0
            for c in reversed(self._coeff_for(u, k)):
                acc = acc * u + c
            return acc
        u_arr = np.asarray(u, dtype=float)
        out = np.empty_like(u_arr)
        idx = np.searchsorted(self._bps, u_arr, side="right")
        for i in range(len(self.pieces)):
            m = idx == i
            if m.any():
                row = self._dcoeffs[i]
                c = row[k] if k < len(row) else (0.0,)
                out[m] = P.polyval(u_arr[m], np.asarray(c))
        return out

    def __call__(self, u):
        return self.value(u)

    # -- structure ----------------------------------------------------------

    def negated(self):
        return Flux(
            tuple((lo, hi, tuple(-c for c in coeffs)) for lo, hi, coeffs in self.pieces),
            self.domain_max,
            name=self.name + "~neg" if self.name else "",
        )

    def piece_roots(self, order, lo, hi):
        """Real roots of the order-th derivative inside [lo, hi], sorted."""
        found = []
        for p_lo, p_hi, coeffs in self.pieces:
            a, b = max(lo, p_lo), min(hi, p_hi)
            if a >= b:
                continue
            c = P.polyder(coeffs, order) if order else np.asarray(coeffs)
            c = np.trim_zeros(np.asarray(c, dtype=float), "b")
            if len(c) <= 1:
                continue
            scale = max(1.0, float(np.max(np.abs(c))))
            for r in P.polyroots(c):
                if abs(r.imag) > 1e-9 * scale:
                    continue
                x = float(r.real)
                if a - 1e-12 <= x <= b + 1e-12:
                    found.append(min(max(x, a), b))
        found.sort()
        out = []
        for x in found:
            if not out or x - out[-1] > 1e-11 * max(1.0, abs(x)):
                out.append(x)
        return out

    def extreme_values(self, lo, hi, slope=0.0):
        """(min, argmin, max, argmax) of f(u) - slope*u over [lo, hi]."""
        cand = [lo, hi]
        cand += [r for r in self.piece_roots(1, lo, hi)]
        # slope shift moves the critical points: solve f'(u) = slope instead
        if slope != 0.0:
            cand = [lo, hi]
            for p_lo, p_hi, coeffs in self.pieces:
                a, b = max(lo, p_lo), min(hi, p_hi)
                if a >= b:
                    continue
                d = list(P.polyder(coeffs))
                if d:
                    d[0] -= slope
                c = np.trim_zeros(np.asarray(d, dtype=float), "b")
                if len(c) > 1:
                    scale = max(1.0, float(np.max(np.abs(c))))
                    for r in P.polyroots(c):
                        if abs(r.imag) <= 1e-9 * scale and a <= r.real <= b:
                            cand.append(float(r.real))
        vals = [self.value(x) - slope * x for x in cand]
        i_min = int(np.argmin(vals))
        i_max = int(np.argmax(vals))
        return vals[i_min], cand[i_min], vals[i_max], cand[i_max]

    def deriv_range(self, lo, hi):
        """(min f', max f') over [lo, hi], via critical points of f'."""
        cand = [lo, hi] + self.piece_roots(2, lo, hi)
        vals = [self.deriv(x) for x in cand]
        return min(vals), max(vals)

    def superlinearity_witness(self):
        """f(domain_max)/domain_max; runs check their chord slopes against it."""
        return self.value(self.domain_max) / self.domain_max


@dataclass(frozen=True)
class NormalizationRecord:
    offset: float
    drift: float

    def x_original(self, x, t):
        """Map a normalized-frame location back to the original frame."""
        return np.asarray(x) + self.drift * np.asarray(t)

    def x_normalized(self, x, t):
        return np.asarray(x) - self.drift * np.asarray(t)


def normalize(raw: Flux):
    """Subtract f(0) + f'(0) u so the returned flux has f(0) = f'(0) = 0."""
    offset = raw.value(0.0)
    drift = raw.deriv(0.0)
    pieces = []
    for lo, hi, coeffs in raw.pieces:
        c = list(coeffs) + [0.0] * max(0, 2 - len(coeffs))
        c[0] -= offset
        c[1] -= drift
        pieces.append((lo, hi, tuple(c)))
    return Flux(tuple(pieces), raw.domain_max, name=raw.name), NormalizationRecord(
        float(offset), float(drift)
    )


def rh_speed(f: Flux, u1, u2):
    """Jump speed of a shock connecting u1 and u2."""
    if abs(u1 - u2) < CHORD_FLOOR * max(1.0, abs(u1), abs(u2)):
        raise DegenerateChordError(
            f"chord ({u1!r}, {u2!r}) below separation floor; use f' instead"
        )
    return (f.value(u1) - f.value(u2)) / (u1 - u2)


def inflection_points(f: Flux, u_max):
    """Sign-change roots of f'' on (0, u_max), refined by bisection.

    Breakpoints where f'' flips sign across a join count as inflections too.
    A piece with identically-zero f'' raises DegenerateInflectionBand.
    """
    if u_max > f.domain_max + 1e-12 * max(1.0, f.domain_max):
        raise DomainError(f"u_max {u_max} exceeds domain_max {f.domain_max}")
    pts = []
    for p_lo, p_hi, coeffs in f.pieces:
        a, b = max(0.0, p_lo), min(u_max, p_hi)
        if a >= b:
            continue
        dd = np.trim_zeros(np.asarray(P.polyder(coeffs, 2), dtype=float), "b")
        if len(dd) == 0:
            raise DegenerateInflectionBand(a, b)
        for r in f.piece_roots(2, a, b):
            w = max(1e-9, 1e-9 * abs(r))
            lo_p, hi_p = max(a, r - w), min(b, r + w)
            s_lo, s_hi = f.deriv(lo_p, 2), f.deriv(hi_p, 2)
            if s_lo * s_hi < 0.0:
                pts.append(_bisect(lambda x: f.deriv(x, 2), lo_p, hi_p))
    # joins where curvature flips without an interior root
    for _, hi, _ in f.pieces[:-1]:
        if 0.0 < hi < u_max:
            w = max(1e-9, 1e-9 * abs(hi))
            if f.deriv(hi - w, 2) * f.deriv(hi + w, 2) < 0.0:
                pts.append(hi)
    pts.sort()
    out = []
    for x in pts:
        if not out or x - out[-1] > 1e-10 * max(1.0, abs(x)):
            out.append(x)
    return out


def curvature_sign_intervals(f: Flux, lo, hi):
    """Maximal intervals of constant sign of f'' on [lo, hi].

    Returns a list of (a, b, sign) with sign in {+1, -1}. Intervals where
    f'' has an isolated zero but no sign change are not split.
    """
    pts = [p for p in inflection_points(f, hi) if lo < p < hi]
    edges = [lo] + pts + [hi]
    out = []
    for a, b in zip(edges, edges[1:]):
        if b - a <= 1e-14 * max(1.0, abs(b)):
            continue
        # sample away from the edges where f'' vanishes
        xs = np.linspace(a, b, 9)[1:-1]
        s = np.sign(f.deriv(xs, 2))
        s = s[s != 0]
        sign = 1 if (len(s) == 0 or s.sum() >= 0) else -1
        out.append((a, b, sign))
    return out


def flux_from_coeffs(coeffs, domain_max, name="", lo=None):
    """Single-piece flux from ascending coefficients."""
    lo = -float(domain_max) if lo is None else float(lo)
    return Flux(((lo, float(domain_max), tuple(coeffs)),), domain_max, name=name)

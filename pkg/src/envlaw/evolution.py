"""Time evolution of the signed fundamental solution.

The profile at each instant is held through its two inverse functions on a
fixed value grid: h_bar(u) is the position where the increasing side of the
profile passes value u, k_bar(u) the same for the decreasing side. Rows
advance at the slopes of the current convex and concave envelopes, the
running maximum rho_bar(t) comes back out of mass conservation, and
topology changes are pinned down by bisecting the step against the
critical-level catalogue. Once a run is down to a single genuine shock
with a pure fan behind it, the remaining evolution is closed-form and the
stepper hands over to TailModel.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace

import numpy as np

from .classify import (
    Event,
    ShockDescriptor,
    resolve_event_kind,
    shocks_from_state,
)
from .envelope import critical_levels, envelopes
from .flux import DomainError, Flux, InternalError

MASS_TOL = 1e-6
EVENT_RHO_TOL = 1e-9
PROBE_DELTA = 1e-4


class _MassDeficit(Exception):
    """Trapezoid mass tops out short of m; retry with a smaller step."""

    def __init__(self, deficit):
        self.deficit = deficit


@dataclass
class RunOptions:
    t0: float | None = None
    n_grid: int = 4096
    rel_step: float = 0.002  # target relative rho_bar decrease per step
    dt_init: float | None = None
    probe_delta: float = PROBE_DELTA
    tol_tangency: float = 1e-10
    tol_mass: float = MASS_TOL
    tol_event: float = EVENT_RHO_TOL
    tol_classify: float = 1e-8
    snapshot_times: tuple = ()
    max_states: int = 768
    max_steps: int = 200000
    sweep_levels: int = 512
    tail_records: int = 240


@dataclass
class SolverState:
    t: float
    rho_bar: float
    zeta: float
    u_grid: np.ndarray
    h_bar: np.ndarray
    k_bar: np.ndarray

    @property
    def n_alive(self):
        # rows with u <= rho_bar evolve, the rest stay frozen
        return int(np.searchsorted(self.u_grid, self.rho_bar, side="right"))

    @property
    def support(self):
        return float(self.h_bar[0]), float(self.k_bar[0])


@dataclass(frozen=True)
class StepRecord:
    t: float
    rho_bar: float
    zeta: float
    mass_residual: float
    shocks: tuple  # ((orientation, type, u_lo, u_hi, x, speed), ...)
    conv_partition: tuple
    conc_partition: tuple


@dataclass(frozen=True)
class FanSeed:
    """A value band released as a centered rarefaction at a merging event."""

    t: float
    x: float
    u_lo: float
    u_hi: float
    side: str  # "increasing" | "decreasing"


@dataclass
class ShockCurve:
    curve_id: int
    side: str
    shock_type: str
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    born_event: int | None = None
    died_event: int | None = None


# ---------------------------------------------------------------------------
# mass bookkeeping


def _prefix_trapz(u, g):
    return np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(u))])


def _invert_cell(g0, s, need):
    """Smallest x >= 0 with g0 x + s x^2 / 2 = need (stable form)."""
    if need <= 0.0:
        return 0.0
    disc = g0 * g0 + 2.0 * s * need
    den = g0 + np.sqrt(max(disc, 0.0))
    if den <= 0.0:
        return np.inf
    return 2.0 * need / den


def mass_at(u, h, k, rho):
    """Trapezoid integral of (k_bar - h_bar) over [0, rho]."""
    gap = k - h
    i = int(np.searchsorted(u, rho, side="right"))
    if i == 0:
        return 0.0
    M = _prefix_trapz(u[:i], gap[:i])
    if i >= len(u):
        return float(M[-1])
    x = float(rho) - float(u[i - 1])
    du = float(u[i] - u[i - 1])
    g_r = gap[i - 1] + (gap[i] - gap[i - 1]) * (x / du)
    return float(M[-1] + 0.5 * (gap[i - 1] + g_r) * x)


def solve_rhobar(u, h, k, m, mass_tol=MASS_TOL, rho_cap=None):
    """First value where cumulative mass reaches m.

    Cumulative mass is continuous and increasing in rho wherever the gap
    is positive, so the first upcrossing is the root and it moves sub-cell
    as the wedge drains; the search may interpolate one row past the cap,
    which the steppers keep refreshed from the live wedge. When even the
    capped table cannot reach m the step lost real mass and the caller
    must shrink it; a shortfall within half the mass tolerance is
    quadrature noise. Mass below the running root holds exactly m, so a
    capped step means the root moved less than float resolution of the
    prefix sums; it parks one ulp under the cap because the analytic root
    is strictly decreasing and downstream logic keys on that.
    """
    gap = k - h
    cap = float(u[-1]) if rho_cap is None else min(float(rho_cap), float(u[-1]))
    under = cap if rho_cap is None else float(np.nextafter(cap, 0.0))
    M_cap = mass_at(u, h, k, cap)
    if M_cap < m:
        deficit = float(m - M_cap)
        if deficit > 0.5 * mass_tol * m:
            raise _MassDeficit(deficit)
        return under
    n2 = min(len(u), int(np.searchsorted(u, cap, side="right")) + 1)
    uu = u[:n2]
    gg = gap[:n2]
    P = _prefix_trapz(uu, gg)
    hits = np.nonzero(P >= m)[0]
    if len(hits) == 0:
        i = n2 - 1  # root in the partial piece between the last row and cap
    else:
        i = int(hits[0])
        if i == 0:
            return float(uu[0])
    du = float(uu[i] - uu[i - 1])
    g0 = float(gg[i - 1])
    s = (float(gg[i]) - g0) / du
    x = _invert_cell(g0, s, float(m - P[i - 1]))
    return float(min(uu[i - 1] + min(x, du), under))


# ---------------------------------------------------------------------------
# initial data


def make_u_grid(rho0, n=4096):
    """Value grid on [0, rho0], geometrically refined toward both ends."""
    n_edge = max(8, n // 8)
    n_mid = max(16, n - 2 * n_edge - 2)
    edge = 0.05 * np.geomspace(1e-7, 1.0, n_edge)
    mid = np.linspace(0.05, 0.95, n_mid + 2)[1:-1]
    rel = np.concatenate([[0.0], edge, mid, 1.0 - edge[::-1], [1.0]])
    return rho0 * np.unique(rel)


def solve_rho0(f: Flux, m, t0):
    """Largest root of  r f'(r) - f(r) = m / t0  inside the domain."""
    target = m / t0
    top = f.domain_max

    def phi(r):
        return r * f.deriv(r) - f.value(r)

    if phi(top) < target:
        raise DomainError(
            "domain_max too small: the initial level for this mass and t0 "
            "lies outside the flux domain"
        )
    rs = np.linspace(0.0, top, 2049)
    vals = rs * f.deriv(rs) - f.value(rs)
    above = vals >= target
    up = np.nonzero(~above[:-1] & above[1:])[0]
    if len(up) == 0:
        raise DomainError("no admissible initial level for this mass and t0")
    lo, hi = rs[up[-1]], rs[up[-1] + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if phi(mid) >= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def init_state(f: Flux, m, t0, n_grid=4096, rho0=None, tol=1e-10):
    """State at the matching time t0: a single shock with a fan behind it.

    The increasing side is exactly t0 times the convex envelope slope (the
    interior envelope structure does not depend on rho_bar above the top
    critical level), the decreasing side is the shock at t0 f'(rho0).
    """
    if rho0 is None:
        rho0 = solve_rho0(f, m, t0)
    conv, conc = envelopes(f, rho0, tol)
    if conc.signature != ("L",):
        raise DomainError(
            "t0 too large: the profile at t0 is not a single-shock state "
            f"(decreasing-side signature {conc.signature})"
        )
    u = make_u_grid(rho0, n_grid)
    h = t0 * conv.slope(u)
    x_s = t0 * f.deriv(rho0)
    k = np.full_like(u, x_s)
    return SolverState(float(t0), float(rho0), float(x_s), u, h, k)


def _choose_t0(f: Flux, m, opts: RunOptions):
    top = f.domain_max
    speed = abs(f.deriv(0.5 * top))
    t0 = 1e-3 * m / (speed if speed > 0 else 1.0)
    rho0 = None
    for _ in range(200):
        try:
            rho0 = solve_rho0(f, m, t0)
        except DomainError:
            t0 *= 2.0
            continue
        if rho0 > 0.9 * top:
            t0 *= 2.0
            continue
        break
    else:
        raise DomainError("could not choose t0: domain_max too small for this mass")
    catalogue = critical_levels(f, rho0, n_sweep=opts.sweep_levels)
    for _ in range(60):
        lmax = max(catalogue.levels, default=0.0)
        if rho0 > 1.05 * lmax:
            break
        t0 *= 0.5
        rho0 = solve_rho0(f, m, t0)
        if rho0 > 0.98 * top:
            raise DomainError(
                "domain_max too small to start above the top critical level"
            )
        if rho0 > catalogue.rho_max:
            catalogue = critical_levels(f, rho0, n_sweep=opts.sweep_levels)
    else:
        raise DomainError("could not place t0 above the top critical level")
    # don't start far above the ladder either: every factor of rho_bar
    # above the top level costs drain time before anything happens
    lmax = max(catalogue.levels, default=0.0)
    while lmax > 0.0 and rho0 > 1.8 * lmax:
        try:
            r_try = solve_rho0(f, m, 2.0 * t0)
        except DomainError:
            break
        if r_try <= 1.05 * lmax:
            break
        t0, rho0 = 2.0 * t0, r_try
    return t0, rho0, catalogue


# ---------------------------------------------------------------------------
# stepping


class _EnvCache:
    """Envelope pairs keyed by exact rho_bar; event bisection re-asks the
    same values dozens of times."""

    def __init__(self, f, tol, cap=128):
        self.f = f
        self.tol = tol
        self.cap = cap
        self.data = {}
        self.order = []

    def at(self, rho):
        rho = float(rho)
        got = self.data.get(rho)
        if got is not None:
            return got
        pair = envelopes(self.f, rho, self.tol)
        self.data[rho] = pair
        self.order.append(rho)
        if len(self.order) > self.cap:
            self.data.pop(self.order.pop(0), None)
        return pair


def _attempt(f, state, dt, m, opts, cache):
    """One explicit step with the envelope field frozen at the starting
    rho_bar.

    The rows advance at the frozen envelope slopes, rows whose gap crosses
    zero die at the crossing, and the new rho_bar is re-solved from the
    layer-cake identity, which makes the step conservative by construction:
    drift in the tables moves the root, it never loses mass. Slopes are
    stale only inside the terminal segment (interior envelope structure
    does not move with rho_bar), a band of rows that dies within the step
    anyway.
    """
    u = state.u_grid
    n = state.n_alive
    ua = u[:n]
    conv, conc = cache.at(state.rho_bar)
    sv, sc = _balanced_slopes(conv, conc, ua)
    h2 = state.h_bar.copy()
    k2 = state.k_bar.copy()
    h2[:n] += dt * sv
    k2[:n] += dt * sc
    _clamp_pinched(h2, k2, n)
    _extend_tip(u, h2, k2, n)
    rho2 = solve_rhobar(u, h2, k2, m, opts.tol_mass, rho_cap=state.rho_bar)
    zeta = 0.5 * (np.interp(rho2, u, h2) + np.interp(rho2, u, k2))
    return SolverState(state.t + dt, rho2, float(zeta), u, h2, k2)


def _clamp_pinched(h2, k2, n):
    """Rows whose gap crossed zero within the step die at the crossing.

    Letting them run negative counts phantom negative area in the mass
    integral; pinning both tables to the midpoint is the sub-cell limit of
    the row's death and keeps the gap integral nonnegative.
    """
    ha, ka = h2[:n], k2[:n]
    neg = ha > ka
    if bool(np.any(neg)):
        mid = 0.5 * (ha[neg] + ka[neg])
        ha[neg] = mid
        ka[neg] = mid


def _extend_tip(u, h2, k2, n):
    """Refresh the first dead row from the live wedge below it.

    The mass root may interpolate one row past the cap, but that row's
    values froze when it died in an earlier step. Running both tables out
    along their last live cell's line, meeting at the midline where they
    would cross, keeps the top cell on current data; the stale archive
    would otherwise hold the root pinned near its node.
    """
    if n < 2 or n >= len(u):
        return
    r = (u[n] - u[n - 1]) / (u[n - 1] - u[n - 2])
    hs = h2[n - 1] + (h2[n - 1] - h2[n - 2]) * r
    ks = k2[n - 1] + (k2[n - 1] - k2[n - 2]) * r
    if ks < hs:
        hs = ks = 0.5 * (hs + ks)
    h2[n] = hs
    k2[n] = ks


def _balanced_slopes(conv, conc, ua):
    """Sampled slope tables whose gap-rate trapezoid is exact.

    The slopes integrate in u to the envelope values, so the mass below
    the last alive row grows at exactly their separation there; sampling
    picks up curvature error on follow pieces that would otherwise leak
    mass at a steady rate. Shifting the two sides splits the quadrature
    defect evenly, a slope perturbation far below the tangency tolerance.
    """
    sv = conv.slope(ua)
    sc = conc.slope(ua)
    span = ua[-1] - ua[0] if len(ua) > 1 else 0.0
    if span > 0.0:
        top = float(ua[-1])
        sep = conc.value(top) - conv.value(top)
        err = (np.trapezoid(sc, ua) - np.trapezoid(sv, ua)) - sep
        d = 0.5 * err / span
        sv = sv + d
        sc = sc - d
    return sv, sc


def _pinned_slopes(conv, conc, u, n, level):
    """Slope tables that hold the mass below a pinned level constant.

    With rho_bar resting on a catalogue level the envelopes meet f there,
    their separation vanishes, and the mass below the level does not move
    while the band underneath pinches. The discrete rate has to cancel
    through the same pieces the mass integral reads: full cells to the last
    node, the partial cell up to the level, and the refreshed row above it,
    whose advance is the same linear extension of the last live cell.
    """
    ua = u[:n]
    sv = conv.slope(ua)
    sc = conc.slope(ua)
    if n < 2 or n >= len(u):
        return sv, sc
    a = sc - sv
    span = float(ua[-1] - ua[0])
    r = (u[n] - u[n - 1]) / (u[n - 1] - u[n - 2])
    a_ext = a[-1] * (1.0 + r) - a[-2] * r
    w = float(level) - float(u[n - 1])
    th = w / float(u[n] - u[n - 1])
    a_lvl = a[-1] + th * (a_ext - a[-1])
    rate = float(np.trapezoid(a, ua)) + 0.5 * (a[-1] + a_lvl) * w
    den = 2.0 * (span + w)
    if den > 0.0:
        d = rate / den
        sv = sv + d
        sc = sc - d
    return sv, sc


def _pinch_cap(state, cache, lv_guard, base=None):
    """(gap, time-to-pinch) of the fastest-closing alive row at or below
    lv_guard, with the field frozen at base (default: the state's rho_bar).

    Rows under the next merging level survive until rho_bar reaches it, so
    their gap hitting zero IS the plateau collision. Capping steps at the
    earliest such pinch walks rho_bar onto the level exactly as the dying
    band closes, which is what makes the restriction there mass-exact. Rows
    above the guard level die routinely as rho_bar falls and stay exempt.
    """
    u = state.u_grid
    n = min(state.n_alive, int(np.searchsorted(u, lv_guard, side="right")))
    if n <= 0:
        return np.inf, np.inf
    ua = u[:n]
    conv, conc = cache.at(state.rho_bar if base is None else float(base))
    rate = conv.slope(ua) - conc.slope(ua)  # > 0 where the gap is closing
    gap = state.k_bar[:n] - state.h_bar[:n]
    closing = (rate > 0.0) & (gap > 0.0)  # pinched rows are already done
    if not bool(np.any(closing)):
        return np.inf, np.inf
    caps = gap[closing] / rate[closing]
    i = int(np.argmin(caps))
    return float(gap[closing][i]), float(caps[i])


def _advance_at_level(state, level, dt, cache):
    """March the tables with the field frozen exactly at a catalogue level.

    Once the live structure above a merging level is thinner than the grid
    cell and carries negligible mass, the level field is the resolved limit
    of the true one; rho_bar stays pinned to the level until the dying band
    underneath pinches shut. The envelopes meet f at the level, so the mass
    below it must not move. The slope shift holding it cannot be solved in
    closed form: rows pinching inside the step floor at zero, so the shift
    is bisected against the realized end-state mass instead.
    """
    conv, conc = cache.at(float(level))
    u = state.u_grid
    n = int(np.searchsorted(u, level, side="right"))
    ua = u[:n]
    sv, sc = _pinned_slopes(conv, conc, u, n, level)
    target = mass_at(u, state.h_bar, state.k_bar, level)

    def marched(d):
        h2 = state.h_bar.copy()
        k2 = state.k_bar.copy()
        h2[:n] += dt * (sv + d)
        k2[:n] += dt * (sc - d)
        _clamp_pinched(h2, k2, n)
        _extend_tip(u, h2, k2, n)
        return h2, k2

    def miss(d):
        h2, k2 = marched(d)
        return mass_at(u, h2, k2, level) - target

    d_star = 0.0
    if n >= 2 and dt > 0.0:
        span = float(ua[-1] - ua[0]) + (float(level) - float(u[n - 1]))
        m0 = miss(0.0)
        if m0 != 0.0 and span > 0.0:
            # miss decreases in d; bracket outward from the linear scale
            step = max(abs(m0) / (dt * span), 1e-9 * abs(m0))
            lo, hi = (0.0, step) if m0 > 0.0 else (-step, 0.0)
            f_lo = m0 if m0 > 0.0 else miss(lo)
            f_hi = miss(hi) if m0 > 0.0 else m0
            for _ in range(60):
                if f_lo > 0.0 >= f_hi:
                    break
                if f_hi > 0.0:
                    lo, f_lo = hi, f_hi
                    hi *= 2.0
                    f_hi = miss(hi)
                else:
                    hi, f_hi = lo, f_lo
                    lo = 2.0 * lo - step
                    f_lo = miss(lo)
            if f_lo > 0.0 >= f_hi:
                for _ in range(64):
                    mid = 0.5 * (lo + hi)
                    if mid <= min(lo, hi) or mid >= max(lo, hi):
                        break
                    f_mid = miss(mid)
                    if f_mid > 0.0:
                        lo = mid
                    else:
                        hi = mid
                d_star = 0.5 * (lo + hi)

    h2, k2 = marched(d_star)
    zeta = 0.5 * (float(np.interp(level, u, h2)) + float(np.interp(level, u, k2)))
    return SolverState(state.t + dt, float(level), zeta, u, h2, k2)


def _land_on_level(f, state, dt_hi, level, m, opts, cache):
    """Shrink the step so rho_bar lands just above level."""
    band = opts.tol_event * max(1.0, level)
    lo, hi = 0.0, dt_hi
    best = None
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        trial = _attempt(f, state, mid, m, opts, cache)
        if trial.rho_bar < level:
            hi = mid
        else:
            lo = mid
            best = trial
            if trial.rho_bar <= level + band:
                return trial
    if best is None:
        raise InternalError("event bisection failed to bracket the level")
    return best


# ---------------------------------------------------------------------------
# events


def _catalogue_boundaries(catalogue):
    bs = set()
    for lo, hi, _cs, _ks in catalogue.signatures:
        bs.add(float(lo))
        bs.add(float(hi))
    return sorted(b for b in bs if b > 0.0)


def _guarded_delta(value, boundaries, base, direction):
    """Probe offset shrunk so the probe stays inside one signature interval."""
    delta = base
    if direction > 0:
        for b in boundaries:
            if b > value * (1 + 1e-12):
                delta = min(delta, 0.25 * (b - value) / value)
                break
    else:
        below = [b for b in boundaries if b < value * (1 - 1e-12)]
        if below:
            delta = min(delta, 0.25 * (value - below[-1]) / value)
    return max(delta, 1e-12)


def _probe_shocks(f, rho, opts, cache):
    conv, conc = cache.at(rho)
    return shocks_from_state(f, conv, conc, opts.tol_classify, check=True)


def _interval_key(s, rho):
    lo = 0.0 if s.u_lo <= 1e-12 * max(1.0, rho) else s.u_lo
    hi = np.inf if s.anchor == "max" else s.u_hi
    return (s.orientation, s.shock_type, lo, hi)


def _iclose(a, b, atol):
    if np.isinf(a) or np.isinf(b):
        return a == b
    return abs(a - b) <= atol


def _split_participants(pre_sh, post_sh, rho_pre, rho_post, atol):
    """Shocks persisting through the event cancel; the rest participate."""
    post_keys = [_interval_key(s, rho_post) for s in post_sh]
    used = set()
    incoming = []
    for s in pre_sh:
        ka = _interval_key(s, rho_pre)
        hit = None
        for j, kb in enumerate(post_keys):
            if j in used or ka[0] != kb[0] or ka[1] != kb[1]:
                continue
            if _iclose(ka[2], kb[2], atol) and _iclose(ka[3], kb[3], atol):
                hit = j
                break
        if hit is None:
            incoming.append(s)
        else:
            used.add(hit)
    outgoing = [s for j, s in enumerate(post_sh) if j not in used]
    return incoming, outgoing


def _merge_target(f, level, opts, cache):
    """New rho_bar after a merging jump: the largest interior partition
    point of the union of both envelope partitions at the level."""
    conv, conc = cache.at(float(level))
    pts = sorted(set(conv.partition) | set(conc.partition))
    tol = 1e-9 * max(1.0, level)
    interior = [p for p in pts if tol < p < level - tol]
    if not interior:
        raise InternalError("merging event without an interior partition point")
    return max(interior), (conv, conc)


def _merge_ready(f, state, lv, cls, m, opts, cache):
    """Is the dying band between the jump target and the level empty?

    The jump conserves mass only once everything above the target has
    drained; firing on the first pinched row would strand the rest of the
    band in the archive. merging_branching keeps rho_bar at the level, so
    there the first pinch is the collision itself.
    """
    if cls != "merging":
        g_min, _ = _pinch_cap(state, cache, lv, base=lv)
        return g_min <= 0.25 * opts.tol_mass * m / max(lv, 1e-12)
    tgt, _pair = _merge_target(f, lv, opts, cache)
    u_g = state.u_grid
    # measure from the first grid row strictly above the target: the sliver
    # between the target and that row reads the surviving wedge corner
    # through interpolation, and that corner closes only at the event itself
    j = int(np.searchsorted(u_g, tgt, side="right"))
    band = mass_at(u_g, state.h_bar, state.k_bar, lv) - mass_at(
        u_g, state.h_bar, state.k_bar, float(u_g[j])
    )
    return band <= 0.2 * opts.tol_mass * m


def _fan_seeds(t, state, pre_pair, post_pair, target, tol):
    """Value bands that sat inside a shock before an event and lie in a
    follows region after it fan out from that shock's position."""
    seeds = []
    width_tol = max(1e-6 * max(1.0, target), 100 * tol)
    for side, tab, pre_env, post_env in (
        ("increasing", state.h_bar, pre_pair[0], post_pair[0]),
        ("decreasing", state.k_bar, pre_pair[1], post_pair[1]),
    ):
        pre_lin = [
            (s.u_lo, min(s.u_hi, target))
            for s in pre_env.segments
            if s.is_linear and s.u_lo < target
        ]
        for sp in post_env.segments:
            if sp.is_linear:
                continue
            for a, b in pre_lin:
                lo = max(a, sp.u_lo)
                hi = min(b, sp.u_hi)
                if hi - lo > width_tol:
                    x = float(np.interp(0.5 * (lo + hi), state.u_grid, tab))
                    seeds.append(FanSeed(t, x, float(lo), float(hi), side))
    return seeds


def _dip_flag_of(catalogue, level):
    for lv, e in zip(catalogue.levels, catalogue.dips_negative):
        if abs(lv - level) <= 1e-9 * max(1.0, lv):
            return e
    return False


def _process_event(f, pre_state, level, cls, catalogue, m, opts, cache):
    """Classify the topology change at a critical level and build the
    post-event state. Returns (event, post_state, fan_seeds, rho_out)
    where rho_out is the probe level at which the outgoing shocks were
    read off (strictly inside the signature interval below)."""
    bounds = _catalogue_boundaries(catalogue)
    dips_negative = _dip_flag_of(catalogue, level)
    d_in = _guarded_delta(level, bounds, opts.probe_delta, +1)
    rho_in = level * (1.0 + d_in)
    pre_sh = _probe_shocks(f, rho_in, opts, cache)

    if cls == "merging":
        target, pre_pair = _merge_target(f, level, opts, cache)
        d_out = _guarded_delta(target, bounds, opts.probe_delta, -1)
        rho_out = target * (1.0 - d_out)
        post_sh = _probe_shocks(f, rho_out, opts, cache)
        post_pair = cache.at(float(target))
        seeds = _fan_seeds(
            pre_state.t, pre_state, pre_pair, post_pair, target, opts.tol_tangency
        )
        post_state = SolverState(
            pre_state.t,
            float(target),
            pre_state.zeta,
            pre_state.u_grid,
            pre_state.h_bar,
            pre_state.k_bar,
        )
        rho_after = float(target)
    else:
        d_out = _guarded_delta(level, bounds, opts.probe_delta, -1)
        rho_out = level * (1.0 - d_out)
        post_sh = _probe_shocks(f, rho_out, opts, cache)
        seeds = _fan_seeds(
            pre_state.t,
            pre_state,
            cache.at(float(rho_in)),
            cache.at(float(rho_out)),
            float(level),
            opts.tol_tangency,
        )
        post_state = pre_state
        rho_after = float(level)

    atol = 5.0 * max(d_in, d_out) * level
    incoming, outgoing = _split_participants(pre_sh, post_sh, rho_in, rho_out, atol)
    kind = resolve_event_kind(
        tuple(s.shock_type for s in incoming),
        tuple(s.shock_type for s in outgoing),
        cls,
        dips_negative,
    )
    ev = Event(
        kind=kind,
        time=pre_state.t,
        location=pre_state.zeta,
        incoming=tuple(s.shock_type for s in incoming),
        outgoing=tuple(s.shock_type for s in outgoing),
        rho_before=float(level),
        rho_after=rho_after,
        incoming_shocks=tuple(incoming),
        outgoing_shocks=tuple(outgoing),
    )
    return ev, post_state, seeds, rho_out


# ---------------------------------------------------------------------------
# closed-form tail


@dataclass
class TailModel:
    """Single genuine shock plus a pure fan: the rest of the run in closed
    form. mode "dec" means the shock rides on the decreasing side (fan on
    h_bar), mode "inc" the mirror image."""

    flux: Flux
    t1: float
    mode: str
    rho1: float
    m: float
    u: np.ndarray  # alive grid at handover, [0, rho1]
    fan1: np.ndarray  # fan-side table at t1
    full_state: SolverState

    def __post_init__(self):
        self.fp = self.flux.deriv(self.u)
        self.I_fan = _prefix_trapz(self.u, self.fan1)
        self.I_fp = _prefix_trapz(self.u, self.fp)

    def _fan(self, r, t):
        dt = t - self.t1
        return np.interp(r, self.u, self.fan1) + dt * self.flux.deriv(r)

    def _ifan(self, r, t):
        # trapezoid integral of the fan table over [0, r]
        dt = t - self.t1
        i = int(np.searchsorted(self.u, r, side="right"))
        i = min(max(i, 1), len(self.u) - 1)
        u0 = self.u[i - 1]
        base = self.I_fan[i - 1] + dt * self.I_fp[i - 1]
        g0 = self.fan1[i - 1] + dt * self.fp[i - 1]
        return base + 0.5 * (g0 + self._fan(r, t)) * (r - u0)

    def _excess(self, r, t):
        if self.mode == "dec":
            return r * self._fan(r, t) - self._ifan(r, t)
        return self._ifan(r, t) - r * self._fan(r, t)

    def rho(self, t):
        lo, hi = 0.0, float(self.u[-1])
        top = self._excess(hi, t)
        target = self.m
        if top < target:
            if self.m - top > 0.5 * MASS_TOL * self.m:
                raise InternalError("tail mass equation has no root on the grid")
            target = top
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self._excess(mid, t) >= target:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    def mass_residual(self, t):
        return float(abs(self._excess(self.rho(t), t) - self.m))

    def shock_x(self, t):
        return float(self._fan(self.rho(t), t))

    def state_at(self, t):
        rho = self.rho(t)
        x_s = float(self._fan(rho, t))
        full = self.full_state
        h = full.h_bar.copy()
        k = full.k_bar.copy()
        n1 = len(self.u)
        fan_now = self.fan1 + (t - self.t1) * self.fp
        if self.mode == "dec":
            h[:n1] = fan_now
            k[:n1] = x_s
        else:
            k[:n1] = fan_now
            h[:n1] = x_s
        return SolverState(float(t), float(rho), x_s, full.u_grid, h, k)


# ---------------------------------------------------------------------------
# the run record


@dataclass
class Timeline:
    flux: Flux
    mass: float
    t0: float
    t_end: float
    options: RunOptions
    catalogue: object
    u_grid: np.ndarray
    events: list
    records: list
    states: list  # (t, SolverState, protected) sparse, event-adjacent kept
    shock_curves: list
    snapshots: list  # (t, x_polyline, u_polyline)
    fan_seeds: list
    tail: TailModel | None
    normalization: object = None
    mass_residual_max: float = 0.0

    def state_at(self, t):
        if t < self.t0 - 1e-12 * max(1.0, self.t0):
            raise DomainError(f"t={t} precedes the matching time t0={self.t0}")
        if self.tail is not None and t >= self.tail.t1:
            return self.tail.state_at(t)
        times = [e[0] for e in self.states]
        i = bisect.bisect_right(times, t)
        if i == 0:
            return self.states[0][1]
        if i >= len(times):
            return self.states[-1][1]
        t_a, s_a, _p = self.states[i - 1]
        t_b, s_b, _q = self.states[i]
        if t_b <= t_a:
            return s_b
        w = (t - t_a) / (t_b - t_a)
        h = (1 - w) * s_a.h_bar + w * s_b.h_bar
        k = (1 - w) * s_a.k_bar + w * s_b.k_bar
        rho = solve_rhobar(
            s_a.u_grid, h, k, self.mass, self.options.tol_mass, rho_cap=s_a.rho_bar
        )
        zeta = 0.5 * (np.interp(rho, s_a.u_grid, h) + np.interp(rho, s_a.u_grid, k))
        return SolverState(float(t), float(rho), float(zeta), s_a.u_grid, h, k)

    def rho_at(self, t):
        if self.tail is not None and t >= self.tail.t1:
            return self.tail.rho(t)
        return self.state_at(t).rho_bar

    def shock_x_at(self, t):
        """Position of the shock anchored at the maximum."""
        if self.tail is not None and t >= self.tail.t1:
            return self.tail.shock_x(t)
        return self.state_at(t).zeta

    @property
    def final_state(self):
        if self.tail is not None:
            return self.tail.state_at(self.t_end)
        return self.states[-1][1]


def profile_polyline(state):
    """The profile graph as (x, u) vertices: up the increasing side, over
    the top, back down. Shock faces appear as repeated x with distinct u."""
    n = state.n_alive
    u = state.u_grid[:n]
    xs = np.concatenate([state.h_bar[:n], [state.zeta], state.k_bar[:n][::-1]])
    us = np.concatenate([u, [state.rho_bar], u[::-1]])
    return xs, us


def shocks_with_positions(state, conv, conc, f, opts):
    """Pair each linear-segment shock with its plateau position and check
    the plateau really is flat."""
    shocks = shocks_from_state(f, conv, conc, opts.tol_classify, check=True)
    u = state.u_grid
    out = []
    span = max(abs(state.k_bar[0] - state.h_bar[0]), 1.0)
    for s in shocks:
        table = state.h_bar if s.orientation == "increasing" else state.k_bar
        mid = 0.5 * (s.u_lo + s.u_hi)
        x = float(np.interp(mid, u, table))
        w = s.u_hi - s.u_lo
        if w > 1e-3 * max(1.0, state.rho_bar):
            x_a = float(np.interp(s.u_lo + 0.2 * w, u, table))
            x_b = float(np.interp(s.u_hi - 0.2 * w, u, table))
            if abs(x_b - x_a) > 1e-6 * span:
                raise InternalError(
                    f"plateau not flat for {s.shock_type} on "
                    f"({s.u_lo:.6g}, {s.u_hi:.6g}): spread {x_b - x_a:.3e}"
                )
        out.append((s, x))
    return out


class _ShockTracker:
    """Greedy id assignment for shock curves across steps."""

    def __init__(self, scale):
        self.scale = scale
        self.next_id = 0
        self.active = {}  # cid -> (side, type, u_lo, u_hi)
        self.curves = {}

    def observe(self, t, shocks_xs, event_idx=None):
        taken = set()
        seen = {}
        for s, x in shocks_xs:
            best, best_score = None, None
            for cid, (side, typ, lo, hi) in self.active.items():
                if cid in taken or side != s.orientation or typ != s.shock_type:
                    continue
                score = abs(lo - s.u_lo) + abs(hi - s.u_hi)
                if best is None or score < best_score:
                    best, best_score = cid, score
            if best is not None and best_score <= 0.1 * self.scale:
                cid = best
                taken.add(cid)
            else:
                cid = self.next_id
                self.next_id += 1
                self.curves[cid] = ShockCurve(
                    cid, s.orientation, s.shock_type, born_event=event_idx
                )
            cur = self.curves[cid]
            cur.times.append(t)
            cur.positions.append(x)
            seen[cid] = (s.orientation, s.shock_type, s.u_lo, s.u_hi)
        for cid in list(self.active):
            if cid not in seen and self.curves[cid].died_event is None:
                self.curves[cid].died_event = event_idx
        self.active = seen


# ---------------------------------------------------------------------------
# the driver


def run(f: Flux, m, t_end, options: RunOptions | None = None):
    opts = options or RunOptions()
    if m <= 0:
        raise DomainError("mass must be positive")
    if abs(f.value(0.0)) > 1e-9 or abs(f.deriv(0.0)) > 1e-9:
        raise DomainError("flux must satisfy f(0) = f'(0) = 0; normalize it first")

    if opts.t0 is None:
        t0, rho0, catalogue = _choose_t0(f, m, opts)
    else:
        t0 = float(opts.t0)
        rho0 = solve_rho0(f, m, t0)
        catalogue = critical_levels(f, rho0, n_sweep=opts.sweep_levels)
        lmax = max(catalogue.levels, default=0.0)
        if rho0 <= lmax * (1 + 1e-9):
            raise DomainError(
                "t0 too large: the initial level sits at or below a critical level"
            )
    if t0 >= t_end:
        raise DomainError(f"t_end={t_end} must exceed the matching time t0={t0}")

    state = init_state(f, m, t0, opts.n_grid, rho0=rho0, tol=opts.tol_tangency)
    cache = _EnvCache(f, opts.tol_tangency)
    witness = f.superlinearity_witness()

    events = []
    records = []
    states_store = []
    seeds_all = []
    tracker = _ShockTracker(rho0)
    snaps_pending = sorted({float(s) for s in opts.snapshot_times})
    for s in snaps_pending:
        if s < t0 * (1 - 1e-12) or s > t_end * (1 + 1e-12):
            raise DomainError(f"snapshot time {s} outside [t0={t0}, t_end={t_end}]")
    snapshots = []
    consumed = set()
    mass_resid_max = 0.0
    pending_event = None  # event index for births at the next record

    def _store(st, protect):
        states_store.append((st.t, st, protect))
        if len(states_store) > opts.max_states:
            kept = [
                e
                for i, e in enumerate(states_store)
                if e[2] or i % 2 == 0 or i >= len(states_store) - 2
            ]
            states_store[:] = kept

    def note(st, event_idx=None, classify_rho=None, protect=False):
        """Record an accepted state; returns its envelopes and shocks."""
        nonlocal mass_resid_max, pending_event
        if event_idx is None and pending_event is not None:
            event_idx = pending_event
        pending_event = None
        conv, conc = cache.at(
            st.rho_bar if classify_rho is None else float(classify_rho)
        )
        sx = shocks_with_positions(st, conv, conc, f, opts)
        resid = abs(mass_at(st.u_grid, st.h_bar, st.k_bar, st.rho_bar) - m)
        if resid > opts.tol_mass * m:
            raise InternalError(
                f"mass conservation violated at t={st.t}: |M - m| = {resid:.3e}"
            )
        mass_resid_max = max(mass_resid_max, resid)
        top_slope = max(
            (abs(seg.slope) for e in (conv, conc) for seg in e.segments if seg.is_linear),
            default=0.0,
        )
        if top_slope > witness * (1 + 1e-9):
            raise DomainError(
                "domain_max too small: a chord slope exceeds f(domain_max)/domain_max"
            )
        records.append(
            StepRecord(
                st.t,
                st.rho_bar,
                st.zeta,
                resid,
                tuple(
                    (s.orientation, s.shock_type, s.u_lo, s.u_hi, x, s.speed)
                    for s, x in sx
                ),
                conv.partition,
                conc.partition,
            )
        )
        tracker.observe(st.t, sx, event_idx)
        _store(st, protect)
        return conv, conc, [s for s, _x in sx]

    def take_snapshot(st):
        xs, us = profile_polyline(st)
        snapshots.append((st.t, xs, us))

    def tail_from(st, conv, conc, shocks):
        rem = [lv for lv in catalogue.levels if lv not in consumed and lv < st.rho_bar]
        if rem:
            return None
        if len(shocks) != 1 or shocks[0].shock_type != "G":
            return None
        g = shocks[0]
        if g.u_lo > 1e-12 * max(1.0, st.rho_bar):
            return None
        fan_env = conv if g.orientation == "decreasing" else conc
        if any(seg.is_linear for seg in fan_env.segments):
            return None
        return "dec" if g.orientation == "decreasing" else "inc"

    cs, ks, sh = note(state, protect=True)
    if snaps_pending and abs(snaps_pending[0] - t0) <= 1e-12 * max(1.0, t0):
        take_snapshot(state)
        snaps_pending.pop(0)

    tail_mode = tail_from(state, cs, ks, sh)
    dt = opts.dt_init if opts.dt_init is not None else opts.rel_step * t0
    n_steps = 0

    while tail_mode is None and state.t < t_end * (1 - 1e-14):
        n_steps += 1
        if n_steps > opts.max_steps:
            raise InternalError(
                f"step budget {opts.max_steps} exhausted at t={state.t:.6g}, "
                f"rho_bar={state.rho_bar:.6g}"
            )
        # a merging level fires once the dying band under it has pinched
        # shut; the fan above it is sub-cell by then, so the level pins
        # rho_bar for the last stretch. Other levels fire when rho_bar
        # parks inside their tolerance band.
        level = None
        pre = None
        approach_lv = None
        u_g = state.u_grid
        for lv in catalogue.levels:
            if lv in consumed:
                continue
            if catalogue.class_of(lv) in ("merging", "merging_branching"):
                j = int(np.searchsorted(u_g, lv))
                cell = u_g[min(j + 1, len(u_g) - 1)] - u_g[max(j - 1, 0)]
                if abs(state.rho_bar - lv) > cell:
                    continue
                drained = (
                    m - mass_at(u_g, state.h_bar, state.k_bar, lv)
                    <= 0.2 * opts.tol_mass * m
                )
                if not drained:
                    continue
                if _merge_ready(f, state, lv, catalogue.class_of(lv), m, opts, cache):
                    level = lv
                    pre = replace(state, rho_bar=float(lv))
                else:
                    approach_lv = lv
                break
            if abs(state.rho_bar - lv) <= opts.tol_event * max(1.0, lv):
                level = lv
                pre = state
                break

        trial = None
        if level is None and approach_lv is None:
            targets = [t for t in snaps_pending if t > state.t] + [t_end]
            dt_try = min(dt, targets[0] - state.t)
            guard = [
                lv
                for lv in catalogue.levels
                if lv not in consumed
                and lv < state.rho_bar
                and catalogue.class_of(lv) in ("merging", "merging_branching")
            ]
            if guard:
                _, cap = _pinch_cap(state, cache, max(guard))
                dt_try = min(dt_try, max(0.25 * cap, 1e-13 * max(1.0, state.t)))
            hit_target = (
                dt_try >= targets[0] - state.t - 1e-14 * max(1.0, targets[0])
            )

            for _ in range(60):
                try:
                    trial = _attempt(f, state, dt_try, m, opts, cache)
                    break
                except _MassDeficit:
                    dt_try *= 0.5
                    hit_target = False
            if trial is None:
                raise InternalError("mass deficit persists at the smallest step")

            crossed = [
                lv
                for lv in catalogue.levels
                if lv not in consumed
                and trial.rho_bar < lv <= state.rho_bar * (1 + 1e-12)
            ]
            if crossed:
                lv_c = max(crossed)
                if catalogue.class_of(lv_c) in ("merging", "merging_branching"):
                    # the mass root only slips under a merging level once the
                    # live structure above it is negligible; finish the
                    # approach at the level field instead of half-stepping
                    approach_lv = lv_c
                    trial = None
                else:
                    level = lv_c
                    band = opts.tol_event * max(1.0, level)
                    if state.rho_bar <= level + band:
                        pre = state
                    else:
                        pre = _land_on_level(
                            f, state, dt_try, level, m, opts, cache
                        )
                        # classify just above the level: at the level itself
                        # the outgoing type already wins the contact tolerance
                        bounds = _catalogue_boundaries(catalogue)
                        note(
                            pre,
                            protect=True,
                            classify_rho=level
                            * (
                                1.0
                                + _guarded_delta(
                                    level, bounds, opts.probe_delta, +1
                                )
                            ),
                        )

        if approach_lv is not None:
            lvq = float(approach_lv)
            cls_lv = catalogue.class_of(lvq)
            bounds = _catalogue_boundaries(catalogue)
            probe = lvq * (
                1.0 + _guarded_delta(lvq, bounds, opts.probe_delta, +1)
            )
            _, cap = _pinch_cap(state, cache, lvq, base=lvq)
            targets = [t for t in snaps_pending if t > state.t] + [t_end]
            room = targets[0] - state.t
            if cap > room - 1e-14 * max(1.0, targets[0]):
                # a snapshot or the horizon lands before the collision
                state = replace(
                    _advance_at_level(state, lvq, room, cache), t=targets[0]
                )
                if snaps_pending and abs(state.t - snaps_pending[0]) <= 1e-12 * max(
                    1.0, snaps_pending[0]
                ):
                    # no step record: rho_bar is pinned here, and only the
                    # final approach record may carry the level value
                    _store(state, False)
                    take_snapshot(state)
                    snaps_pending.pop(0)
                else:
                    note(state, classify_rho=probe)
                continue
            state = _advance_at_level(state, lvq, cap, cache)
            if not _merge_ready(f, state, lvq, cls_lv, m, opts, cache):
                continue  # more of the band to pinch; march the next row
            pre = state
            note(pre, protect=True, classify_rho=probe)
            level = lvq

        if level is not None:
            cls = catalogue.class_of(level)
            ev, post, seeds, rho_out = _process_event(
                f, pre, level, cls, catalogue, m, opts, cache
            )
            consumed.add(level)
            for lv in catalogue.levels:
                if lv not in consumed and post.rho_bar < lv < level:
                    consumed.add(lv)  # jumped over, never an event
            events.append(ev)
            seeds_all.extend(seeds)
            ev_idx = len(events) - 1
            if post.rho_bar < pre.rho_bar:
                # merging jump: classify the new state just below the target
                cs, ks, sh = note(
                    post, event_idx=ev_idx, classify_rho=rho_out, protect=True
                )
                tail_mode = tail_from(post, cs, ks, sh)
            else:
                pending_event = ev_idx
            state = post
            dt = max(dt * 0.25, 1e-12 * max(1.0, state.t))
            continue

        rel = (state.rho_bar - trial.rho_bar) / max(state.rho_bar, 1e-300)
        state = trial
        if hit_target and abs(state.t - targets[0]) <= 1e-9 * max(1.0, targets[0]):
            state = replace(state, t=targets[0])
        cs, ks, sh = note(state)
        if snaps_pending and abs(state.t - snaps_pending[0]) <= 1e-12 * max(
            1.0, snaps_pending[0]
        ):
            take_snapshot(state)
            snaps_pending.pop(0)
        if rel > 0:
            dt = dt_try * min(2.0, max(0.5, opts.rel_step / rel))
        else:
            dt = dt_try * 2.0
        tail_mode = tail_from(state, cs, ks, sh)

    tail = None
    if tail_mode is not None and state.t < t_end:
        n1 = state.n_alive
        fan_tab = state.h_bar if tail_mode == "dec" else state.k_bar
        tail = TailModel(
            f,
            state.t,
            tail_mode,
            state.rho_bar,
            m,
            state.u_grid[:n1].copy(),
            fan_tab[:n1].copy(),
            state,
        )
        side = "decreasing" if tail_mode == "dec" else "increasing"
        ts = np.unique(
            np.append(np.geomspace(state.t, t_end, opts.tail_records)[1:], t_end)
        )
        for t in ts:
            rho = tail.rho(t)
            x_s = tail.shock_x(t)
            speed = f.value(rho) / rho if rho > 0 else 0.0
            records.append(
                StepRecord(
                    float(t),
                    float(rho),
                    x_s,
                    tail.mass_residual(t),
                    ((side, "G", 0.0, float(rho), x_s, float(speed)),),
                    (0.0, float(rho)),
                    (0.0, float(rho)),
                )
            )
            if side == "increasing":
                sd = ShockDescriptor(0.0, float(rho), float(speed), "G", side, "max")
            else:
                sd = ShockDescriptor(float(rho), 0.0, float(speed), "G", side, "max")
            tracker.observe(float(t), [(sd, x_s)])
        for s in list(snaps_pending):
            take_snapshot(tail.state_at(s))
            snaps_pending.remove(s)
    elif snaps_pending:
        for s in list(snaps_pending):
            if abs(s - state.t) <= 1e-9 * max(1.0, s):
                take_snapshot(state)
                snaps_pending.remove(s)
        if snaps_pending:
            raise InternalError(f"snapshot times not reached: {snaps_pending}")

    snapshots.sort(key=lambda e: e[0])
    return Timeline(
        flux=f,
        mass=float(m),
        t0=float(t0),
        t_end=float(t_end),
        options=opts,
        catalogue=catalogue,
        u_grid=state.u_grid,
        events=events,
        records=records,
        states=states_store,
        shock_curves=[tracker.curves[k] for k in sorted(tracker.curves)],
        snapshots=snapshots,
        fan_seeds=seeds_all,
        tail=tail,
        normalization=None,
        mass_residual_max=mass_resid_max,
    )

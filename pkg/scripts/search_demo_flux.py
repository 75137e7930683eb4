"""Search for a degree-7 flux whose run reproduces the full seven-event
shock history: two branchings, three mergings, one direction reversal of
the genuine shock, and a final merging into a lone genuine shock.

The family: f''(u) = (u + s)(u - i1)(u - i2)(u - i3)(u - i4) integrated
twice with f(0) = f'(0) = 0.  That makes f convex at zero, gives it four
curvature sign changes on u > 0, and one negative root of f'' keeps the
leading coefficient positive (superlinear growth).  The shape we want:

    rise (convex), positive bump over (i1, i2), a long fall through zero
    into a single deep dip, then a superlinear climb back up.

Structural gates are checked cheaply on polynomial roots first, then the
critical-level catalogue must read, ascending,

    merging, transforming, merging, merging, merging, branching, branching

and finally the evolution run must log exactly

    branching  G -> L+R
    branching  R -> D+R
    merging    D+R -> L
    merging    L+D -> R
    merging    R+R -> G
    transforming G -> L
    merging    L+L -> G

On success the flux coefficients and the run window are printed in a
form ready to freeze into envlaw.catalog.
"""

import argparse
import sys
import time

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

sys.path.insert(0, "src")

from envlaw.envelope import critical_levels
from envlaw.evolution import RunOptions, run
from envlaw.flux import DomainError, flux_from_coeffs

EXPECTED_CLASSES = (
    "merging",
    "transforming",
    "merging",
    "merging",
    "merging",
    "branching",
    "branching",
)

EXPECTED_EVENTS = (
    ("branching", ("G",), ("L", "R")),
    ("branching", ("R",), ("D", "R")),
    ("merging", ("D", "R"), ("L",)),
    ("merging", ("D", "L"), ("R",)),
    ("merging", ("R", "R"), ("G",)),
    ("transforming", ("G",), ("L",)),
    ("merging", ("L", "L"), ("G",)),
)


def family_coeffs(s, i1, i2, i3, i4):
    """Ascending coefficients of f with f'' = (u+s) prod (u-ik)."""
    fpp = npoly.polyfromroots([-s, i1, i2, i3, i4])
    f = npoly.polyint(npoly.polyint(fpp))
    return tuple(float(c) for c in f)


def positive_roots(coeffs, lo, hi):
    r = np.roots(np.asarray(coeffs)[::-1])
    r = r[np.abs(r.imag) < 1e-9].real
    r = np.sort(r[(r > lo) & (r < hi)])
    out = []
    for v in r:  # collapse near-duplicates from the companion matrix
        if not out or v - out[-1] > 1e-7 * max(1.0, v):
            out.append(float(v))
    return out


def quick_shape(s, i1, i2, i3, i4):
    """Root-pattern gates; returns (coeffs, probe_top) or None."""
    coeffs = family_coeffs(s, i1, i2, i3, i4)
    c = np.asarray(coeffs)
    big = 6.0 * i4

    # f' = 0 exactly twice on (0, big): bump top M1 in (i1,i2), dip
    # bottom past i4 (f falls monotonically from bump to dip)
    dcoeffs = npoly.polyder(c)
    crit = positive_roots(dcoeffs, 1e-9, big)
    if len(crit) != 2:
        return None
    m1, dip = crit
    if not (i1 < m1 < i2 and dip > i4):
        return None

    # f = 0 exactly twice on (0, big): falls through z1 inside (m1, i2),
    # climbs back through z2 past the dip
    zeros = positive_roots(c, 1e-9, big)
    if len(zeros) != 2:
        return None
    z1, z2 = zeros
    if not (m1 < z1 < i2 and z2 > dip):
        return None

    # chord-from-origin tangencies: phi = f'u - f, phi' = f''u.  The
    # increasing-side hull anchors its first chord at the global argmin
    # of f/u, the decreasing-side hull at the global argmax.  The argmin
    # must sit on the first wall (i2, i3), not in the dip: that keeps an
    # interior double contact in the initial picture.
    phi = npoly.polysub(npoly.polymul(dcoeffs, (0.0, 1.0)), c)
    tang = positive_roots(phi, 1e-9, big)
    if len(tang) < 2:
        return None
    slopes = [float(npoly.polyval(u, c)) / u for u in tang]
    t_c = tang[int(np.argmax(slopes))]
    a1 = tang[int(np.argmin(slopes))]
    if not (i1 < t_c < m1 and i2 < a1 < i3):
        return None

    # the second concave arc must be strong enough to carry a contact
    # wave: as the tangency slides from the shelf end (i3) to the dip-side
    # inflection (i4) the tangent line sweeps upward past the first bump,
    # so a sign change in its clearance brackets an upper common tangent
    # with interior contacts on both arcs
    uu = np.linspace(i1, i2, 257)
    f_uu = npoly.polyval(uu, c)

    def bump_clearance(u2):
        d = float(npoly.polyval(u2, dcoeffs))
        v = float(npoly.polyval(u2, c))
        return float(np.min(d * (uu - u2) + v - f_uu))

    if not (bump_clearance(i3) < 0.0 < bump_clearance(i4)):
        return None

    # the top branching level: chord from origin with the bump's slope
    # meets f again on the superlinear wall
    s_c = float(npoly.polyval(t_c, c)) / t_c

    def chord_gap(u):
        return float(npoly.polyval(u, c)) - s_c * u

    hi = big
    if chord_gap(hi) < 0:
        return None
    z_top = brentq(chord_gap, dip, hi, xtol=1e-12)
    return coeffs, 1.45 * z_top


def catalogue_gate(coeffs, probe_top):
    f = flux_from_coeffs(coeffs, domain_max=4.0 * probe_top, name="candidate")
    cat = critical_levels(f, probe_top, n_sweep=640)
    if cat.classes != EXPECTED_CLASSES:
        return None
    gaps = np.diff(np.asarray(cat.levels))
    if gaps.min() < 2e-3 * cat.levels[-1]:
        return None  # levels too close for comfortable event separation
    return f, cat


def event_signature(ev):
    return (ev.kind, tuple(sorted(ev.incoming)), tuple(sorted(ev.outgoing)))


def run_gate(f, mass=1.0, t_end=400.0, verbose=False):
    opts = RunOptions()
    try:
        tl = run(f, mass, t_end, opts)
    except Exception as exc:  # noqa: BLE001 - any engine refusal rejects
        if verbose:
            print(f"    run failed: {type(exc).__name__}: {exc}")
        return None
    got = tuple(event_signature(e) for e in tl.events)
    want = tuple(
        (k, tuple(sorted(i)), tuple(sorted(o))) for k, i, o in EXPECTED_EVENTS
    )
    if got != want:
        if verbose:
            print(f"    sequence mismatch: {got}")
        return None
    if tl.tail is None:
        if verbose:
            print("    no tail model; t_end too early")
        return None
    if tl.mass_residual_max > 1e-6 * mass:
        if verbose:
            print(f"    mass residual {tl.mass_residual_max:.2e} too large")
        return None
    return tl


def s_window(i1, i2, i3, i4):
    """Range of s giving a shelf (f' < 0 at both wall inflections) and a
    chord-slope argmax/argmin pair on bump and wall.  All four conditions
    are linear in s, so the window is a single interval (or empty)."""
    q = npoly.polyfromroots([i1, i2, i3, i4])
    uq = npoly.polymul((0.0, 1.0), q)
    u2q = npoly.polymul((0.0, 0.0, 1.0), q)
    Iq, Iuq, Iu2q = npoly.polyint(q), npoly.polyint(uq), npoly.polyint(u2q)
    lo, hi = 0.0, np.inf
    conds = (
        (npoly.polyval(i2, Iuq), npoly.polyval(i2, Iq), -1.0),   # f'(i2) < 0
        (npoly.polyval(i3, Iuq), npoly.polyval(i3, Iq), -1.0),   # f'(i3) < 0
        (npoly.polyval(i2, Iu2q), npoly.polyval(i2, Iuq), -1.0), # phi(i2) < 0
        (npoly.polyval(i3, Iu2q), npoly.polyval(i3, Iuq), 1.0),  # phi(i3) > 0
    )
    for a, b, sgn in conds:
        a, b = sgn * float(a), sgn * float(b)
        if abs(b) < 1e-300:
            if a <= 0.0:
                return None
            continue
        bound = -a / b
        if b > 0.0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    if lo >= hi:
        return None
    return lo, hi


def search(n_trials, seed, verbose=False):
    rng = np.random.default_rng(seed)
    t_start = time.time()
    n_shape = n_cat = 0
    for trial in range(n_trials):
        i1 = rng.uniform(0.15, 0.6)
        i2 = i1 + rng.uniform(1.2, 2.2)
        i3 = i2 + rng.uniform(1.2, 2.2)
        i4 = i3 + rng.uniform(0.7, 1.4)
        win = s_window(i1, i2, i3, i4)
        if win is None:
            continue
        w_lo, w_hi = win
        w_hi = min(w_hi, w_lo + 20.0 * max(w_lo, 1.0))
        got = s = None
        for sv in np.linspace(w_lo + 0.02 * (w_hi - w_lo), 0.98 * w_hi, 10):
            got = quick_shape(float(sv), i1, i2, i3, i4)
            if got is not None:
                s = float(sv)
                break
        if got is None:
            continue
        n_shape += 1
        coeffs, probe_top = got
        try:
            gate2 = catalogue_gate(coeffs, probe_top)
        except (DomainError, ValueError):
            continue
        if gate2 is None:
            continue
        n_cat += 1
        f, cat = gate2
        print(
            f"[{trial}] catalogue hit: s={s:.4f} i=({i1:.4f},{i2:.4f},"
            f"{i3:.4f},{i4:.4f}) levels={np.round(cat.levels, 4)}"
        )
        tl = run_gate(f, verbose=verbose)
        if tl is None:
            continue
        dt = time.time() - t_start
        print(f"\nSUCCESS after {trial + 1} trials ({dt:.0f}s)")
        print(f"  shape gate passed: {n_shape}, catalogue gate passed: {n_cat}")
        report(f, cat, tl, (s, i1, i2, i3, i4))
        return f, cat, tl
    print(
        f"no hit in {n_trials} trials "
        f"(shape gate {n_shape}, catalogue gate {n_cat})"
    )
    return None


def report(f, cat, tl, params):
    print(f"  params (s, i1..i4) = {params}")
    print(f"  domain_max = {f.domain_max!r}")
    print("  coefficients (ascending):")
    for c in f.pieces[0][2]:
        print(f"    {c!r},")
    print("  catalogue:")
    for lv, cls in zip(cat.levels, cat.classes):
        print(f"    {lv:.9f}  {cls}")
    print("  events:")
    for e in tl.events:
        print(
            f"    t={e.time:12.6f} x={e.location:12.6f} {e.kind:13s} "
            f"{'+'.join(e.incoming)} -> {'+'.join(e.outgoing)}"
        )
    print(f"  t0={tl.t0!r} rho0={tl.records[0].rho_bar!r}")
    print(f"  mass residual max = {tl.mass_residual_max:.3e}")
    last = tl.events[-1].time
    print(f"  last event at t={last:.3f}; suggest t_end = {np.ceil(last * 1.3)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=20260815)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    search(args.trials, args.seed, verbose=args.verbose)


if __name__ == "__main__":
    main()

"""Shock typing and topology-change grammar.

A discontinuity is typed by which Oleinik inequalities are equalities:
strict on both sides is a genuine shock (G), equality on the left only is
a left contact (L), right only is a right contact (R), both is a double
contact (D). Every topology change an evolving run reports must match one
of the legal transitions below; anything else aborts the run, since a
violation means the solver state is corrupt, not the input.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .flux import Flux, InternalError, rh_speed

CLASSIFY_TOL = 1e-8


class EntropyViolation(InternalError):
    """A recorded discontinuity fails the entropy condition."""


class GrammarViolation(InternalError):
    """A topology change outside the legal transition tables."""


@dataclass(frozen=True)
class ShockDescriptor:
    u_minus: float
    u_plus: float
    speed: float
    shock_type: str  # "G" | "L" | "R" | "D"
    orientation: str  # "increasing" | "decreasing"
    anchor: str  # "zero" | "max" | "interior"

    @property
    def u_lo(self):
        return min(self.u_minus, self.u_plus)

    @property
    def u_hi(self):
        return max(self.u_minus, self.u_plus)


@dataclass(frozen=True)
class Event:
    kind: str  # "branching" | "merging" | "merging_branching" | "transforming"
    time: float
    location: float
    incoming: tuple  # shock type chars
    outgoing: tuple
    rho_before: float
    rho_after: float
    incoming_shocks: tuple = field(default=(), compare=False, repr=False)
    outgoing_shocks: tuple = field(default=(), compare=False, repr=False)


def classify_shock(f: Flux, u_minus, u_plus, tol=CLASSIFY_TOL):
    """Type a discontinuity from the Oleinik equalities at its two states."""
    speed = rh_speed(f, u_minus, u_plus)
    scale = tol * (1.0 + abs(speed))
    left = f.deriv(u_minus) - speed
    right = speed - f.deriv(u_plus)
    if left < -scale or right < -scale:
        raise EntropyViolation(
            f"Oleinik violated for ({u_minus!r}, {u_plus!r}): "
            f"f'(u-)-s = {left:.3e}, s-f'(u+) = {right:.3e}"
        )
    left_eq = abs(left) <= scale
    right_eq = abs(right) <= scale
    if left_eq and right_eq:
        return "D"
    if left_eq:
        return "L"
    if right_eq:
        return "R"
    return "G"


def _anchor(u_lo, u_hi, rho_bar):
    # envelope partitions snap their end points to exactly 0 and rho_bar,
    # so a near-machine tolerance keeps a tangency sitting 1e-9 below the
    # maximum (as happens when a run lands on a merging level) distinct
    tol = 1e-12 * max(1.0, rho_bar)
    if u_hi >= rho_bar - tol:
        return "max"
    if u_lo <= tol:
        return "zero"
    return "interior"


def shocks_from_state(f: Flux, conv, conc, tol=CLASSIFY_TOL, check=True):
    """One increasing shock per linear segment of the convex envelope, one
    decreasing per linear segment of the concave envelope.

    Ordered left to right in x: increasing shocks by ascending value
    interval, then decreasing shocks by descending interval.
    """
    if abs(conv.rho_bar - conc.rho_bar) > 1e-9 * max(1.0, conv.rho_bar):
        raise InternalError("envelopes disagree on rho_bar")
    rho = conv.rho_bar
    out = []
    for seg in conv.segments:
        if not seg.is_linear:
            continue
        d = ShockDescriptor(
            seg.u_lo,
            seg.u_hi,
            rh_speed(f, seg.u_lo, seg.u_hi),
            classify_shock(f, seg.u_lo, seg.u_hi, tol),
            "increasing",
            _anchor(seg.u_lo, seg.u_hi, rho),
        )
        out.append(d)
    for seg in reversed(conc.segments):
        if not seg.is_linear:
            continue
        d = ShockDescriptor(
            seg.u_hi,
            seg.u_lo,
            rh_speed(f, seg.u_hi, seg.u_lo),
            classify_shock(f, seg.u_hi, seg.u_lo, tol),
            "decreasing",
            _anchor(seg.u_lo, seg.u_hi, rho),
        )
        out.append(d)
    if check:
        check_shock_counts(out)
    return out


def check_shock_counts(shocks):
    """Structural counts that hold at every valid state: at most one genuine
    shock; single-sided contacts (G counting twice) number 2 or 3; exactly
    one shock touches the maximum."""
    n_g = sum(1 for s in shocks if s.shock_type == "G")
    if n_g > 1:
        raise InternalError(f"{n_g} genuine shocks in one state")
    n_single = sum(1 for s in shocks if s.shock_type in ("L", "R")) + 2 * n_g
    if n_single not in (2, 3):
        raise InternalError(
            f"single-sided contact count {n_single} not in {{2, 3}} "
            f"(types {[s.shock_type for s in shocks]})"
        )
    n_max = sum(1 for s in shocks if s.anchor == "max")
    if n_max != 1:
        raise InternalError(f"{n_max} shocks anchored at the maximum")


# transition tables keyed by sorted incoming types
_BRANCHING = {
    ("G",): [("L", "R")],
    ("R",): [("D", "R")],
    ("L",): [("D", "L")],
}
_MERGING = {
    ("R", "R"): [("G",)],
    ("L", "L"): [("G",)],
    ("D", "R"): [("L",)],
    ("D", "L"): [("R",)],
}
_MERGING_BRANCHING = {
    ("R", "R"): [("L", "R")],
    ("L", "L"): [("L", "R")],
    ("D", "R"): [("D", "L")],
    ("D", "L"): [("D", "R")],
}
_TRANSFORMING = {
    ("G",): [("R",), ("L",)],
    ("R", "R"): [("L",)],
    ("L", "L"): [("R",)],
}


def validate_transition(incoming, outgoing, kind, dips_negative):
    """None when (incoming -> outgoing) is legal for the event kind,
    otherwise a message naming the nearest legal transitions."""
    inc = tuple(sorted(incoming))
    out = tuple(sorted(outgoing))
    if not inc or not out:
        return f"{kind}: empty shock list (incoming {inc}, outgoing {out})"
    if kind == "branching":
        table = _BRANCHING
    elif kind == "merging":
        table = _MERGING
    elif kind == "merging_branching":
        table = _MERGING_BRANCHING
    elif kind == "transforming":
        if not dips_negative:
            return (
                "transforming requires the flux to reach negative values "
                "below the level (condition not met)"
            )
        table = _TRANSFORMING
    else:
        return f"unknown event kind {kind!r}"
    legal = table.get(inc)
    if legal is None:
        opts = ", ".join(f"{k}->{v}" for k, v in table.items())
        return f"{kind}: incoming {inc} not allowed; legal: {opts}"
    for allowed in legal:
        if out == allowed:
            return None
        if kind == "merging_branching":
            # extra double contacts may tag along
            rest = Counter(out) - Counter(allowed)
            if Counter(out) - Counter(rest) == Counter(allowed) and set(rest) <= {"D"}:
                return None
    return (
        f"{kind}: {inc} -> {out} illegal; nearest legal: "
        + " or ".join(f"{inc} -> {a}" for a in legal)
    )


def resolve_event_kind(incoming, outgoing, level_class, dips_negative):
    """Pick the event kind consistent with the grammar, preferring the class
    the critical-level catalogue predicted. Raises GrammarViolation if no
    kind admits the transition."""
    if level_class == "merging":
        candidates = ["merging", "merging_branching", "transforming"]
    elif level_class == "transforming":
        candidates = ["transforming", "branching"]
    else:
        candidates = ["branching", "transforming"]
    msgs = []
    for kind in candidates:
        msg = validate_transition(incoming, outgoing, kind, dips_negative)
        if msg is None:
            return kind
        msgs.append(msg)
    raise GrammarViolation("; ".join(msgs))

"""Named demonstration fluxes.

All entries are normalized (f(0) = f'(0) = 0) single-piece polynomials.
The eight_stage coefficients were produced by scripts/search_demo_flux.py
and are frozen here so runs stay reproducible.
"""
from __future__ import annotations

from .flux import Flux, flux_from_coeffs


def burgers(domain_max=100.0) -> Flux:
    return flux_from_coeffs([0.0, 0.0, 0.5], domain_max, name="burgers")


def cubic(domain_max=30.0) -> Flux:
    # u^2 (2u - 3) / 6: inflection at 1/2, convex tangent from zero at 3/4
    return flux_from_coeffs([0.0, 0.0, -0.5, 1.0 / 3.0], domain_max, name="cubic")


# placeholder until the search freezes real coefficients
_EIGHT_STAGE_COEFFS = None
_EIGHT_STAGE_DOMAIN = None


def eight_stage() -> Flux:
    if _EIGHT_STAGE_COEFFS is None:
        raise NotImplementedError("eight_stage coefficients not frozen yet")
    return flux_from_coeffs(
        list(_EIGHT_STAGE_COEFFS), _EIGHT_STAGE_DOMAIN, name="eight_stage"
    )


NAMED = {
    "burgers": burgers,
    "cubic": cubic,
    "eight_stage": eight_stage,
}


def by_name(name: str) -> Flux:
    try:
        factory = NAMED[name]
    except KeyError:
        raise KeyError(
            f"unknown flux {name!r}; known: {', '.join(sorted(NAMED))}"
        ) from None
    return factory()

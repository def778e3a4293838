"""Closed-form reference spectra for circular and cylindrical cavities.

This module is deliberately self-contained: Bessel functions are evaluated
from their defining series (ascending series for small arguments, backward
recurrence beyond), zeros are located by bracketing plus a bisection-Newton
polish, and mode frequencies follow from separation of variables on a
cylinder.  Nothing here touches the discretization or solver stack, so the
values can serve as an independent check of everything else.

Conventions: ``TM`` modes use zeros x_mn of J_m (axial index p >= 0), ``TE``
modes use zeros x'_mn of J_m' (p >= 1).  Modes with azimuthal index m >= 1
are doubly degenerate and reported once with ``degeneracy == 2``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# vacuum speed of light, m/s (exact SI value, equals 1/sqrt(eps0*mu0))
C0 = 299792458.0

_SERIES_CUTOFF = 12.0
_MAX_ORDER = 10
_MAX_INDEX = 10

# The alternating series loses ~5 digits to cancellation near x = 12, so the
# sum is carried in the widest native float available (80-bit on x86).
_WIDE = np.longdouble


def _series_j(m: int, x: float) -> float:
    # ascending power series, accumulated in extended precision
    half = _WIDE(0.5) * _WIDE(x)
    term = _WIDE(1.0)
    for k in range(1, m + 1):
        term *= half / k
    total = term
    q = -half * half
    k = 1
    while k <= 400:
        term *= q / (k * (m + k))
        total += term
        if abs(term) <= 1e-21 * abs(total) + _WIDE(1e-4000):
            break
        k += 1
    return float(total)


def _backward_j(m: int, x: float) -> float:
    # Miller's backward recurrence, normalized with J_0 + 2*sum J_{2k} = 1.
    # The start order sits well above the turning point; the x^(1/3) growth
    # keeps full double accuracy out to x ~ 100.
    n0 = int(x + 18.0 * x ** (1.0 / 3.0)) + 20 + 2 * m
    if n0 % 2:
        n0 += 1
    f_up = 0.0
    f = 1e-30
    f_m = 0.0
    even_sum = 0.0
    for k in range(n0, 0, -1):
        f_down = (2.0 * k / x) * f - f_up
        f_up, f = f, f_down
        if k - 1 == m:
            f_m = f
        if k - 1 > 0 and (k - 1) % 2 == 0:
            even_sum += f
        if abs(f) > 1e280:
            f *= 1e-280
            f_up *= 1e-280
            f_m *= 1e-280
            even_sum *= 1e-280
    norm = f + 2.0 * even_sum  # f now holds the unnormalized J_0
    return f_m / norm


def bessel_j(m: int, x: float) -> float:
    """Bessel function of the first kind J_m(x) for integer order m >= 0."""
    if not isinstance(m, (int,)) or isinstance(m, bool):
        raise DomainError(f"order must be an integer, got {m!r}")
    if m < 0:
        raise DomainError(f"order must be >= 0, got {m}")
    x = float(x)
    if x < 0.0:
        val = bessel_j(m, -x)
        return -val if m % 2 else val
    if x == 0.0:
        return 1.0 if m == 0 else 0.0
    if x <= _SERIES_CUTOFF:
        return _series_j(m, x)
    return _backward_j(m, x)


def bessel_j_derivative(m: int, x: float) -> float:
    """First derivative J_m'(x), via J_m' = (J_{m-1} - J_{m+1}) / 2."""
    if m == 0:
        return -bessel_j(1, x)
    return 0.5 * (bessel_j(m - 1, x) - bessel_j(m + 1, x))


def _bracket_sign_changes(f, start: float, step: float, count: int, limit: float):
    """First ``count`` sign-change brackets of ``f`` scanning right from ``start``."""
    brackets = []
    a = start
    fa = f(a)
    while len(brackets) < count:
        b = a + step
        if b > limit:
            raise DomainError(
                f"failed to bracket {count} zeros below x = {limit}; "
                "requested index is outside the supported range"
            )
        fb = f(b)
        if fa == 0.0:
            brackets.append((a - 0.5 * step, a + 0.5 * step))
        elif (fa > 0.0) != (fb > 0.0):
            brackets.append((a, b))
        a, fa = b, fb
    return brackets


def _refine_zero(f, fprime, a: float, b: float) -> float:
    fa = f(a)
    for _ in range(48):
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (fa > 0.0):
            a, fa = mid, fm
        else:
            b = mid
        if b - a < 1e-9:
            break
    x = 0.5 * (a + b)
    for _ in range(6):
        d = fprime(x)
        if d == 0.0:
            break
        dx = f(x) / d
        x -= dx
        if abs(dx) < 1e-15 * max(1.0, abs(x)):
            break
    return x


def _check_zero_args(m: int, n: int) -> None:
    if not isinstance(m, int) or isinstance(m, bool) or not (0 <= m <= _MAX_ORDER):
        raise DomainError(f"order m must be an integer in [0, {_MAX_ORDER}], got {m!r}")
    if not isinstance(n, int) or isinstance(n, bool) or not (1 <= n <= _MAX_INDEX):
        raise DomainError(f"index n must be an integer in [1, {_MAX_INDEX}], got {n!r}")


def bessel_zero(m: int, n: int) -> float:
    """n-th positive zero of J_m (n = 1 is the first)."""
    _check_zero_args(m, n)
    f = lambda x: bessel_j(m, x)
    fp = lambda x: bessel_j_derivative(m, x)
    # J_m > 0 on (0, x_m1); scanning from just above 0 meets zeros in order
    brackets = _bracket_sign_changes(f, 0.25, 0.25, n, 120.0)
    a, b = brackets[n - 1]
    return _refine_zero(f, fp, a, b)


def bessel_derivative_zero(m: int, n: int) -> float:
    """n-th positive zero of J_m' (the trivial zero at x = 0 is excluded)."""
    _check_zero_args(m, n)
    f = lambda x: bessel_j_derivative(m, x)

    def fpp(x):
        # J_m'' from the defining ODE: x^2 y'' + x y' + (x^2 - m^2) y = 0
        return ((m * m / (x * x) - 1.0) * bessel_j(m, x)
                - bessel_j_derivative(m, x) / x)

    brackets = _bracket_sign_changes(f, 0.25, 0.25, n, 120.0)
    a, b = brackets[n - 1]
    return _refine_zero(f, fpp, a, b)


@dataclass(frozen=True, order=True)
class ModeLabel:
    """Identity of one cylinder mode: family, azimuthal m, radial n, axial p."""
    family: str
    m: int
    n: int
    p: int
    degeneracy: int = 1

    def __str__(self):
        return f"{self.family}{self.m}{self.n}{self.p}"


def mode_frequency(label: ModeLabel, r: float, l: float) -> float:
    """Resonant frequency in Hz of a labeled mode for radius r and length l."""
    if r <= 0.0 or l <= 0.0:
        raise DomainError(f"radius and length must be positive, got r={r}, l={l}")
    if label.family == "TM":
        x = bessel_zero(label.m, label.n)
    elif label.family == "TE":
        x = bessel_derivative_zero(label.m, label.n)
    else:
        raise DomainError(f"unknown mode family {label.family!r}")
    k = math.hypot(x / r, label.p * math.pi / l)
    return C0 * k / (2.0 * math.pi)


def _enumerate_modes(r: float, l: float, f_cut: float):
    """All TM/TE modes with frequency <= f_cut, or DomainError if the
    supported Bessel-zero table cannot certify completeness."""
    k_cut = 2.0 * math.pi * f_cut / C0
    x_cut = k_cut * r
    p_cut = int(l * k_cut / math.pi)
    modes = []
    for family in ("TM", "TE"):
        zero_of = bessel_zero if family == "TM" else bessel_derivative_zero
        p_min = 0 if family == "TM" else 1
        for m in range(0, _MAX_ORDER + 1):
            # the first radial zero grows with m, except that x'_01 > x'_11;
            # only break once past that exception
            if zero_of(m, 1) > x_cut:
                if family == "TE" and m == 0:
                    continue
                break
            if m == _MAX_ORDER:
                raise DomainError(
                    "requested mode count needs azimuthal orders beyond the "
                    f"supported m <= {_MAX_ORDER}"
                )
            for n in range(1, _MAX_INDEX + 1):
                x = zero_of(m, n)
                if x > x_cut:
                    break
                if n == _MAX_INDEX:
                    raise DomainError(
                        "requested mode count needs radial indices beyond the "
                        f"supported n <= {_MAX_INDEX}"
                    )
                for p in range(p_min, p_cut + 1):
                    k = math.hypot(x / r, p * math.pi / l)
                    f = C0 * k / (2.0 * math.pi)
                    if f <= f_cut:
                        deg = 2 if m >= 1 else 1
                        modes.append((f, ModeLabel(family, m, n, p, deg)))
    return modes


def pillbox_frequencies(r: float, l: float, count: int):
    """The ``count`` lowest cylinder modes as (ModeLabel, frequency_hz) pairs.

    Doubly degenerate modes (m >= 1) appear once, carrying degeneracy 2.
    Ties are broken by (family, m, n, p) so the order is deterministic.
    """
    if r <= 0.0 or l <= 0.0:
        raise DomainError(f"radius and length must be positive, got r={r}, l={l}")
    if not isinstance(count, int) or isinstance(count, bool) or count < 1:
        raise DomainError(f"count must be a positive integer, got {count!r}")
    if count > 50:
        raise DomainError(f"count > 50 is outside the supported range, got {count}")
    # first pass: an upper bound on the count-th frequency from a small
    # restricted family (the count-th smallest of a subset bounds the true one)
    cand = []
    for family, zero_of, p_min in (
        ("TM", bessel_zero, 0),
        ("TE", bessel_derivative_zero, 1),
    ):
        for m in range(0, 4):
            for n in range(1, 4):
                x = zero_of(m, n)
                for p in range(p_min, count + 1):
                    k = math.hypot(x / r, p * math.pi / l)
                    f = C0 * k / (2.0 * math.pi)
                    cand.extend([f] * (2 if m >= 1 else 1))
    cand.sort()
    f_cut = cand[count - 1] * (1.0 + 1e-9)
    modes = _enumerate_modes(r, l, f_cut)
    modes.sort(key=lambda t: (t[0], t[1].family, t[1].m, t[1].n, t[1].p))
    return [(lab, f) for f, lab in modes[:count]]


def pillbox_spectrum(r: float, l: float, count: int):
    """The ``count`` lowest frequencies counted with multiplicity.

    Degenerate modes contribute two consecutive equal entries; this is the
    flat list a discrete eigensolve should reproduce.
    """
    labeled = pillbox_frequencies(r, l, count)
    flat = []
    for lab, f in labeled:
        flat.extend([(lab, f)] * lab.degeneracy)
        if len(flat) >= count:
            break
    return flat[:count]


def crossing_radius(l: float) -> float:
    """Radius where the lowest TM and lowest TE mode exchange order.

    For a cylinder of length l the fundamental is TM_010 at large radius and
    TE_111 at small radius; equality holds at
    r = l * sqrt(x_01^2 - x'_11^2) / pi.
    """
    if l <= 0.0:
        raise DomainError(f"length must be positive, got {l}")
    x01 = bessel_zero(0, 1)
    xp11 = bessel_derivative_zero(1, 1)
    return l * math.sqrt(x01 * x01 - xp11 * xp11) / math.pi

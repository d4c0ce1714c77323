"""Moduli of uniform continuity as piecewise-linear rational maps.

A modulus is stored in "value-change" form: a nondecreasing piecewise-linear
map omega: [0,1] -> [0,1] with omega(0) = 0, where omega(r) bounds the change
of the symbol's value when one argument moves by at most r.  The classical
delta-form (perturb by < delta(eps) to change the value by <= eps) is the
generalized inverse and is exposed as ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .values import ONE, ZERO, clamp01


def _clamped_points(raw):
    """Clamp a piecewise-linear breakpoint list into [0,1] without
    underestimating between breakpoints: insert the radius where each
    segment crosses the value 1 before clamping."""
    out = []
    for (r0, w0), (r1, w1) in zip(raw, raw[1:]):
        out.append((r0, w0))
        if w0 < 1 < w1:
            rc = r0 + (r1 - r0) * (1 - w0) / (w1 - w0)
            if r0 < rc < r1:
                out.append((rc, Fraction(1)))
    out.append(raw[-1])
    return tuple((r, clamp01(w)) for r, w in out)


@dataclass(frozen=True)
class Modulus:
    # Breakpoints (r, omega(r)), r strictly increasing, starting at (0, 0) and
    # ending at r = 1; omega nondecreasing.  Linear interpolation in between.
    points: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self):
        pts = self.points
        if not pts or pts[0][0] != 0 or pts[0][1] != 0 or pts[-1][0] != 1:
            raise ValueError("modulus breakpoints must span [0,1] and start at (0,0)")
        for (r0, w0), (r1, w1) in zip(pts, pts[1:]):
            if r1 <= r0 or w1 < w0:
                raise ValueError("modulus breakpoints must be increasing")
        if any(not (0 <= w <= 1) for _, w in pts):
            raise ValueError("modulus values must lie in [0,1]")

    @staticmethod
    def lipschitz(L) -> "Modulus":
        L = Fraction(L)
        if L < 0:
            raise ValueError("negative Lipschitz constant")
        if L <= 1:
            return Modulus(((ZERO, ZERO), (ONE, L)))
        return Modulus(((ZERO, ZERO), (1 / L, ONE), (ONE, ONE)))

    @staticmethod
    def constant() -> "Modulus":
        """Modulus of a symbol that ignores its argument."""
        return Modulus.lipschitz(0)

    def omega(self, r) -> Fraction:
        """Exact value-change bound at perturbation radius r."""
        r = Fraction(r)
        if r < 0:
            raise ValueError("negative radius")
        if r >= 1:
            return self.points[-1][1]
        pts = self.points
        for (r0, w0), (r1, w1) in zip(pts, pts[1:]):
            if r <= r1:
                return w0 + (w1 - w0) * (r - r0) / (r1 - r0)
        return pts[-1][1]

    def delta(self, eps) -> Fraction:
        """sup{ r : omega(r) <= eps }; positive for eps > 0."""
        eps = Fraction(eps)
        if eps < 0:
            raise ValueError("negative epsilon")
        pts = self.points
        if eps >= pts[-1][1]:
            return ONE
        out = ZERO
        for (r0, w0), (r1, w1) in zip(pts, pts[1:]):
            if w1 <= eps:
                out = r1
            elif w0 <= eps:
                if w1 == w0:
                    out = r1
                else:
                    out = r0 + (r1 - r0) * (eps - w0) / (w1 - w0)
                break
            else:
                break
        return out

    # -- combinators -------------------------------------------------------

    def _grid(self, other: "Modulus") -> list[Fraction]:
        rs = {r for r, _ in self.points} | {r for r, _ in other.points}
        return sorted(rs)

    def maxwith(self, other: "Modulus") -> "Modulus":
        grid = self._grid(other)
        return Modulus(tuple((r, max(self.omega(r), other.omega(r))) for r in grid))

    def plus(self, other: "Modulus") -> "Modulus":
        grid = self._grid(other)
        return Modulus(_clamped_points(
            [(r, self.omega(r) + other.omega(r)) for r in grid]))

    def scale(self, a) -> "Modulus":
        a = abs(Fraction(a))
        return Modulus(_clamped_points(
            [(r, a * w) for r, w in self.points]))

    def compose(self, inner: "Modulus") -> "Modulus":
        """Modulus of self applied after inner (value-change composition)."""
        rs = {r for r, _ in inner.points}
        # preimages of self's breakpoints under inner
        for target, _ in self.points:
            for (r0, w0), (r1, w1) in zip(inner.points, inner.points[1:]):
                if w0 <= target <= w1:
                    if w1 == w0:
                        rs.add(r1)
                    else:
                        rs.add(r0 + (r1 - r0) * (target - w0) / (w1 - w0))
        grid = sorted(r for r in rs if 0 <= r <= 1)
        return Modulus(tuple((r, self.omega(inner.omega(r))) for r in grid))

    def dominates(self, other: "Modulus") -> bool:
        """True if self is at least as strong: omega_self <= omega_other everywhere."""
        grid = self._grid(other)
        return all(self.omega(r) <= other.omega(r) for r in grid)

"""Model definition: offspring law, frame conventions, parameters, test functions.

The simulator works natively in the frame where particles are driftless
Brownian motions and the absorbing barrier is the moving line y = rho * s
(STANDARD_MOVING_BARRIER).  The equivalent formulation with drift -rho and a
fixed barrier at zero (DRIFTED_ABSORBED_AT_ZERO) is reached by shifting every
position by -rho * t; `frame_shift` implements that map on snapshots.
NO_BARRIER runs the same branching diffusion with killing disabled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

#: probability mass bookkeeping tolerance for offspring laws
MASS_TOL = 1e-12

#: default ramp width used by the canonical piecewise-linear test functions
DEFAULT_RAMP = 0.25


class Frame(enum.Enum):
    STANDARD_MOVING_BARRIER = "standard"
    DRIFTED_ABSORBED_AT_ZERO = "drifted"
    NO_BARRIER = "none"

    @classmethod
    def parse(cls, text: str) -> "Frame":
        for f in cls:
            if f.value == text or f.name == text:
                return f
        raise ParameterError(
            f"unknown frame {text!r}; expected one of "
            + ", ".join(repr(f.value) for f in cls)
        )

    @property
    def has_barrier(self) -> bool:
        return self is not Frame.NO_BARRIER


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Finite-support offspring distribution on {1, 2, ...}.

    A branching event replaces a particle by L independent children where
    P(L = k) = probability of atom k.  At least one child is always produced;
    a key of 0 is rejected outright so extinction can only come from the
    barrier, never from childless branching.
    """

    ks: np.ndarray
    ps: np.ndarray

    def __init__(self, probabilities):
        items = sorted(dict(probabilities).items())
        if not items:
            raise ParameterError("offspring law needs at least one atom")
        ks = np.array([k for k, _ in items], dtype=np.int64)
        ps = np.array([p for _, p in items], dtype=np.float64)
        if any(int(k) != k for k, _ in items):
            raise ParameterError("offspring counts must be integers")
        if np.any(ks < 1):
            raise ParameterError(
                "offspring law puts mass at 0; every branching event must "
                "produce at least one child (L >= 1)"
            )
        if np.any(ps < 0.0) or not np.all(np.isfinite(ps)):
            raise ParameterError("offspring probabilities must be finite and >= 0")
        total = math.fsum(ps.tolist())
        if abs(total - 1.0) > MASS_TOL:
            raise ParameterError(
                f"offspring probabilities sum to {total!r}, not 1 within {MASS_TOL}"
            )
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "ps", ps)

    @classmethod
    def binary(cls) -> "OffspringLaw":
        """Deterministic binary splitting, the default everywhere."""
        return cls({2: 1.0})

    @property
    def mean(self) -> float:
        return float(np.dot(self.ks, self.ps))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.ks.astype(np.float64) ** 2, self.ps))

    @property
    def max_children(self) -> int:
        return int(self.ks[-1])

    def cdf_table(self) -> np.ndarray:
        """Cumulative probabilities aligned with `ks`, for categorical sampling."""
        c = np.cumsum(self.ps)
        c[-1] = 1.0
        return c

    def pgf(self, s):
        """Probability generating function E[s^L] on [0, 1]."""
        s_arr = np.asarray(s, dtype=np.float64)
        if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
            raise ParameterError("pgf argument must lie in [0, 1]")
        out = np.zeros_like(s_arr)
        for k, p in zip(self.ks, self.ps):
            out = out + p * s_arr ** int(k)
        return float(out) if np.isscalar(s) else out


def lambda_star(beta: float, law: OffspringLaw) -> float:
    """Critical spatial decay rate sqrt(2 * beta * (m - 1)).

    This is the slope separating barrier slopes with positive survival
    probability (rho < lambda_star) from certain extinction (rho >= lambda_star).
    """
    if not (beta > 0.0) or not math.isfinite(beta):
        raise ParameterError("lambda_star requires branching rate beta > 0")
    m = law.mean
    if not m > 1.0:
        raise ParameterError(
            f"lambda_star requires a supercritical law (mean {m!r} <= 1)"
        )
    return math.sqrt(2.0 * beta * (m - 1.0))


@dataclass(frozen=True)
class ModelParams:
    """Immutable simulation parameters.

    `lam` is lambda_star computed once at build time and reused everywhere;
    it is never recomputed ad hoc.  `beta == 0` is the documented diagnostic
    escape hatch: a single Brownian particle with no branching, used to
    validate hitting laws (lam is stored as 0 and the centering term is
    unavailable in that mode).
    """

    beta: float
    rho: float
    x0: float
    frame: Frame
    law: OffspringLaw
    lam: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta < 0.0:
            raise ParameterError(f"branching rate beta must be >= 0, got {self.beta!r}")
        if not math.isfinite(self.rho):
            raise ParameterError("barrier slope rho must be finite")
        if not math.isfinite(self.x0):
            raise ParameterError("start position x0 must be finite")
        if self.frame.has_barrier and not self.x0 > 0.0:
            raise ParameterError(
                f"start position x0 must be > 0 when a barrier is active, got {self.x0!r}"
            )
        if self.beta > 0.0:
            lam = lambda_star(self.beta, self.law)
        else:
            lam = 0.0
        if self.lam is None:
            object.__setattr__(self, "lam", lam)
        elif self.lam != lam:
            raise ParameterError(
                f"stored lambda_star {self.lam!r} disagrees with parameters ({lam!r})"
            )

    @classmethod
    def create(cls, beta=1.0, rho=0.0, x0=1.0, frame=Frame.STANDARD_MOVING_BARRIER,
               law=None) -> "ModelParams":
        if isinstance(frame, str):
            frame = Frame.parse(frame)
        return cls(beta=float(beta), rho=float(rho), x0=float(x0), frame=frame,
                   law=law if law is not None else OffspringLaw.binary())

    @property
    def rho_effective(self) -> float:
        """Centering drift: rho in the drifted frame, 0 otherwise."""
        return self.rho if self.frame is Frame.DRIFTED_ABSORBED_AT_ZERO else 0.0

    def single_particle(self) -> bool:
        return self.beta == 0.0


def centering(params: ModelParams, t: float) -> float:
    """Centering term m_t = (lambda_star - rho_eff) t - 3/(2 lambda_star) log t."""
    if params.single_particle():
        raise ParameterError("centering is undefined for the single-particle mode")
    if not t > 0.0:
        raise ParameterError(f"centering requires t > 0, got {t!r}")
    lam = params.lam
    return (lam - params.rho_effective) * t - 1.5 / lam * math.log(t)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Nonnegative, bounded, continuous piecewise-linear test function.

    The function is 0 at and left of xs[0] (its support is bounded on the
    left) and constant at ys[-1] right of xs[-1].  Between breakpoints it
    interpolates linearly, which is exactly what np.interp computes.
    """

    xs: np.ndarray
    ys: np.ndarray
    name: str = ""

    def __init__(self, xs, ys, name: str = ""):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
            raise ParameterError("test function needs matching 1-d breakpoint arrays")
        if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(ys)):
            raise ParameterError("test function breakpoints must be finite")
        if np.any(np.diff(xs) <= 0.0):
            raise ParameterError("test function breakpoints must be strictly increasing")
        if np.any(ys < 0.0):
            raise ParameterError("test function values must be >= 0")
        if ys[0] != 0.0:
            raise ParameterError(
                "test function must vanish at its left support edge for continuity"
            )
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "name", name)

    @property
    def support_left(self) -> float:
        return float(self.xs[0])

    @property
    def sup(self) -> float:
        return float(self.ys.max())

    def __call__(self, y):
        return np.interp(y, self.xs, self.ys)


def smoothed_step(a: float, ramp: float = DEFAULT_RAMP, level: float = 1.0,
                  name: str = "") -> TestFunction:
    """level * 1_[a, inf) ramped linearly up over [a - ramp, a]."""
    if not ramp > 0.0:
        raise ParameterError("ramp width must be positive")
    return TestFunction([a - ramp, a], [0.0, level], name or f"step:{a:g}")


def tent(center: float, half_width: float, height: float = 1.0,
         name: str = "") -> TestFunction:
    """Triangular bump of the given height on [center - w, center + w]."""
    if not half_width > 0.0:
        raise ParameterError("tent half-width must be positive")
    return TestFunction(
        [center - half_width, center, center + half_width],
        [0.0, height, 0.0],
        name or f"tent:{center:g}:{half_width:g}",
    )


def plateau(a: float, level: float, ramp: float = DEFAULT_RAMP,
            name: str = "") -> TestFunction:
    """Constant level on the half-line [a, inf), ramped over [a - ramp, a]."""
    if not level > 0.0:
        raise ParameterError("plateau level must be positive")
    return TestFunction([a - ramp, a], [0.0, level], name or f"plateau:{a:g}:{level:g}")


def parse_test_function(spec: str) -> TestFunction:
    """Parse the compact shape:args syntax used in configs.

    step:a[:ramp] | tent:center:half_width[:height] | plateau:a:level[:ramp]
    """
    parts = spec.split(":")
    kind, args = parts[0], parts[1:]
    try:
        vals = [float(v) for v in args]
    except ValueError as exc:
        raise ParameterError(f"bad test function spec {spec!r}: {exc}") from None
    if kind == "step" and len(vals) in (1, 2):
        return smoothed_step(*vals, name=spec)
    if kind == "tent" and len(vals) in (2, 3):
        return tent(*vals, name=spec)
    if kind == "plateau" and len(vals) in (2, 3):
        return plateau(*vals, name=spec)
    raise ParameterError(
        f"bad test function spec {spec!r}; expected step:a[:ramp], "
        "tent:center:half_width[:height], or plateau:a:level[:ramp]"
    )


def canonical_test_functions() -> tuple[TestFunction, TestFunction, TestFunction]:
    """The three shapes every Laplace-functional experiment uses by default."""
    return (
        smoothed_step(0.0),
        tent(1.0, 1.0),
        plateau(-1.0, 0.5),
    )


def frame_shift(snapshot, to: Frame):
    """Map a snapshot between the standard and drifted frames.

    Positions change by -+ rho * t; every other field (lineage metadata, touch
    times, flags) is preserved.  Shifting to the frame the snapshot is already
    in returns it unchanged.
    """
    if isinstance(to, str):
        to = Frame.parse(to)
    src = snapshot.frame
    if to is Frame.NO_BARRIER or src is Frame.NO_BARRIER:
        raise ParameterError("frame_shift maps between the two barrier frames only")
    if src is to:
        return snapshot
    rho = snapshot.params.rho
    t = snapshot.time
    if to is Frame.DRIFTED_ABSORBED_AT_ZERO:
        delta = -rho * t
    else:
        delta = rho * t
    return snapshot.shifted(delta, to)

"""Single-user outage analysis: Monte Carlo, closed forms and the fixed-antenna baseline.

Model: a user at (x1, y1, 0) with y1 ~ U[0, y_max] is served by one antenna
at distance d(y1).  The link is in LoS with probability exp(-phi d); in LoS
the MRT SNR is eta^2 p_max / (d^2 sigma^2).  Outage means blockage, or an
SNR below eps = 2^R - 1, which in LoS happens exactly when d >= tau, with
tau = eta * sqrt(p_max / (eps sigma^2)).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Union

import numpy as np

from .beamforming import PowerConfig
from .channel import RadioConfig, freespace_channel, inwaveguide_response, los_probability
from .geometry import PaLayout, SystemGeometry, user_pa_distances

DistanceFn = Callable[[np.ndarray], np.ndarray]


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutageSpec:
    rate_threshold: float
    density: float
    user_x: float
    trials: int = 100_000
    conventional: Optional[tuple] = None

    def __post_init__(self):
        if not self.rate_threshold > 0:
            raise ValueError("rate threshold must be positive")
        if self.density < 0:
            raise ValueError("blockage density must be non-negative")
        if self.trials < 1:
            raise ValueError("need at least one trial")

    @property
    def snr_threshold(self) -> float:
        return 2.0**self.rate_threshold - 1.0


@dataclass(frozen=True)
class OutageEstimate:
    estimate: float
    half_width: float
    trials: int

    def covers(self, value: float) -> bool:
        return abs(self.estimate - value) <= self.half_width


@dataclass(frozen=True)
class OrderingReport:
    pass_outage: float
    conventional_outage: float
    status: Literal["strict", "equal", "violated"]

    @property
    def gap(self) -> float:
        return self.conventional_outage - self.pass_outage

    @property
    def ok(self) -> bool:
        return self.status != "violated"


def conventional_position(geometry: SystemGeometry) -> np.ndarray:
    """Default fixed antenna: centre of the region at mount height."""
    return np.array([geometry.waveguide_length / 2, geometry.region_depth / 2, geometry.mount_height])


def movable_pa_distance(geometry: SystemGeometry, user_x: float) -> DistanceFn:
    """d_min(y) when a PA can slide to x = user_x on the nearest waveguide."""
    y_wg = geometry.waveguide_y()

    def dmin(y):
        y = np.asarray(y, dtype=float)
        off = np.min(np.abs(y[..., None] - y_wg), axis=-1)
        return np.sqrt(geometry.mount_height**2 + off**2)

    return dmin


def layout_distance(geometry: SystemGeometry, layout: PaLayout, user_x: float) -> DistanceFn:
    def dmin(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        users = np.stack([np.full_like(y, user_x), y, np.zeros_like(y)], axis=1)
        return user_pa_distances(geometry, layout.positions, users).min(axis=0)

    return dmin


def fixed_distance(position, user_x: float) -> DistanceFn:
    px, py, pz = (float(v) for v in position)

    def d(y):
        y = np.asarray(y, dtype=float)
        return np.sqrt((user_x - px) ** 2 + (y - py) ** 2 + pz**2)

    return d


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if abs(delta) <= 15 * tol:
            return left + right + delta / 15
        if depth >= max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth + 1) + recurse(
            m, b, fm, frm, fb, right, tol / 2, depth + 1
        )

    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)


def _mean_los(spec: OutageSpec, y_max: float, dmin: DistanceFn, a: float = 0.0, b: Optional[float] = None) -> float:
    b = y_max if b is None else b
    integrand = lambda y: float(los_probability(spec.density, dmin(np.array(y))))
    return adaptive_simpson(integrand, a, b) / y_max


def outage_closed_form(spec: OutageSpec, geometry: SystemGeometry, dmin: Optional[DistanceFn] = None) -> float:
    """High-SNR outage: 1 - mean over y of exp(-phi d_min(y))."""
    if spec.density == 0:
        return 0.0
    dmin = dmin if dmin is not None else movable_pa_distance(geometry, spec.user_x)
    return 1.0 - _mean_los(spec, geometry.region_depth, dmin)


def conventional_outage(spec: OutageSpec, geometry: SystemGeometry, position=None) -> float:
    position = conventional_position(geometry) if position is None else position
    return outage_closed_form(spec, geometry, fixed_distance(position, spec.user_x))


def snr_radius(spec: OutageSpec, radio: RadioConfig, power: PowerConfig) -> float:
    """Distance beyond which an unblocked single-antenna MRT link misses the SNR threshold."""
    return radio.gain * math.sqrt(power.p_max / (spec.snr_threshold * power.noise_power))


def critical_power(spec: OutageSpec, geometry: SystemGeometry, radio: RadioConfig, noise_power: float,
                   dmin: Optional[DistanceFn] = None) -> float:
    """Smallest p_max at which every position meets the SNR threshold in LoS."""
    dmin = dmin if dmin is not None else movable_pa_distance(geometry, spec.user_x)
    d_far = float(np.max(dmin(np.linspace(0.0, geometry.region_depth, 4001))))
    return spec.snr_threshold * noise_power * d_far**2 / radio.gain**2


def _crossings(fn, a: float, b: float, level: float, samples: int = 4001) -> list[float]:
    ys = np.linspace(a, b, samples)
    vals = fn(ys) - level
    out = []
    for i in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:])):
        lo, hi = ys[i], ys[i + 1]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.sign(fn(np.array(mid)) - level) == np.sign(vals[i]):
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return out


def outage_full_closed_form(
    spec: OutageSpec,
    geometry: SystemGeometry,
    radio: RadioConfig,
    power: PowerConfig,
    dmin: Optional[DistanceFn] = None,
) -> float:
    """Outage at finite power: blockage term plus LoS-but-too-far term.

    The second integral runs over S = {y : d_min(y) >= tau}; S is split at
    the points where d_min crosses tau (the interval ends that shrink to
    the empty set as power grows).
    """
    dmin = dmin if dmin is not None else movable_pa_distance(geometry, spec.user_x)
    y_max = geometry.region_depth
    tau = snr_radius(spec, radio, power)
    blocked = outage_closed_form(spec, geometry, dmin)
    edges = [0.0] + _crossings(dmin, 0.0, y_max, tau) + [y_max]
    far = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if dmin(np.array(0.5 * (a + b))) >= tau:
            far += _mean_los(spec, y_max, dmin, a, b)
    return blocked + far


ServingRule = Union[Literal["optimal", "fixed"], Callable[[np.ndarray], np.ndarray]]


def outage_monte_carlo(
    spec: OutageSpec,
    geometry: SystemGeometry,
    radio: RadioConfig,
    power: PowerConfig,
    rng: np.random.Generator,
    policy: ServingRule = "optimal",
    position=None,
) -> OutageEstimate:
    """Count outages over random user positions and blockage draws.

    policy "optimal" slides a PA to x = user_x on the waveguide nearest the
    user; "fixed" serves from ``position`` (default: region centre) with no
    waveguide; a callable maps the user's y values to serving PA coordinates.
    """
    n = spec.trials
    y = rng.uniform(0.0, geometry.region_depth, n)
    users = np.stack([np.full(n, spec.user_x), y, np.zeros(n)], axis=1)
    if policy == "optimal":
        y_wg = geometry.waveguide_y()
        nearest = y_wg[np.argmin(np.abs(y[:, None] - y_wg), axis=1)]
        pas = np.stack([np.full(n, spec.user_x), nearest, np.full(n, geometry.mount_height)], axis=1)
        feed = inwaveguide_response(radio, 1, pas[:, 0])
    elif policy == "fixed":
        pos = conventional_position(geometry) if position is None else np.asarray(position, dtype=float)
        pas = np.broadcast_to(pos, users.shape)
        feed = 1.0
    else:
        pas = np.asarray(policy(y), dtype=float)
        feed = inwaveguide_response(radio, 1, pas[:, 0])
    e = freespace_channel(radio, pas, users) * feed
    snr = power.p_max * np.abs(e) ** 2 / power.noise_power
    d = np.linalg.norm(pas - users, axis=1)
    los = rng.random(n) < los_probability(spec.density, d)
    outage = ~los | (snr < spec.snr_threshold)
    p = float(outage.mean())
    return OutageEstimate(p, 1.96 * math.sqrt(p * (1 - p) / n), n)


def outage_ordering_check(
    spec: OutageSpec,
    geometry: SystemGeometry,
    dmin: Optional[DistanceFn] = None,
    position=None,
    tol: float = 1e-12,
) -> OrderingReport:
    ours = outage_closed_form(spec, geometry, dmin)
    conv = conventional_outage(spec, geometry, position)
    if abs(conv - ours) <= tol:
        status = "equal"
    elif ours < conv:
        status = "strict"
    else:
        status = "violated"
    return OrderingReport(ours, conv, status)


def fixed_array_gain(radio: RadioConfig, geometry: SystemGeometry, users, p_max: float,
                     position=None) -> np.ndarray:
    """MRT gain of the fixed-antenna baseline, one value per user.

    The baseline has one antenna per RF chain (N), centred on ``position``
    and spaced half a wavelength along y.
    """
    H = fixed_array_channels(radio, geometry, users, position)
    return p_max * np.sum(np.abs(H) ** 2, axis=1)


def fixed_array_channels(radio: RadioConfig, geometry: SystemGeometry, users, position=None) -> np.ndarray:
    """K x N channel rows of the fixed-antenna baseline."""
    pos = conventional_position(geometry) if position is None else np.asarray(position, dtype=float)
    N = geometry.num_waveguides
    offsets = (np.arange(N) - (N - 1) / 2) * radio.wavelength / 2
    antennas = pos + np.stack([np.zeros(N), offsets, np.zeros(N)], axis=1)
    U = np.atleast_2d(np.asarray(users, dtype=float))
    return freespace_channel(radio, antennas[None, :, :], U[:, None, :])


def loglog_fit(sizes, times) -> tuple[float, float]:
    """Slope and R^2 of log(time) against log(size)."""
    x, y = np.log(np.asarray(sizes, dtype=float)), np.log(np.asarray(times, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return float(slope), r2


def time_call(fn, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall time of ``fn()`` in seconds."""
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best

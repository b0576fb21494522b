"""Pinching-beamforming codebooks, probing, exhaustive oracle and label construction.

A codeword is a full PA layout.  Codebooks are stored as one (F, L, N)
array; codeword ``f`` is ``positions[f]`` and its id is ``f``.

Grid construction: on every waveguide the L antennas form a uniform cluster
with a fixed pitch, shifted to one of ``grid_points`` offsets spread over the
waveguide.  With ``focus`` points given, every antenna is then moved forward
by less than ``lambda / (n_eff - 1)`` so that its in-waveguide plus
free-space phase is a multiple of 2*pi at the focus point nearest to its
cluster; the cluster then combines coherently at that point.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .beamforming import BeamformingSolution, PowerConfig, solve_mmse
from .channel import RadioConfig, codeword_effective_channels, expand_mask
from .geometry import PLACEMENT_ATOL, PaLayout, SystemGeometry

DEFAULT_CAP = 4096
DEFAULT_JOINT_CAP = 100_000


class CodebookSizeError(ValueError):
    pass


@dataclass(frozen=True)
class Codebook:
    positions: np.ndarray  # F x L x N
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 3:
            raise ValueError(f"codebook positions must be F x L x N, got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    def layout(self, codeword: int) -> PaLayout:
        return PaLayout(self.positions[codeword])

    def to_json(self) -> str:
        doc = {
            "ids": self.ids.tolist(),
            "grid": self.grid,
            "positions": self.positions.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        doc = json.loads(text)
        cb = cls(np.array(doc["positions"], dtype=float), doc.get("grid", {}))
        if doc["ids"] != cb.ids.tolist():
            raise ValueError("codeword ids must be dense 0..F-1")
        return cb


@dataclass(frozen=True)
class ChannelInputs:
    """Everything needed to evaluate codewords for a set of users.

    ``mask`` may be None (all LoS), an (L, K) or (M, K) mask shared by all
    codewords, or an (F, M, K) mask with one draw per codeword.
    """

    radio: RadioConfig
    geometry: SystemGeometry
    users: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.users, dtype=float))
        if U.shape[1] == 2:
            U = np.hstack([U, np.zeros((U.shape[0], 1))])
        object.__setattr__(self, "users", U)

    @property
    def num_users(self) -> int:
        return self.users.shape[0]

    def codeword_mask(self, num_codewords: int) -> np.ndarray:
        if self.mask is not None and np.ndim(self.mask) == 3:
            if self.mask.shape[0] != num_codewords:
                raise ValueError("per-codeword mask does not match the codebook size")
            return np.asarray(self.mask, dtype=float)
        return expand_mask(self.mask, self.geometry, self.num_users)

    def restrict(self, ids) -> "ChannelInputs":
        """Inputs for a sub-codebook made of the given ids."""
        if self.mask is not None and np.ndim(self.mask) == 3:
            return ChannelInputs(self.radio, self.geometry, self.users, np.asarray(self.mask)[list(ids)])
        return self


@dataclass(frozen=True)
class ProbeReport:
    power: np.ndarray  # F x K received energy
    pilots: str
    seed: Optional[int] = None


@dataclass(frozen=True)
class JointLabel:
    ids: tuple
    sum_rate: float
    evaluated: int


def max_phase_nudge(radio: RadioConfig) -> float:
    """Upper bound on how far an antenna moves to reach the next phase-aligned spot."""
    if radio.n_eff <= 1:
        raise ValueError("phase focusing needs n_eff > 1")
    return radio.wavelength / (radio.n_eff - 1)


def _total_phase(radio, x, y_off2, x_focus):
    d = np.sqrt((x - x_focus) ** 2 + y_off2)
    return 2 * np.pi * x / radio.guided_wavelength + radio.wavenumber * d


def focus_positions(
    radio: RadioConfig,
    geometry: SystemGeometry,
    positions: np.ndarray,
    focus,
    iterations: int = 64,
) -> np.ndarray:
    """Nudge every PA forward to the nearest spot whose total phase is 0 mod 2*pi.

    Each waveguide's cluster in each codeword is aligned to whichever focus
    point is closest to the cluster centre.  The total phase is strictly
    increasing in x (n_eff > 1), so the target is bracketed by
    [x, x + max_phase_nudge] and found by bisection.
    """
    X = np.asarray(positions, dtype=float)
    P = np.atleast_2d(np.asarray(focus, dtype=float))
    if P.shape[1] == 2:
        P = np.hstack([P, np.zeros((P.shape[0], 1))])
    y_wg = geometry.waveguide_y()
    centre = X.mean(axis=-2)  # (..., N)
    cpos = np.stack(np.broadcast_arrays(centre, y_wg, geometry.mount_height), axis=-1)
    dist = np.linalg.norm(cpos[..., None, :] - P, axis=-1)  # (..., N, Q)
    nearest = P[np.argmin(dist, axis=-1)]  # (..., N, 3)
    xf = nearest[..., None, :, 0]
    y_off2 = (y_wg - nearest[..., None, :, 1]) ** 2 + (geometry.mount_height - nearest[..., None, :, 2]) ** 2

    phase = _total_phase(radio, X, y_off2, xf)
    target = 2 * np.pi * np.ceil(phase / (2 * np.pi))
    lo = X.copy()
    hi = X + max_phase_nudge(radio)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = _total_phase(radio, mid, y_off2, xf) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _check_stack(geometry: SystemGeometry, X: np.ndarray) -> None:
    if np.any(X < -PLACEMENT_ATOL) or np.any(X > geometry.waveguide_length + PLACEMENT_ATOL):
        raise ValueError("codebook places antennas outside the waveguide")
    if X.shape[-2] > 1 and np.any(np.diff(X, axis=-2) < geometry.min_pa_spacing - PLACEMENT_ATOL):
        raise ValueError("codebook violates the minimum antenna spacing")


def generate_grid_codebook(
    geometry: SystemGeometry,
    grid_points: int,
    pattern: Literal["uniform-offset", "per-waveguide-shift"] = "uniform-offset",
    *,
    pitch: Optional[float] = None,
    focus=None,
    radio: Optional[RadioConfig] = None,
    cap: int = DEFAULT_CAP,
) -> Codebook:
    """Enumerate cluster placements.

    uniform-offset: all waveguides share the offset, |F| = grid_points.
    per-waveguide-shift: every waveguide picks its own offset, |F| =
    grid_points ** N, enumerated lexicographically with waveguide 1 most
    significant.
    """
    L, N, x_max = geometry.pas_per_waveguide, geometry.num_waveguides, geometry.waveguide_length
    if grid_points < 1:
        raise ValueError("grid_points must be at least 1")
    if pattern == "uniform-offset":
        size = grid_points
    elif pattern == "per-waveguide-shift":
        size = grid_points**N
    else:
        raise ValueError(f"unknown codebook pattern {pattern!r}")
    if size > cap:
        raise CodebookSizeError(f"codebook would hold {size} codewords, cap is {cap}")

    if pitch is None:
        pitch = x_max / L
    margin = 0.0
    if focus is not None:
        if radio is None:
            raise ValueError("focusing needs a RadioConfig")
        margin = max_phase_nudge(radio)
    if pitch - margin < geometry.min_pa_spacing - PLACEMENT_ATOL:
        raise ValueError(
            f"pitch {pitch} m leaves less than the minimum spacing {geometry.min_pa_spacing} m"
        )
    free = x_max - (L - 1) * pitch - margin
    if free < 0:
        raise ValueError(f"{L} antennas at pitch {pitch} m do not fit on a {x_max} m waveguide")
    offsets = (np.arange(grid_points) + 0.5) * free / grid_points

    if pattern == "uniform-offset":
        index = np.repeat(np.arange(grid_points)[:, None], N, axis=1)
    else:
        index = np.array(list(itertools.product(range(grid_points), repeat=N)), dtype=int)
    X = offsets[index][:, None, :] + pitch * np.arange(L)[None, :, None]
    if focus is not None:
        X = focus_positions(radio, geometry, X, focus)
    _check_stack(geometry, X)
    grid = {
        "pattern": pattern,
        "grid_points": int(grid_points),
        "pitch": float(pitch),
        "offsets": offsets.tolist(),
        "focused": focus is not None,
    }
    return Codebook(X, grid)


def effective_channels(codebook: Codebook, inputs: ChannelInputs) -> np.ndarray:
    """(F, K, N) effective channels of every codeword."""
    mask = inputs.codeword_mask(len(codebook))
    return codeword_effective_channels(
        inputs.radio, inputs.geometry, codebook.positions, inputs.users, mask
    )


def mrt_gains(codebook: Codebook, inputs: ChannelInputs, p_max: float = 1.0) -> np.ndarray:
    """Single-user MRT beamforming gain p_max * ||e||^2 per (codeword, user)."""
    E = effective_channels(codebook, inputs)
    return p_max * np.sum(np.abs(E) ** 2, axis=-1)


def oracle_best_codeword(
    codebook: Codebook,
    inputs: ChannelInputs,
    objective: Literal["gain-mrt", "snr"] = "gain-mrt",
    power: Optional[PowerConfig] = None,
) -> int:
    if len(codebook) == 0:
        raise ValueError("empty codebook")
    if inputs.num_users != 1:
        raise ValueError("the exhaustive oracle is single-user")
    if objective == "gain-mrt":
        score = mrt_gains(codebook, inputs)[:, 0]
    elif objective == "snr":
        if power is None:
            raise ValueError("snr objective needs a PowerConfig")
        score = mrt_gains(codebook, inputs, power.p_max)[:, 0] / power.noise_power
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return int(np.argmax(score))  # first maximum = lowest id


def rank_codewords(scores: np.ndarray) -> np.ndarray:
    """Descending ranking along the last axis, ties broken by lower id."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def top_s_candidates(codebook: Codebook, inputs: ChannelInputs, S: int) -> list[np.ndarray]:
    if not 1 <= S <= len(codebook):
        raise ValueError(f"S={S} outside 1..{len(codebook)}")
    order = rank_codewords(mrt_gains(codebook, inputs).T)
    return [row[:S] for row in order]


def composite_layout(codebook: Codebook, combo: Sequence[int]) -> np.ndarray:
    """Waveguide n takes its PAs from the codeword of user (n mod K)."""
    N = codebook.positions.shape[2]
    cols = [codebook.positions[combo[n % len(combo)], :, n] for n in range(N)]
    return np.stack(cols, axis=1)


def _composite_mask(inputs: ChannelInputs, codebook: Codebook, combo) -> Optional[np.ndarray]:
    mask = inputs.codeword_mask(len(codebook))
    if mask.ndim == 2:
        return mask
    L, N = codebook.positions.shape[1:]
    rows = [mask[combo[n % len(combo)], n * L:(n + 1) * L] for n in range(N)]
    return np.concatenate(rows, axis=0)


def layout_sum_rate(inputs: ChannelInputs, positions: np.ndarray, mask, power: PowerConfig) -> float:
    E = codeword_effective_channels(
        inputs.radio, inputs.geometry, np.asarray(positions)[None], inputs.users, mask
    )[0]
    return solve_mmse(E, power).sum_rate


def joint_label_search(
    candidates: Sequence[Sequence[int]],
    codebook: Codebook,
    inputs: ChannelInputs,
    power: PowerConfig,
    mode: Literal["union", "tuple"] = "union",
    cap: int = DEFAULT_JOINT_CAP,
) -> JointLabel:
    """Pick the candidate combination with the highest MMSE sum rate.

    union: every distinct candidate codeword is scored as the single layout
    serving all users; the label repeats the winning id for every user.
    tuple: all S^K per-user combinations are scored on the composite layout
    where waveguide n follows user (n mod K)'s codeword.
    Ties go to the smallest id / lexicographically smallest tuple.
    """
    K = inputs.num_users
    if len(candidates) != K:
        raise ValueError(f"need one candidate list per user ({K}), got {len(candidates)}")
    if mode == "union":
        ids = sorted({int(i) for c in candidates for i in c})
        full_mask = inputs.codeword_mask(len(codebook))
        best, best_rate = None, -np.inf
        for i in ids:
            mask = full_mask[i] if full_mask.ndim == 3 else full_mask
            rate = layout_sum_rate(inputs, codebook.positions[i], mask, power)
            if rate > best_rate:
                best, best_rate = i, rate
        return JointLabel((best,) * K, float(best_rate), len(ids))
    if mode != "tuple":
        raise ValueError(f"unknown joint search mode {mode!r}")
    count = int(np.prod([len(c) for c in candidates]))
    if count > cap:
        raise CodebookSizeError(f"{count} combinations exceed the cap of {cap}")
    best, best_rate = None, -np.inf
    for combo in itertools.product(*[sorted(int(i) for i in c) for c in candidates]):
        rate = layout_sum_rate(
            inputs, composite_layout(codebook, combo), _composite_mask(inputs, codebook, combo), power
        )
        if rate > best_rate:
            best, best_rate = combo, rate
    return JointLabel(tuple(best), float(best_rate), count)


def served_layout(
    ids: Sequence[int],
    codebook: Codebook,
    inputs: ChannelInputs,
    mode: Literal["union", "tuple"] = "union",
) -> tuple[np.ndarray, np.ndarray]:
    """PA positions (L x N) and blockage mask (M x K) that serve a label."""
    full_mask = inputs.codeword_mask(len(codebook))
    if mode == "union" or len(set(int(i) for i in ids)) == 1:
        i = int(ids[0])
        return codebook.positions[i], full_mask[i] if full_mask.ndim == 3 else full_mask
    combo = tuple(int(i) for i in ids)
    return composite_layout(codebook, combo), _composite_mask(inputs, codebook, combo)


def serve_label(
    ids: Sequence[int],
    codebook: Codebook,
    inputs: ChannelInputs,
    power: PowerConfig,
    mode: Literal["union", "tuple"] = "union",
) -> BeamformingSolution:
    """MMSE finalisation on the layout selected by ``ids``."""
    positions, mask = served_layout(ids, codebook, inputs, mode)
    E = codeword_effective_channels(inputs.radio, inputs.geometry, positions[None], inputs.users, mask)[0]
    return solve_mmse(E, power)


def label_sum_rate(
    ids: Sequence[int],
    codebook: Codebook,
    inputs: ChannelInputs,
    power: PowerConfig,
    mode: Literal["union", "tuple"] = "union",
) -> float:
    """Re-evaluate the MMSE sum rate of a label produced by :func:`joint_label_search`."""
    return serve_label(ids, codebook, inputs, power, mode).sum_rate


def probe_sweep(
    codebook: Codebook,
    inputs: ChannelInputs,
    probe_power: float,
    noise_power: float,
    rng: Optional[np.random.Generator] = None,
    alpha=None,
    pilots: Literal["all-ones", "identity"] = "all-ones",
    seed: Optional[int] = None,
) -> ProbeReport:
    """Received probing energy per codeword and user.

    all-ones: one pilot per codeword, every RF chain sends sqrt(alpha p).
    identity: N pilots per codeword (columns of I_N), energies summed; the
    noiseless report is then alpha * p * ||e||^2, ranking like MRT gain.
    """
    E = effective_channels(codebook, inputs)  # F x K x N
    F, K, N = E.shape
    a = np.full(K, 1.0 / K) if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (K,))
    amp = np.sqrt(a * probe_power)[None, :]
    if pilots == "all-ones":
        signal = amp * E.sum(axis=-1)
    elif pilots == "identity":
        signal = amp[..., None] * E
    else:
        raise ValueError(f"unknown pilot scheme {pilots!r}")
    if noise_power > 0:
        if rng is None:
            raise ValueError("noisy probing needs a random generator")
        z = rng.standard_normal(signal.shape + (2,)) @ np.array([1.0, 1j])
        signal = signal + np.sqrt(noise_power / 2) * z
    power = np.abs(signal) ** 2
    if pilots == "identity":
        power = power.sum(axis=-1)
    return ProbeReport(power, pilots, seed)


def top_s_accuracy(predictions: Sequence[Sequence[int]], truths: Sequence[int], S: int) -> float:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} truths")
    if len(truths) == 0:
        raise ValueError("no samples")
    hits = 0
    for ranked, truth in zip(predictions, truths):
        if len(ranked) < S:
            raise ValueError(f"ranked list shorter than S={S}")
        hits += int(truth) in [int(r) for r in ranked[:S]]
    return hits / len(truths)

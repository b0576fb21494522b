"""Random scenes: user trajectories, the per-scene codebook, blockage and labels.

A scene is a pure function of (config, scene seed).  Trajectories, blockage
and probe noise use separate substreams of that seed, so a stored sample can
be rebuilt from its seed and user positions alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .beamforming import PowerConfig
from .channel import sample_blockage
from .codebook import (
    ChannelInputs,
    Codebook,
    generate_grid_codebook,
    joint_label_search,
    label_sum_rate,
    mrt_gains,
    oracle_best_codeword,
    top_s_candidates,
)
from .config import ScenarioConfig
from .rng import child_seed, substream
from .tokens import box_features, synthesize_boxes


@dataclass(frozen=True)
class Scene:
    seed: int
    trajectories: np.ndarray  # K x (T + horizon) x 2
    codebook: Codebook
    inputs: ChannelInputs

    @property
    def users(self) -> np.ndarray:
        return self.inputs.users


@dataclass(frozen=True)
class Label:
    ids: tuple
    objective: float  # MRT gain for K = 1, MMSE sum rate otherwise


def scene_seed(master: int, tag: str, index: int) -> int:
    return child_seed(master, tag, index)


def sample_trajectories(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Constant-velocity walks with small heading noise, reflected at the region edges."""
    g, u = cfg.geometry, cfg.users
    K, steps = u.count, u.window + u.horizon
    lo = np.array([u.edge_margin, 0.0])
    hi = np.array([g.waveguide_length - u.edge_margin, g.region_depth])
    pos = lo + (hi - lo) * rng.random((K, 2))
    speed = u.speed_max * rng.random(K)
    heading = rng.uniform(0, 2 * np.pi, K)
    out = np.empty((K, steps, 2))
    for t in range(steps):
        out[:, t] = pos
        heading = heading + rng.normal(0.0, 0.2, K)
        step = (speed * u.slot_duration)[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        pos = pos + step
        # reflect back into the box
        for axis in range(2):
            below, above = pos[:, axis] < lo[axis], pos[:, axis] > hi[axis]
            pos[below, axis] = 2 * lo[axis] - pos[below, axis]
            pos[above, axis] = 2 * hi[axis] - pos[above, axis]
            flip = below | above
            if axis == 0:
                heading[flip] = np.pi - heading[flip]
            else:
                heading[flip] = -heading[flip]
        pos = np.clip(pos, lo, hi)
    return out


def scene_codebook(cfg: ScenarioConfig, users: Optional[np.ndarray] = None) -> Codebook:
    """Codebook for the scene; with focusing on, clusters are phase-aligned to the users."""
    c = cfg.codebook
    focus = users if (c.focus and users is not None) else None
    return generate_grid_codebook(
        cfg.system_geometry(),
        c.grid_points,
        c.pattern,
        pitch=c.pitch,
        focus=focus,
        radio=cfg.radio_config(),
        cap=c.cap,
    )


def build_scene(cfg: ScenarioConfig, seed: int, users: Optional[np.ndarray] = None) -> Scene:
    """Sample (or rebuild, when ``users`` is given) the scene for ``seed``.

    Users are served at the last slot of the trajectory (the current slot
    plus the prediction horizon).
    """
    traj = sample_trajectories(cfg, substream(seed, "trajectory"))
    if users is None:
        users = traj[:, -1, :]
    users = np.atleast_2d(np.asarray(users, dtype=float))[:, :2]
    geometry = cfg.system_geometry()
    codebook = scene_codebook(cfg, users)
    U = np.hstack([users, np.zeros((len(users), 1))])
    mask = sample_blockage(cfg.blockage_model(), geometry, codebook.positions, U, substream(seed, "blockage"))
    inputs = ChannelInputs(cfg.radio_config(), geometry, U, mask)
    return Scene(seed, traj, codebook, inputs)


def scene_features(cfg: ScenarioConfig, scene: Scene) -> np.ndarray:
    """Concatenated per-user box features built from the observed window."""
    T = cfg.users.window
    camera = cfg.camera_model()
    parts = [
        box_features(synthesize_boxes(tr[:T], camera), cfg.tokens.patch_len, cfg.tokens.stride)
        for tr in scene.trajectories
    ]
    return np.concatenate(parts)


def label_scene(cfg: ScenarioConfig, scene: Scene, power: Optional[PowerConfig] = None) -> Label:
    power = power if power is not None else cfg.power_config()
    if scene.inputs.num_users == 1:
        best = oracle_best_codeword(scene.codebook, scene.inputs)
        gain = float(mrt_gains(scene.codebook, scene.inputs, power.p_max)[best, 0])
        return Label((best,), gain)
    c = cfg.codebook
    cands = top_s_candidates(scene.codebook, scene.inputs, min(c.top_s, len(scene.codebook)))
    joint = joint_label_search(cands, scene.codebook, scene.inputs, power, c.joint_mode, c.joint_cap)
    return Label(joint.ids, joint.sum_rate)


def label_objective(cfg: ScenarioConfig, scene: Scene, ids, power: Optional[PowerConfig] = None) -> float:
    """Objective of an arbitrary codeword choice, on the same scale as :class:`Label`."""
    power = power if power is not None else cfg.power_config()
    if scene.inputs.num_users == 1:
        return float(mrt_gains(scene.codebook, scene.inputs, power.p_max)[int(ids[0]), 0])
    return label_sum_rate(ids, scene.codebook, scene.inputs, power, cfg.codebook.joint_mode)

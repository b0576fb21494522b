"""Experiment drivers behind the command line: each returns plain rows."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import analysis
from .beamforming import PowerConfig, solve_mmse, watt_to_dbm
from .channel import los_probability
from .codebook import (
    joint_label_search,
    mrt_gains,
    oracle_best_codeword,
    probe_sweep,
    rank_codewords,
    serve_label,
)
from .config import SWEEP_AXES, ScenarioConfig
from .predictor import (
    OraclePredictor,
    PredictorParams,
    PredictorSpec,
    RandomPredictor,
    TrainConfig,
    TrainedPredictor,
    evaluate,
    train,
)
from .rng import substream
from .scene import Scene, build_scene, label_objective, label_scene, scene_features, scene_seed

DATASET_VERSION = 1
SPLITS = ("train", "val", "test")


class PropertyViolation(RuntimeError):
    """A checked invariant failed; the CLI maps this to exit status 4."""


# Selection --------------------------------------------------------------


def predictor_spec(cfg: ScenarioConfig, num_users: Optional[int] = None) -> PredictorSpec:
    p = cfg.predictor
    eta = p.eta_moe if p.eta_moe is not None else min(cfg.geometry.pas_per_waveguide, cfg.geometry.num_waveguides)
    rank = min(cfg.geometry.pas_per_waveguide, cfg.geometry.num_waveguides)
    return PredictorSpec(
        num_patches=cfg.num_patches,
        patch_len=cfg.tokens.patch_len,
        embed_dim=cfg.tokens.embed_dim,
        num_classes=cfg.codebook.grid_points if cfg.codebook.pattern == "uniform-offset"
        else cfg.codebook.grid_points ** cfg.geometry.num_waveguides,
        num_users=num_users if num_users is not None else cfg.users.count,
        hidden=p.hidden,
        experts=p.experts,
        a0=p.a0,
        moe_scale=rank / eta,
    )


def check_params(cfg: ScenarioConfig, params: PredictorParams) -> None:
    want = predictor_spec(cfg)
    got = params.spec
    if (got.num_classes, got.num_users, got.feature_len) != (want.num_classes, want.num_users, want.feature_len):
        raise ValueError(
            f"predictor was trained for {got.num_users} users, {got.num_classes} codewords and "
            f"{got.feature_len} features; the scenario needs {want.num_users}, {want.num_classes}, {want.feature_len}"
        )


def candidate_lists(cfg: ScenarioConfig, scene: Scene, mode: str, params: Optional[PredictorParams]) -> np.ndarray:
    """K x S candidate codewords proposed by the predictor for one scene."""
    F = len(scene.codebook)
    S = min(cfg.codebook.top_s, F)
    if mode == "oracle":
        scores = mrt_gains(scene.codebook, scene.inputs).T
    elif mode == "trained":
        scores = TrainedPredictor(params).predict_proba(scene_features(cfg, scene)[None])[0]
    elif mode == "random":
        scores = substream(scene.seed, "random-choice").random((scene.inputs.num_users, F))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return rank_codewords(scores)[:, :S]


def select_codewords(
    cfg: ScenarioConfig,
    scene: Scene,
    mode: str,
    power: PowerConfig,
    params: Optional[PredictorParams] = None,
    noise_power: Optional[float] = None,
) -> tuple:
    """Beam training for one scene: candidates, then refinement.

    Oracle mode returns the exhaustive label.  Otherwise the top-S
    candidates are probed; a single user takes the strongest probe, several
    users take the candidate combination with the best MMSE sum rate.
    """
    if mode == "oracle":
        return label_scene(cfg, scene, power).ids
    cands = candidate_lists(cfg, scene, mode, params)
    noise = power.noise_power if noise_power is None else noise_power
    report = probe_sweep(
        scene.codebook,
        scene.inputs,
        power.p_max,
        noise,
        substream(scene.seed, "probe"),
        alpha=power.alpha(scene.inputs.num_users),
        pilots=cfg.codebook.pilots,
        seed=scene.seed,
    )
    if scene.inputs.num_users == 1:
        c = cands[0]
        return (int(c[np.argmax(report.power[c, 0])]),)
    joint = joint_label_search(
        [list(c) for c in cands], scene.codebook, scene.inputs, power, cfg.codebook.joint_mode, cfg.codebook.joint_cap
    )
    return joint.ids


# simulate ----------------------------------------------------------------


def simulate(cfg: ScenarioConfig, seed: int, mode: str, params: Optional[PredictorParams] = None) -> list[dict]:
    power = cfg.power_config()
    if mode == "trained":
        if params is None:
            raise ValueError("mode 'trained' needs predictor parameters")
        check_params(cfg, params)
    rows = []
    for t in range(cfg.run.trials):
        scene = build_scene(cfg, scene_seed(seed, "trial", t))
        ids = select_codewords(cfg, scene, mode, power, params)
        sol = serve_label(ids, scene.codebook, scene.inputs, power, cfg.codebook.joint_mode)
        if mode == "oracle" and scene.inputs.num_users == 1:
            _recheck_single_user(scene, power, sol.sum_rate)
        for k in range(scene.inputs.num_users):
            rows.append(
                {
                    "trial": t,
                    "user": k + 1,
                    "codeword": int(ids[k]),
                    "sinr": float(sol.sinr[k]),
                    "rate": float(sol.rates[k]),
                    "sum_rate": sol.sum_rate,
                }
            )
    return rows


def _recheck_single_user(scene: Scene, power: PowerConfig, sum_rate: float) -> None:
    gains = mrt_gains(scene.codebook, scene.inputs, power.p_max)[:, 0]
    best = float(np.max(np.log2(1.0 + gains / power.noise_power)))
    if not np.isclose(sum_rate, best, rtol=1e-9, atol=1e-12):
        raise PropertyViolation(f"oracle rate {sum_rate} differs from the codebook maximum {best}")


# dataset -------------------------------------------------------------------


def split_counts(n: int) -> tuple[int, int, int]:
    n_train, n_val = int(0.7 * n), int(0.1 * n)
    return n_train, n_val, n - n_train - n_val


def split_of(index: int, n: int) -> str:
    n_train, n_val, _ = split_counts(n)
    if index < n_train:
        return "train"
    return "val" if index < n_train + n_val else "test"


def dataset_records(cfg: ScenarioConfig, seed: int, count: int) -> Iterable[dict]:
    power = cfg.power_config()
    for i in range(count):
        s = scene_seed(seed, "sample", i)
        scene = build_scene(cfg, s)
        label = label_scene(cfg, scene, power)
        rec = {"v": DATASET_VERSION, "index": i, "seed": s, "split": split_of(i, count)}
        rec["features"] = scene_features(cfg, scene).tolist()
        if len(label.ids) == 1:
            rec["label"] = int(label.ids[0])
        else:
            rec["labels"] = [int(v) for v in label.ids]
        rec["objective"] = label.objective
        rec["user_positions"] = scene.users[:, :2].tolist()
        yield rec


def write_dataset(path: Path, records: Iterable[dict]) -> int:
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_dataset(path) -> list[dict]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("v") != DATASET_VERSION:
                raise ValueError(f"{path}:{lineno}: unsupported dataset version {rec.get('v')!r}")
            if rec.get("split") not in SPLITS:
                raise ValueError(f"{path}:{lineno}: missing split tag")
            out.append(rec)
    if not out:
        raise ValueError(f"{path}: empty dataset")
    return out


def record_labels(rec: dict) -> list[int]:
    return [rec["label"]] if "label" in rec else list(rec["labels"])


def dataset_arrays(records: list[dict], split: str) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    chosen = [r for r in records if r["split"] == split]
    if not chosen:
        raise ValueError(f"dataset has no {split!r} samples")
    X = np.array([r["features"] for r in chosen], dtype=float)
    Y = np.array([record_labels(r) for r in chosen], dtype=int)
    return X, Y, chosen


def rebuild_scene(cfg: ScenarioConfig, rec: dict) -> Scene:
    return build_scene(cfg, rec["seed"], np.array(rec["user_positions"], dtype=float))


def reevaluate(cfg: ScenarioConfig, rec: dict) -> float:
    """Objective of the stored label, recomputed from seed and positions."""
    return label_objective(cfg, rebuild_scene(cfg, rec), record_labels(rec))


# train / eval ---------------------------------------------------------------


def train_on_dataset(cfg: ScenarioConfig, records: list[dict], seed: int):
    X, Y, _ = dataset_arrays(records, "train")
    spec = predictor_spec(cfg, num_users=Y.shape[1])
    if X.shape[1] != spec.feature_len:
        raise ValueError(f"dataset features have length {X.shape[1]}, the scenario gives {spec.feature_len}")
    p = cfg.predictor
    tc = TrainConfig(p.epochs, p.batch_size, p.learning_rate, p.dwa_temperature, seed)
    return train(X, Y, spec, tc)


def loss_rows(history) -> list[dict]:
    rows = []
    for epoch, per_user, theta, total in history:
        row = {"epoch": epoch}
        row.update({f"loss_{k + 1}": float(v) for k, v in enumerate(per_user)})
        row.update({f"theta_{k + 1}": float(v) for k, v in enumerate(theta)})
        row["total"] = float(total)
        rows.append(row)
    return rows


def evaluate_dataset(
    cfg: ScenarioConfig,
    records: list[dict],
    mode: str,
    seed: int,
    params: Optional[PredictorParams] = None,
    split: str = "test",
) -> dict:
    X, Y, chosen = dataset_arrays(records, split)
    F = predictor_spec(cfg).num_classes
    if mode == "trained":
        if params is None:
            raise ValueError("mode 'trained' needs predictor parameters")
        predictor = TrainedPredictor(params)
    elif mode == "random":
        predictor = RandomPredictor(F, Y.shape[1], seed)
    elif mode == "oracle":
        predictor = OraclePredictor(Y, F)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    power = cfg.power_config()
    scenes: dict[int, Scene] = {}

    def rate_fn(i, ids):
        if i not in scenes:
            scenes[i] = rebuild_scene(cfg, chosen[i])
        sc = scenes[i]
        return serve_label(ids, sc.codebook, sc.inputs, power, cfg.codebook.joint_mode).sum_rate

    table = evaluate(predictor, X, Y, cfg.run.eval_s, rate_fn)
    table["samples"] = len(X)
    return table


# outage ----------------------------------------------------------------------


@dataclass(frozen=True)
class OutageRow:
    phi: float
    p_max_dbm: float
    mc_estimate: float
    ci_halfwidth: float
    closed_form: float
    full_closed_form: float
    conventional: float
    gap: float
    ordering: str


def outage_study(cfg: ScenarioConfig, seed: int) -> list[OutageRow]:
    o = cfg.outage
    geometry, radio = cfg.system_geometry(), cfg.radio_config()
    user_x = o.user_x if o.user_x is not None else geometry.waveguide_length / 2
    psi_c = (
        np.asarray(o.conventional_position, dtype=float)
        if o.conventional_position is not None
        else analysis.conventional_position(geometry)
    )
    if o.degenerate:
        # the only admissible PA position is the fixed antenna itself
        dmin = analysis.fixed_distance(psi_c, user_x)
        policy = lambda y: np.broadcast_to(psi_c, (len(y), 3))
    else:
        dmin = analysis.movable_pa_distance(geometry, user_x)
        policy = "optimal"
    rows = []
    for ip, p_dbm in enumerate(o.p_max_dbm):
        power = cfg.power_config(p_max_dbm=p_dbm)
        for iphi, phi in enumerate(o.densities):
            spec = analysis.OutageSpec(o.rate_threshold, phi, user_x, o.trials, tuple(psi_c))
            mc = analysis.outage_monte_carlo(
                spec, geometry, radio, power, substream(seed, "outage", ip, iphi), policy=policy
            )
            report = analysis.outage_ordering_check(spec, geometry, dmin, psi_c)
            full = analysis.outage_full_closed_form(spec, geometry, radio, power, dmin)
            rows.append(
                OutageRow(
                    phi, p_dbm, mc.estimate, mc.half_width, report.pass_outage, full,
                    report.conventional_outage, report.gap, report.status,
                )
            )
    return rows


# sweeps ------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    rows: list[dict]
    timing: list[dict]


def _fixed_channels(cfg: ScenarioConfig, scene: Scene) -> np.ndarray:
    """Fixed-array channels with their own blockage draw, K x N."""
    geometry, radio = cfg.system_geometry(), cfg.radio_config()
    H = analysis.fixed_array_channels(radio, geometry, scene.users)
    if cfg.blockage.mode == "distance-exponential" and cfg.blockage.density > 0:
        pos = analysis.conventional_position(geometry)
        d = np.linalg.norm(scene.users - pos, axis=1)
        u = substream(scene.seed, "fixed-blockage").random(H.shape)
        H = H * (u < los_probability(cfg.blockage.density, d)[:, None])
    return H


def _sweep_scenes(cfg: ScenarioConfig, seed: int) -> Iterable[Scene]:
    for j in range(cfg.sweep.users_per_point):
        yield build_scene(cfg, scene_seed(seed, "sweep", j))


def _gain_db(values) -> float:
    return float(10 * np.log10(np.mean(values)))


def sweep(
    cfg: ScenarioConfig,
    axis: str,
    seed: int,
    params: Optional[PredictorParams] = None,
    extra_modes: tuple = (),
) -> SweepResult:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = getattr(cfg.sweep, SWEEP_AXES[axis])
    if not values:
        raise ValueError(f"sweep axis {axis!r} has no values")
    modes = ["oracle"] + (["trained"] if params is not None else []) + [m for m in extra_modes if m == "random"]
    rows, timing = [], []

    def add(value, variant, metric, mean):
        rows.append({"axis": axis, "value": value, "variant": variant, "metric": metric, "mean": float(mean)})

    for value in values:
        start = time.perf_counter()
        if axis in ("L", "grid-resolution"):
            upd = {"pas_per_waveguide": int(value)} if axis == "L" else {}
            pcfg = cfg.with_updates(users={"count": 1}, geometry=upd)
            if axis == "grid-resolution":
                pcfg = pcfg.with_updates(codebook={"grid_points": int(value), "cap": max(cfg.codebook.cap, int(value))})
            _gain_point(pcfg, seed, value, modes, params, add)
        elif axis == "power":
            pcfg = cfg.with_updates(power={"p_max_dbm": float(value)})
            _rate_point(pcfg, seed, value, modes, params, add)
        elif axis == "snr":
            noise = cfg.power.p_max_dbm - float(value)
            pcfg = cfg.with_updates(users={"count": 1}, power={"noise_dbm": noise, "allocation": None})
            _snr_point(pcfg, seed, value, params, add)
        else:  # sinr-min
            pcfg = cfg.with_updates(users={"count": 1}, power={"allocation": None})
            _sinr_point(pcfg, seed, float(value), add)
        timing.append({"axis": axis, "value": value, "seconds": time.perf_counter() - start})
    return SweepResult(rows, timing)


def _usable(cfg: ScenarioConfig, params) -> bool:
    if params is None:
        return False
    want = predictor_spec(cfg)
    got = params.spec
    return (got.num_classes, got.num_users, got.feature_len) == (want.num_classes, want.num_users, want.feature_len)


def _gain_point(cfg, seed, value, modes, params, add):
    power = cfg.power_config()
    gains = {f"{m}-PASS": [] for m in modes}
    fixed = []
    for scene in _sweep_scenes(cfg, seed):
        g = mrt_gains(scene.codebook, scene.inputs)[:, 0]
        for m in modes:
            if m == "trained" and not _usable(cfg, params):
                continue
            ids = select_codewords(cfg, scene, m, power, params)
            gains[f"{m}-PASS"].append(g[ids[0]])
        fixed.append(float(np.sum(np.abs(_fixed_channels(cfg, scene)) ** 2)))
    for variant, vals in gains.items():
        if vals:
            add(value, variant, "gain_db", _gain_db(vals))
    add(value, "fixed-antenna", "gain_db", _gain_db(fixed))


def _rate_point(cfg, seed, value, modes, params, add):
    power = cfg.power_config()
    rates = {f"{m}-PASS": [] for m in modes}
    fixed = []
    for scene in _sweep_scenes(cfg, seed):
        for m in modes:
            if m == "trained" and not _usable(cfg, params):
                continue
            ids = select_codewords(cfg, scene, m, power, params)
            rates[f"{m}-PASS"].append(serve_label(ids, scene.codebook, scene.inputs, power, cfg.codebook.joint_mode).sum_rate)
        fixed.append(solve_mmse(_fixed_channels(cfg, scene), power).sum_rate)
    for variant, vals in rates.items():
        if vals:
            add(value, variant, "sum_rate", np.mean(vals))
    add(value, "fixed-antenna", "sum_rate", np.mean(fixed))


def _snr_point(cfg, seed, value, params, add):
    """Top-1 of noisy beam training against the noiseless oracle."""
    power = cfg.power_config()
    hits = {"probe-PASS": [], "trained-PASS": []}
    rates = {"oracle-PASS": [], "probe-PASS": [], "trained-PASS": [], "fixed-antenna": []}
    for scene in _sweep_scenes(cfg, seed):
        truth = oracle_best_codeword(scene.codebook, scene.inputs)
        report = probe_sweep(
            scene.codebook, scene.inputs, power.p_max, power.noise_power,
            substream(scene.seed, "probe"), pilots=cfg.codebook.pilots,
        )
        choices = {"oracle-PASS": truth, "probe-PASS": int(np.argmax(report.power[:, 0]))}
        if _usable(cfg, params):
            choices["trained-PASS"] = select_codewords(cfg, scene, "trained", power, params)[0]
        for variant, cw in choices.items():
            if variant in hits:
                hits[variant].append(cw == truth)
            rates[variant].append(serve_label((cw,), scene.codebook, scene.inputs, power).sum_rate)
        rates["fixed-antenna"].append(solve_mmse(_fixed_channels(cfg, scene), power).sum_rate)
    for variant, vals in hits.items():
        if vals:
            add(value, variant, "top1", np.mean(vals))
    for variant, vals in rates.items():
        if vals:
            add(value, variant, "rate", np.mean(vals))


def _sinr_point(cfg, seed, sinr_db, add):
    """Transmit power needed to reach the SINR target, and how often p_max suffices."""
    power = cfg.power_config()
    target = 10 ** (sinr_db / 10)
    need = {"oracle-PASS": [], "fixed-antenna": []}
    for scene in _sweep_scenes(cfg, seed):
        g = float(np.max(mrt_gains(scene.codebook, scene.inputs)[:, 0]))
        need["oracle-PASS"].append(target * power.noise_power / g if g > 0 else np.inf)
        gf = float(np.sum(np.abs(_fixed_channels(cfg, scene)) ** 2))
        need["fixed-antenna"].append(target * power.noise_power / gf if gf > 0 else np.inf)
    for variant, vals in need.items():
        vals = np.asarray(vals)
        finite = vals[np.isfinite(vals)]
        add(sinr_db, variant, "required_power_dbm", watt_to_dbm(np.mean(finite)) if finite.size else np.inf)
        add(sinr_db, variant, "feasible_fraction", np.mean(vals <= power.p_max))


# complexity ----------------------------------------------------------------------


def probing_scaling(cfg: ScenarioConfig, sizes=(16, 64, 256, 1024), seed: int = 0, repeats: int = 7):
    """Wall time of probe sweep + selection against codebook size.

    Returns (sizes, seconds, slope, r2) of the log-log fit.
    """
    times = []
    base = cfg.with_updates(users={"count": 1})
    for F in sizes:
        pcfg = base.with_updates(codebook={"grid_points": int(F), "cap": max(base.codebook.cap, int(F))})
        scene = build_scene(pcfg, scene_seed(seed, "scaling", int(F)))
        power = pcfg.power_config()
        rng = substream(seed, "scaling-probe", int(F))

        def loop():
            report = probe_sweep(scene.codebook, scene.inputs, power.p_max, power.noise_power, rng,
                                 pilots=pcfg.codebook.pilots)
            return int(np.argmax(report.power[:, 0]))

        times.append(analysis.time_call(loop, repeats))
    slope, r2 = analysis.loglog_fit(sizes, times)
    return list(sizes), times, slope, r2

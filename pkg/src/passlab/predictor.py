"""Beam-selection predictors.

The trainable model maps box features to one distribution over codewords
per user:

    tokens_i  = patches_i @ EM_i + m_i            (per attribute i = 1..4)
    z         = [tokens of every user, RevIN stats of every user]
    a         = tanh(W1 z + b1)                   (skipped when hidden == 0)
    base_k    = A_k a + c_k
    expert_ke = B_ke a + d_ke,   gate = softmax(Gw a + gb)
    logits_k  = a0 * base_k + scale * sum_e alpha_e gate_e expert_ke

and is trained with plain mini-batch gradient descent on the per-user
cross-entropy, the users' losses weighted by dynamic weight averaging.
Gradients are derived by hand; :func:`finite_difference_check` verifies them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .codebook import rank_codewords, top_s_accuracy
from .rng import substream

FORMAT_NAME = "passlab-predictor"
FORMAT_VERSION = 1


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class PredictorSpec:
    num_patches: int
    patch_len: int
    embed_dim: int
    num_classes: int
    num_users: int = 1
    hidden: int = 64
    experts: int = 0
    a0: float = 1.0
    # rank(X) / eta_MoE; 1.0 with the default eta_MoE = min(L, N).
    moe_scale: float = 1.0

    @property
    def user_feature_len(self) -> int:
        return 4 * self.num_patches * self.patch_len + 8

    @property
    def feature_len(self) -> int:
        return self.num_users * self.user_feature_len

    @property
    def embedded_len(self) -> int:
        return self.num_users * (4 * self.num_patches * self.embed_dim + 8)

    @property
    def head_in(self) -> int:
        return self.hidden if self.hidden > 0 else self.embedded_len


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.1
    dwa_temperature: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class PredictorParams:
    spec: PredictorSpec
    arrays: dict
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.theta is None:
            object.__setattr__(self, "theta", np.ones(self.spec.num_users))

    def with_arrays(self, arrays: dict) -> "PredictorParams":
        return replace(self, arrays={k: np.array(v, dtype=float) for k, v in arrays.items()})


@dataclass(frozen=True)
class Prediction:
    ranked: np.ndarray
    probs: np.ndarray


@dataclass
class TrainResult:
    params: PredictorParams
    history: list  # rows: (epoch, per-user losses, theta, total)


def init_params(spec: PredictorSpec, rng: np.random.Generator, scale: float = 1.0) -> PredictorParams:
    K, F, E, H = spec.num_users, spec.num_classes, spec.experts, spec.head_in
    arrays = {
        "EM": rng.standard_normal((4, spec.patch_len, spec.embed_dim)) / np.sqrt(spec.patch_len),
        "m": np.zeros((4, spec.embed_dim)),
    }
    if spec.hidden > 0:
        arrays["W1"] = rng.standard_normal((spec.hidden, spec.embedded_len)) / np.sqrt(spec.embedded_len)
        arrays["b1"] = np.zeros(spec.hidden)
    arrays["A"] = scale * rng.standard_normal((K, F, H)) / np.sqrt(H)
    arrays["c"] = np.zeros((K, F))
    if E > 0:
        arrays["B"] = scale * rng.standard_normal((K, E, F, H)) / np.sqrt(H)
        arrays["d"] = np.zeros((K, E, F))
        arrays["Gw"] = rng.standard_normal((E, H)) / np.sqrt(H)
        arrays["gb"] = np.zeros(E)
        arrays["alpha"] = np.ones(E)
    return PredictorParams(spec, arrays)


def zero_params(spec: PredictorSpec) -> PredictorParams:
    p = init_params(spec, np.random.default_rng(0))
    return p.with_arrays({k: np.zeros_like(v) for k, v in p.arrays.items()})


def _softmax(x, axis=-1):
    x = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(x)
    return ex / ex.sum(axis=axis, keepdims=True)


def _forward(params: PredictorParams, X):
    s, p = params.spec, params.arrays
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != s.feature_len:
        raise ValueError(f"feature length {X.shape[1]} does not match the model ({s.feature_len})")
    n = X.shape[0]
    Xr = X.reshape(n, s.num_users, s.user_feature_len)
    npl = 4 * s.num_patches * s.patch_len
    patches = Xr[:, :, :npl].reshape(n, s.num_users, 4, s.num_patches, s.patch_len)
    stats = Xr[:, :, npl:]
    tok = np.einsum("bkanp,aps->bkans", patches, p["EM"]) + p["m"][None, None, :, None, :]
    z = np.concatenate([tok.reshape(n, s.num_users, -1), stats], axis=2).reshape(n, -1)
    a = np.tanh(z @ p["W1"].T + p["b1"]) if s.hidden > 0 else z
    logits = s.a0 * (np.einsum("kfh,bh->bkf", p["A"], a) + p["c"])
    cache = {"patches": patches, "z": z, "a": a}
    if s.experts > 0:
        g = _softmax(a @ p["Gw"].T + p["gb"])
        v = np.einsum("kefh,bh->bkef", p["B"], a) + p["d"]
        coeff = s.moe_scale * p["alpha"] * g
        logits = logits + np.einsum("be,bkef->bkf", coeff, v)
        cache.update(g=g, v=v, coeff=coeff)
    return logits, cache


def predict_proba(params: PredictorParams, X) -> np.ndarray:
    """(n, K, F) class probabilities."""
    logits, _ = _forward(params, X)
    return _softmax(logits)


def predict(params: PredictorParams, features, codebook_size: Optional[int] = None) -> list[Prediction]:
    """Ranked prediction per user head for a single feature vector."""
    if codebook_size is not None and codebook_size != params.spec.num_classes:
        raise ValueError(f"model covers {params.spec.num_classes} codewords, not {codebook_size}")
    probs = predict_proba(params, np.asarray(features)[None])[0]
    return [Prediction(rank_codewords(row), row) for row in probs]


def loss_and_grads(params: PredictorParams, X, labels, theta=None, need_grads: bool = True):
    """Weighted cross-entropy, per-user mean losses and gradients for every array."""
    s, p = params.spec, params.arrays
    labels = np.asarray(labels, dtype=int).reshape(-1, s.num_users)
    theta = params.theta if theta is None else np.asarray(theta, dtype=float)
    logits, cache = _forward(params, X)
    n = logits.shape[0]
    probs = _softmax(logits)
    picked = np.take_along_axis(probs, labels[:, :, None], axis=2)[:, :, 0]
    with np.errstate(divide="ignore"):
        per_user = -np.log(picked).mean(axis=0)
    total = float(theta @ per_user)
    if not need_grads:
        return total, per_user, None

    dl = probs.copy()
    np.put_along_axis(dl, labels[:, :, None], np.take_along_axis(dl, labels[:, :, None], 2) - 1.0, axis=2)
    dl *= theta[None, :, None] / n
    a, z = cache["a"], cache["z"]
    grads = {
        "A": s.a0 * np.einsum("bkf,bh->kfh", dl, a),
        "c": s.a0 * dl.sum(axis=0),
    }
    da = s.a0 * np.einsum("bkf,kfh->bh", dl, p["A"])
    if s.experts > 0:
        g, v, coeff = cache["g"], cache["v"], cache["coeff"]
        dv = coeff[:, None, :, None] * dl[:, :, None, :]
        grads["B"] = np.einsum("bkef,bh->kefh", dv, a)
        grads["d"] = dv.sum(axis=0)
        da += np.einsum("bkef,kefh->bh", dv, p["B"])
        dcoeff = np.einsum("bkf,bkef->be", dl, v)
        grads["alpha"] = (s.moe_scale * g * dcoeff).sum(axis=0)
        dg = s.moe_scale * p["alpha"] * dcoeff
        dgl = g * (dg - np.sum(g * dg, axis=1, keepdims=True))
        grads["Gw"] = dgl.T @ a
        grads["gb"] = dgl.sum(axis=0)
        da += dgl @ p["Gw"]
    if s.hidden > 0:
        dpre = da * (1.0 - a * a)
        grads["W1"] = dpre.T @ z
        grads["b1"] = dpre.sum(axis=0)
        dz = dpre @ p["W1"]
    else:
        dz = da
    ntok = 4 * s.num_patches * s.embed_dim
    dtok = dz.reshape(n, s.num_users, -1)[:, :, :ntok].reshape(
        n, s.num_users, 4, s.num_patches, s.embed_dim
    )
    grads["EM"] = np.einsum("bkanp,bkans->aps", cache["patches"], dtok)
    grads["m"] = dtok.sum(axis=(0, 1, 3))
    return total, per_user, grads


def dwa_weights(history: Sequence[np.ndarray], num_users: int, temperature: float = 2.0) -> np.ndarray:
    """Dynamic weight average from the two most recent per-user epoch losses.

    Uniform until two epochs have completed; non-negative and summing to K.
    Weights underflow to 0 only when a loss ratio trails the largest one by
    more than about 700 temperatures.
    """
    if len(history) < 2:
        return np.ones(num_users)
    r = np.asarray(history[-1]) / np.asarray(history[-2])
    w = np.exp((r - r.max()) / temperature)
    return num_users * w / w.sum()


def train(
    X,
    labels,
    spec: PredictorSpec,
    config: TrainConfig = TrainConfig(),
    init: Optional[PredictorParams] = None,
    log: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int).reshape(len(X), spec.num_users)
    if len(X) == 0:
        raise ValueError("empty training set")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError("labels fall outside the codebook")
    params = init if init is not None else init_params(spec, substream(config.seed, "predictor-init"))
    arrays = {k: v.copy() for k, v in params.arrays.items()}
    loss_hist: list[np.ndarray] = []
    history = []
    for epoch in range(1, config.epochs + 1):
        theta = dwa_weights(loss_hist, spec.num_users, config.dwa_temperature)
        order = substream(config.seed, "predictor-shuffle", epoch).permutation(len(X))
        sums = np.zeros(spec.num_users)
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            current = PredictorParams(spec, arrays, theta)
            _, per_user, grads = loss_and_grads(current, X[idx], labels[idx])
            if not np.all(np.isfinite(per_user)):
                raise TrainingDivergence(epoch)
            sums += per_user * len(idx)
            for k, gk in grads.items():
                arrays[k] -= config.learning_rate * gk
        epoch_loss = sums / len(X)
        loss_hist.append(epoch_loss)
        total = float(theta @ epoch_loss)
        history.append((epoch, epoch_loss.copy(), theta.copy(), total))
        if log is not None:
            log(epoch, total)
    theta = dwa_weights(loss_hist, spec.num_users, config.dwa_temperature)
    return TrainResult(PredictorParams(spec, arrays, theta), history)


def finite_difference_check(
    params: PredictorParams,
    X,
    labels,
    step: float = 1e-5,
    max_entries: int = 40,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    For every parameter array up to ``max_entries`` randomly chosen entries
    are perturbed; the error of an array is ||g_a - g_fd|| / (||g_a|| +
    ||g_fd||) over those entries.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, _, grads = loss_and_grads(params, X, labels)
    worst = 0.0
    for name, arr in params.arrays.items():
        flat = arr.ravel()
        picks = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        analytic = grads[name].ravel()[picks]
        numeric = np.empty(len(picks))
        for j, i in enumerate(picks):
            probe = {k: v.copy() for k, v in params.arrays.items()}
            probe[name].ravel()[i] += step
            up, _, _ = loss_and_grads(replace(params, arrays=probe), X, labels, need_grads=False)
            probe[name].ravel()[i] -= 2 * step
            down, _, _ = loss_and_grads(replace(params, arrays=probe), X, labels, need_grads=False)
            numeric[j] = (up - down) / (2 * step)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst


# Pluggable predictors: each maps an (n, feature_len) batch to (n, K, F) scores.


class TrainedPredictor:
    def __init__(self, params: PredictorParams):
        self.params = params

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.params, X)


class OraclePredictor:
    """Cheating upper bound: one-hot on the known labels, row for row."""

    def __init__(self, labels, num_classes: int):
        self.labels = np.atleast_2d(np.asarray(labels, dtype=int).T).T
        self.num_classes = num_classes

    def predict_proba(self, X) -> np.ndarray:
        n = len(X)
        probs = np.zeros((n,) + (self.labels.shape[1], self.num_classes))
        np.put_along_axis(probs, self.labels[:n, :, None], 1.0, axis=2)
        return probs


class RandomPredictor:
    def __init__(self, num_classes: int, num_users: int = 1, seed: int = 0):
        self.num_classes, self.num_users, self.seed = num_classes, num_users, seed

    def predict_proba(self, X) -> np.ndarray:
        rng = substream(self.seed, "random-predictor", len(X))
        return _softmax(rng.standard_normal((len(X), self.num_users, self.num_classes)))


class NearestCentroidPredictor:
    """Ranks codewords by distance to the per-class feature centroid."""

    def __init__(self, X, labels, num_classes: int):
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels, dtype=int).reshape(len(X), -1)
        K = labels.shape[1]
        self.centroids = np.full((K, num_classes, X.shape[1]), np.nan)
        for k in range(K):
            for c in range(num_classes):
                hit = labels[:, k] == c
                if hit.any():
                    self.centroids[k, c] = X[hit].mean(axis=0)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = np.linalg.norm(X[:, None, None, :] - self.centroids[None], axis=-1)
        return _softmax(np.where(np.isnan(d), -np.inf, -d))


def evaluate(
    predictor,
    X,
    labels,
    s_values: Sequence[int] = (1, 3),
    rate_fn: Optional[Callable[[int, tuple], float]] = None,
) -> dict:
    """Top-S accuracy pooled over users, plus the mean sum-rate ratio to the labels.

    ``rate_fn(i, ids)`` returns the sum rate of sample i served by the
    codeword tuple ``ids``; samples whose labelled rate is 0 count as ratio 1.
    """
    labels = np.asarray(labels, dtype=int).reshape(len(X), -1)
    ranked = rank_codewords(predictor.predict_proba(X))  # n x K x F
    flat_ranked = ranked.reshape(-1, ranked.shape[-1])
    table = {
        f"top{S}": top_s_accuracy(flat_ranked, labels.ravel(), S)
        for S in s_values
        if S <= ranked.shape[-1]
    }
    if rate_fn is not None:
        ratios = []
        for i in range(len(X)):
            best = rate_fn(i, tuple(int(v) for v in labels[i]))
            got = rate_fn(i, tuple(int(v) for v in ranked[i, :, 0]))
            ratios.append(1.0 if best <= 0 else got / best)
        table["sum_rate_ratio"] = float(np.mean(ratios))
    return table


def params_to_json(params: PredictorParams) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": asdict(params.spec),
        "theta": params.theta.tolist(),
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(params.arrays.items())
        },
    }
    return json.dumps(doc)


def params_from_json(text: str) -> PredictorParams:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
        raise ValueError("not a passlab predictor document (format/version mismatch)")
    spec = PredictorSpec(**doc["spec"])
    arrays = {
        name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in doc["arrays"].items()
    }
    return PredictorParams(spec, arrays, np.array(doc["theta"], dtype=float))

"""Probabilistic per-organization GPU demand forecasting.

``OrgLinear`` splits the history into trend and cyclical parts, projects each
(together with organization and calendar embeddings) through a linear head,
and adds a third head for a softplus standard deviation.  Parameters are fit
by full-batch gradient descent on the Gaussian negative log-likelihood with
hand-derived gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .trace import DAY, HOUR, UsageSeries

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
CHECKPOINT_VERSION = "orglinear-v1"
NAIVE_SIGMA = 1e-6


class EmptySeries(ValueError):
    pass


class EvenKernel(ValueError):
    pass


class UnknownAttribute(IndexError):
    pass


class DimensionMismatch(ValueError):
    pass


class NonPositiveSigma(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


class InvalidQuantile(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class ZeroActualForMAPE(ZeroDivisionError):
    pass


# ---------------------------------------------------------------- decomposition


@dataclass
class DecomposedSeries:
    trend: np.ndarray
    cyclical: np.ndarray


def decompose(series, kernel_size: int) -> DecomposedSeries:
    """Centered moving-average trend with reflection padding; cyclical = rest.

    Integer and :class:`~fractions.Fraction` inputs are averaged exactly, so
    ``trend + cyclical`` reproduces the input bit-for-bit; float inputs are
    subject to ordinary rounding.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise EvenKernel(f"kernel size must be odd and positive, got {kernel_size}")
    values = list(series) if not isinstance(series, np.ndarray) else series
    if len(values) == 0:
        raise EmptySeries("cannot decompose an empty series")
    exact = not isinstance(series, np.ndarray) and all(isinstance(v, (int, Fraction)) for v in values)
    if exact:
        x = np.array([Fraction(v) for v in values], dtype=object)
    else:
        x = np.asarray(values, dtype=float)
    pad = (kernel_size - 1) // 2
    if len(x) == 1:
        padded = np.concatenate([x] * (2 * pad + 1))
    else:
        padded = np.pad(x, pad, mode="reflect")
    zero = Fraction(0) if exact else 0.0
    csum = np.concatenate([np.array([zero], dtype=x.dtype), np.cumsum(padded)])
    trend = (csum[kernel_size:] - csum[:-kernel_size]) / kernel_size
    return DecomposedSeries(trend, x - trend)


def decompose_batch(x: np.ndarray, kernel_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`decompose` for a float matrix."""
    pad = (kernel_size - 1) // 2
    padded = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(padded, axis=1)], axis=1)
    trend = (csum[:, kernel_size:] - csum[:, :-kernel_size]) / kernel_size
    return trend, x - trend


# ---------------------------------------------------------------- distributions


@dataclass
class ForecastDistribution:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise DimensionMismatch("mean and std lengths differ")

    def __len__(self):
        return len(self.mean)


def softplus(h):
    h = np.asarray(h, dtype=float)
    return np.maximum(h, 0.0) + np.log1p(np.exp(-np.abs(h)))


def sigmoid(h):
    h = np.asarray(h, dtype=float)
    e = np.exp(-np.abs(h))
    return np.where(h >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# Acklam's rational approximation of the standard normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p: float) -> float:
    """Standard normal quantile, refined with one Halley step."""
    if not 0.0 < p < 1.0:
        raise InvalidQuantile(f"p must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p == 0.5:
        return 0.0
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def predict_quantile(dist: ForecastDistribution, p: float) -> np.ndarray:
    z = norm_ppf(p)
    return dist.mean + dist.std * z


def nll_loss(pred: ForecastDistribution, actual) -> float:
    """Summed Gaussian negative log-likelihood, density normalization included."""
    y = np.asarray(actual, dtype=float)
    if y.shape != pred.mean.shape:
        raise DimensionMismatch("prediction and actual lengths differ")
    if np.any(pred.std <= 0):
        raise NonPositiveSigma("standard deviations must be positive")
    z = (y - pred.mean) / pred.std
    return float(np.sum(np.log(pred.std) + HALF_LOG_2PI + 0.5 * z * z))


# ---------------------------------------------------------------- model


@dataclass
class ForecastConfig:
    history: int = 168  # L
    horizon: int = 24  # H
    embed_dim: int = 8  # d_e
    kernel_size: int = 25
    learning_rate: float = 5e-2
    epochs: int = 500
    seed: int = 0
    init_scale: float = 0.05
    stride: int = 3
    attribute_cardinalities: tuple = (1,)
    holidays: tuple = ()  # day indices since t = 0

    @property
    def input_dim(self) -> int:
        return self.history + 4 * self.embed_dim


PARAM_NAMES = ("emb_hour", "emb_weekday", "emb_holiday", "W_c", "b_c", "W_t", "b_t", "W_v", "b_v")


class OrgLinear:
    """Parameter container for the forecaster.

    ``scalers`` maps org id to the ``(mean, std)`` used to standardize that
    org's series; orgs without an entry are passed through unscaled.
    """

    def __init__(self, config: Optional[ForecastConfig] = None, params: Optional[dict] = None):
        self.config = config or ForecastConfig()
        self.scalers: dict[str, tuple[float, float]] = {}
        self.params = params if params is not None else self._init_params()
        self._check_shapes()

    def _shapes(self) -> dict[str, tuple]:
        c = self.config
        d = c.embed_dim
        shapes = {
            "emb_hour": (24, d),
            "emb_weekday": (7, d),
            "emb_holiday": (2, d),
            "W_c": (c.input_dim, c.horizon),
            "b_c": (c.horizon,),
            "W_t": (c.input_dim, c.horizon),
            "b_t": (c.horizon,),
            "W_v": (c.input_dim, c.horizon),
            "b_v": (c.horizon,),
        }
        for k, card in enumerate(c.attribute_cardinalities):
            shapes[f"emb_attr{k}"] = (int(card), d)
        return shapes

    def _init_params(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.config.seed)
        s = self.config.init_scale
        return {name: rng.uniform(-s, s, size=shape) for name, shape in self._shapes().items()}

    def _check_shapes(self):
        for name, shape in self._shapes().items():
            if name not in self.params or self.params[name].shape != shape:
                raise DimensionMismatch(f"parameter {name} must have shape {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise DivergenceError(f"parameter {name} is not finite")

    def copy(self) -> "OrgLinear":
        other = OrgLinear(self.config, {k: v.copy() for k, v in self.params.items()})
        other.scalers = dict(self.scalers)
        return other

    def zero(self) -> "OrgLinear":
        """Same shapes, every parameter set to zero."""
        return OrgLinear(self.config, {k: np.zeros_like(v) for k, v in self.params.items()})

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.__dict__.items()},
            "scalers": {k: list(v) for k, v in self.scalers.items()},
            "param_order": sorted(self.params),
        }
        arrays = {name: np.ascontiguousarray(self.params[name]) for name in sorted(self.params)}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "OrgLinear":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
            cfg = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["config"].items()}
            params = {name: data[name].copy() for name in meta["param_order"]}
        model = cls(ForecastConfig(**cfg), params)
        model.scalers = {k: (float(v[0]), float(v[1])) for k, v in meta["scalers"].items()}
        return model


def calendar_indices(timestamp, holidays=()) -> tuple:
    t = np.asarray(timestamp)
    hour = (t // HOUR) % 24
    weekday = (t // DAY) % 7
    holiday = np.isin(t // DAY, np.asarray(holidays, dtype=np.int64)).astype(np.int64)
    return hour.astype(np.int64), weekday.astype(np.int64), holiday


def encode_temporal(timestamp: int, model: OrgLinear) -> np.ndarray:
    if timestamp < 0:
        raise ValueError("timestamp must be non-negative")
    h, w, hol = calendar_indices(timestamp, model.config.holidays)
    p = model.params
    return np.concatenate([p["emb_hour"][h], p["emb_weekday"][w], p["emb_holiday"][hol]])


def _attention_pool(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = rows.shape[1]
    scores = rows @ rows.T / math.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    a = np.exp(scores)
    a /= a.sum(axis=1, keepdims=True)
    return (a @ rows).mean(axis=0), a


def _attribute_rows(attributes: Sequence[int], model: OrgLinear) -> np.ndarray:
    cards = model.config.attribute_cardinalities
    if len(attributes) != len(cards):
        raise DimensionMismatch(f"expected {len(cards)} attributes, got {len(attributes)}")
    rows = []
    for k, v in enumerate(attributes):
        if not 0 <= int(v) < cards[k]:
            raise UnknownAttribute(f"attribute {k} value {v} outside [0, {cards[k]})")
        rows.append(model.params[f"emb_attr{k}"][int(v)])
    return np.array(rows)


def encode_org(attributes: Sequence[int], model: OrgLinear) -> np.ndarray:
    """Self-attention over the attribute embeddings, mean-pooled."""
    return _attention_pool(_attribute_rows(attributes, model))[0]


def _scaler(model: OrgLinear, org_id: str) -> tuple[float, float]:
    return model.scalers.get(org_id, (0.0, 1.0))


def forward_standardized(model: OrgLinear, x: np.ndarray, c_o: np.ndarray, c_t: np.ndarray):
    """Heads on an already standardized history; returns ``(mu, sigma, h)``."""
    p = model.params
    trend, cyc = decompose_batch(x[None, :], model.config.kernel_size)
    ctx = np.concatenate([c_o, c_t])
    mu = (np.concatenate([cyc[0], ctx]) @ p["W_c"] + p["b_c"]) + (np.concatenate([trend[0], ctx]) @ p["W_t"] + p["b_t"])
    h = np.concatenate([x, ctx]) @ p["W_v"] + p["b_v"]
    return mu, softplus(h), h


def forward(model: OrgLinear, history, timestamp: int, attributes: Optional[Sequence[int]] = None,
            org_id: Optional[str] = None) -> ForecastDistribution:
    """Forecast the ``horizon`` buckets following ``history``.

    ``history`` is a :class:`UsageSeries` of exactly ``L`` buckets or a raw
    array (then ``attributes`` and ``org_id`` must be supplied).
    ``timestamp`` is the forecast origin.
    """
    if isinstance(history, UsageSeries):
        attributes = history.attributes if attributes is None else attributes
        org_id = history.org_id if org_id is None else org_id
        values = history.values
    else:
        values = np.asarray(history, dtype=float)
    if len(values) != model.config.history:
        raise DimensionMismatch(f"history length {len(values)} != L={model.config.history}")
    mean, std = _scaler(model, org_id or "")
    x = (values - mean) / std
    mu, sigma, _ = forward_standardized(model, x, encode_org(attributes or (), model), encode_temporal(timestamp, model))
    return ForecastDistribution(mu * std + mean, sigma * std)


# ---------------------------------------------------------------- training


@dataclass
class Batch:
    x: np.ndarray  # (N, L) standardized history
    y: np.ndarray  # (N, H) standardized targets
    hour: np.ndarray
    weekday: np.ndarray
    holiday: np.ndarray
    org: np.ndarray  # (N,) index into ``attributes``
    attributes: list  # per-org attribute tuples
    trend: np.ndarray = field(init=False)
    cyclical: np.ndarray = field(init=False)
    kernel_size: int = 25

    def __post_init__(self):
        self.trend, self.cyclical = decompose_batch(self.x, self.kernel_size)


def fit_scalers(series: Sequence[UsageSeries]) -> dict[str, tuple[float, float]]:
    out = {}
    for s in series:
        std = float(np.std(s.values))
        out[s.org_id] = (float(np.mean(s.values)), std if std > 1e-9 else 1.0)
    return out


def build_batch(model: OrgLinear, series: Sequence[UsageSeries], end: Optional[int] = None) -> Batch:
    """Sliding ``(L history, H target)`` windows from each org's series.

    Only buckets starting before ``end`` are used when ``end`` is given.
    """
    c = model.config
    xs, ys, origins, orgs, attrs = [], [], [], [], []
    for k, s in enumerate(series):
        values = s.values
        times = s.bucket_times()
        if end is not None:
            keep = times < end
            values, times = values[keep], times[keep]
        mean, std = _scaler(model, s.org_id)
        z = (values - mean) / std
        attrs.append(tuple(s.attributes))
        for i in range(c.history, len(z) - c.horizon + 1, c.stride):
            xs.append(z[i - c.history:i])
            ys.append(z[i:i + c.horizon])
            origins.append(times[i])
            orgs.append(k)
    if not xs:
        raise InsufficientHistory("series too short for one training window")
    h, w, hol = calendar_indices(np.array(origins), c.holidays)
    return Batch(np.array(xs), np.array(ys), h, w, hol, np.array(orgs), attrs, kernel_size=c.kernel_size)


def loss_and_grads(model: OrgLinear, batch: Batch, need_grads: bool = True):
    """Mean per-element NLL over the batch and its parameter gradients."""
    p = model.params
    n, horizon = batch.y.shape
    d = model.config.embed_dim
    L = model.config.history

    pooled, attn, rows = [], [], []
    for a in batch.attributes:
        r = _attribute_rows(a, model)
        c, A = _attention_pool(r)
        pooled.append(c)
        attn.append(A)
        rows.append(r)
    c_o = np.array(pooled)[batch.org]
    c_t = np.concatenate([p["emb_hour"][batch.hour], p["emb_weekday"][batch.weekday], p["emb_holiday"][batch.holiday]], axis=1)
    ctx = np.concatenate([c_o, c_t], axis=1)
    z_c = np.concatenate([batch.cyclical, ctx], axis=1)
    z_t = np.concatenate([batch.trend, ctx], axis=1)
    z_v = np.concatenate([batch.x, ctx], axis=1)
    mu = z_c @ p["W_c"] + p["b_c"] + z_t @ p["W_t"] + p["b_t"]
    h = z_v @ p["W_v"] + p["b_v"]
    sigma = softplus(h)
    r = (batch.y - mu) / sigma
    scale = 1.0 / (n * horizon)
    loss = float(np.sum(np.log(sigma) + HALF_LOG_2PI + 0.5 * r * r) * scale)
    if not need_grads:
        return loss, None

    d_mu = -(r / sigma) * scale
    d_sigma = (1.0 / sigma - r * r / sigma) * scale
    d_h = d_sigma * sigmoid(h)
    g = {
        "W_c": z_c.T @ d_mu, "b_c": d_mu.sum(axis=0),
        "W_t": z_t.T @ d_mu, "b_t": d_mu.sum(axis=0),
        "W_v": z_v.T @ d_h, "b_v": d_h.sum(axis=0),
    }
    d_ctx = d_mu @ p["W_c"][L:].T + d_mu @ p["W_t"][L:].T + d_h @ p["W_v"][L:].T
    d_co, d_ct = d_ctx[:, :d], d_ctx[:, d:]
    for name, idx, block in (("emb_hour", batch.hour, 0), ("emb_weekday", batch.weekday, 1), ("emb_holiday", batch.holiday, 2)):
        grad = np.zeros_like(p[name])
        np.add.at(grad, idx, d_ct[:, block * d:(block + 1) * d])
        g[name] = grad
    for k in range(len(model.config.attribute_cardinalities)):
        g[f"emb_attr{k}"] = np.zeros_like(p[f"emb_attr{k}"])
    for o, (a, A, X) in enumerate(zip(batch.attributes, attn, rows)):
        dc = d_co[batch.org == o].sum(axis=0)
        if not dc.any():
            continue
        j = X.shape[0]
        dY = np.tile(dc / j, (j, 1))
        dX = A.T @ dY
        dA = dY @ X.T
        dS = A * (dA - (A * dA).sum(axis=1, keepdims=True))
        dX += (dS + dS.T) @ X / math.sqrt(d)
        for k, v in enumerate(a):
            g[f"emb_attr{k}"][int(v)] += dX[k]
    return loss, g


def train(model: OrgLinear, series: Sequence[UsageSeries], end: Optional[int] = None,
          epochs: Optional[int] = None, learning_rate: Optional[float] = None):
    """Fit ``model`` in place on windows drawn from ``series``.

    Returns ``(model, losses)`` where ``losses[k]`` is the mean NLL before
    update ``k`` and the final entry is the loss after training.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    clipped = [s if end is None else _truncate(s, end) for s in series]
    model.scalers.update(fit_scalers(clipped))
    batch = build_batch(model, clipped)
    losses = []
    for _ in range(epochs):
        loss, grads = loss_and_grads(model, batch)
        if not math.isfinite(loss):
            raise DivergenceError("training loss became non-finite")
        losses.append(loss)
        for name, grad in grads.items():
            model.params[name] -= lr * grad
    final, _ = loss_and_grads(model, batch, need_grads=False)
    if not math.isfinite(final):
        raise DivergenceError("training loss became non-finite")
    losses.append(final)
    return model, losses


def _truncate(s: UsageSeries, end: int) -> UsageSeries:
    keep = s.bucket_times() < end
    return UsageSeries(s.org_id, s.values[keep], s.granularity, s.attributes, s.start)


# ---------------------------------------------------------------- baselines & metrics


def naive_peak_predict(history, horizon: int, granularity: int = HOUR) -> ForecastDistribution:
    """Previous-week peak repeated over the horizon with a near-zero spread."""
    values = history.values if isinstance(history, UsageSeries) else np.asarray(history, dtype=float)
    if isinstance(history, UsageSeries):
        granularity = history.granularity
    week = 7 * DAY // granularity
    if len(values) < week:
        raise InsufficientHistory(f"need {week} buckets, got {len(values)}")
    peak = float(np.max(values[-week:]))
    return ForecastDistribution(np.full(horizon, peak), np.full(horizon, NAIVE_SIGMA))


def forecast_metrics(pred: ForecastDistribution, actual, p: float = 0.9) -> dict[str, float]:
    y = np.asarray(actual, dtype=float)
    if y.shape != pred.mean.shape:
        raise DimensionMismatch("prediction and actual lengths differ")
    err = pred.mean - y
    if np.any(y == 0):
        raise ZeroActualForMAPE("MAPE undefined for zero actuals")
    mse = float(np.mean(err**2))
    return {
        "MAE": float(np.mean(np.abs(err))),
        "MSE": mse,
        "RMSE": math.sqrt(mse),
        "MAPE": float(np.mean(np.abs(err) / np.abs(y))),
        "MAQE": float(np.mean(np.abs(predict_quantile(pred, p) - y))),
    }


# ---------------------------------------------------------------- simulator adapters


class Forecaster:
    """Interface the simulator uses to obtain per-org demand distributions."""

    history_length = 168
    horizon = 24

    def fit(self, series: Sequence[UsageSeries], end: Optional[int] = None) -> "Forecaster":
        return self

    @property
    def fitted(self) -> bool:
        return True

    def predict(self, org_id: str, attributes, history: np.ndarray, timestamp: int) -> ForecastDistribution:
        raise NotImplementedError


def _infer_cardinalities(series: Sequence[UsageSeries]) -> tuple[int, ...]:
    widths = {len(s.attributes) for s in series}
    if len(widths) != 1:
        raise DimensionMismatch("organizations disagree on attribute count")
    width = widths.pop()
    return tuple(max(int(s.attributes[k]) for s in series) + 1 for k in range(width))


class OrgLinearForecaster(Forecaster):
    def __init__(self, config: Optional[ForecastConfig] = None, model: Optional[OrgLinear] = None):
        self.model = model if model is not None else OrgLinear(config)
        self._fitted = model is not None
        self.losses: list[float] = []

    @property
    def history_length(self):
        return self.model.config.history

    @property
    def horizon(self):
        return self.model.config.horizon

    @property
    def fitted(self):
        return self._fitted

    def fit(self, series, end=None):
        if not self._fitted:
            cards = _infer_cardinalities(series)
            if cards and cards != tuple(self.model.config.attribute_cardinalities):
                self.model = OrgLinear(replace(self.model.config, attribute_cardinalities=cards))
        _, self.losses = train(self.model, series, end=end)
        self._fitted = True
        return self

    def predict(self, org_id, attributes, history, timestamp):
        return forward(self.model, history, timestamp, attributes=attributes, org_id=org_id)


class NaivePeakForecaster(Forecaster):
    history_length = 168
    horizon = 24

    def predict(self, org_id, attributes, history, timestamp):
        return naive_peak_predict(history, self.horizon)


@dataclass
class Evaluation:
    """Rolling-origin scores of a forecaster against held-out demand."""

    metrics: dict[str, float]
    naive_metrics: dict[str, float]
    coverage: float
    origins: int
    naive_coverage: float = float("nan")


def _pooled_metrics(preds: list[ForecastDistribution], actuals: list[np.ndarray], p: float) -> dict[str, float]:
    mean = np.concatenate([d.mean for d in preds])
    std = np.concatenate([d.std for d in preds])
    y = np.concatenate(actuals)
    err = mean - y
    nz = y != 0
    mse = float(np.mean(err**2))
    return {
        "MAE": float(np.mean(np.abs(err))),
        "MSE": mse,
        "RMSE": math.sqrt(mse),
        "MAPE": float(np.mean(np.abs(err[nz]) / y[nz])) if nz.any() else float("nan"),
        "MAQE": float(np.mean(np.abs(mean + std * norm_ppf(p) - y))),
    }


def evaluate_forecasts(forecaster: Forecaster, series: Sequence[UsageSeries], start: int, end: int,
                       step: int = 3 * HOUR, p: float = 0.9) -> Evaluation:
    """Score ``forecaster`` and the naive peak baseline on origins in ``[start, end - H]``.

    Every forecast uses the ``L`` buckets before its origin; coverage is the
    share of held-out buckets at or below the ``p``-quantile.  MAPE skips
    zero actuals here rather than raising.
    """
    L, H = forecaster.history_length, forecaster.horizon
    preds, naive, actuals = [], [], []
    for s in series:
        for origin in range(start, end - H * s.granularity + 1, step):
            hist = s.window(origin, L)
            i = (origin - s.start) // s.granularity
            actual = s.values[i:i + H]
            if len(actual) < H:
                break
            preds.append(forecaster.predict(s.org_id, s.attributes, hist, origin))
            naive.append(naive_peak_predict(s.window(origin, max(L, 7 * DAY // s.granularity)), H))
            actuals.append(actual)
    if not preds:
        raise InsufficientHistory("no forecast origin fits the evaluation window")
    y = np.concatenate(actuals)
    q = np.concatenate([predict_quantile(d, p) for d in preds])
    q_naive = np.concatenate([predict_quantile(d, p) for d in naive])
    return Evaluation(_pooled_metrics(preds, actuals, p), _pooled_metrics(naive, actuals, p),
                      float(np.mean(y <= q)), len(preds), float(np.mean(y <= q_naive)))

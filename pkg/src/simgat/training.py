"""Poisson objective, day-level data split, Adam and the training loop."""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, as_tensor
from .domain import CityGraph, FlowTable
from .model import SimGatConfig, SimGatModel

LOG_FLOOR = 1e-12


def poisson_loss(rate, observed) -> Tensor:
    """mean(rate - y * ln(rate)); the ln(y!) term is dropped."""
    y = np.asarray(observed, dtype=float)
    if np.any(y < 0):
        raise ValueError("observed counts must be nonnegative")
    lam = as_tensor(rate)
    if np.any(lam.data <= 0):
        raise ValueError("rates must be positive")
    if lam.shape != y.shape:
        raise ValueError(f"rate shape {lam.shape} != observed shape {y.shape}")
    return ad.mean(lam - ad.mul(y, ad.ln(ad.clip_min(lam, LOG_FLOOR))))


def env_columns(city: CityGraph, config: SimGatConfig) -> list[int]:
    cols = list(range(len(city.env_feature_names)))
    if not config.include_visit_lag and "total_visits_prev" in city.env_feature_names:
        cols.remove(city.env_feature_names.index("total_visits_prev"))
    return cols


@dataclass
class FlowDataset:
    """Static inputs plus per-day targets, with day ``t`` paired to the
    environment window ``t - T + 1 .. t``."""

    U: np.ndarray
    V: np.ndarray
    costs: list[np.ndarray]
    env: np.ndarray  # (D, s)
    Y: np.ndarray  # (D, n, m) counts
    window: int
    dates: list = field(default_factory=list)

    def __post_init__(self):
        D = self.env.shape[0]
        if self.Y.shape != (D, self.U.shape[0], self.V.shape[0]):
            raise ValueError(f"targets {self.Y.shape} do not match {D} days x {self.U.shape[0]} x {self.V.shape[0]}")
        if D < self.window + 1:
            raise ValueError(f"need at least T + 1 = {self.window + 1} days, got {D}")

    @property
    def target_days(self) -> np.ndarray:
        return np.arange(self.window - 1, self.env.shape[0])

    def windows(self, days) -> np.ndarray:
        days = np.asarray(days)
        offsets = np.arange(-self.window + 1, 1)
        return self.env[days[:, None] + offsets[None, :]]

    def targets(self, days) -> np.ndarray:
        return self.Y[np.asarray(days)]


def make_dataset(city: CityGraph, flows, config: SimGatConfig) -> FlowDataset:
    """``flows`` is a :class:`FlowTable` or a dense (days, m, n) count array."""
    if isinstance(flows, FlowTable):
        dense = flows.to_dense(city.dates, city.m, city.n)
    else:
        dense = np.asarray(flows)
    Y = np.transpose(dense, (0, 2, 1)).astype(float)
    cols = env_columns(city, config)
    return FlowDataset(city.clusters, city.neighborhoods, list(city.costs), city.env[:, cols], Y, config.lstm_window, list(city.dates))


def split_days(days, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split of whole days into (train, validation)."""
    days = np.asarray(days)
    if len(days) < 2:
        raise ValueError("need at least two target days to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(days)
    n_val = min(max(1, int(round(val_fraction * len(days)))), len(days) - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class Adam:
    def __init__(self, params, lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    best_val_loss: float
    seed: int
    initial_train_loss: float
    initial_val_loss: float
    train_days: list[int]
    val_days: list[int]
    wall_time: float = 0.0

    def to_json(self, include_wall_time: bool = False) -> dict:
        out = asdict(self)
        if not include_wall_time:
            out.pop("wall_time")
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainReport":
        return cls(**obj)


def evaluate(model, data: FlowDataset, days) -> float:
    days = np.asarray(days)
    if len(days) == 0:
        return float("nan")
    return float(poisson_loss(model.predict_batch(data, days), data.targets(days)).data)


def train(model, data: FlowDataset, config: SimGatConfig | None = None, callback=None) -> TrainReport:
    """Adam on minibatches of whole days; the best-validation state is restored.

    ``callback(epoch, model)`` runs after every epoch, with epoch ``-1``
    before the first update.
    """
    cfg = config or model.config
    start = time.perf_counter()
    tr_days, va_days = split_days(data.target_days, cfg.val_fraction, cfg.seed)
    params = list(model.parameters().values())
    opt = Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 1)
    initial_tr = evaluate(model, data, tr_days)
    initial_va = evaluate(model, data, va_days)
    if callback:
        callback(-1, model)
    best_val, best_epoch, best_state = initial_va, -1, model.state_dict()
    tr_hist, va_hist = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr_days)
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b : b + cfg.batch_size]
            with Tape() as tape:
                loss = poisson_loss(model.predict_batch(data, batch), data.targets(batch))
                grads = tape.gradient(loss, params)
            opt.step(grads)
        tr_hist.append(evaluate(model, data, tr_days))
        va_hist.append(evaluate(model, data, va_days))
        if va_hist[-1] < best_val:
            best_val, best_epoch, best_state = va_hist[-1], epoch, model.state_dict()
        if callback:
            callback(epoch, model)
    model.load_state_dict(best_state)
    return TrainReport(
        train_loss=tr_hist,
        val_loss=va_hist,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        seed=cfg.seed,
        initial_train_loss=initial_tr,
        initial_val_loss=initial_va,
        train_days=[int(d) for d in tr_days],
        val_days=[int(d) for d in va_days],
        wall_time=time.perf_counter() - start,
    )


def intercept_baseline(data: FlowDataset, train_days, val_days) -> dict:
    """Constant-rate model at the training mean count."""
    rate = float(data.targets(train_days).mean())
    rate = max(rate, LOG_FLOOR)

    def loss(days):
        y = data.targets(days)
        return float(poisson_loss(np.full(y.shape, rate), y).data)

    return {"rate": rate, "train_loss": loss(train_days), "val_loss": loss(val_days)}


def build_model(city: CityGraph, data: FlowDataset, config: SimGatConfig, train_days=None) -> SimGatModel:
    """Fresh model sized for ``city`` with the head bias at the mean train count."""
    if train_days is None:
        train_days, _ = split_days(data.target_days, config.val_fraction, config.seed)
    prior = max(float(data.targets(train_days).mean()), 1e-3)
    return SimGatModel.init(config, data.U.shape[1], data.V.shape[1], data.env.shape[1], len(data.costs), prior)


def fit_simgat(city: CityGraph, flows, config: SimGatConfig, callback=None):
    """Builds the dataset and the model, then trains; returns (model, report, data)."""
    data = make_dataset(city, flows, config)
    model = build_model(city, data, config)
    report = train(model, data, config, callback)
    return model, report, data


def thread_cap() -> int:
    cores = os.cpu_count() or 1
    env = os.environ.get("SIMGAT_THREADS")
    return max(1, min(cores, int(env))) if env else cores


def _grid_trial(args):
    city, flows, cfg = args
    _, report, _ = fit_simgat(city, flows, cfg)
    return {"config": cfg.to_json(), "best_val_loss": report.best_val_loss, "best_epoch": report.best_epoch}


def grid_search(city: CityGraph, flows, base: SimGatConfig, grid: dict, workers: int | None = None) -> dict:
    """Train every combination in ``grid`` (config field -> list of values).

    All trials share ``base.seed`` so they see the same train/validation days.
    """
    keys = sorted(grid)
    trials = [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
    workers = min(workers or thread_cap(), len(trials))
    jobs = [(city, flows, cfg) for cfg in trials]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_grid_trial, jobs))
    else:
        results = [_grid_trial(j) for j in jobs]
    best = min(range(len(results)), key=lambda i: (results[i]["best_val_loss"], i))
    return {"trials": results, "best": results[best]}

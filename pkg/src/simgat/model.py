"""The SIM-GAT flow model: embeddings, environment LSTM, cost-aware attention.

Shapes used throughout: ``n`` clusters with ``l`` features, ``m``
neighborhoods with ``k`` features, ``s`` environment features per day, a
window of ``T`` days, hidden size ``h`` and ``B`` days per batch.  Scores and
rates are laid out cluster-major, ``(B, n, m)``; cost matrices arrive
neighborhood-major, ``(m, n)``, as stored on the city graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

COMBINE_EPS = 1e-3  # minutes added to the combined cost


@dataclass
class SimGatConfig:
    hidden_dim: int = 8
    lstm_window: int = 7
    learning_rate: float = 0.01
    batch_size: int = 8
    epochs: int = 100
    leaky_slope: float = 0.2
    seed: int = 0
    include_visit_lag: bool = True
    cost_combiner: str = "learned"
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.lstm_window < 1:
            raise ValueError("lstm_window must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.cost_combiner not in ("learned", "single"):
            raise ValueError("cost_combiner must be 'learned' or 'single'")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SimGatConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


class SimGatModel:
    """Named parameter tensors plus the dimensions they were built for."""

    def __init__(self, config: SimGatConfig, n_cluster_features: int, n_neighborhood_features: int,
                 n_env_features: int, n_modes: int = 1, params: dict | None = None):
        self.config = config
        self.l = n_cluster_features
        self.k = n_neighborhood_features
        self.s = n_env_features
        self.n_modes = 1 if config.cost_combiner == "single" else n_modes
        if params is None:
            params = self._init_params()
        self.params: dict[str, Tensor] = {
            name: p if isinstance(p, Tensor) else Tensor(p, requires_grad=True, name=name)
            for name, p in params.items()
        }
        for name, p in self.params.items():
            p.requires_grad = True
            p.name = name
        self._check_shapes()

    @classmethod
    def init(cls, config, l, k, s, n_modes=1, rate_prior: float = 1.0) -> "SimGatModel":
        """Seeded initialization; the head bias starts at ``log(rate_prior)``."""
        model = cls(config, l, k, s, n_modes)
        model.params["b_head"].data[...] = np.log(rate_prior)
        return model

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, l, k, s = self.config.hidden_dim, self.l, self.k, self.s
        return {
            "W_u": (l, h),
            "b_u": (h,),
            "W_v": (k, h),
            "b_v": (h,),
            "lstm_W": (s + h, 4 * h),
            "lstm_b": (4 * h,),
            "a_tilde": (3 * h,),
            "W_val": (h, h),
            "W_out": (3 * h, h),
            "b_out": (h,),
            "w_head": (h,),
            "b_head": (),
            "combiner": (self.n_modes,),
        }

    def _init_params(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.config.seed)
        h = self.config.hidden_dim
        sh = self.shapes()
        p = {}
        for name in ("W_u", "W_v", "lstm_W", "W_val", "W_out"):
            fan_in, fan_out = sh[name]
            p[name] = _glorot(rng, fan_in, fan_out, sh[name])
        for name in ("b_u", "b_v", "lstm_b", "b_out"):
            p[name] = np.zeros(sh[name])
        p["lstm_b"][h : 2 * h] = 1.0  # forget gate
        p["a_tilde"] = _glorot(rng, 3 * h, 1, (3 * h,))
        p["w_head"] = _glorot(rng, h, 1, (h,))
        p["b_head"] = np.zeros(())
        p["combiner"] = np.full(self.n_modes, inverse_softplus(1.0 / self.n_modes))
        return {name: p[name] for name in sh}

    def _check_shapes(self) -> None:
        expected = self.shapes()
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            self.params[k].data[...] = np.asarray(v, dtype=float).reshape(self.params[k].shape)

    def forward(self, U, V, costs: Sequence, env_windows, frozen_alpha=None) -> "Forward":
        return simgat_forward(self, U, V, costs, env_windows, frozen_alpha)

    # the training loop calls this with a dataset and day indices
    def predict_batch(self, data, days) -> Tensor:
        return self.forward(data.U, data.V, data.costs, data.windows(days)).rate


@dataclass
class Forward:
    rate: Tensor  # (B, n, m) or (n, m)
    log_rate: Tensor
    alpha: Tensor
    scores: Tensor  # e
    modified: Tensor  # e / c
    combined_cost: Tensor  # (m, n)
    cluster_emb: Tensor
    neighborhood_emb: Tensor
    env_emb: Tensor


def encode_environment(env_window, lstm_W, lstm_b, hidden_dim: int | None = None) -> Tensor:
    """Final hidden state of an LSTM run over ``env_window``.

    ``env_window`` is ``(T, s)`` or batched ``(B, T, s)``.  The fused weight
    ``lstm_W`` is ``(s + h, 4h)`` with gate blocks ordered input, forget,
    cell, output.
    """
    x = as_tensor(env_window)
    W, b = as_tensor(lstm_W), as_tensor(lstm_b)
    h = hidden_dim or W.shape[1] // 4
    if W.shape[1] != 4 * h or W.shape[0] != x.shape[-1] + h:
        raise ValueError(f"LSTM weight shape {W.shape} does not fit input width {x.shape[-1]} and hidden {h}")
    batched = x.ndim == 3
    if not batched:
        x = x.reshape(1, *x.shape)
    B, T = x.shape[0], x.shape[1]
    hs = Tensor(np.zeros((B, h)))
    cs = Tensor(np.zeros((B, h)))
    for t in range(T):
        z = ad.concat([x[:, t, :], hs], axis=1) @ W + b
        i = ad.sigmoid(z[:, 0:h])
        f = ad.sigmoid(z[:, h : 2 * h])
        g = ad.tanh(z[:, 2 * h : 3 * h])
        o = ad.sigmoid(z[:, 3 * h : 4 * h])
        cs = f * cs + i * g
        hs = o * ad.tanh(cs)
    return hs if batched else hs[0]


def attention_scores(U_emb, V_emb, w_emb, a_tilde, slope: float = 0.2) -> Tensor:
    """e[i, j] = leaky_relu(a_tilde . [U_emb[i] || V_emb[j] || w_emb]).

    The dot product with the concatenation is evaluated block by block, which
    is the same number without materializing every (i, j) triple.  A batched
    ``w_emb`` of shape ``(B, h)`` yields ``(B, n, m)``.
    """
    U_emb, V_emb, w_emb, a = (as_tensor(t) for t in (U_emb, V_emb, w_emb, a_tilde))
    h = U_emb.shape[-1]
    if V_emb.shape[-1] != h or w_emb.shape[-1] != h or a.shape != (3 * h,):
        raise ValueError(
            f"embedding widths {U_emb.shape[-1]}, {V_emb.shape[-1]}, {w_emb.shape[-1]} "
            f"and attention vector {a.shape} disagree"
        )
    n, m = U_emb.shape[0], V_emb.shape[0]
    su = (U_emb @ a[0:h]).reshape(n, 1)
    sv = (V_emb @ a[h : 2 * h]).reshape(1, m)
    sw = (w_emb @ a[2 * h : 3 * h]).reshape(w_emb.shape[:-1] + (1, 1))
    return ad.leaky_relu(su + sv + sw, slope)


def combine_costs(costs: Sequence, weights) -> Tensor:
    """sum_k softplus(weights[k]) * costs[k] + COMBINE_EPS, an (m, n) matrix."""
    if len(costs) == 0:
        raise ValueError("combine_costs needs at least one cost matrix")
    w = as_tensor(weights)
    if w.shape != (len(costs),):
        raise ValueError(f"{len(costs)} cost matrices but weights of shape {w.shape}")
    stack = Tensor(np.stack([np.asarray(c, dtype=float) for c in costs]))
    sp = ad.softplus(w).reshape(len(costs), 1, 1)
    return (sp * stack).sum(axis=0) + COMBINE_EPS


def cost_modify(e, combined_cost) -> Tensor:
    """Divide (.., n, m) scores by the transposed (m, n) cost."""
    c = as_tensor(combined_cost)
    if np.any(c.data <= 0):
        raise ValueError("travel costs must be positive")
    e = as_tensor(e)
    if c.shape[::-1] != e.shape[-2:]:
        raise ValueError(f"scores {e.shape} and cost {c.shape} do not align")
    return e / c.T


def normalize_attention(e_tilde, slope: float = 0.2) -> Tensor:
    """Softmax over clusters (axis -2) of leaky_relu(e_tilde)."""
    return ad.softmax(ad.leaky_relu(e_tilde, slope), axis=-2)


def aggregate_cluster_state(alpha, V_emb, W_val) -> Tensor:
    """H[i] = sum_j alpha[i, j] * (W_val applied to V_emb[j]); alpha is (n, m)."""
    alpha, V_emb, W_val = as_tensor(alpha), as_tensor(V_emb), as_tensor(W_val)
    if alpha.shape[-1] != V_emb.shape[0]:
        raise ValueError(f"alpha {alpha.shape} and neighborhood embedding {V_emb.shape} disagree")
    return alpha @ (V_emb @ W_val)


def pair_projection(U_emb, V_emb, w_emb, W_out, b_out) -> Tensor:
    """W [U_emb[i] || V_emb[j] || w_emb] + b for every pair, shape (.., n, m, h)."""
    U_emb, V_emb, w_emb, W = (as_tensor(t) for t in (U_emb, V_emb, w_emb, W_out))
    h = U_emb.shape[-1]
    n, m = U_emb.shape[0], V_emb.shape[0]
    zu = (U_emb @ W[0:h]).reshape(n, 1, h)
    zv = (V_emb @ W[h : 2 * h]).reshape(1, m, h)
    zw = (w_emb @ W[2 * h : 3 * h]).reshape(w_emb.shape[:-1] + (1, 1, h))
    return zu + zv + zw + b_out


def simgat_forward(model: SimGatModel, U, V, costs, env_windows, frozen_alpha=None) -> Forward:
    """Embeddings -> scores -> cost division -> softmax -> pair projection -> exp.

    ``frozen_alpha``, when given, replaces the computed attention by a
    constant (used for attribution completeness checks).
    """
    p = model.params
    cfg = model.config
    slope = cfg.leaky_slope
    U, V = as_tensor(U), as_tensor(V)
    if U.shape[-1] != model.l or V.shape[-1] != model.k:
        raise ValueError(f"feature widths {U.shape[-1]}, {V.shape[-1]} != model's {model.l}, {model.k}")
    costs = list(costs)[: model.n_modes]
    U_emb = U @ p["W_u"] + p["b_u"]
    V_emb = V @ p["W_v"] + p["b_v"]
    w_emb = encode_environment(env_windows, p["lstm_W"], p["lstm_b"], cfg.hidden_dim)
    e = attention_scores(U_emb, V_emb, w_emb, p["a_tilde"], slope)
    C = combine_costs(costs, p["combiner"])
    e_mod = cost_modify(e, C)
    alpha = normalize_attention(e_mod, slope) if frozen_alpha is None else as_tensor(frozen_alpha)
    Z = pair_projection(U_emb, V_emb, w_emb, p["W_out"], p["b_out"])
    n, m = U.shape[0], V.shape[0]
    H = alpha.reshape(alpha.shape + (1,)) * Z
    eta = H @ p["w_head"] + p["b_head"]
    return Forward(ad.exp(eta), eta, alpha, e, e_mod, C, U_emb, V_emb, w_emb)


def predict_flows(model: SimGatModel, city, env_window, date=None) -> np.ndarray:
    """Predicted rates (n, m) for one day.

    ``env_window`` is a ``(T, s)`` matrix; when ``date`` is given instead the
    window ending on that date is cut from the city graph.
    """
    if date is not None:
        from .training import env_columns

        cols = env_columns(city, model.config)
        t = city.date_index(date)
        T = model.config.lstm_window
        if t < T - 1:
            raise ValueError(f"{date}: fewer than {T} days of environment history")
        env_window = city.env[t - T + 1 : t + 1][:, cols]
    w = np.asarray(env_window, dtype=float)
    if w.shape[0] < model.config.lstm_window:
        raise ValueError(f"window of {w.shape[0]} days is shorter than T = {model.config.lstm_window}")
    w = w[-model.config.lstm_window :]
    return model.forward(city.clusters, city.neighborhoods, city.costs, w).rate.data


def analytic_parameter_count(h: int, l: int, k: int, s: int, modes: int) -> int:
    return (
        l * h + h
        + k * h + h
        + 4 * ((s + h) * h + h)
        + 3 * h
        + h * h
        + (3 * h * h + h)
        + (h + 1)
        + modes
    )


_COMPONENTS = {
    "cluster_embedding": ("W_u", "b_u"),
    "neighborhood_embedding": ("W_v", "b_v"),
    "environment_lstm": ("lstm_W", "lstm_b"),
    "attention": ("a_tilde",),
    "value_projection": ("W_val",),
    "pair_projection": ("W_out", "b_out"),
    "output_head": ("w_head", "b_head"),
    "cost_combiner": ("combiner",),
}


def describe(model: SimGatModel) -> dict:
    """Parameter counts per component, with the closed-form total alongside."""
    comp = {name: int(sum(model.params[p].size for p in names)) for name, names in _COMPONENTS.items()}
    total = sum(comp.values())
    analytic = analytic_parameter_count(model.config.hidden_dim, model.l, model.k, model.s, model.n_modes)
    return {
        "components": comp,
        "total": total,
        "analytic_total": analytic,
        "consistent": total == analytic,
        "dims": {"h": model.config.hidden_dim, "l": model.l, "k": model.k, "s": model.s, "modes": model.n_modes},
    }

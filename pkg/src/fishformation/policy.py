"""LSTM steering policy trained by full backpropagation through time with Adam.

Network: LSTM (8 -> 64, gates i, f, g, o with one bias each) -> dense 64 ->
tanh -> dropout -> dense 1 (no bias) -> tanh -> x output_scale. All
parameters live in one flat float64 vector in that order, which is also the
checkpoint order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import ChecksumError, InvalidArgument, SplitError, UnsupportedVersionError
from .seeding import stream


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 8
    lstm_units: int = 64
    fc_units: int = 64
    dropout_rate: float = 0.2
    output_scale: float = 0.3

    def __post_init__(self):
        if min(self.input_dim, self.lstm_units, self.fc_units) < 1:
            raise InvalidArgument("layer sizes must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidArgument("dropout rate must lie in [0, 1)")
        if not self.output_scale > 0:
            raise InvalidArgument("output scale must be positive")

    def shapes(self) -> dict:
        d, h, f = self.input_dim, self.lstm_units, self.fc_units
        return {"wx": (4 * h, d), "wh": (4 * h, h), "b": (4 * h,),
                "w1": (f, h), "b1": (f,), "w2": (f,)}

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


class NetParams:
    """Flat parameter vector with named, reshaped views into it."""

    def __init__(self, cfg: NetConfig, flat: np.ndarray | None = None):
        self.cfg = cfg
        if flat is None:
            flat = np.zeros(cfg.n_params)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (cfg.n_params,):
            raise InvalidArgument(f"expected {cfg.n_params} parameters, got shape {flat.shape}")
        self.flat = flat
        self._views = {}
        off = 0
        for name, shape in cfg.shapes().items():
            n = int(np.prod(shape))
            self._views[name] = flat[off:off + n].reshape(shape)
            off += n

    def __getattr__(self, name):
        views = self.__dict__.get("_views", {})
        if name in views:
            return views[name]
        raise AttributeError(name)

    def copy(self) -> "NetParams":
        return NetParams(self.cfg, self.flat.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


def init_params(cfg: NetConfig, rng: np.random.Generator) -> NetParams:
    """Uniform in +-1/sqrt(fan-in) for every tensor."""
    p = NetParams(cfg)
    fan_in = {"wx": cfg.input_dim + cfg.lstm_units, "wh": cfg.input_dim + cfg.lstm_units,
              "b": cfg.input_dim + cfg.lstm_units, "w1": cfg.lstm_units,
              "b1": cfg.lstm_units, "w2": cfg.fc_units}
    for name, shape in cfg.shapes().items():
        bound = 1.0 / np.sqrt(fan_in[name])
        getattr(p, name)[...] = rng.uniform(-bound, bound, shape)
    return p


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, cfg: NetConfig, batch: int | None = None) -> "HiddenState":
        shape = (cfg.lstm_units,) if batch is None else (batch, cfg.lstm_units)
        return cls(np.zeros(shape), np.zeros(shape))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _cell(p: NetParams, x, h, c):
    H = p.cfg.lstm_units
    z = x @ p.wx.T + h @ p.wh.T + p.b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    return i, f, g, o, c_new, o * np.tanh(c_new)


def forward_step(params: NetParams, frame, state: HiddenState, inference: bool = True,
                 rng: np.random.Generator | None = None):
    """One control tick: normalized 8-vector in, (steering fraction, new state) out.

    Outside inference mode, dropout masks are drawn from ``rng``.
    """
    cfg = params.cfg
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != (cfg.input_dim,):
        raise InvalidArgument(f"frame must have shape ({cfg.input_dim},), got {x.shape}")
    if state.h.shape != (cfg.lstm_units,):
        raise InvalidArgument("hidden state does not match the network")
    *_, c, h = _cell(params, x, state.h, state.c)
    u = np.tanh(params.w1 @ h + params.b1)
    if not inference and cfg.dropout_rate > 0:
        if rng is None:
            raise InvalidArgument("training-mode forward needs an rng for dropout")
        u = u * dropout_mask(rng, cfg, u.shape)
    sigma = cfg.output_scale * np.tanh(params.w2 @ u)
    return float(sigma), HiddenState(h, c)


def dropout_mask(rng: np.random.Generator, cfg: NetConfig, shape) -> np.ndarray:
    """Inverted dropout: kept units are scaled by 1/(1 - rate)."""
    keep = 1.0 - cfg.dropout_rate
    return (rng.random(shape) < keep) / keep


def _pad(sequences, input_dim: int):
    if len(sequences) == 0:
        raise InvalidArgument("no sequences given")
    lengths = [len(y) for _, y in sequences]
    if min(lengths) == 0:
        raise InvalidArgument("empty sequence")
    B, T = len(sequences), max(lengths)
    X = np.zeros((T, B, input_dim))
    Y = np.zeros((T, B))
    M = np.zeros((T, B))
    for k, (x, y) in enumerate(sequences):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != input_dim or len(x) != len(y):
            raise InvalidArgument(f"sequence {k}: inputs must be (T, {input_dim}) matching labels")
        n = len(y)
        X[:n, k] = x
        Y[:n, k] = y
        M[:n, k] = 1.0
    return X, Y, M


def forward_sequences(params: NetParams, inputs) -> list:
    """Inference-mode outputs for each (T_k, 8) input sequence, state reset per sequence."""
    seqs = [(x, np.zeros(len(x))) for x in inputs]
    X, _, M = _pad(seqs, params.cfg.input_dim)
    out = _forward(params, X, None)[0]
    return [out[:len(x), k].copy() for k, x in enumerate(inputs)]


def _forward(params: NetParams, X, drop):
    """Batched forward over padded (T, B, D) inputs; only the LSTM runs step by step."""
    cfg = params.cfg
    T, B, _ = X.shape
    H = cfg.lstm_units
    zx = X @ params.wx.T + params.b
    gates = np.empty((T, B, 4 * H))     # activated i, f, g, o
    cs = np.empty((T + 1, B, H))        # cs[t + 1] is the cell after step t
    hs = np.empty((T + 1, B, H))
    cs[0] = 0.0
    hs[0] = 0.0
    wh_t = params.wh.T
    for t in range(T):
        z = zx[t] + hs[t] @ wh_t
        a = gates[t]
        a[:, :2 * H] = _sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 2 * H:3 * H]
        hs[t + 1] = a[:, 3 * H:] * np.tanh(cs[t + 1])
    u = np.tanh(hs[1:] @ params.w1.T + params.b1)
    ud = u if drop is None else u * drop
    y = ud @ params.w2
    out = cfg.output_scale * np.tanh(y)
    return out, {"gates": gates, "c": cs, "h": hs, "u": u, "ud": ud, "y": y}


def sequence_loss(params: NetParams, sequences, out_std: float = 1.0, drop=None) -> float:
    """Mean over valid timesteps of ((sigma - label) / out_std)**2."""
    X, Y, M = _pad(sequences, params.cfg.input_dim)
    out, _ = _forward(params, X, drop)
    return float(np.sum(M * ((out - Y) / out_std) ** 2) / M.sum())


def bptt_gradients(params: NetParams, sequences, dropout_masks=None, out_std: float = 1.0):
    """Loss and exact gradient (flat vector) of the masked mean squared error.

    ``sequences`` is a list of (inputs (T_k, 8), labels (T_k,)); shorter
    sequences are zero-padded and masked. ``dropout_masks``, if given, is a
    (T_max, B, fc_units) array of multiplicative masks.
    """
    cfg = params.cfg
    X, Y, M = _pad(sequences, cfg.input_dim)
    T, B, D = X.shape
    H = cfg.lstm_units
    out, cc = _forward(params, X, dropout_masks)
    n = M.sum()
    loss = float(np.sum(M * ((out - Y) / out_std) ** 2) / n)

    grad = NetParams(cfg)
    # dense head, all timesteps at once
    d_out = 2.0 * M * (out - Y) / (out_std ** 2 * n)
    dy = d_out * cfg.output_scale * (1.0 - np.tanh(cc["y"]) ** 2)
    grad.w2[...] = np.einsum("tb,tbf->f", dy, cc["ud"])
    du = dy[..., None] * params.w2
    if dropout_masks is not None:
        du = du * dropout_masks
    da = du * (1.0 - cc["u"] ** 2)
    hs, cs, gates = cc["h"], cc["c"], cc["gates"]
    grad.w1[...] = da.reshape(-1, cfg.fc_units).T @ hs[1:].reshape(-1, H)
    grad.b1[...] = da.sum(axis=(0, 1))
    dh_head = da @ params.w1

    # recurrence, backwards in time
    dz = np.empty((T, B, 4 * H))
    _kernels.lstm_backward(np.ascontiguousarray(dh_head), gates, cs,
                           np.ascontiguousarray(params.wh), dz)
    flat_dz = dz.reshape(-1, 4 * H)
    grad.wx[...] = flat_dz.T @ X.reshape(-1, D)
    grad.wh[...] = flat_dz.T @ hs[:-1].reshape(-1, H)
    grad.b[...] = flat_dz.sum(axis=0)
    return loss, grad.flat


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 500
    train_fraction: float = 0.9
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise InvalidArgument("train_fraction must lie in (0, 1)")
        if self.epochs < 1:
            raise InvalidArgument("need at least one epoch")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning rate must be positive")


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamMoments":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, moments: AdamMoments, step_index: int,
              cfg: TrainConfig):
    """Bias-corrected Adam; returns new (params, moments) without mutating the inputs."""
    if step_index < 1:
        raise InvalidArgument("Adam step index starts at 1")
    m = cfg.beta1 * moments.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * moments.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1 ** step_index)
    v_hat = v / (1.0 - cfg.beta2 ** step_index)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new, AdamMoments(m, v)


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and std: the input channels, then the steering output last."""

    mean: np.ndarray
    std: np.ndarray
    degenerate: tuple = ()      # channel indices whose std was snapped to 1

    @property
    def n_inputs(self) -> int:
        return len(self.mean) - 1

    @classmethod
    def identity(cls, n_inputs: int = 8) -> "NormStats":
        return cls(np.zeros(n_inputs + 1), np.ones(n_inputs + 1))


def normalize(sequences) -> NormStats:
    """Statistics over every frame of the given (inputs, labels) sequences."""
    if len(sequences) == 0:
        raise InvalidArgument("no data to normalize")
    x = np.concatenate([np.asarray(s[0], dtype=np.float64) for s in sequences])
    y = np.concatenate([np.asarray(s[1], dtype=np.float64) for s in sequences])
    data = np.column_stack([x, y])
    mean = data.mean(axis=0)
    # second pass removes the rounding left by a large common offset
    mean = mean + (data - mean).mean(axis=0)
    std = (data - mean).std(axis=0)
    # relative test so float noise on a constant channel still counts as constant
    degenerate = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(degenerate, 1.0, std)
    return NormStats(mean, std, tuple(int(i) for i in np.flatnonzero(degenerate)))


def apply_norm(frame, stats: NormStats) -> np.ndarray:
    n = stats.n_inputs
    return (np.asarray(frame, dtype=np.float64) - stats.mean[:n]) / stats.std[:n]


def invert_norm(z, stats: NormStats) -> np.ndarray:
    n = stats.n_inputs
    return np.asarray(z, dtype=np.float64) * stats.std[:n] + stats.mean[:n]


def split_rollouts(n: int, train_fraction: float, rng: np.random.Generator):
    """Shuffle whole-rollout indices into (train, validation), both non-empty."""
    if n < 2:
        raise SplitError(f"need at least 2 rollouts to split, got {n}")
    n_val = min(n - 1, max(1, int(round((1.0 - train_fraction) * n))))
    order = rng.permutation(n)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


@dataclass
class TrainResult:
    params: NetParams
    stats: NormStats
    history: list = field(default_factory=list)   # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    train_idx: list = field(default_factory=list)
    val_idx: list = field(default_factory=list)

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch - 1][2]


def train(sequences, net_cfg: NetConfig = NetConfig(), train_cfg: TrainConfig = TrainConfig(),
          init: NetParams | None = None, progress=None) -> TrainResult:
    """Fit the policy to (inputs, expert labels) sequences, one per rollout.

    Each epoch takes one Adam step on the full training batch (with fresh
    dropout masks), then scores the validation rollouts in inference mode.
    The weights of the epoch with the lowest validation loss are returned.
    """
    split_rng = stream(train_cfg.seed, "split")
    train_idx, val_idx = split_rollouts(len(sequences), train_cfg.train_fraction, split_rng)
    stats = normalize([sequences[i] for i in train_idx])

    def prep(idx):
        return [(apply_norm(sequences[i][0], stats), np.asarray(sequences[i][1], float))
                for i in idx]

    tr, va = prep(train_idx), prep(val_idx)
    out_std = float(stats.std[-1])
    params = init.copy() if init is not None else init_params(net_cfg, stream(train_cfg.seed, "init"))
    drop_rng = stream(train_cfg.seed, "dropout")
    T = max(len(y) for _, y in tr)
    moments = AdamMoments.zeros(net_cfg.n_params)
    best = params.copy()
    best_val = np.inf
    best_epoch = 0
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        masks = None
        if net_cfg.dropout_rate > 0:
            masks = dropout_mask(drop_rng, net_cfg, (T, len(tr), net_cfg.fc_units))
        loss, g = bptt_gradients(params, tr, masks, out_std)
        flat, moments = adam_step(params.flat, g, moments, epoch, train_cfg)
        params = NetParams(net_cfg, flat)
        val = sequence_loss(params, va, out_std)
        history.append((epoch, loss, val))
        if val < best_val:
            best_val, best, best_epoch = val, params.copy(), epoch
        if progress is not None:
            progress(epoch, loss, val)
    return TrainResult(best, stats, history, best_epoch, train_idx, val_idx)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl, vl in history:
            w.writerow([e, f"{tl:.12g}", f"{vl:.12g}"])


class Policy:
    """Stateful closed-loop wrapper: normalizes frames and carries the LSTM state."""

    def __init__(self, params: NetParams, stats: NormStats):
        self.params = params
        self.stats = stats
        self.reset()

    def reset(self) -> None:
        self.state = HiddenState.zeros(self.params.cfg)

    def __call__(self, frame_vector) -> float:
        sigma, self.state = forward_step(self.params, apply_norm(frame_vector, self.stats),
                                         self.state)
        return sigma


# checkpoint layout:
#   magic (8 bytes) | version u32 | header length u32 | header JSON (utf-8)
#   | payload: float64 little-endian params, then norm mean, then norm std
#   | sha256 of everything before it (32 bytes)
MAGIC = b"FFPOLICY"
VERSION = 1


def save(params: NetParams, stats: NormStats, path) -> None:
    header = json.dumps({"net_config": asdict(params.cfg), "n_params": params.cfg.n_params,
                         "n_channels": len(stats.mean), "degenerate": list(stats.degenerate)},
                        sort_keys=True).encode()
    payload = np.concatenate([params.flat, stats.mean, stats.std]).astype("<f8").tobytes()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ChecksumError(f"{path}: not a policy checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    body, digest = blob[:-32], blob[-32:]
    if len(blob) < 48 or hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    header = json.loads(body[16:16 + hlen])
    cfg = NetConfig(**header["net_config"])
    k = header["n_channels"]
    data = np.frombuffer(body[16 + hlen:], dtype="<f8").astype(np.float64)
    if len(data) != cfg.n_params + 2 * k:
        raise ChecksumError(f"{path}: payload size does not match its header")
    params = NetParams(cfg, data[:cfg.n_params].copy())
    stats = NormStats(data[cfg.n_params:cfg.n_params + k].copy(), data[cfg.n_params + k:].copy(),
                      tuple(header["degenerate"]))
    return params, stats

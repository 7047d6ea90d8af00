"""Spiking-transformer regressor mapping IMU windows to position increments.

Architecture: a 1-D convolutional spike encoder (conv, batch norm, then a
leaky integrate-and-fire layer driven by the same current on every SNN
sub-step), a spiking embedding to the model width, a stack of spiking
self-attention blocks (spike-valued Q K V, no softmax, current-domain
residuals), mean spike-rate pooling over the sub-step and time axes, and a
linear head with two outputs (north and east increment in meters).

Spike tensors are binary with shape (T_s, batch, T, channels); membrane
potentials, encoder currents, attention products and the head are
real-valued. Training is backpropagation through time with an arctangent
surrogate for the spike step; soft=True swaps the hard step for the smooth
surrogate so the full network can be finite-difference checked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import Adam, BatchNormState, Tape, Tensor, backward, optimizer_step
from .datasets import WindowSample

E_AC_JOULES = 0.9e-12   # 45 nm energy per accumulate
E_MAC_JOULES = 4.6e-12  # 45 nm energy per multiply-accumulate


def _safe_norm_stats(mean, std):
    """Guard z-score statistics against degenerate training channels.

    A channel that never varied in training carries no information and its
    input weights never received gradient, so it is silenced outright at
    inference (infinite scale); small-but-real scales keep a finite floor.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    dead = std < 1e-9
    std = np.maximum(std, 1e-3)
    std[dead] = np.inf
    return mean, std


class EmptyDataset(ValueError):
    pass


class DivergedLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire neuron constants.

    beta: membrane decay in (0, 1); u_thr: firing threshold; v_reset: reset
    potential; alpha: surrogate-gradient steepness.
    """

    beta: float = 0.5
    u_thr: float = 1.0
    v_reset: float = 0.0
    alpha: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1): {self.beta}")
        if not self.u_thr > self.v_reset:
            raise ValueError("threshold must exceed the reset potential")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class SpikeNetConfig:
    """Network shape: window length, channel count, width, heads, blocks,
    SNN sub-steps and the encoder kernel.

    The head count must divide the model width, so the default is 8 heads
    at width 256. encoder_channels and ffn_hidden default to the input
    channel count and the model width respectively.
    """

    window: int = 200
    channels: int = 9
    d_model: int = 256
    heads: int = 8
    blocks: int = 4
    t_s: int = 4
    encoder_kernel: int = 7
    encoder_stride: int = 1
    encoder_channels: int | None = None
    ffn_hidden: int | None = None
    attn_scale: float = 0.125
    lif: LifParams = LifParams()

    def __post_init__(self):
        if self.encoder_channels is None:
            object.__setattr__(self, "encoder_channels", self.channels)
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", self.d_model)
        if self.d_model % self.heads != 0:
            raise ValueError("heads must divide d_model")
        if self.window < self.encoder_kernel:
            raise ValueError("window shorter than the encoder kernel")
        if self.t_s < 1:
            raise ValueError("need at least one SNN sub-step")

    @property
    def enc_channels(self) -> int:
        return self.encoder_channels

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden


def lif_step(h_prev, current, p: LifParams, soft: bool = False):
    """One membrane update: U = H + I, spike at threshold, decay or reset.

    Returns (spike, new membrane state); gradients flow through both the
    spike path (surrogate) and the decay path.
    """
    u = ag.add(h_prev, current)
    s = ag.heaviside_sg(ag.sub(u, p.u_thr), alpha=p.alpha, soft=soft)
    h = ag.add(ag.scale(s, p.v_reset),
               ag.mul(ag.sub(1.0, s), ag.scale(u, p.beta)))
    return s, h


def spike_layer(currents, p: LifParams, soft: bool = False) -> Tensor:
    """Iterate LIF dynamics over the leading sub-step axis.

    Membrane state starts at the reset potential and persists across the
    sub-steps; the output stacks the binary spikes along the same axis.
    Uses the fused recurrence, which matches the composed lif_step chain
    bit for bit.
    """
    return ag.lif_chain(currents, beta=p.beta, u_thr=p.u_thr,
                        v_reset=p.v_reset, alpha=p.alpha, soft=soft)


class StatsCollector:
    """Accumulates firing rates and gated/dense operation counts."""

    def __init__(self):
        self.spike_sums: dict[str, float] = {}
        self.spike_counts: dict[str, int] = {}
        self.n_ac = 0.0
        self.n_mac = 0.0
        self.n_dense = 0.0  # dense MAC count of all gated ops

    def spikes(self, name: str, data: np.ndarray) -> None:
        self.spike_sums[name] = self.spike_sums.get(name, 0.0) + float(data.sum())
        self.spike_counts[name] = self.spike_counts.get(name, 0) + data.size

    def gated(self, gate: np.ndarray, fanout: int) -> None:
        self.n_ac += float(np.count_nonzero(gate)) * fanout
        self.n_dense += gate.size * fanout

    def mac(self, count: float) -> None:
        self.n_mac += count

    def firing_rates(self) -> dict[str, float]:
        return {k: self.spike_sums[k] / self.spike_counts[k]
                for k in self.spike_sums}


@dataclass
class SpikeStats:
    """Spike activity and the theoretical 45 nm energy estimate."""

    firing_rates: dict[str, float]
    n_ac: float
    n_mac: float
    energy_joules: float
    dense_energy_joules: float

    @property
    def energy_ratio(self) -> float:
        return self.energy_joules / self.dense_energy_joules


def _gated_matmul(x: Tensor, w: Tensor, stats: StatsCollector | None) -> Tensor:
    if stats is not None:
        stats.gated(x.data, w.shape[-1])
    return ag.matmul(x, w)


class SpikingIncrementNet:
    """Spiking-transformer model predicting one GPS position increment."""

    kind = "snn"

    def __init__(self, config: SpikeNetConfig, params: dict[str, Tensor],
                 bn: dict[str, BatchNormState], norm_mean: np.ndarray,
                 norm_std: np.ndarray):
        self.config = config
        self.params = params
        self.bn = bn
        self.norm_mean = np.asarray(norm_mean, dtype=float)
        self.norm_std = np.asarray(norm_std, dtype=float)

    @classmethod
    def init(cls, config: SpikeNetConfig, seed: int = 0) -> "SpikingIncrementNet":
        rng = np.random.default_rng(seed)
        d, ce, hid = config.d_model, config.enc_channels, config.ffn_width

        def w(shape, fan_in, gain=1.0):
            return Tensor(rng.normal(scale=gain / math.sqrt(fan_in), size=shape),
                          requires_grad=True)

        params: dict[str, Tensor] = {}
        bn: dict[str, BatchNormState] = {}
        params["encoder/conv"] = w((ce, config.channels, config.encoder_kernel),
                                   config.channels * config.encoder_kernel)
        params["encoder/gamma"] = Tensor(np.ones(ce), requires_grad=True)
        params["encoder/beta"] = Tensor(np.zeros(ce), requires_grad=True)
        bn["encoder"] = BatchNormState.for_features(ce)
        params["embed/w"] = w((ce, d), ce, gain=2.0)
        for i in range(config.blocks):
            for name in ("q", "k", "v"):
                params[f"block{i}/{name}_w"] = w((d, d), d)
                params[f"block{i}/{name}_gamma"] = Tensor(np.ones(d),
                                                          requires_grad=True)
                params[f"block{i}/{name}_beta"] = Tensor(np.zeros(d),
                                                         requires_grad=True)
                bn[f"block{i}/{name}"] = BatchNormState.for_features(d)
            params[f"block{i}/o_w"] = w((d, d), d)
            params[f"block{i}/o_gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"block{i}/o_beta"] = Tensor(np.zeros(d), requires_grad=True)
            bn[f"block{i}/o"] = BatchNormState.for_features(d)
            params[f"block{i}/ffn1_w"] = w((d, hid), d)
            params[f"block{i}/ffn1_gamma"] = Tensor(np.ones(hid), requires_grad=True)
            params[f"block{i}/ffn1_beta"] = Tensor(np.zeros(hid), requires_grad=True)
            bn[f"block{i}/ffn1"] = BatchNormState.for_features(hid)
            params[f"block{i}/ffn2_w"] = w((hid, d), hid)
            params[f"block{i}/ffn2_gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"block{i}/ffn2_beta"] = Tensor(np.zeros(d), requires_grad=True)
            bn[f"block{i}/ffn2"] = BatchNormState.for_features(d)
        params["head/w"] = w((d, 2), d, gain=0.5)
        params["head/b"] = Tensor(np.zeros(2), requires_grad=True)
        norm_mean = np.zeros(config.channels)
        norm_std = np.ones(config.channels)
        return cls(config, params, bn, norm_mean, norm_std)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.norm_mean) / self.norm_std

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.norm_mean, self.norm_std = _safe_norm_stats(mean, std)

    # forward stages -----------------------------------------------------

    def encode(self, x: Tensor, training: bool, soft: bool,
               stats: StatsCollector | None = None) -> Tensor:
        cfg = self.config
        pad = cfg.encoder_kernel // 2
        cur = ag.conv1d(x, self.params["encoder/conv"],
                        stride=cfg.encoder_stride, padding=pad)
        if stats is not None:
            stats.mac(x.data.size / x.shape[-1] * cfg.encoder_kernel
                      * cfg.channels * cfg.enc_channels / cfg.encoder_stride)
            stats.mac(cur.size)  # batch norm
        cur = ag.batchnorm(cur, self.params["encoder/gamma"],
                           self.params["encoder/beta"], self.bn["encoder"],
                           training)
        rep = ag.tile_leading(cur, cfg.t_s)
        s = spike_layer(rep, cfg.lif, soft=soft)
        if stats is not None:
            stats.spikes("encoder", s.data)
        return s

    def embed(self, s: Tensor, soft: bool,
              stats: StatsCollector | None = None) -> Tensor:
        cur = _gated_matmul(s, self.params["embed/w"], stats)
        out = spike_layer(cur, self.config.lif, soft=soft)
        if stats is not None:
            stats.spikes("embedding", out.data)
        return out

    def _heads_split(self, t: Tensor) -> Tensor:
        ts, b, tt, d = t.shape
        cfg = self.config
        parted = ag.reshape(t, (ts, b, tt, cfg.heads, d // cfg.heads))
        return ag.transpose(parted, (0, 1, 3, 2, 4))

    def _heads_merge(self, t: Tensor) -> Tensor:
        ts, b, h, tt, dh = t.shape
        back = ag.transpose(t, (0, 1, 3, 2, 4))
        return ag.reshape(back, (ts, b, tt, h * dh))

    def block(self, s: Tensor, i: int, training: bool, soft: bool,
              stats: StatsCollector | None = None) -> Tensor:
        cfg = self.config
        p = self.params
        qkv = []
        for name in ("q", "k", "v"):
            cur = _gated_matmul(s, p[f"block{i}/{name}_w"], stats)
            if stats is not None:
                stats.mac(cur.size)
            cur = ag.batchnorm(cur, p[f"block{i}/{name}_gamma"],
                               p[f"block{i}/{name}_beta"],
                               self.bn[f"block{i}/{name}"], training)
            spikes = spike_layer(cur, cfg.lif, soft=soft)
            if stats is not None:
                stats.spikes(f"block{i}/{name}", spikes.data)
            qkv.append(spikes)
        q, k, v = (self._heads_split(t) for t in qkv)
        if stats is not None:
            t_len = q.shape[3]
            stats.gated(q.data, t_len)       # Q K^T accumulate ops
            stats.gated(v.data, t_len)       # (Q K^T) V accumulate ops
        scores = ag.matmul(q, ag.transpose(k, (0, 1, 2, 4, 3)))
        att = ag.matmul(scores, v)
        att = self._heads_merge(att)
        att_cur = _gated_matmul(ag.scale(att, cfg.attn_scale),
                                p[f"block{i}/o_w"], stats)
        if stats is not None:
            stats.mac(att_cur.size)
        att_cur = ag.batchnorm(att_cur, p[f"block{i}/o_gamma"],
                               p[f"block{i}/o_beta"], self.bn[f"block{i}/o"],
                               training)
        s_att = spike_layer(att_cur, cfg.lif, soft=soft)
        if stats is not None:
            stats.spikes(f"block{i}/attn", s_att.data)
        u1 = ag.add(s_att, s)  # current-domain residual
        mid_cur = _gated_matmul(u1, p[f"block{i}/ffn1_w"], stats)
        if stats is not None:
            stats.mac(mid_cur.size)
        mid_cur = ag.batchnorm(mid_cur, p[f"block{i}/ffn1_gamma"],
                               p[f"block{i}/ffn1_beta"],
                               self.bn[f"block{i}/ffn1"], training)
        mid = spike_layer(mid_cur, cfg.lif, soft=soft)
        if stats is not None:
            stats.spikes(f"block{i}/ffn", mid.data)
        ffn_cur = _gated_matmul(mid, p[f"block{i}/ffn2_w"], stats)
        if stats is not None:
            stats.mac(ffn_cur.size)
        ffn_cur = ag.batchnorm(ffn_cur, p[f"block{i}/ffn2_gamma"],
                               p[f"block{i}/ffn2_beta"],
                               self.bn[f"block{i}/ffn2"], training)
        out = spike_layer(ag.add(ffn_cur, u1), cfg.lif, soft=soft)
        if stats is not None:
            stats.spikes(f"block{i}/out", out.data)
        return out

    def forward(self, x: Tensor, training: bool = False, soft: bool = False,
                stats: StatsCollector | None = None) -> Tensor:
        """Batch forward pass: x is (batch, window, channels), normalized."""
        s = self.encode(x, training, soft, stats)
        s = self.embed(s, soft, stats)
        for i in range(self.config.blocks):
            s = self.block(s, i, training, soft, stats)
        rates = ag.mean(s, axis=(0, 2))
        out = ag.add(ag.matmul(rates, self.params["head/w"]),
                     self.params["head/b"])
        if stats is not None:
            stats.mac(rates.shape[0] * self.config.d_model * 2)
        return out

    def predict(self, window: np.ndarray, t: float | None = None) -> np.ndarray:
        """Increment prediction for one raw (window, channels) matrix."""
        x = Tensor(self.normalize(window)[None, :, :])
        return self.forward(x, training=False).data[0].copy()

    # persistence ---------------------------------------------------------

    def _config_arrays(self) -> dict[str, np.ndarray]:
        cfg = self.config
        return {
            "config/window": np.array(float(cfg.window)),
            "config/channels": np.array(float(cfg.channels)),
            "config/d_model": np.array(float(cfg.d_model)),
            "config/heads": np.array(float(cfg.heads)),
            "config/blocks": np.array(float(cfg.blocks)),
            "config/t_s": np.array(float(cfg.t_s)),
            "config/encoder_kernel": np.array(float(cfg.encoder_kernel)),
            "config/encoder_stride": np.array(float(cfg.encoder_stride)),
            "config/encoder_channels": np.array(float(cfg.enc_channels)),
            "config/ffn_hidden": np.array(float(cfg.ffn_width)),
            "config/attn_scale": np.array(cfg.attn_scale),
            "config/lif_beta": np.array(cfg.lif.beta),
            "config/lif_u_thr": np.array(cfg.lif.u_thr),
            "config/lif_v_reset": np.array(cfg.lif.v_reset),
            "config/lif_alpha": np.array(cfg.lif.alpha),
        }

    def save(self, path) -> None:
        out: dict[str, np.ndarray] = {"meta/kind": np.array(1.0)}
        out.update(self._config_arrays())
        out["norm/mean"] = self.norm_mean
        out["norm/std"] = self.norm_std
        for name, p in self.params.items():
            out[f"param/{name}"] = p.data
        for name, state in self.bn.items():
            out[f"bn/{name}/mean"] = state.running_mean
            out[f"bn/{name}/var"] = state.running_var
        ag.save_tensors(path, out)

    @classmethod
    def load(cls, path) -> "SpikingIncrementNet":
        raw = ag.load_tensors(path)
        if raw.get("meta/kind") is None or float(raw["meta/kind"]) != 1.0:
            raise ValueError(f"{path}: not a spiking-model container")
        lif = LifParams(beta=float(raw["config/lif_beta"]),
                        u_thr=float(raw["config/lif_u_thr"]),
                        v_reset=float(raw["config/lif_v_reset"]),
                        alpha=float(raw["config/lif_alpha"]))
        cfg = SpikeNetConfig(
            window=int(raw["config/window"]),
            channels=int(raw["config/channels"]),
            d_model=int(raw["config/d_model"]),
            heads=int(raw["config/heads"]),
            blocks=int(raw["config/blocks"]),
            t_s=int(raw["config/t_s"]),
            encoder_kernel=int(raw["config/encoder_kernel"]),
            encoder_stride=int(raw["config/encoder_stride"]),
            encoder_channels=int(raw["config/encoder_channels"]),
            ffn_hidden=int(raw["config/ffn_hidden"]),
            attn_scale=float(raw["config/attn_scale"]),
            lif=lif)
        params = {}
        bn_mean, bn_var = {}, {}
        for name, arr in raw.items():
            if name.startswith("param/"):
                params[name[6:]] = Tensor(arr, requires_grad=True)
            elif name.startswith("bn/") and name.endswith("/mean"):
                bn_mean[name[3:-5]] = arr
            elif name.startswith("bn/") and name.endswith("/var"):
                bn_var[name[3:-4]] = arr
        bn = {k: BatchNormState(running_mean=bn_mean[k].copy(),
                                running_var=bn_var[k].copy())
              for k in bn_mean}
        return cls(cfg, params, bn, raw["norm/mean"], raw["norm/std"])


class MlpIncrementNet:
    """Flattened-window baseline: two 256-wide rectified hidden layers."""

    kind = "mlp"

    def __init__(self, window: int, channels: int, hidden: int,
                 params: dict[str, Tensor], norm_mean, norm_std):
        self.window = window
        self.channels = channels
        self.hidden = hidden
        self.params = params
        self.norm_mean = np.asarray(norm_mean, dtype=float)
        self.norm_std = np.asarray(norm_std, dtype=float)

    @classmethod
    def init(cls, window: int, channels: int = 9, hidden: int = 256,
             seed: int = 0) -> "MlpIncrementNet":
        rng = np.random.default_rng(seed)
        d_in = window * channels

        def w(shape, fan_in):
            return Tensor(rng.normal(scale=math.sqrt(2.0 / fan_in), size=shape),
                          requires_grad=True)

        params = {
            "l1/w": w((d_in, hidden), d_in),
            "l1/b": Tensor(np.zeros(hidden), requires_grad=True),
            "l2/w": w((hidden, hidden), hidden),
            "l2/b": Tensor(np.zeros(hidden), requires_grad=True),
            "out/w": w((hidden, 2), hidden),
            "out/b": Tensor(np.zeros(2), requires_grad=True),
        }
        return cls(window, channels, hidden, params,
                   np.zeros(channels), np.ones(channels))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.norm_mean) / self.norm_std

    def set_normalization(self, mean, std) -> None:
        self.norm_mean, self.norm_std = _safe_norm_stats(mean, std)

    def forward(self, x: Tensor, training: bool = False, soft: bool = False,
                stats=None) -> Tensor:
        flat = ag.reshape(x, (x.shape[0], self.window * self.channels))
        h = ag.relu(ag.add(ag.matmul(flat, self.params["l1/w"]),
                           self.params["l1/b"]))
        h = ag.relu(ag.add(ag.matmul(h, self.params["l2/w"]),
                           self.params["l2/b"]))
        return ag.add(ag.matmul(h, self.params["out/w"]), self.params["out/b"])

    def predict(self, window: np.ndarray, t: float | None = None) -> np.ndarray:
        x = Tensor(self.normalize(window)[None, :, :])
        return self.forward(x).data[0].copy()

    def save(self, path) -> None:
        out = {"meta/kind": np.array(2.0),
               "config/window": np.array(float(self.window)),
               "config/channels": np.array(float(self.channels)),
               "config/hidden": np.array(float(self.hidden)),
               "norm/mean": self.norm_mean, "norm/std": self.norm_std}
        for name, p in self.params.items():
            out[f"param/{name}"] = p.data
        ag.save_tensors(path, out)

    @classmethod
    def load(cls, path) -> "MlpIncrementNet":
        raw = ag.load_tensors(path)
        if raw.get("meta/kind") is None or float(raw["meta/kind"]) != 2.0:
            raise ValueError(f"{path}: not an MLP-model container")
        params = {name[6:]: Tensor(arr, requires_grad=True)
                  for name, arr in raw.items() if name.startswith("param/")}
        return cls(int(raw["config/window"]), int(raw["config/channels"]),
                   int(raw["config/hidden"]), params,
                   raw["norm/mean"], raw["norm/std"])


def load_model(path):
    """Load either model kind from a tensor container."""
    raw = ag.load_tensors(path)
    kind = float(raw.get("meta/kind", -1.0))
    if kind == 1.0:
        return SpikingIncrementNet.load(path)
    if kind == 2.0:
        return MlpIncrementNet.load(path)
    raise ValueError(f"{path}: unknown model kind {kind}")


# spec-level functional surface ------------------------------------------

def encode_spikes(window: np.ndarray, model: SpikingIncrementNet,
                  soft: bool = False) -> Tensor:
    """Spike-encode one raw IMU window (eval-mode statistics)."""
    x = Tensor(model.normalize(window)[None, :, :])
    return model.encode(x, training=False, soft=soft)


def spiking_embedding(s: Tensor, model: SpikingIncrementNet,
                      soft: bool = False) -> Tensor:
    return model.embed(s, soft=soft)


def attention_block(s: Tensor, model: SpikingIncrementNet, index: int,
                    soft: bool = False) -> Tensor:
    return model.block(s, index, training=False, soft=soft)


def net_forward(window: np.ndarray, model) -> np.ndarray:
    """Increment prediction for one raw window (either model kind)."""
    return model.predict(window)


def is_binary(t: Tensor | np.ndarray) -> bool:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    return bool(np.all((data == 0.0) | (data == 1.0)))


# training ------------------------------------------------------------------

def _window_arrays(samples: list[WindowSample]):
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.target for s in samples])
    return x, y


def _eval_mse(model, x: np.ndarray, y: np.ndarray, chunk: int = 128) -> float:
    total = 0.0
    for i in range(0, len(x), chunk):
        pred = model.forward(Tensor(model.normalize(x[i:i + chunk]))).data
        total += float(((pred - y[i:i + chunk]) ** 2).sum())
    return total / (len(x) * y.shape[1])


def _snapshot(model) -> dict:
    state = {name: p.data.copy() for name, p in model.params.items()}
    if hasattr(model, "bn"):
        state["__bn__"] = {k: (s.running_mean.copy(), s.running_var.copy())
                           for k, s in model.bn.items()}
    return state


def _restore(model, state: dict) -> None:
    for name, p in model.params.items():
        p.data = state[name].copy()
    if hasattr(model, "bn"):
        for k, (mean, var) in state["__bn__"].items():
            model.bn[k].running_mean = mean.copy()
            model.bn[k].running_var = var.copy()


def fit(model, samples: list[WindowSample], epochs: int, batch_size: int,
        seed: int, lr: float = 1e-3, val_fraction: float = 0.2,
        lr_decay: float = 1.0) -> list[tuple[int, float, float]]:
    """Train a model on window samples; keeps the best-validation weights.

    Normalization statistics come from the training split only. Returns the
    training curve as (epoch, train_mse, val_mse) rows. Deterministic for a
    fixed seed. Raises EmptyDataset and DivergedLoss.
    """
    if not samples:
        raise EmptyDataset("no window samples to train on")
    x_all, y_all = _window_arrays(samples)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_val = max(1, int(round(val_fraction * len(samples)))) if len(samples) > 1 else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx
    x_train, y_train = x_all[train_idx], y_all[train_idx]
    x_val, y_val = (x_all[val_idx], y_all[val_idx]) if n_val else (x_train, y_train)
    flat = x_train.reshape(-1, x_train.shape[-1])
    model.set_normalization(flat.mean(axis=0), flat.std(axis=0))

    params = model.parameters()
    opt = Adam(lr=lr)
    curve: list[tuple[int, float, float]] = []
    best_val = math.inf
    best_state = _snapshot(model)
    for epoch in range(epochs):
        perm = rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(perm), batch_size):
            batch = perm[start:start + batch_size]
            xb = Tensor(model.normalize(x_train[batch]))
            yb = y_train[batch]
            for p in params:
                p.zero_grad()
            with Tape() as tape:
                pred = model.forward(xb, training=True)
                diff = ag.sub(pred, yb)
                loss = ag.mean(ag.mul(diff, diff))
            backward(tape, loss)
            optimizer_step(params, [p.grad for p in params], opt)
            total += float(loss.data) * len(batch)
        train_mse = total / len(x_train)
        val_mse = _eval_mse(model, x_val, y_val)
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        curve.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_state = _snapshot(model)
        opt.lr *= lr_decay
    _restore(model, best_state)
    return curve


def train_spiking(samples: list[WindowSample], config: SpikeNetConfig,
                  epochs: int, batch_size: int = 8, seed: int = 0,
                  lr: float = 1e-3, val_fraction: float = 0.2,
                  lr_decay: float = 1.0):
    """Train a fresh spiking-transformer model; returns (model, curve)."""
    model = SpikingIncrementNet.init(config, seed=seed)
    curve = fit(model, samples, epochs, batch_size, seed, lr, val_fraction,
                lr_decay)
    return model, curve


def train_mlp(samples: list[WindowSample], window: int, channels: int = 9,
              epochs: int = 100, batch_size: int = 8, seed: int = 0,
              lr: float = 1e-3, hidden: int = 256, val_fraction: float = 0.2,
              lr_decay: float = 1.0):
    """Train the MLP baseline under the same contract; returns (model, curve)."""
    model = MlpIncrementNet.init(window, channels, hidden, seed=seed)
    curve = fit(model, samples, epochs, batch_size, seed, lr, val_fraction,
                lr_decay)
    return model, curve


def write_curve_csv(curve: list[tuple[int, float, float]], path) -> None:
    """Training-curve CSV: epoch, train_mse, val_mse."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, train_mse, val_mse in curve:
            writer.writerow([epoch, f"{train_mse:.17g}", f"{val_mse:.17g}"])


def spike_stats(model: SpikingIncrementNet,
                samples: list[WindowSample], chunk: int = 64) -> SpikeStats:
    """Firing rates and the theoretical energy estimate over an eval set.

    Spike-gated layers count one accumulate per nonzero gate element per
    output unit; encoder, batch-norm and head work count as
    multiply-accumulates. The dense equivalent prices every gated op as a
    full MAC, which is the conventional dense-network reference.
    """
    if not samples:
        raise EmptyDataset("no samples for spike statistics")
    stats = StatsCollector()
    x, _ = _window_arrays(samples)
    for i in range(0, len(x), chunk):
        model.forward(Tensor(model.normalize(x[i:i + chunk])),
                      training=False, stats=stats)
    energy = stats.n_ac * E_AC_JOULES + stats.n_mac * E_MAC_JOULES
    dense = (stats.n_dense + stats.n_mac) * E_MAC_JOULES
    return SpikeStats(firing_rates=stats.firing_rates(), n_ac=stats.n_ac,
                      n_mac=stats.n_mac, energy_joules=energy,
                      dense_energy_joules=dense)

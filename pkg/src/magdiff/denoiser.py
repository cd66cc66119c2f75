"""Noise-prediction network: step embedding, point encoders, masked cross-attention, MLP head."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import diffcalc as dc
from .mask import ReceptiveMask

MAGIC = b"PDG1"


@dataclass(frozen=True)
class DenoiserConfig:
    d: int = 64
    D: int = 64

    def __post_init__(self):
        if self.d < 4 or self.d % 2:
            raise ValueError(f"embedding width d must be even and >= 4, got {self.d}")
        if self.D < 1:
            raise ValueError("D must be positive")


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, int]]:
    d, D = cfg.d, cfg.D
    return {
        "enc_co.W": (3, d), "enc_co.b": (1, d),
        "enc_ta.W": (3, d), "enc_ta.b": (1, d),
        "step.W1": (d, d), "step.b1": (1, d),
        "step.W2": (d, d), "step.b2": (1, d),
        "attn.Wq": (d, D), "attn.Wk": (d, D), "attn.Wv": (d, d),
        "head.W1": (d, d), "head.b1": (1, d),
        "head.W2": (d, 1), "head.b2": (1, 1),
    }


def init_params(cfg: DenoiserConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name.rsplit(".", 1)[1].startswith("b"):
            out[name] = np.zeros(shape)
        else:
            out[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return out


def step_embedding(t: float, d: int) -> np.ndarray:
    """w sines then w cosines of ``10**(4i/(w-1)) * t``, i = 0..w-1, w = d/2.

    The frequencies grow with i, as in the formula this model was specified
    with (the usual transformer convention decays instead).
    """
    if d < 4 or d % 2:
        raise ValueError(f"d must be even and >= 4, got {d}")
    if t < 0:
        raise ValueError("t must be non-negative")
    w = d // 2
    freq = 10.0 ** (4.0 * np.arange(w) / (w - 1))
    arg = freq * float(t)
    return np.concatenate([np.sin(arg), np.cos(arg)])


def _linear(x: dc.Tensor, W: dc.Tensor, b: dc.Tensor) -> dc.Tensor:
    return dc.add(dc.matmul(x, W), b)


def step_vector(t: float, params: Mapping[str, dc.Tensor], d: int, T: int | None = None) -> dc.Tensor:
    """p^t = FFN(Emb(t / T)), shape (1, d).

    The step is rescaled to (0, 1] before embedding: with integer steps the
    growing frequencies alias and every step would get an unrelated code.
    """
    emb = dc.constant(step_embedding(t / T if T else t, d)[None, :])
    hidden = dc.silu(_linear(emb, params["step.W1"], params["step.b1"]))
    return _linear(hidden, params["step.W2"], params["step.b2"])


def encode(m, x, p_t: dc.Tensor, W: dc.Tensor, b: dc.Tensor) -> dc.Tensor:
    """Linear map of each (lon, lat, x) triple plus the broadcast step vector."""
    m = np.asarray(m, dtype=np.float64).reshape(-1, 2)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(m) != len(x):
        raise ValueError(f"{len(m)} coordinates but {len(x)} values")
    feats = dc.constant(np.column_stack([m, x]))
    return dc.add(_linear(feats, W, b), p_t)


def attend(h_ta: dc.Tensor, h_co: dc.Tensor, mask, params: Mapping[str, dc.Tensor]) -> dc.Tensor:
    q = dc.matmul(h_ta, params["attn.Wq"])
    k = dc.matmul(h_co, params["attn.Wk"])
    v = dc.matmul(h_co, params["attn.Wv"])
    scores = dc.scale(dc.matmul(q, dc.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return dc.matmul(dc.softmax_masked(scores, mask), v)


def predict_noise(h_ta: dc.Tensor, h_co: dc.Tensor, mask: ReceptiveMask,
                  params: Mapping[str, dc.Tensor]) -> dc.Tensor:
    """eps_hat = MLP(h_ta + attention(h_ta, h_co)), shape (n_ta, 1)."""
    allow = getattr(mask, "allow", mask)
    if np.shape(allow) != (h_ta.shape[0], h_co.shape[0]):
        raise dc.ShapeError(f"mask shape {np.shape(allow)} != ({h_ta.shape[0]}, {h_co.shape[0]})")
    z = dc.add(h_ta, attend(h_ta, h_co, mask, params))
    hidden = dc.silu(_linear(z, params["head.W1"], params["head.b1"]))
    return _linear(hidden, params["head.W2"], params["head.b2"])


def denoise(params: Mapping[str, dc.Tensor], t: int, m_ta, x_ta_t, m_co, x_co, mask,
            T: int | None = None) -> dc.Tensor:
    """Full network pass for noised targets at diffusion step ``t`` (of ``T``)."""
    d = params["step.W1"].shape[0]
    p_t = step_vector(t, params, d, T)
    h_ta = encode(m_ta, x_ta_t, p_t, params["enc_ta.W"], params["enc_ta.b"])
    h_co = encode(m_co, x_co, p_t, params["enc_co.W"], params["enc_co.b"])
    return predict_noise(h_ta, h_co, mask, params)


def as_constants(params: Mapping[str, np.ndarray]) -> dict[str, dc.Tensor]:
    return {k: dc.constant(v) for k, v in params.items()}


def on_graph(graph: dc.Graph, params: Mapping[str, np.ndarray]) -> dict[str, dc.Tensor]:
    return {k: graph.param(k, v) for k, v in params.items()}


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(path, params: Mapping[str, np.ndarray], manifest: Mapping) -> None:
    """Write ``PDG1`` + u32 manifest length + JSON manifest + little-endian f64 arrays."""
    names = list(params)
    head = dict(manifest)
    head["arrays"] = [{"name": n, "shape": list(params[n].shape)} for n in names]
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a PDG1 checkpoint")
    (n,) = struct.unpack("<I", raw[4:8])
    manifest = json.loads(raw[8:8 + n].decode("utf-8"))
    pos = 8 + n
    params = {}
    for entry in manifest.pop("arrays"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        params[entry["name"]] = arr
        pos += 8 * count
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return params, manifest


def config_dict(cfg: DenoiserConfig) -> dict:
    return asdict(cfg)

"""Two-branch snippet scoring model.

The base branch embeds the concatenated appearance/motion streams with a
kernel-3 temporal convolution and emits per-snippet class scores (TCAS).
The guidance branch runs K graph-convolution rounds over one chosen
stream, concatenates a shortcut copy of its input, and emits a bounded
per-snippet motionness score through another temporal convolution.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import DiffNode, ShapeMismatchError, as_matrix, constant, param

MOTIONNESS_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    k_layers: int = 2
    gcn_relu: bool = True
    guidance_stream: str = "motion"   # motion | appearance | both

    def validate(self):
        if self.k_layers < 1:
            raise ValueError(f"k_layers must be >= 1, got {self.k_layers}")
        if self.guidance_stream not in ("motion", "appearance", "both"):
            raise ValueError(f"unknown guidance_stream {self.guidance_stream!r}")

    def guidance_width(self, d):
        return 2 * d if self.guidance_stream == "both" else d


@dataclass
class Conv3:
    """Temporal convolution, kernel 3, zero padded: taps for offsets -1,0,+1."""
    taps: list
    bias: DiffNode

    @property
    def in_dim(self):
        return self.taps[0].rows

    @property
    def out_dim(self):
        return self.taps[0].cols


@dataclass
class ModelParams:
    embed: Conv3          # 2d -> h
    cls: Conv3            # h -> C
    gcn: list             # K square matrices, guidance width
    mot: Conv3            # 2 * guidance width -> 1
    W1: np.ndarray = field(repr=False)   # fixed edge projections
    W2: np.ndarray = field(repr=False)

    def trainable(self):
        nodes = []
        for conv in (self.embed, self.cls, self.mot):
            nodes.extend(conv.taps)
            nodes.append(conv.bias)
        nodes.extend(self.gcn)
        return nodes


def _init_conv(rng, in_dim, out_dim):
    std = 1.0 / np.sqrt(3 * in_dim)
    taps = [param(std * rng.standard_normal((in_dim, out_dim))) for _ in range(3)]
    return Conv3(taps=taps, bias=param(np.zeros((1, out_dim))))


def init_params(d, C, mcfg, seed):
    """Fresh parameters for stream width d and C classes.

    Gaussian weights with std 1/sqrt(fan_in), zero biases; the edge
    projections start at identity plus small noise and stay fixed (the
    thresholded edge selection gives them no gradient path).
    """
    mcfg.validate()
    dg = mcfg.guidance_width(d)
    h = 2 * d
    embed = _init_conv(nc.split_rng(seed, 0), 2 * d, h)
    cls = _init_conv(nc.split_rng(seed, 1), h, C)
    rng = nc.split_rng(seed, 2)
    std = 1.0 / np.sqrt(dg)
    gcn = [param(std * rng.standard_normal((dg, dg))) for _ in range(mcfg.k_layers)]
    mot = _init_conv(nc.split_rng(seed, 3), 2 * dg, 1)
    rng = nc.split_rng(seed, 4)
    W1 = np.eye(dg) + 0.01 * rng.standard_normal((dg, dg))
    W2 = np.eye(dg) + 0.01 * rng.standard_normal((dg, dg))
    return ModelParams(embed=embed, cls=cls, gcn=gcn, mot=mot, W1=W1, W2=W2)


def temporal_conv3(x, conv):
    """y[t] = x[t-1] K_neg + x[t] K_0 + x[t+1] K_pos + b, zero padded."""
    if x.cols != conv.in_dim:
        raise ShapeMismatchError(
            f"conv expects width {conv.in_dim}, got {x.cols}")
    k_neg, k_0, k_pos = conv.taps
    y = nc.shift_rows(x, -1) @ k_neg + x @ k_0 + nc.shift_rows(x, 1) @ k_pos
    return y + conv.bias


def base_forward(appearance, motion, params):
    """TCAS: embed the fused streams, then score classes, ReLU both stages."""
    appearance = as_matrix(appearance, "appearance")
    motion = as_matrix(motion, "motion")
    if appearance.shape != motion.shape:
        raise ShapeMismatchError(
            f"streams disagree: {appearance.shape} vs {motion.shape}")
    if appearance.shape[0] < 1:
        raise ShapeMismatchError("need at least one snippet")
    fused = constant(np.hstack([appearance, motion]))
    embedded = nc.relu(temporal_conv3(fused, params.embed))
    return nc.relu(temporal_conv3(embedded, params.cls))


def guidance_forward(features, graph, params, mcfg, mode="sparse"):
    """Motionness sequence (T x 1) from K graph-conv rounds plus shortcut.

    mode "mlp" drops the adjacency entirely (X W^k per round); sparse and
    dense modes share the X^k = G X^{k-1} W^k update with whatever
    adjacency the graph carries.
    """
    x0 = constant(as_matrix(features, "guidance features"))
    if graph.adjacency.shape[0] != x0.rows:
        raise ShapeMismatchError(
            f"adjacency is {graph.adjacency.shape} for {x0.rows} snippets")
    G = None if mode == "mlp" else constant(graph.adjacency)
    x = x0
    for W in params.gcn:
        x = (x if G is None else G @ x) @ W
        if mcfg.gcn_relu:
            x = nc.relu(x)
    x = nc.concat_cols(x, x0)
    return nc.clip(nc.sigmoid(temporal_conv3(x, params.mot)),
                   MOTIONNESS_EPS, 1.0 - MOTIONNESS_EPS)


def guidance_features(video, mcfg):
    """The stream routed into the guidance branch (and its graph)."""
    if mcfg.guidance_stream == "motion":
        return video.motion
    if mcfg.guidance_stream == "appearance":
        return video.appearance
    return np.hstack([video.appearance, video.motion])


@dataclass
class ForwardOutput:
    tcas: DiffNode        # T x C, nonnegative
    motionness: DiffNode  # T x 1, in (eps, 1-eps)


def full_forward(video, graph, params, mcfg, mode="sparse"):
    tcas = base_forward(video.appearance, video.motion, params)
    feats = guidance_features(video, mcfg)
    motionness = guidance_forward(feats, graph, params, mcfg, mode=mode)
    return ForwardOutput(tcas=tcas, motionness=motionness)


# ---------------------------------------------------------------------------
# checkpoints: manifest.json plus one little-endian f32 blob per tensor


def _named_tensors(params):
    out = []
    for name, conv in (("embed", params.embed), ("cls", params.cls),
                       ("mot", params.mot)):
        for i, tap in enumerate(conv.taps):
            out.append((f"{name}.tap{i}", tap.value))
        out.append((f"{name}.bias", conv.bias.value))
    for i, W in enumerate(params.gcn):
        out.append((f"gcn.{i}", W.value))
    out.append(("proj.W1", params.W1))
    out.append(("proj.W2", params.W2))
    return out


def save_params(path, params):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, value in _named_tensors(params):
        fname = name.replace(".", "_") + ".bin"
        manifest[name] = {"file": fname, "shape": list(value.shape)}
        flat = np.ascontiguousarray(value, dtype="<f4")
        (path / fname).write_bytes(flat.tobytes())
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_tensor(path, entry, name):
    raw = (path / entry["file"]).read_bytes()
    shape = tuple(entry["shape"])
    want = 4 * shape[0] * shape[1]
    if len(raw) != want:
        raise ValueError(
            f"checkpoint tensor {name}: expected {want} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def load_params(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())

    def conv(prefix):
        taps = [param(_read_tensor(path, manifest[f"{prefix}.tap{i}"],
                                   f"{prefix}.tap{i}")) for i in range(3)]
        bias = param(_read_tensor(path, manifest[f"{prefix}.bias"],
                                  f"{prefix}.bias"))
        return Conv3(taps=taps, bias=bias)

    n_gcn = sum(1 for k in manifest if k.startswith("gcn."))
    gcn = [param(_read_tensor(path, manifest[f"gcn.{i}"], f"gcn.{i}"))
           for i in range(n_gcn)]
    return ModelParams(
        embed=conv("embed"), cls=conv("cls"), gcn=gcn, mot=conv("mot"),
        W1=_read_tensor(path, manifest["proj.W1"], "proj.W1"),
        W2=_read_tensor(path, manifest["proj.W2"], "proj.W2"))

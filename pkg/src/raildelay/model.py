"""The delay-forecasting network.

Three parallel stacks consume the recent, daily, and weekly windows. Each
stack is a sequence of encoder blocks (temporal attention, spatial
attention modulated by the distance/frequency weight matrix, Chebyshev
graph convolution, 1x3 temporal convolution) followed by a fully
connected map to the prediction horizon. Stack outputs are fused with
learnable per-station weights, and a final ReLU clamps predictions at
zero since delays are nonnegative.

Everything runs on the minimal autodiff engine in float64; `backward`
produces gradients for every learnable tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .railnet import RailGraph, SpatialWeights, scaled_laplacian, spatial_weight_matrix
from .windows import Sample, WindowConfig

COMPONENT_ORDER = ("recent", "daily", "weekly")

# Named feature subsets for ablations; indices into ingest.CHANNELS.
FEATURE_SETS = {
    "avg": (0, 1),
    "avg+headway": (0, 1, 4),
    "avg+tot": (0, 1, 2, 3),
    "all": (0, 1, 2, 3, 4),
}

_BLOCK_FIELDS = ("U1", "U2", "U3", "V_t", "b_t", "W1", "W2", "W3", "V_s", "b_s", "theta", "phi")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    k_cheb: int = 3
    channels: int = 64
    n_blocks: int = 2
    t_p: int = 3
    use_frequency_weight: bool = True
    use_final_relu: bool = True
    features: tuple = FEATURE_SETS["all"]

    def __post_init__(self):
        if self.k_cheb < 1:
            raise ModelError("Chebyshev order must be >= 1")
        if not self.features or 0 not in self.features:
            raise ModelError("feature subset must include the target channel (0)")

    @property
    def n_features(self) -> int:
        return len(self.features)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["features"] = tuple(d["features"])
        return ModelConfig(**d)


@dataclass
class BlockParams:
    """Learnable tensors of one encoder block (see module docstring)."""

    U1: Tensor
    U2: Tensor
    U3: Tensor
    V_t: Tensor
    b_t: Tensor
    W1: Tensor
    W2: Tensor
    W3: Tensor
    V_s: Tensor
    b_s: Tensor
    theta: Tensor   # K x F_in x C_out Chebyshev coefficients
    phi: Tensor     # C_out x C_out x 3 temporal kernel


@dataclass
class ComponentParams:
    blocks: list[BlockParams]
    fc_w: Tensor    # (channels * T_in) x t_p, shared across stations
    fc_b: Tensor    # t_p


@dataclass
class ModelParams:
    components: dict[str, ComponentParams]
    fusion: dict[str, Tensor]   # per-component N x t_p mixing weights

    def named_tensors(self):
        """Deterministic (name, tensor) ordering; drives init, the
        optimizer state, and checkpoint layout."""
        for comp in COMPONENT_ORDER:
            if comp not in self.components:
                continue
            cp = self.components[comp]
            for r, blk in enumerate(cp.blocks):
                for fname in _BLOCK_FIELDS:
                    yield f"{comp}.block{r}.{fname}", getattr(blk, fname)
            yield f"{comp}.fc_w", cp.fc_w
            yield f"{comp}.fc_b", cp.fc_b
        for comp in COMPONENT_ORDER:
            if comp in self.fusion:
                yield f"fusion.{comp}", self.fusion[comp]

    def zero_grads(self):
        for _, t in self.named_tensors():
            t.grad = None

    def copy(self) -> "ModelParams":
        comps = {
            name: ComponentParams(
                blocks=[BlockParams(**{f: Tensor(getattr(b, f).data.copy(), True)
                                       for f in _BLOCK_FIELDS}) for b in cp.blocks],
                fc_w=Tensor(cp.fc_w.data.copy(), True),
                fc_b=Tensor(cp.fc_b.data.copy(), True),
            )
            for name, cp in self.components.items()
        }
        fusion = {name: Tensor(t.data.copy(), True) for name, t in self.fusion.items()}
        return ModelParams(components=comps, fusion=fusion)


@dataclass
class GraphArtifacts:
    """Constants derived from the graph: Chebyshev basis matrices of the
    scaled Laplacian, and the spatial weight matrix."""

    cheb_t: list[np.ndarray]
    weights: SpatialWeights


def chebyshev_basis(scaled_lap: np.ndarray, k_cheb: int) -> list[np.ndarray]:
    """T_0..T_{K-1} of the scaled Laplacian via the standard recurrence."""
    n = scaled_lap.shape[0]
    basis = [np.eye(n)]
    if k_cheb > 1:
        basis.append(scaled_lap.copy())
    for _ in range(2, k_cheb):
        basis.append(2.0 * scaled_lap @ basis[-1] - basis[-2])
    return basis


def graph_artifacts(graph: RailGraph, cfg: ModelConfig) -> GraphArtifacts:
    weights = spatial_weight_matrix(graph, frequency_aware=cfg.use_frequency_weight)
    return GraphArtifacts(
        cheb_t=chebyshev_basis(scaled_laplacian(graph), cfg.k_cheb),
        weights=weights,
    )


def component_lengths(cfg: ModelConfig, wcfg: WindowConfig) -> dict[str, int]:
    lengths = {"recent": wcfg.t_h, "daily": wcfg.t_d, "weekly": wcfg.t_w}
    return {name: t for name, t in lengths.items() if t > 0}


def init_params(cfg: ModelConfig, wcfg: WindowConfig, n_stations: int, seed: int = 0) -> ModelParams:
    """Seeded uniform init in +/- sqrt(1/fan_in) per tensor."""
    rng = np.random.default_rng(seed)
    lengths = component_lengths(cfg, wcfg)

    def draw(shape, fan_in):
        bound = np.sqrt(1.0 / max(fan_in, 1))
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    components = {}
    for comp in COMPONENT_ORDER:
        if comp not in lengths:
            continue
        t_in = lengths[comp]
        blocks = []
        f_in = cfg.n_features
        for _ in range(cfg.n_blocks):
            blocks.append(BlockParams(
                U1=draw((n_stations,), n_stations),
                U2=draw((f_in, n_stations), f_in),
                U3=draw((f_in,), f_in),
                V_t=draw((t_in, t_in), t_in),
                b_t=draw((t_in, t_in), t_in),
                W1=draw((t_in,), t_in),
                W2=draw((f_in, t_in), f_in),
                W3=draw((f_in,), f_in),
                V_s=draw((n_stations, n_stations), n_stations),
                b_s=draw((n_stations, n_stations), n_stations),
                theta=draw((cfg.k_cheb, f_in, cfg.channels), cfg.k_cheb * f_in),
                phi=draw((cfg.channels, cfg.channels, 3), cfg.channels * 3),
            ))
            f_in = cfg.channels
        components[comp] = ComponentParams(
            blocks=blocks,
            fc_w=draw((cfg.channels * t_in, cfg.t_p), cfg.channels * t_in),
            fc_b=draw((cfg.t_p,), cfg.channels * t_in),
        )
    fusion = {comp: draw((n_stations, cfg.t_p), len(lengths)) for comp in lengths}
    return ModelParams(components=components, fusion=fusion)


def _check_finite(name: str, data: np.ndarray):
    if not np.isfinite(data).all():
        raise ModelError(f"non-finite values in {name}; training has diverged")


def temporal_attention(x: Tensor, p: BlockParams) -> tuple[Tensor, Tensor]:
    """Row-stochastic T x T attention and the temporally reweighted input.

    Scores follow V_t . sigmoid(((X^T U1) U2)(U3 X) + b_t); the softmax is
    over rows. The input is reweighted by right-multiplying its (N*F) x T
    flattening with the transposed attention matrix.
    """
    n, f, t = x.data.shape
    lhs = ad.reshape(ad.matmul(ad.reshape(ad.transpose(x, (2, 1, 0)), (t * f, n)), p.U1), (t, f))
    lhs = ad.matmul(lhs, p.U2)                                              # T x N
    rhs = ad.reshape(ad.matmul(p.U3, ad.reshape(ad.transpose(x, (1, 0, 2)), (f, n * t))), (n, t))
    scores = ad.matmul(p.V_t, ad.sigmoid(ad.add(ad.matmul(lhs, rhs), p.b_t)))
    _check_finite("temporal attention scores", scores.data)
    z_prime = ad.softmax_rows(scores)
    x_flat = ad.matmul(ad.reshape(x, (n * f, t)), ad.transpose(z_prime, (1, 0)))
    return z_prime, ad.reshape(x_flat, (n, f, t))


def spatial_attention(x_z: Tensor, p: BlockParams, weights: SpatialWeights) -> Tensor:
    """Row-stochastic N x N attention, gated by the edge weight matrix."""
    n, f, t = x_z.data.shape
    if weights.matrix.shape[0] != n:
        raise ModelError("spatial weights built for a different station count")
    lhs = ad.reshape(ad.matmul(ad.reshape(x_z, (n * f, t)), p.W1), (n, f))
    lhs = ad.matmul(lhs, p.W2)                                              # N x T
    rhs = ad.reshape(ad.matmul(p.W3, ad.reshape(ad.transpose(x_z, (1, 0, 2)), (f, n * t))), (n, t))
    corr = ad.matmul(p.V_s, ad.sigmoid(ad.add(ad.matmul(lhs, ad.transpose(rhs, (1, 0))), p.b_s)))
    _check_finite("spatial attention scores", corr.data)
    return ad.softmax_rows(ad.mul(corr, Tensor(weights.matrix)))


def cheb_graph_conv(x: Tensor, q: Tensor, cheb_t: list[np.ndarray], theta: Tensor) -> Tensor:
    """Sum over k of (T_k o Q) X theta_k, applied per time slice.

    The attention matrix modulates each Chebyshev basis term elementwise;
    the result is linear in the input (activations live outside this op).
    """
    n, f, t = x.data.shape
    k_cheb = len(cheb_t)
    if theta.data.shape[0] != k_cheb:
        raise ModelError(
            f"theta has {theta.data.shape[0]} Chebyshev terms, basis has {k_cheb}")
    out = None
    x_flat = ad.reshape(x, (n, f * t))
    for k in range(k_cheb):
        gated = ad.mul(Tensor(cheb_t[k]), q)                    # N x N
        mixed = ad.reshape(ad.matmul(gated, x_flat), (n, f, t))  # aggregate neighbors
        mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1)), (n * t, f))
        term = ad.reshape(ad.matmul(mixed, ad.index0(theta, k)), (n, t, -1))
        out = term if out is None else ad.add(out, term)
    return ad.transpose(out, (0, 2, 1))                          # N x C_out x T


def temporal_conv(x: Tensor, phi: Tensor) -> Tensor:
    """1x3 same-padded convolution along time, then ReLU."""
    return ad.relu(ad.conv_time(x, phi))


def block_forward(x: Tensor, p: BlockParams, art: GraphArtifacts) -> Tensor:
    _, x_t = temporal_attention(x, p)
    q = spatial_attention(x_t, p, art.weights)
    h = ad.relu(cheb_graph_conv(x_t, q, art.cheb_t, p.theta))
    return temporal_conv(h, p.phi)


def component_forward(x_c: Tensor, cp: ComponentParams, art: GraphArtifacts) -> Tensor:
    """Encoder blocks followed by the shared fully connected head."""
    h = x_c
    for blk in cp.blocks:
        h = block_forward(h, blk, art)
    n = h.data.shape[0]
    flat = ad.reshape(h, (n, -1))
    return ad.add(ad.matmul(flat, cp.fc_w), cp.fc_b)


def fuse(outputs: dict[str, Tensor], fusion: dict[str, Tensor], use_final_relu: bool) -> Tensor:
    total = None
    for comp in COMPONENT_ORDER:
        if comp not in outputs:
            continue
        term = ad.mul(fusion[comp], outputs[comp])
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ModelError("no components enabled")
    return ad.relu(total) if use_final_relu else total


def forward(sample: Sample, params: ModelParams, cfg: ModelConfig,
            art: GraphArtifacts) -> Tensor:
    """Full forward pass on one sample; returns the N x t_p prediction."""
    chans = list(cfg.features)
    windows = {
        "recent": sample.x_recent,
        "daily": sample.x_daily,
        "weekly": sample.x_weekly,
    }
    outputs = {}
    for comp, cp in params.components.items():
        x_np = windows[comp][:, chans, :]
        outputs[comp] = component_forward(Tensor(x_np), cp, art)
    return fuse(outputs, params.fusion, cfg.use_final_relu)


def predict(sample: Sample, params: ModelParams, cfg: ModelConfig,
            art: GraphArtifacts) -> np.ndarray:
    return forward(sample, params, cfg, art).data


def backward(loss: Tensor, params: ModelParams) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every learnable tensor.

    Raises naming the offending tensor if any gradient is non-finite.
    Tensors unreachable from the loss get zero gradients.
    """
    ad.backward(loss)
    grads = {}
    for name, t in params.named_tensors():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise ModelError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads


_CKPT_MAGIC = b"RDCKPT1\n"


def save_checkpoint(params: ModelParams, cfg: ModelConfig, wcfg: WindowConfig,
                    n_stations: int, path) -> None:
    """Single binary file: header JSON (config echo + shapes manifest)
    followed by flat float64 payloads; a `.json` manifest sits alongside."""
    named = list(params.named_tensors())
    header = {
        "model": cfg.as_dict(),
        "window": {"q": wcfg.q, "t_p": wcfg.t_p, "t_h": wcfg.t_h,
                   "t_d": wcfg.t_d, "t_w": wcfg.t_w},
        "n_stations": n_stations,
        "tensors": [{"name": name, "shape": list(t.data.shape)} for name, t in named],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        np.array([len(blob)], dtype="<i8").tofile(f)
        f.write(blob)
        for _, t in named:
            t.data.astype("<f8").tofile(f)
    with open(str(path) + ".json", "w") as f:
        json.dump(header, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, WindowConfig, int]:
    with open(path, "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        (hlen,) = np.fromfile(f, dtype="<i8", count=1)
        header = json.loads(f.read(int(hlen)).decode())
        payload = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload[spec["name"]] = np.fromfile(f, dtype="<f8", count=count).reshape(shape)

    cfg = ModelConfig.from_dict(header["model"])
    wcfg = WindowConfig(**header["window"])
    n_stations = int(header["n_stations"])
    params = init_params(cfg, wcfg, n_stations, seed=0)
    for name, t in params.named_tensors():
        if name not in payload:
            raise ModelError(f"checkpoint missing tensor {name}")
        if payload[name].shape != t.data.shape:
            raise ModelError(f"checkpoint tensor {name} has shape "
                             f"{payload[name].shape}, expected {t.data.shape}")
        t.data = payload[name]
    return params, cfg, wcfg, n_stations

"""Query-activation model: instance queries from surround-view features,
dual-view positional embeddings, and a single-layer attention decode head.

Three stages, each optional so ablations can toggle them:

  - cross_view_activation: per-view instance maps sigmoid(conv(F_pv)) are
    multiplied against the flattened view features, passed through a linear
    layer, stacked across views, and mixed down to one query per predicted
    instance. Added to the learned initial queries.
  - dual_view_embedding: the BEV features are downsampled by a two-layer
    conv stack, projected per category into per-camera pixel canvases
    through the rig geometry (max on pixel collisions), and summed with a
    conv of the PV features into heatmap logits. A 1x1 conv pooled over
    pixels and views yields one embedding vector broadcast to every query
    slot; the downsampled map is also upsampled back and fused 1x1 with the
    BEV features.
  - decode_vectors: one layer of scaled dot-product cross-attention from
    (queries + embeddings) onto the flattened enhanced BEV features, with a
    sigmoid point head scaled to the grid ranges and a class head pooled
    per instance.

The mixing weights, embedding conv, and fusion conv are initialized so the
full model starts exactly equivalent to the plain decode stub (queries Q0,
embeddings E0, unmodified BEV features).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import CameraRig, in_image, project
from .errors import ContractError, IOFormatError
from .map_core import (
    BevGrid,
    CATEGORIES,
    N_CATEGORIES,
    VectorMap,
    grid_from_dict,
    grid_to_dict,
    make_instance,
)
from .rng import Rng
from . import tensor as T
from .tensor import Tensor, load_tensors, save_tensors


@dataclass(frozen=True)
class ModelConfig:
    n_instances: int = 50          # predicted map elements
    n_points: int = 20             # points per element
    n_active_per_view: int = 25    # activated instances per camera view
    channels: int = 16
    downsample: int = 2
    feature_hw: tuple[int, int] = (16, 16)
    image_hw: tuple[int, int] = (64, 64)
    grid: BevGrid = field(default_factory=BevGrid)
    seed: int = 0
    use_instance_activation: bool = True
    use_dual_embedding: bool = True
    use_raster_loss: bool = True
    pooling: str = "mean"          # reduction from heatmap to query embedding
    heatmap_sigma: float = 3.0
    heatmap_alpha: float = 2.0
    heatmap_beta: float = 4.0
    heatmap_binarize: bool = False
    line_width: int = 1
    fill_closed: bool = True
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    cost_class_weight: float = 2.0
    cost_points_weight: float = 5.0
    gamma_heatmap: float = 0.1
    gamma_raster: float = 15.0
    z_ground: float = 0.0

    def __post_init__(self) -> None:
        if self.image_hw[0] % self.feature_hw[0] or self.image_hw[1] % self.feature_hw[1]:
            raise ContractError("image size must be an integer multiple of "
                                "the feature size")
        if self.grid.height % self.downsample or self.grid.width % self.downsample:
            raise ContractError("grid cells must be divisible by downsample")
        if self.pooling != "mean":
            raise ContractError(f"unsupported pooling mode {self.pooling!r}")

    @property
    def upsample_factor(self) -> int:
        return self.image_hw[0] // self.feature_hw[0]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "n_instances", "n_points", "n_active_per_view", "channels",
            "downsample", "seed", "use_instance_activation",
            "use_dual_embedding", "use_raster_loss", "pooling",
            "heatmap_sigma", "heatmap_alpha", "heatmap_beta",
            "heatmap_binarize", "line_width", "fill_closed", "focal_alpha",
            "focal_gamma", "cost_class_weight", "cost_points_weight",
            "gamma_heatmap", "gamma_raster", "z_ground")}
        d["feature_hw"] = list(self.feature_hw)
        d["image_hw"] = list(self.image_hw)
        d["grid"] = grid_to_dict(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            kwargs = dict(d)
            kwargs["feature_hw"] = tuple(kwargs["feature_hw"])
            kwargs["image_hw"] = tuple(kwargs["image_hw"])
            kwargs["grid"] = grid_from_dict(kwargs["grid"])
            return cls(**kwargs)
        except (KeyError, TypeError, ValueError) as e:
            raise IOFormatError(f"malformed model config: {e}") from e


def toy_config(**overrides) -> ModelConfig:
    """Small shapes for gradient checks and fast overfit runs."""
    base = dict(
        n_instances=6, n_points=8, n_active_per_view=4, channels=16,
        downsample=2, feature_hw=(16, 16), image_hw=(64, 64),
        grid=BevGrid(width=20, height=40), seed=0)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    scale = 1.0 / math.sqrt(max(1, fan_in))
    vals = [(2.0 * rng.uniform() - 1.0) * scale
            for _ in range(int(np.prod(shape)))]
    return np.array(vals).reshape(shape)


def _slot_reference_init(rng: Rng, n_m: int, n_p: int) -> np.ndarray:
    """Pre-sigmoid reference offsets: one cluster center per instance with a
    small per-point jitter, so initial predictions spread over the grid
    instead of collapsing at its center. Cuts assignment churn early in
    training."""
    b = np.zeros((n_m * n_p, 2))
    for m in range(n_m):
        cx = (2.0 * rng.uniform() - 1.0) * 1.5
        cy = (2.0 * rng.uniform() - 1.0) * 1.5
        for p in range(n_p):
            b[m * n_p + p, 0] = cx + (2.0 * rng.uniform() - 1.0) * 0.4
            b[m * n_p + p, 1] = cy + (2.0 * rng.uniform() - 1.0) * 0.4
    return b


def init_params(cfg: ModelConfig, n_cameras: int) -> dict[str, Tensor]:
    """Deterministic seeded init. The cross-view mixing weights, the
    embedding conv, and the fusion conv start at exact baseline equivalence
    (zero activation delta, zero embedding delta, identity feature fusion).
    Heatmap and class head biases start negative so sigmoid outputs begin
    at low probability (the usual focal-loss init), and queries/embeddings
    are unit scale so the attention slots differentiate early."""
    c = cfg.channels
    nmp = cfg.n_active_per_view
    n_m, n_p = cfg.n_instances, cfg.n_points
    nc = N_CATEGORIES
    if n_cameras * nmp < n_m:
        raise ContractError("n_cameras * n_active_per_view must be >= n_instances")
    rng = Rng(cfg.seed)
    fuse_w = np.zeros((1, 1, 2 * c, c))
    for i in range(c):
        fuse_w[0, 0, i, i] = 1.0
    spec: dict[str, np.ndarray] = {
        "act.conv_w": _uniform_init(rng, (3, 3, c, nmp), 9 * c),
        "act.conv_b": _uniform_init(rng, (nmp,), 9 * c),
        "act.lin_w": _uniform_init(rng, (c, c), c),
        "act.lin_b": _uniform_init(rng, (c,), c),
        "act.mix_w": np.zeros((n_cameras * nmp, n_m)),
        "emb.down1_w": _uniform_init(rng, (3, 3, c, c), 9 * c),
        "emb.down1_b": _uniform_init(rng, (c,), 9 * c),
        "emb.down2_w": _uniform_init(rng, (3, 3, c, c), 9 * c),
        "emb.down2_b": _uniform_init(rng, (c,), 9 * c),
        "emb.cat_w": _uniform_init(rng, (1, 1, c, nc), c),
        "emb.cat_b": _uniform_init(rng, (nc,), c),
        "emb.pv_w": _uniform_init(rng, (1, 1, c, nc), c),
        "emb.pv_b": np.full((nc,), -1.1),
        "emb.canvas_w": _uniform_init(rng, (1, 1, nc, nc), nc),
        "emb.canvas_b": np.full((nc,), -1.1),
        "emb.emb_w": np.zeros((1, 1, nc, c)),
        "emb.emb_b": np.zeros((c,)),
        "emb.fuse_w": fuse_w,
        "emb.fuse_b": np.zeros((c,)),
        "query.q0": _uniform_init(rng, (n_m * n_p, c), 1),
        "query.e0": _uniform_init(rng, (n_m * n_p, c), 1),
        "dec.key_w": _uniform_init(rng, (c, c), c),
        "dec.key_b": _uniform_init(rng, (c,), c),
        "dec.val_w": _uniform_init(rng, (c, c), c),
        "dec.val_b": _uniform_init(rng, (c,), c),
        "dec.point_w": _uniform_init(rng, (c, 2), c),
        "dec.point_b": _uniform_init(rng, (2,), c),
        "dec.point_slot_b": _slot_reference_init(rng, n_m, n_p),
        "dec.cls_w": _uniform_init(rng, (c, nc), c),
        "dec.cls_b": np.full((nc,), -2.0),
    }
    return {k: Tensor(v, requires_grad=True) for k, v in spec.items()}


def positional_features(grid_h: int, grid_w: int, channels: int) -> np.ndarray:
    """Fixed sinusoidal embeddings of cell centers, row-major [H*W, C];
    even channels encode x, odd channels y, at geometric frequencies."""
    out = np.zeros((grid_h * grid_w, channels))
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    ny = (rows + 0.5) / grid_h
    nx = (cols + 0.5) / grid_w
    half = channels // 2
    for k in range(half):
        freq = (2.0 ** (k // 2)) * math.pi
        phase = 0.0 if k % 2 == 0 else math.pi / 2.0
        out[:, 2 * k] = np.sin(freq * nx + phase)
        out[:, 2 * k + 1] = np.sin(freq * ny + phase)
    return out


@dataclass(frozen=True)
class ProjectionMapping:
    """Precomputed coarse-BEV-cell to camera-pixel correspondences, in a
    fixed (camera, row, col) scan order."""
    view_idx: np.ndarray
    pix_row: np.ndarray
    pix_col: np.ndarray
    src_row: np.ndarray
    src_col: np.ndarray


def build_projection_mapping(rig: CameraRig, grid: BevGrid, downsample: int,
                             z_ground: float = 0.0) -> ProjectionMapping:
    rows_c = grid.height // downsample
    cols_c = grid.width // downsample
    entries = []
    for vi, cam in enumerate(rig.cameras):
        for i in range(rows_c):
            for j in range(cols_c):
                x = grid.x_range[0] + (j + 0.5) * downsample * grid.cell_w
                y = grid.y_range[0] + (i + 0.5) * downsample * grid.cell_h
                res = project(cam, (x, y, z_ground))
                if res is None:
                    continue
                u, v, _ = res
                if not in_image(cam, u, v):
                    continue
                entries.append((vi, int(math.floor(v)), int(math.floor(u)), i, j))
    if entries:
        arr = np.array(entries, dtype=np.int64)
    else:
        arr = np.zeros((0, 5), dtype=np.int64)
    return ProjectionMapping(view_idx=arr[:, 0], pix_row=arr[:, 1],
                             pix_col=arr[:, 2], src_row=arr[:, 3],
                             src_col=arr[:, 4])


# ---------------------------------------------------------------------------
# forward stages
# ---------------------------------------------------------------------------

def cross_view_activation(f_pv: Tensor, params: dict[str, Tensor],
                          cfg: ModelConfig) -> Tensor:
    """[N, Hp, Wp, C] surround-view features -> [n_instances, C] queries."""
    n, hp, wp, c = f_pv.shape
    if c != cfg.channels or (hp, wp) != cfg.feature_hw:
        raise ContractError(f"feature shape {f_pv.shape} does not match config")
    act = T.sigmoid(T.conv2d(f_pv, params["act.conv_w"], params["act.conv_b"],
                             stride=1, padding=1))
    per_view = []
    for i in range(n):
        a = T.transpose2d(T.reshape(T.take_axis0(act, i),
                                    (hp * wp, cfg.n_active_per_view)))
        f = T.reshape(T.take_axis0(f_pv, i), (hp * wp, c))
        q_raw = T.matmul(a, f)  # [n_active_per_view, C]
        per_view.append(T.linear(q_raw, params["act.lin_w"], params["act.lin_b"]))
    stacked = per_view[0]
    for q in per_view[1:]:
        stacked = T.concat(stacked, q, axis=0)
    return T.matmul(T.transpose2d(params["act.mix_w"]), stacked)


def dual_view_embedding(f_pv: Tensor, f_bev: Tensor,
                        mapping: ProjectionMapping,
                        params: dict[str, Tensor],
                        cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (query embedding delta [n_instances*n_points, C],
    enhanced BEV features [H, W, C], heatmap logits [N, H_I, W_I, N_c])."""
    n = f_pv.shape[0]
    h, w, c = f_bev.shape
    d = cfg.downsample
    fb4 = T.reshape(f_bev, (1, h, w, c))
    m1 = T.softplus(T.conv2d(fb4, params["emb.down1_w"], params["emb.down1_b"],
                             stride=d, padding=1))
    fbm4 = T.conv2d(m1, params["emb.down2_w"], params["emb.down2_b"],
                    stride=1, padding=1)  # [1, H/d, W/d, C]
    cat4 = T.conv2d(fbm4, params["emb.cat_w"], params["emb.cat_b"])
    src = T.reshape(cat4, (h // d, w // d, N_CATEGORIES))
    canvas = T.scatter_max_project(
        src, mapping.view_idx, mapping.pix_row, mapping.pix_col,
        mapping.src_row, mapping.src_col, n, cfg.image_hw)
    pv_heat = T.conv2d(f_pv, params["emb.pv_w"], params["emb.pv_b"])
    pv_up = T.upsample_nearest(pv_heat, cfg.upsample_factor)
    canvas_heat = T.conv2d(canvas, params["emb.canvas_w"], params["emb.canvas_b"])
    heat_logits = T.add(pv_up, canvas_heat)  # [N, H_I, W_I, N_c]
    emb_map = T.conv2d(heat_logits, params["emb.emb_w"], params["emb.emb_b"])
    pooled = T.mean_pool_spatial(emb_map)        # [N, C]
    e_vec = T.mean_axis(pooled, 0)               # [C], view-order invariant
    e_delta = T.tile_vector(e_vec, cfg.n_instances * cfg.n_points)
    fbm = T.reshape(fbm4, (h // d, w // d, c))
    fused = T.concat(f_bev, T.upsample_nearest(fbm, d), axis=2)
    enhanced = T.reshape(
        T.conv2d(T.reshape(fused, (1, h, w, 2 * c)),
                 params["emb.fuse_w"], params["emb.fuse_b"]),
        (h, w, c))
    return e_delta, enhanced, heat_logits


def decode_vectors(queries: Tensor, pos_emb: Tensor, f_bev: Tensor,
                   cell_pos: np.ndarray, params: dict[str, Tensor],
                   cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """One cross-attention layer from (queries + embeddings) onto the BEV
    cells (keys and values both read the cell features tagged with the fixed
    cell-center coordinate embeddings), then a sigmoid point head scaled to
    the grid ranges and a class head mean-pooled over each instance's point
    slots."""
    h, w, c = f_bev.shape
    x = T.add(T.reshape(f_bev, (h * w, c)), cell_pos)
    keys = T.linear(x, params["dec.key_w"], params["dec.key_b"])
    values = T.linear(x, params["dec.val_w"], params["dec.val_b"])
    scores = T.mul(T.matmul(T.add(queries, pos_emb), T.transpose2d(keys)),
                   1.0 / math.sqrt(c))
    attn = T.softmax(scores, axis=1)
    attended = T.matmul(attn, values)  # [n_instances*n_points, C]
    # per-slot reference offsets (zero at init) let each query slot place
    # its point independently of the shared head weights
    pre = T.add(T.linear(attended, params["dec.point_w"],
                         params["dec.point_b"]),
                params["dec.point_slot_b"])
    pn = T.sigmoid(pre)
    grid = cfg.grid
    span = np.array([grid.x_range[1] - grid.x_range[0],
                     grid.y_range[1] - grid.y_range[0]])
    origin = np.array([grid.x_range[0], grid.y_range[0]])
    coords = T.add(T.mul(pn, span), origin)
    points = T.reshape(coords, (cfg.n_instances, cfg.n_points, 2))
    inst_feat = T.mean_axis(
        T.reshape(attended, (cfg.n_instances, cfg.n_points, c)), 1)
    class_logits = T.linear(inst_feat, params["dec.cls_w"], params["dec.cls_b"])
    return points, class_logits


@dataclass
class ModelOutput:
    points: Tensor                  # [n_instances, n_points, 2] meters
    class_logits: Tensor            # [n_instances, N_CATEGORIES]
    heat_logits: Optional[Tensor]   # [N, H_I, W_I, N_CATEGORIES] or None
    queries: Tensor
    pos_emb: Tensor
    f_enhanced: Tensor


class VectorMapModel:
    """Config + rig + parameters, with a forward pass over one scene."""

    def __init__(self, cfg: ModelConfig, rig: CameraRig,
                 params: Optional[dict[str, Tensor]] = None):
        if rig.cameras[0].image_hw != cfg.image_hw:
            raise ContractError("rig image size does not match model config")
        self.cfg = cfg
        self.rig = rig
        self.params = params if params is not None else init_params(cfg, len(rig))
        self.mapping = build_projection_mapping(rig, cfg.grid, cfg.downsample,
                                                cfg.z_ground)
        self.cell_pos = positional_features(cfg.grid.height, cfg.grid.width,
                                            cfg.channels)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def trainable(self) -> list[Tensor]:
        names = self._active_param_names()
        return [self.params[k] for k in names]

    def _active_param_names(self) -> list[str]:
        names = [k for k in self.params if k.startswith(("query.", "dec."))]
        if self.cfg.use_instance_activation:
            names += [k for k in self.params if k.startswith("act.")]
        if self.cfg.use_dual_embedding:
            names += [k for k in self.params if k.startswith("emb.")]
        return names

    def forward(self, f_pv: np.ndarray, f_bev: np.ndarray) -> ModelOutput:
        cfg = self.cfg
        fp = f_pv if isinstance(f_pv, Tensor) else Tensor(f_pv)
        fb = f_bev if isinstance(f_bev, Tensor) else Tensor(f_bev)
        if fp.shape != (len(self.rig),) + cfg.feature_hw + (cfg.channels,):
            raise ContractError(f"PV feature shape {fp.shape} does not match "
                                f"rig/config")
        if fb.shape != (cfg.grid.height, cfg.grid.width, cfg.channels):
            raise ContractError(f"BEV feature shape {fb.shape} does not match "
                                f"grid/config")
        m = cfg.n_instances * cfg.n_points
        if cfg.use_instance_activation:
            q_in = cross_view_activation(fp, self.params, cfg)
            queries = T.add(self.params["query.q0"],
                            T.repeat_rows(q_in, cfg.n_points))
        else:
            queries = self.params["query.q0"]
        heat_logits = None
        if cfg.use_dual_embedding:
            e_delta, f_enh, heat_logits = dual_view_embedding(
                fp, fb, self.mapping, self.params, cfg)
            pos_emb = T.add(self.params["query.e0"], e_delta)
        else:
            pos_emb = self.params["query.e0"]
            f_enh = fb
        points, class_logits = decode_vectors(queries, pos_emb, f_enh,
                                              self.cell_pos, self.params, cfg)
        return ModelOutput(points=points, class_logits=class_logits,
                           heat_logits=heat_logits, queries=queries,
                           pos_emb=pos_emb, f_enhanced=f_enh)

    def predict_map(self, out: ModelOutput, frame_id: str = "") -> VectorMap:
        """Argmax category per instance; confidence is that category's
        sigmoid score."""
        logits = out.class_logits.data
        pts = out.points.data
        instances = []
        for i in range(self.cfg.n_instances):
            cls = int(np.argmax(logits[i]))
            z = logits[i, cls]
            if z >= 0:
                conf = 1.0 / (1.0 + math.exp(-z))
            else:
                e = math.exp(z)
                conf = e / (1.0 + e)
            instances.append(make_instance(pts[i], CATEGORIES[cls], conf))
        return VectorMap(instances=tuple(instances), frame_id=frame_id)

    def save(self, path) -> None:
        save_tensors(path, {k: v.data for k, v in self.params.items()})

    def load(self, path) -> None:
        loaded = load_tensors(path)
        if set(loaded) != set(self.params):
            raise IOFormatError("checkpoint parameter names do not match model")
        for k, v in loaded.items():
            if v.shape != self.params[k].data.shape:
                raise IOFormatError(f"checkpoint shape mismatch for {k}")
            self.params[k].data = v

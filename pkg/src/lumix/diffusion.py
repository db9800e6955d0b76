"""Diffusion transformer over stacked property streams with flow matching.

The model runs every property of a scene through one shared transformer
whose attention couples (or does not couple) the streams according to the
configured variant, with optional low-rank adapters on the K/V projections.
Latents are [M, 3, S, S] stacks in [-1, 1]; the depth map rides in a
replicated 3-channel representation so the patch embedding is shared.

Training regresses the velocity target eps - z along the linear path
z_t = (1 - t) z + t eps, with an independent timestep per property.
Sampling integrates the flow with plain Euler steps from t = 1 to 0;
decomposition clamps chosen properties to their clean latents at t = 0
throughout.

Conditioning (timestep + scene descriptor) enters through per-stream
layer-scale/shift modulation whose projections start at zero, so a fresh
model predicts exactly zero velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionBlockWeights, AttentionConfig
from .attention import forward as attention_forward
from .config import ConfigError, RunConfig
from .lora import LoraAdapter, LoraVariant, default_r2
from .rng import child_rng
from .scenes import MAX_DEPTH, SHAPES, IntrinsicSample, SceneDescriptor
from .tensor import Tape, Tensor

__all__ = [
    "DiTConfig",
    "TrainConfig",
    "TrainingDiverged",
    "DiT",
    "descriptor_indices",
    "normalize_property",
    "denormalize_property",
    "flow_matching_loss",
    "train",
    "TrainResult",
    "sample",
    "sample_batch",
    "decompose",
    "decompose_batch",
]

MAX_OBJECTS = 4
_AMBIENT_ORDER = ("low", "mid", "high")
_DESC_VOCAB = {"count": MAX_OBJECTS, "palette": 16, "light": 8, "ambient": 3}


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class DiTConfig:
    image_size: int
    patch_size: int
    d: int
    heads: int
    depth: int
    properties: tuple[str, ...]
    attention: str
    lora: str
    lora_rank: int
    lora_rank2: int
    adapt_q: bool
    regime: str
    property_embedding: bool

    @staticmethod
    def from_run(cfg: RunConfig) -> "DiTConfig":
        return DiTConfig(
            image_size=cfg.image_size, patch_size=cfg.patch_size, d=cfg.d,
            heads=cfg.heads, depth=cfg.depth, properties=cfg.properties,
            attention=cfg.attention, lora=cfg.lora, lora_rank=cfg.lora_rank,
            lora_rank2=cfg.lora_rank2, adapt_q=cfg.adapt_q, regime=cfg.regime,
            property_embedding=cfg.use_property_embedding(),
        )

    @property
    def m(self) -> int:
        return len(self.properties)

    @property
    def color_index(self) -> int:
        return self.properties.index("color")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def lora_variant(self) -> LoraVariant | None:
        if self.lora == "none":
            return None
        r1, r2 = self.lora_rank, self.lora_rank2
        if self.lora == "separate":
            return LoraVariant.separate(r1)
        if self.lora == "fused":
            return LoraVariant.fused(r1)
        if self.lora == "hybrid":
            return LoraVariant.hybrid(r1, r2 or default_r2(r1))
        return LoraVariant.tensor(r1, r2 or r1)

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(d=self.d, h=self.heads, m=self.m,
                               color_index=self.color_index, variant=self.attention)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    lr: float
    seed: int

    @staticmethod
    def from_run(cfg: RunConfig) -> "TrainConfig":
        return TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                           lr=cfg.lr, seed=cfg.seed)


# ---------------------------------------------------------------------------
# fixed (non-trainable) embeddings


def _sincos(pos: np.ndarray, dim: int) -> np.ndarray:
    half = (dim + 1) // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = np.asarray(pos, dtype=np.float64)[..., None] * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    return emb[..., :dim].astype(np.float32)


def _pos_embed_2d(grid: int, dim: int) -> np.ndarray:
    dx = dim // 2
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    ex = _sincos(xs.reshape(-1), dx)
    ey = _sincos(ys.reshape(-1), dim - dx)
    return np.concatenate([ex, ey], axis=-1)  # [L, dim]


def descriptor_indices(descriptors: list[SceneDescriptor]) -> dict[str, np.ndarray]:
    """Integer lookup indices per embedding table, one row per scene."""
    out = {
        "count": np.array([d.object_count - 1 for d in descriptors]),
        "palette": np.array([d.palette for d in descriptors]),
        "light": np.array([d.light for d in descriptors]),
        "ambient": np.array([_AMBIENT_ORDER.index(d.ambient) for d in descriptors]),
    }
    for j in range(MAX_OBJECTS):
        out[f"shape{j}"] = np.array(
            [1 + SHAPES.index(d.shapes[j]) if j < len(d.shapes) else 0 for d in descriptors]
        )
    return out


# ---------------------------------------------------------------------------
# property image <-> latent


def normalize_property(s: IntrinsicSample, name: str) -> np.ndarray:
    """[3, S, S] latent in [-1, 1]; depth is scaled by MAX_DEPTH and replicated."""
    img = getattr(s, name, None)
    if img is None:
        raise ValueError(f"sample is missing the {name} image")
    if name == "depth":
        flat = np.asarray(img, dtype=np.float32) / MAX_DEPTH * 2.0 - 1.0
        return np.repeat(flat[None], 3, axis=0)
    img = np.asarray(img, dtype=np.float32)
    if name == "normal":
        return img.transpose(2, 0, 1)
    return img.transpose(2, 0, 1) * 2.0 - 1.0


def denormalize_property(name: str, latent: np.ndarray) -> np.ndarray:
    """Invert normalize_property into [0, 1] maps ([H, W] for depth)."""
    if name == "depth":
        return np.clip((latent.mean(axis=0) + 1.0) / 2.0, 0.0, 1.0)
    img = latent.transpose(1, 2, 0)
    return np.clip((img + 1.0) / 2.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# the model


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(np.float32)


class DiT:
    """Patch transformer over [B, M, 3, S, S] latent stacks."""

    def __init__(self, cfg: DiTConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        d, pd = cfg.d, cfg.patch_dim

        def reg(name: str, arr: np.ndarray) -> Tensor:
            t = Tensor(arr)
            self.params[name] = t
            return t

        def init(name: str):
            return child_rng(seed, "init", name)

        reg("base/patch/w", _uniform(init("base/patch/w"), pd, (pd, d)))
        reg("base/patch/b", np.zeros(d, np.float32))
        if cfg.property_embedding:
            reg("base/prop_embed",
                (init("base/prop_embed").standard_normal((cfg.m, d)) * 0.02).astype(np.float32))
        reg("base/time/w1", _uniform(init("base/time/w1"), d, (d, d)))
        reg("base/time/b1", np.zeros(d, np.float32))
        reg("base/time/w2", _uniform(init("base/time/w2"), d, (d, d)))
        reg("base/time/b2", np.zeros(d, np.float32))
        for key, vocab in _DESC_VOCAB.items():
            reg(f"base/desc/{key}",
                (init(f"base/desc/{key}").standard_normal((vocab, d)) * 0.02).astype(np.float32))
        for j in range(MAX_OBJECTS):
            reg(f"base/desc/shape{j}",
                (init(f"base/desc/shape{j}").standard_normal((1 + len(SHAPES), d)) * 0.02
                 ).astype(np.float32))

        self.blocks: list[AttentionBlockWeights] = []
        variant = cfg.lora_variant()
        for i in range(cfg.depth):
            p = f"base/block{i:02d}"
            for wname in ("wq", "wk", "wv", "wo"):
                reg(f"{p}/attn/{wname}", _uniform(init(f"{p}/attn/{wname}"), d, (d, d)))
            reg(f"{p}/mlp/w1", _uniform(init(f"{p}/mlp/w1"), d, (d, 4 * d)))
            reg(f"{p}/mlp/b1", np.zeros(4 * d, np.float32))
            reg(f"{p}/mlp/w2", _uniform(init(f"{p}/mlp/w2"), 4 * d, (4 * d, d)))
            reg(f"{p}/mlp/b2", np.zeros(d, np.float32))
            reg(f"{p}/mod/w", np.zeros((d, 6 * d), np.float32))
            reg(f"{p}/mod/b", np.zeros(6 * d, np.float32))
            adapters = {}
            if variant is not None:
                projections = ("k", "v", "q") if cfg.adapt_q else ("k", "v")
                for proj in projections:
                    ad = LoraAdapter.create(variant, cfg.m, d, d,
                                            init(f"lora/{proj}/block{i:02d}"))
                    for fname, ft in ad.factors.items():
                        self.params[f"lora/{proj}/block{i:02d}/{fname}"] = ft
                    adapters[proj] = ad
            self.blocks.append(AttentionBlockWeights(
                self.params[f"{p}/attn/wq"], self.params[f"{p}/attn/wk"],
                self.params[f"{p}/attn/wv"], self.params[f"{p}/attn/wo"],
                adapter_k=adapters.get("k"), adapter_v=adapters.get("v"),
                adapter_q=adapters.get("q"),
            ))

        reg("base/final/mod_w", np.zeros((d, 2 * d), np.float32))
        reg("base/final/mod_b", np.zeros(2 * d, np.float32))
        reg("base/final/w", np.zeros((d, pd), np.float32))
        reg("base/final/b", np.zeros(pd, np.float32))

        self.pos_embed = _pos_embed_2d(cfg.grid, d)
        self.attn_cfg = cfg.attention_config()

    # -- persistence -------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
        """Overwrite parameters (filtered by name prefix) from checkpoint arrays."""
        names = [n for n in self.params if n.startswith(prefix)]
        for name in names:
            if name not in tensors:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            arr = tensors[name]
            if tuple(arr.shape) != self.params[name].shape:
                raise ValueError(
                    f"tensor {name!r} is {tuple(arr.shape)}, model expects "
                    f"{self.params[name].shape}"
                )
            self.params[name].data[...] = arr.astype(np.float32)

    @staticmethod
    def from_checkpoint(config_text: str, tensors: dict[str, np.ndarray]) -> "DiT":
        run = RunConfig.parse(config_text)
        model = DiT(DiTConfig.from_run(run), seed=run.seed)
        extra = set(tensors) - set(model.params)
        if extra:
            raise ValueError(f"checkpoint has unexpected tensors: {sorted(extra)[:4]}")
        model.load_state(tensors)
        return model

    def trainable_names(self) -> list[str]:
        if self.cfg.regime == "two_phase":
            return sorted(n for n in self.params if n.startswith("lora/"))
        return sorted(self.params)

    # -- forward -----------------------------------------------------------

    def _patchify(self, z: Tensor) -> Tensor:
        cfg = self.cfg
        b, m = z.shape[0], z.shape[1]
        g, p = cfg.grid, cfg.patch_size
        x = T.reshape(z, (b, m, 3, g, p, g, p))
        x = T.transpose(x, (0, 1, 3, 5, 4, 6, 2))
        return T.reshape(x, (b, m, cfg.tokens, cfg.patch_dim))

    def _unpatchify(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        b, m = x.shape[0], x.shape[1]
        g, p = cfg.grid, cfg.patch_size
        y = T.reshape(x, (b, m, g, g, p, p, 3))
        y = T.transpose(y, (0, 1, 6, 2, 4, 3, 5))
        return T.reshape(y, (b, m, 3, cfg.image_size, cfg.image_size))

    def _conditioning(self, t: np.ndarray, desc_idx: dict[str, np.ndarray],
                      b: int) -> Tensor:
        cfg = self.cfg
        tfeat = Tensor(_sincos(np.asarray(t, np.float64) * 1000.0, cfg.d))  # [B, M, d]
        h = T.add_bias(T.matmul(tfeat, self.params["base/time/w1"]),
                       self.params["base/time/b1"])
        h = T.add_bias(T.matmul(T.silu(h), self.params["base/time/w2"]),
                       self.params["base/time/b2"])
        desc = None
        for key in sorted(_DESC_VOCAB) + [f"shape{j}" for j in range(MAX_OBJECTS)]:
            e = T.embedding(self.params[f"base/desc/{key}"], desc_idx[key])  # [B, d]
            desc = e if desc is None else T.add(desc, e)
        desc = T.repeat_axis(T.reshape(desc, (b, 1, cfg.d)), 1, cfg.m)
        return T.silu(T.add(h, desc))  # [B, M, d]

    def forward(self, z, t, desc_idx: dict[str, np.ndarray]) -> Tensor:
        """Velocity prediction; z is [B, M, 3, S, S], t is [B, M] in [0, 1]."""
        cfg = self.cfg
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, dtype=np.float32))
        expect = (z.shape[0], cfg.m, 3, cfg.image_size, cfg.image_size)
        if z.shape != expect:
            raise T.ShapeError(f"latent stack {z.shape}, model expects {expect}")
        b, d = z.shape[0], cfg.d
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (b, cfg.m):
            raise T.ShapeError(f"timesteps {t.shape}, expected {(b, cfg.m)}")

        x = T.add_bias(T.matmul(self._patchify(z), self.params["base/patch/w"]),
                       self.params["base/patch/b"])
        x = T.add_const(x, self.pos_embed)
        if cfg.property_embedding:
            pe = T.reshape(self.params["base/prop_embed"], (1, cfg.m, d))
            x = T.add_tokens(x, T.repeat_axis(pe, 0, b))

        c = self._conditioning(t, desc_idx, b)

        def chunk(mod: Tensor, i: int) -> Tensor:
            return T.slice_axis(mod, 2, i * d, (i + 1) * d)

        for i, blk in enumerate(self.blocks):
            p = f"base/block{i:02d}"
            mod = T.add_bias(T.matmul(c, self.params[f"{p}/mod/w"]),
                             self.params[f"{p}/mod/b"])  # [B, M, 6d]
            g1, s1, a1 = chunk(mod, 0), chunk(mod, 1), chunk(mod, 2)
            g2, s2, a2 = chunk(mod, 3), chunk(mod, 4), chunk(mod, 5)
            h = T.add_tokens(T.mul_tokens(T.layer_norm(x), T.add_scalar(g1, 1.0)), s1)
            x = T.add(x, T.mul_tokens(attention_forward(self.attn_cfg, blk, h), a1))
            h = T.add_tokens(T.mul_tokens(T.layer_norm(x), T.add_scalar(g2, 1.0)), s2)
            h = T.add_bias(T.matmul(h, self.params[f"{p}/mlp/w1"]),
                           self.params[f"{p}/mlp/b1"])
            h = T.add_bias(T.matmul(T.gelu(h), self.params[f"{p}/mlp/w2"]),
                           self.params[f"{p}/mlp/b2"])
            x = T.add(x, T.mul_tokens(h, a2))

        mod = T.add_bias(T.matmul(c, self.params["base/final/mod_w"]),
                         self.params["base/final/mod_b"])
        g, s = chunk(mod, 0), chunk(mod, 1)
        x = T.add_tokens(T.mul_tokens(T.layer_norm(x), T.add_scalar(g, 1.0)), s)
        x = T.add_bias(T.matmul(x, self.params["base/final/w"]),
                       self.params["base/final/b"])
        return self._unpatchify(x)


# ---------------------------------------------------------------------------
# training


def _stack_sample(s: IntrinsicSample, properties: tuple[str, ...]) -> np.ndarray:
    return np.stack([normalize_property(s, name) for name in properties])


def flow_matching_loss(model, s: IntrinsicSample, rng) -> Tensor:
    """Velocity regression loss for one sample with independent per-property t."""
    props = model.cfg.properties
    z = _stack_sample(s, props)[None]  # [1, M, 3, S, S]
    m = len(props)
    t = np.asarray(rng.uniform(size=(1, m)), dtype=np.float32)
    eps = np.asarray(rng.standard_normal(size=z.shape), dtype=np.float32)
    zt = (1.0 - t[..., None, None, None]) * z + t[..., None, None, None] * eps
    target = Tensor(eps - z)
    v = model.forward(zt, t, descriptor_indices([s.descriptor]))
    err = T.sub(v, target)
    return T.mean_all(T.mul(err, err))


@dataclass
class TrainResult:
    model: DiT
    losses: list[tuple[int, float]]


def train(dit_cfg: DiTConfig, train_cfg: TrainConfig, dataset: list[IntrinsicSample],
          base_tensors: dict[str, np.ndarray] | None = None,
          log=None) -> TrainResult:
    """Adam flow-matching training; deterministic given the seed (one thread)."""
    if not dataset:
        raise ValueError("dataset is empty")
    if dit_cfg.regime == "two_phase":
        if base_tensors is None:
            raise ConfigError("regime two_phase requires a base checkpoint")
    model = DiT(dit_cfg, seed=train_cfg.seed)
    if base_tensors is not None:
        model.load_state(base_tensors, prefix="base/")

    size = dit_cfg.image_size
    for i, s in enumerate(dataset):
        if s.color.shape[0] != size or s.color.shape[1] != size:
            raise ValueError(f"sample {i} is {s.color.shape[:2]}, config wants {size}x{size}")
    data = np.stack([_stack_sample(s, dit_cfg.properties) for s in dataset])
    desc_idx = descriptor_indices([s.descriptor for s in dataset])

    trainable = model.trainable_names()
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    mom = {n: np.zeros(model.params[n].shape, np.float32) for n in trainable}
    vel = {n: np.zeros(model.params[n].shape, np.float32) for n in trainable}

    rb = child_rng(train_cfg.seed, "train", "batch")
    rt = child_rng(train_cfg.seed, "train", "time")
    rn = child_rng(train_cfg.seed, "train", "noise")

    n, m = len(dataset), dit_cfg.m
    bsz = min(train_cfg.batch_size, n)
    losses: list[tuple[int, float]] = []
    for step in range(train_cfg.steps):
        idx = rb.integers(0, n, size=bsz)
        t = rt.uniform(size=(bsz, m)).astype(np.float32)
        noise = rn.standard_normal(size=(bsz, m, 3, size, size)).astype(np.float32)
        z = data[idx]
        zt = (1.0 - t[..., None, None, None]) * z + t[..., None, None, None] * noise
        target = Tensor(noise - z)
        batch_desc = {k: v[idx] for k, v in desc_idx.items()}
        with Tape() as tape:
            v = model.forward(zt, t, batch_desc)
            err = T.sub(v, target)
            loss = T.mean_all(T.mul(err, err))
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step}")
        tape.backward(loss)
        lr_t = train_cfg.lr * math.sqrt(1.0 - beta2 ** (step + 1)) / (
            1.0 - beta1 ** (step + 1))
        for name in trainable:
            g = tape.grad(model.params[name])
            mom[name] = beta1 * mom[name] + (1.0 - beta1) * g
            vel[name] = beta2 * vel[name] + (1.0 - beta2) * g * g
            model.params[name].data[...] -= lr_t * mom[name] / (
                np.sqrt(vel[name]) + eps_adam)
        losses.append((step, value))
        if log is not None:
            log(step, value)
    return TrainResult(model=model, losses=losses)


# ---------------------------------------------------------------------------
# sampling


def _integrate(model, descriptors: list[SceneDescriptor], steps: int, rng,
               conditions: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Euler flow integration from t=1 to 0; returns [B, M, 3, S, S] latents."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = model.cfg
    props = list(cfg.properties)
    cond_latents: dict[int, np.ndarray] = {}
    if conditions:
        for name, lat in conditions.items():
            if name not in props:
                raise ValueError(f"{name!r} is not one of the model properties {props}")
            cond_latents[props.index(name)] = np.asarray(lat, dtype=np.float32)
    b, m, size = len(descriptors), cfg.m, cfg.image_size
    z = rng.standard_normal(size=(b, m, 3, size, size)).astype(np.float32)
    for mi, lat in cond_latents.items():
        z[:, mi] = lat
    desc_idx = descriptor_indices(descriptors)
    dt = 1.0 / steps
    for k in range(steps):
        t = np.full((b, m), 1.0 - k / steps, dtype=np.float32)
        for mi in cond_latents:
            t[:, mi] = 0.0
        v = model.forward(z, t, desc_idx)
        z = z - dt * v.data
        for mi, lat in cond_latents.items():
            z[:, mi] = lat
    return z


def sample_batch(model, descriptors: list[SceneDescriptor], steps: int = 50,
                 rng=None) -> list[dict[str, np.ndarray]]:
    """Joint generation of all property maps for each descriptor, in [0, 1]."""
    rng = np.random.default_rng() if rng is None else rng
    z = _integrate(model, descriptors, steps, rng)
    out = []
    for bi in range(len(descriptors)):
        out.append({name: denormalize_property(name, z[bi, mi])
                    for mi, name in enumerate(model.cfg.properties)})
    return out


def sample(model, descriptor: SceneDescriptor, steps: int = 50, rng=None):
    return sample_batch(model, [descriptor], steps=steps, rng=rng)[0]


def _condition_latent(model, name: str, image: np.ndarray) -> np.ndarray:
    cfg = model.cfg
    size = cfg.image_size
    img = np.asarray(image, dtype=np.float32)
    if name == "depth":
        if img.shape != (size, size):
            raise ValueError(f"depth condition must be [{size}, {size}], got {img.shape}")
        flat = img * 2.0 - 1.0  # depth conditions arrive in [0, 1] of max depth
        return np.repeat(flat[None], 3, axis=0)
    if img.shape != (size, size, 3):
        raise ValueError(f"{name} condition must be [{size}, {size}, 3], got {img.shape}")
    if name == "normal":
        return img.transpose(2, 0, 1) * 2.0 - 1.0
    return img.transpose(2, 0, 1) * 2.0 - 1.0


def decompose_batch(model, conditions: dict[str, np.ndarray],
                    descriptors: list[SceneDescriptor], steps: int = 50,
                    rng=None) -> list[dict[str, np.ndarray]]:
    """Clamp the given [0, 1] maps clean (t = 0) and denoise the rest.

    ``conditions`` maps property names to [B, ...] image stacks. Conditioned
    slots of the result return the input maps unchanged.
    """
    rng = np.random.default_rng() if rng is None else rng
    b = len(descriptors)
    lat = {}
    given = {}
    for name, imgs in conditions.items():
        imgs = np.asarray(imgs)
        if imgs.shape[0] != b:
            raise ValueError(f"{name} condition batch {imgs.shape[0]} != {b} descriptors")
        lat[name] = np.stack([_condition_latent(model, name, im) for im in imgs])
        given[name] = imgs
    z = _integrate(model, descriptors, steps, rng, conditions=lat)
    out = []
    for bi in range(b):
        maps = {}
        for mi, name in enumerate(model.cfg.properties):
            if name in given:
                maps[name] = given[name][bi]
            else:
                maps[name] = denormalize_property(name, z[bi, mi])
        out.append(maps)
    return out


def decompose(model, conditions: dict[str, np.ndarray], descriptor: SceneDescriptor,
              steps: int = 50, rng=None) -> dict[str, np.ndarray]:
    stacked = {name: np.asarray(img)[None] for name, img in conditions.items()}
    return decompose_batch(model, stacked, [descriptor], steps=steps, rng=rng)[0]

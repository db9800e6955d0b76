"""Procedural intrinsic scenes: geometry, Lambertian shading, dataset files.

A scene is a handful of spheres and front-facing boxes under an
orthographic camera, lit by one directional light plus an ambient floor.
Every sample carries pixel-aligned color, albedo, irradiance, depth and
normal maps that satisfy the Lambertian identity color = albedo * irradiance
exactly at generation time.

Conventions: the world is a 10 x 10 unit window mapped onto S x S pixels,
depth runs 2..8 for objects with the background at 10. Normals live in the
height-field frame, normalize(-dd/dx, -dd/dy, 1), so flat camera-facing
surfaces and the background are (0, 0, 1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import ppm
from .rng import child_rng, child_seed

__all__ = [
    "MAX_DEPTH",
    "WORLD_EXTENT",
    "AMBIENT_LEVELS",
    "PROPERTIES",
    "SceneDescriptor",
    "IntrinsicSample",
    "DatasetError",
    "SceneGeometry",
    "light_direction",
    "palette_colors",
    "scene_geometry",
    "shade",
    "render",
    "random_descriptor",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
]

MAX_DEPTH = 10.0
WORLD_EXTENT = 10.0
BACKGROUND_ALBEDO = (0.75, 0.75, 0.75)
AMBIENT_LEVELS = {"low": 0.15, "mid": 0.30, "high": 0.45}
SHAPES = ("sphere", "box")
PROPERTIES = ("color", "albedo", "irradiance", "depth", "normal")

_LIGHT_ELEVATION = np.deg2rad(45.0)


class DatasetError(Exception):
    """Raised for missing or malformed dataset files."""


@dataclass(frozen=True)
class SceneDescriptor:
    """Discrete scene controls; stands in for a text prompt."""

    object_count: int
    shapes: tuple[str, ...]
    palette: int
    light: int
    ambient: str

    def __post_init__(self):
        if not 1 <= self.object_count <= 4:
            raise ValueError(f"object_count {self.object_count} outside 1..4")
        if len(self.shapes) != self.object_count:
            raise ValueError(
                f"{len(self.shapes)} shapes listed for {self.object_count} objects"
            )
        for s in self.shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        if not 0 <= self.palette <= 15:
            raise ValueError(f"palette {self.palette} outside 0..15")
        if not 0 <= self.light <= 7:
            raise ValueError(f"light bucket {self.light} outside 0..7")
        if self.ambient not in AMBIENT_LEVELS:
            raise ValueError(f"ambient {self.ambient!r} not in {sorted(AMBIENT_LEVELS)}")

    def canonical(self) -> str:
        return (
            f"count={self.object_count}|shapes={','.join(self.shapes)}|"
            f"palette={self.palette}|light={self.light}|ambient={self.ambient}"
        )


@dataclass
class IntrinsicSample:
    color: np.ndarray       # [H, W, 3] in [0, 1]
    albedo: np.ndarray      # [H, W, 3] in [0, 1]
    irradiance: np.ndarray  # [H, W, 3] in [0, 1]
    depth: np.ndarray       # [H, W] world units, background at MAX_DEPTH
    normal: np.ndarray      # [H, W, 3] unit vectors
    descriptor: SceneDescriptor
    seed: int


@dataclass
class SceneGeometry:
    depth: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    object_id: np.ndarray  # [H, W] int, -1 on background


def light_direction(bucket: int) -> np.ndarray:
    """Unit light direction for an azimuth octant at fixed 45 deg elevation."""
    az = 2.0 * np.pi * (bucket + 0.5) / 8.0
    ce, se = np.cos(_LIGHT_ELEVATION), np.sin(_LIGHT_ELEVATION)
    return np.array([np.cos(az) * ce, np.sin(az) * ce, se], dtype=np.float64)


def palette_colors(palette: int) -> np.ndarray:
    """Four object albedos determined by the palette id alone."""
    r = child_rng(palette, "palette")
    return r.uniform(0.2, 0.95, size=(4, 3))


def scene_geometry(desc: SceneDescriptor, seed: int, size: int) -> SceneGeometry:
    """Place objects and rasterize depth, normals, albedo with a z-buffer."""
    r = child_rng(seed, "render", desc.canonical())
    px = WORLD_EXTENT / size
    coords = (np.arange(size) + 0.5) * px
    xg, yg = np.meshgrid(coords, coords)  # x varies along columns

    depth = np.full((size, size), MAX_DEPTH, dtype=np.float64)
    normal = np.zeros((size, size, 3), dtype=np.float64)
    normal[..., 2] = 1.0
    albedo = np.empty((size, size, 3), dtype=np.float64)
    albedo[:] = BACKGROUND_ALBEDO
    object_id = np.full((size, size), -1, dtype=np.int64)
    colors = palette_colors(desc.palette)

    for i, shape in enumerate(desc.shapes):
        cx, cy = r.uniform(0.25 * WORLD_EXTENT, 0.75 * WORLD_EXTENT, size=2)
        if shape == "sphere":
            rad = r.uniform(1.0, 2.2)
            cz = r.uniform(2.0 + rad, 8.0)
            rho2 = (xg - cx) ** 2 + (yg - cy) ** 2
            hit = rho2 <= rad * rad
            s = np.sqrt(np.maximum(rad * rad - rho2, 0.0))
            d = cz - s
            n = np.stack([(cx - xg) / rad, (cy - yg) / rad, s / rad], axis=-1)
        else:
            hx, hy = r.uniform(0.7, 2.0, size=2)
            zf = r.uniform(2.0, 8.0)
            hit = (np.abs(xg - cx) <= hx) & (np.abs(yg - cy) <= hy)
            d = np.full((size, size), zf)
            n = np.zeros((size, size, 3))
            n[..., 2] = 1.0
        win = hit & (d < depth)
        depth[win] = d[win]
        normal[win] = n[win]
        albedo[win] = colors[i]
        object_id[win] = i

    return SceneGeometry(depth, normal, albedo, object_id)


def shade(normal: np.ndarray, light: np.ndarray, ambient: float,
          intensity: float | None = None) -> np.ndarray:
    """Scalar Lambertian irradiance: clamp(n . l, 0) * intensity + ambient."""
    if intensity is None:
        intensity = 1.0 - ambient
    ndotl = np.clip(normal @ light, 0.0, None)
    return ndotl * intensity + ambient


def render(desc: SceneDescriptor, seed: int, size: int = 64) -> IntrinsicSample:
    """Deterministic rendering; a pure function of (descriptor, seed, size)."""
    geo = scene_geometry(desc, seed, size)
    ambient = AMBIENT_LEVELS[desc.ambient]
    irr = shade(geo.normal, light_direction(desc.light), ambient)
    irradiance = np.repeat(irr[..., None], 3, axis=-1).astype(np.float32)
    albedo = geo.albedo.astype(np.float32)
    return IntrinsicSample(
        color=albedo * irradiance,
        albedo=albedo,
        irradiance=irradiance,
        depth=geo.depth.astype(np.float32),
        normal=geo.normal.astype(np.float32),
        descriptor=desc,
        seed=int(seed),
    )


def random_descriptor(r: np.random.Generator) -> SceneDescriptor:
    count = int(r.integers(1, 5))
    return SceneDescriptor(
        object_count=count,
        shapes=tuple(SHAPES[int(k)] for k in r.integers(0, 2, size=count)),
        palette=int(r.integers(0, 16)),
        light=int(r.integers(0, 8)),
        ambient=("low", "mid", "high")[int(r.integers(0, 3))],
    )


def generate_dataset(root_seed: int, count: int, size: int = 64) -> list[IntrinsicSample]:
    samples = []
    for i in range(count):
        desc = random_descriptor(child_rng(root_seed, "descriptor", str(i)))
        samples.append(render(desc, child_seed(root_seed, "scene", str(i)), size=size))
    return samples


# ---------------------------------------------------------------------------
# dataset files


def _write_kv(path, pairs):
    with open(path, "w", encoding="ascii") as f:
        for k, v in pairs:
            f.write(f"{k}={v}\n")


def _read_kv(path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="ascii") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{ln}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_dataset(samples: list[IntrinsicSample], directory) -> None:
    os.makedirs(directory, exist_ok=True)
    size = samples[0].color.shape[0] if samples else 0
    _write_kv(os.path.join(directory, "manifest.txt"),
              [("count", len(samples)), ("image_size", size), ("max_depth", MAX_DEPTH)])
    for i, s in enumerate(samples):
        sub = os.path.join(directory, str(i))
        os.makedirs(sub, exist_ok=True)
        ppm.write_ppm(os.path.join(sub, "color.ppm"), s.color)
        ppm.write_ppm(os.path.join(sub, "albedo.ppm"), s.albedo)
        ppm.write_ppm(os.path.join(sub, "irradiance.ppm"), s.irradiance)
        ppm.write_ppm(os.path.join(sub, "normal.ppm"), (s.normal + 1.0) / 2.0)
        q = np.round(np.clip(s.depth / MAX_DEPTH, 0.0, 1.0) * 65535.0).astype(np.uint16)
        ppm.write_pgm16(os.path.join(sub, "depth.pgm"), q)
        _write_kv(os.path.join(sub, "descriptor.txt"), [
            ("object_count", s.descriptor.object_count),
            ("shapes", ",".join(s.descriptor.shapes)),
            ("palette", s.descriptor.palette),
            ("light", s.descriptor.light),
            ("ambient", s.descriptor.ambient),
            ("seed", s.seed),
        ])


def _parse_descriptor(kv: dict[str, str], path) -> tuple[SceneDescriptor, int]:
    try:
        desc = SceneDescriptor(
            object_count=int(kv["object_count"]),
            shapes=tuple(kv["shapes"].split(",")),
            palette=int(kv["palette"]),
            light=int(kv["light"]),
            ambient=kv["ambient"],
        )
        return desc, int(kv["seed"])
    except (KeyError, ValueError) as e:
        raise DatasetError(f"malformed descriptor {path}: {e}") from e


def read_dataset(directory) -> list[IntrinsicSample]:
    manifest_path = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise DatasetError(f"missing manifest: {manifest_path}")
    kv = _read_kv(manifest_path)
    try:
        count = int(kv["count"])
        size = int(kv["image_size"])
        max_depth = float(kv["max_depth"])
    except (KeyError, ValueError) as e:
        raise DatasetError(f"malformed manifest {manifest_path}: {e}") from e
    samples = []
    for i in range(count):
        sub = os.path.join(directory, str(i))
        color = ppm.read_ppm(os.path.join(sub, "color.ppm"))
        albedo = ppm.read_ppm(os.path.join(sub, "albedo.ppm"))
        irr = ppm.read_ppm(os.path.join(sub, "irradiance.ppm"))
        normal = ppm.read_ppm(os.path.join(sub, "normal.ppm")) * 2.0 - 1.0
        depth = ppm.read_pgm16(os.path.join(sub, "depth.pgm")) / 65535.0 * max_depth
        for name, img in (("color", color), ("albedo", albedo), ("irradiance", irr),
                          ("normal", normal), ("depth", depth)):
            if img.shape[0] != size or img.shape[1] != size:
                raise DatasetError(
                    f"sample {i}: {name} is {img.shape[:2]}, manifest says {size}"
                )
        desc, seed = _parse_descriptor(_read_kv(os.path.join(sub, "descriptor.txt")),
                                       os.path.join(sub, "descriptor.txt"))
        samples.append(IntrinsicSample(
            color=color.astype(np.float32),
            albedo=albedo.astype(np.float32),
            irradiance=irr.astype(np.float32),
            depth=depth.astype(np.float32),
            normal=normal.astype(np.float32),
            descriptor=desc,
            seed=seed,
        ))
    return samples

"""Desk-scale structured multi-property diffusion.

A small numpy-backed stack for jointly generating pixel-aligned intrinsic
maps (color, albedo, irradiance, depth, normal): a reverse-mode tensor
core, four low-rank adapter families for the K/V projections, three
multi-stream attention regimes, a toy flow-matching diffusion transformer,
a procedural Lambertian scene generator, and cost/consistency metrics.
"""

__version__ = "0.1.0"

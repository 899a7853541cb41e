#!/usr/bin/env python3
"""
CPC-SNN Encoding Previews
Side-by-side PNG of a digit and its encoding folded into a square grid
"""

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from config.settings import get_logger
from services.data_pipeline import IMAGE_SIDE, MnistImage

logger = get_logger(__name__)

def encoding_grid(vector: np.ndarray) -> np.ndarray:
    """Fold a vector row-major into the smallest square, zero-padded, scaled to 0-255"""
    values = np.asarray(vector, dtype=np.float64).reshape(-1)
    side = max(1, math.ceil(math.sqrt(values.size)))
    grid = np.zeros(side * side)
    grid[:values.size] = values
    lo, hi = (float(values.min()), float(values.max())) if values.size else (0.0, 0.0)
    scaled = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255).astype(np.uint8).reshape(side, side)

def render_preview(image: MnistImage, vector: np.ndarray, scale: int = 8, gap: int = 8) -> Image.Image:
    digit = Image.fromarray(np.round(image.pixels.reshape(IMAGE_SIDE, IMAGE_SIDE) * 255).astype(np.uint8), "L")
    height = IMAGE_SIDE * scale
    digit = digit.resize((height, height), Image.NEAREST)
    grid = Image.fromarray(encoding_grid(vector), "L").resize((height, height), Image.NEAREST)
    canvas = Image.new("L", (2 * height + gap, height), color=128)
    canvas.paste(digit, (0, 0))
    canvas.paste(grid, (height + gap, 0))
    return canvas

def save_previews(images: Sequence[MnistImage], vectors: Sequence[np.ndarray], out_dir: Path,
                  prefix: str = "preview") -> list:
    """One PNG per image, named by encoding kind, label and image index"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for image, vector in zip(images, vectors):
        path = out_dir / f"{prefix}_digit{image.label}_img{image.index}.png"
        render_preview(image, vector).save(path, format="PNG")
        paths.append(path)
    logger.info(f"🖼️ Wrote {len(paths)} encoding previews to {out_dir}")
    return paths

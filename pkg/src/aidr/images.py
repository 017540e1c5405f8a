"""Loading and saving RGB rasters (PNG/JPEG via Pillow, or headerless ``.rgb``)."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".rgb"}
# raw files carry their size in the name, e.g. ``view_0001_64x48.rgb`` (width x height)
_RAW_DIMS = re.compile(r"_(\d+)x(\d+)$")


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".rgb":
        m = _RAW_DIMS.search(path.stem)
        if not m:
            raise InvalidInputError(f"{path.name}: raw RGB files must be named '<name>_<W>x<H>.rgb'")
        w, h = int(m.group(1)), int(m.group(2))
        data = np.fromfile(path, dtype=np.uint8)
        if data.size != w * h * 3:
            raise InvalidInputError(f"{path.name}: expected {w * h * 3} bytes, found {data.size}")
        return data.reshape(h, w, 3)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path, format="PNG")


def list_images(directory) -> list:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def scan_scenes(root) -> dict:
    """Map scene name to image paths.

    Subdirectories of ``root`` are scenes; images directly inside ``root``
    form a scene named after the directory itself.
    """
    root = Path(root)
    scenes = {}
    loose = list_images(root)
    if loose:
        scenes[root.name] = loose
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        imgs = list_images(sub)
        if imgs:
            scenes[sub.name] = imgs
    return scenes

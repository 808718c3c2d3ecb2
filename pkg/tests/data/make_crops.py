"""Regenerate the 64 x 64 test crops from scikit-image's bundled samples."""

import os

from skimage import data

from knitwork.imageio import save_png

CROPS = {
    "face64.png": (data.astronaut, (100, 180)),
    "fur64.png": (data.chelsea, (200, 200)),
    "coffee64.png": (data.coffee, (250, 300)),
    "gravel64.png": (data.gravel, (100, 100)),
}

if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    for name, (loader, (r, c)) in CROPS.items():
        img = loader()[r : r + 64, c : c + 64] / 255.0
        if img.ndim == 2:
            img = img[:, :, None]
        save_png(img, os.path.join(here, name))

import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from morphscope import preprocess as pp
from morphscope import weight_store as ws

# toy geometry keeps file-format and pipeline tests fast; every byte size
# in its schema is a multiple of the container alignment
TOY_CONFIG = ws.ViTConfig(
    image_side=64, patch_side=32, hidden_dim=64, depth=2, heads=4, mlp_dim=128
)


@pytest.fixture(scope="session")
def toy_config():
    return TOY_CONFIG


@pytest.fixture(scope="session")
def toy_bundle():
    return ws.random_bundle(TOY_CONFIG, seed=7)


def synth_image(rng, side, smooth):
    """Procedural test image: smooth ramp or high-frequency noise."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32) / side
    if smooth:
        base = np.stack([xx, yy, (xx + yy) / 2], axis=2)
        img = 0.8 * base + 0.2 * rng.random((side, side, 3), dtype=np.float32)
    else:
        img = rng.random((side, side, 3), dtype=np.float32)
    return np.clip(img, 0.0, 1.0)


def build_corpus(root, processing_types, algorithms, n_bona, n_morph, side, seed=11):
    """Write a PPM image corpus plus manifest; returns the manifest path.

    Bona fide images are smooth ramps, morphs are noise fields, so linear
    separation is easy.  Splits are explicit half/half.
    """
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(root, "images")
    os.makedirs(img_dir, exist_ok=True)
    records = []

    def add(name, smooth, label, algorithm, proc):
        img = synth_image(rng, side, smooth)
        with open(os.path.join(img_dir, name), "wb") as fh:
            fh.write(pp.encode_ppm(img))
        rec = {"path": f"images/{name}", "label": label, "processing": proc}
        if label == "morph":
            rec["morph_algorithm"] = algorithm
        records.append(rec)

    for proc in processing_types:
        tag = proc.replace("-", "")
        for i in range(n_bona):
            add(f"bona_{tag}_{i:03d}.ppm", True, "bona", None, proc)
        for alg in algorithms:
            alg_tag = alg.lower().replace("-", "")
            for i in range(n_morph):
                add(f"morph_{tag}_{alg_tag}_{i:03d}.ppm", False, "morph", alg, proc)

    # explicit alternating split keeps every cell populated
    for i, rec in enumerate(records):
        rec["split"] = "train" if i % 2 == 0 else "test"

    manifest_path = os.path.join(root, "manifest.jsonl")
    with open(manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest_path

"""Small synthetic corpora shared by the segmenter, retrieval and acceptance tests."""
from __future__ import annotations

import numpy as np

from reliefkit.segment import FeatureParams, build_bank
from reliefkit.synth.bases import make_named_base
from reliefkit.synth.heightfield import make_heightfield
from reliefkit.synth.regions import plan_regions
from reliefkit.synth.relief import apply_relief

CATALOG = {1: "bumps", 2: "ridges"}


def sheet_model(base, assignment, seed, resolution=10_000, amplitude=0.02, frequency=6):
    """Relief model whose regions carry ``assignment`` (list of class ids, 0 = plain)."""
    b = make_named_base(base, resolution)
    mask = plan_regions(b, len(assignment), seed=seed)
    phase = np.random.default_rng(seed).random(2)
    fields = {1: make_heightfield("bumps", frequency, phase=phase),
              2: make_heightfield("ridges", frequency, phase=phase)}
    return apply_relief(b, mask, dict(enumerate(assignment)), fields, amplitude * b.bbox_diagonal,
                        catalog=CATALOG)


TRAINING = [("sheet-flat", [1]), ("sheet-flat", [2]), ("sheet-flat", [0]),
            ("sheet-wavy", [1, 2]), ("sheet-fold", [2, 0]), ("sheet-wavy", [0, 1])]


def sheet_bank(params: FeatureParams = FeatureParams()):
    models = [sheet_model(b, a, s) for s, (b, a) in enumerate(TRAINING)]
    return build_bank([m for m, _ in models], [l for _, l in models], params)

"""Mixture scenarios: labelled inlier classes plus outlier streams.

A scenario is a JSON-serialisable dict::

    {"T": 24, "L": 4, "seed": 0, "shift": false,
     "classes": [{"label": "1", "count": 60, "outlier": false,
                  "terms": [{"kind": "gauss", "amplitude": 1.6, "center": 2.4, "width": 50}]}]}

Any numeric term field may be ``{"uniform": [lo, hi]}``, drawn per stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .events import Dataset, IntensitySpec, apply_shift, simulate_nhp


def _g(amplitude, center, width):
    return {"kind": "gauss", "amplitude": amplitude, "center": center, "width": width}


INLIER_TERMS = {
    "1": [_g(5 / 3, -4.8, 10), _g(5 / 3, 2.4, 50)],
    "2": [_g(5 / 3, 6.0, 4), _g(15 / 4, 21.6, 4)],
    "3": [_g(15 / 4, 4.8, 1.5), _g(35 / 12, 12.0, 1.0), _g(15 / 4, 19.2, 1.5)],
    "4": [_g(10 / 3, 21.6, 40), _g(5 / 3, 26.4, 10)],
}

_U = {"uniform": [0.0, 1.0]}
_CENTER = {"uniform": [0.0, 24.0]}

OUTLIER_TERMS = {
    1: [{"kind": "const", "level": {"uniform": [125 / 6 * 0.1, 125 / 6 * 1.1]}}],
    2: [
        {"kind": "const", "level": {"uniform": [125 / 18 * 0.1, 125 / 18 * 1.1]}},
        _g(125 / 3, _CENTER, 0.5),
    ],
    3: [_g(25 / 2, _CENTER, 0.02), _g(25 / 3, _CENTER, 0.02), _g(25 / 6, _CENTER, 0.02)],
}

OUTLIER_LABEL = "outlier"


def paper_scenario(outlier_type: int = 1, L: int = 4, shift: bool = False, n_per_class: int = 60,
                   n_outliers: int = 60, seed: int = 0) -> dict:
    """The four-class, 24-hour scenario with one of the three outlier families."""
    if outlier_type not in OUTLIER_TERMS:
        raise ConfigError(f"outlier_type must be 1, 2 or 3, got {outlier_type}")
    classes = [
        {"label": lab, "count": n_per_class, "outlier": False, "terms": terms}
        for lab, terms in INLIER_TERMS.items()
    ]
    if n_outliers:
        classes.append({"label": OUTLIER_LABEL, "count": n_outliers, "outlier": True,
                        "terms": OUTLIER_TERMS[outlier_type]})
    return {"T": 24.0, "L": L, "seed": seed, "shift": shift, "classes": classes}


def homogeneous_scenario(rates=(1, 2, 3, 4), n_per_class=30, outlier_rate=100.0, n_outliers=1,
                         T=24.0, L=1, seed=0) -> dict:
    """Constant-rate classes plus constant-rate outliers."""
    classes = [
        {"label": str(r), "count": n_per_class, "outlier": False,
         "terms": [{"kind": "const", "level": float(r)}]}
        for r in rates
    ]
    if n_outliers:
        classes.append({"label": OUTLIER_LABEL, "count": n_outliers, "outlier": True,
                        "terms": [{"kind": "const", "level": float(outlier_rate)}]})
    return {"T": T, "L": L, "seed": seed, "shift": False, "classes": classes}


@dataclass
class SimulatedData:
    dataset: Dataset
    labels: dict
    outliers: set
    shifts: dict
    intensities: dict

    @property
    def inlier_ids(self):
        return [i for i in self.dataset.ids if i not in self.outliers]


def simulate_scenario(scenario: dict, seed: int | None = None) -> SimulatedData:
    """Draw every stream of a scenario from one seeded generator.

    With ``"shift": true`` stream n is circularly shifted by an integer drawn
    uniformly from ``0 .. T - 1``.
    """
    seed = scenario.get("seed", 0) if seed is None else seed
    rng = np.random.default_rng(seed)
    T = float(scenario.get("T", 24.0))
    L = int(scenario.get("L", 1))
    do_shift = bool(scenario.get("shift", False))
    streams, labels, outliers, shifts, intens = [], {}, set(), {}, {}
    n = 0
    for cls in scenario["classes"]:
        for _ in range(int(cls["count"])):
            sid = f"s{n:04d}"
            spec = IntensitySpec.from_dicts(cls["terms"], rng)
            s = simulate_nhp(spec, T, L, rng, stream_id=sid)
            shift = float(rng.integers(0, int(T))) if do_shift else 0.0
            if shift:
                s = apply_shift(s, shift)
            streams.append(s)
            labels[sid] = str(cls["label"])
            if cls.get("outlier", False):
                outliers.add(sid)
            shifts[sid] = shift
            intens[sid] = spec
            n += 1
    return SimulatedData(Dataset(tuple(streams)), labels, outliers, shifts, intens)


def load_scenario(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        sc = json.load(fh)
    if "classes" not in sc:
        raise ConfigError(f"{path}: scenario needs a 'classes' list")
    return sc

"""Pipeline configuration with flat key=value file support.

Every tunable of the recognizer lives here so that experiments are fully
described by (data, config, seed).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Config:
    # --- skin model ---
    hist_bins: int = 32              # bins per axis of the (r,g) histograms
    skin_alpha: float = 0.2          # adaptive histogram update weight
    skin_threshold: float = 1.0      # skin/nonskin likelihood-ratio threshold
    motion_threshold: float = 12.0   # gray-level frame-difference threshold
    face_depth_threshold: float = 60.0   # mm a pixel must sit in front of the face model
    face_update_rate: float = 0.3    # EMA rate for the face depth model
    min_blob_area: int = 30          # components below this many pixels are dropped
    body_depth_front: float = 1200.0  # body region reaches this far in front of the torso (mm)
    body_depth_back: float = 300.0    # and this far behind it (mm)

    # --- blob ranking ---
    weight_depth: float = 1.0 / 3.0
    weight_size: float = 1.0 / 3.0
    weight_proximity: float = 1.0 / 3.0
    min_assign_score: float = 0.4    # below this the hand is marked missing
    depth_score_scale: float = 1000.0  # mm over which the depth score decays to 0
    proximity_scale: float = 80.0      # px over which the proximity score decays to 0

    # --- Kalman tracking ---
    process_noise: float = 1e-2
    measurement_noise: float = 4.0   # px^2
    initial_covariance: float = 1e3
    window_pad_frac: float = 0.25
    window_pad_min: float = 10.0     # px floor on the search-window padding
    max_coast: int = 15              # frames without measurement before re-seeding

    # --- features ---
    eccentricity_as_printed: bool = True  # |1 - m/M|; False uses sqrt(1 - (m/M)^2)
    idle_path_threshold: float = 0.5      # shoulder-widths of total travel
    idle_speed_threshold: float = 0.02    # shoulder-widths per frame
    focal_per_width: float = 525.0 / 640.0  # focal length as a fraction of image width
    zero_idle: bool = True

    # --- signer-independent transform ---
    lda_resample_third: int = 15     # frames kept from the middle third after alignment
    lda_shrinkage: float = 1e-3      # fraction of mean within-scatter diagonal added to it
    lda_shrinkage_max: float = 10.0
    lda_dims: int = 20

    # --- HMM ---
    hmm_states: int = 7
    hmm_self_prob: float = 0.6
    hmm_tol: float = 1e-4
    hmm_max_iter: int = 40
    variance_floor: float = 1e-4

    # --- execution ---
    jobs: int = 1

    def save(self, path):
        lines = []
        for field in dataclasses.fields(self):
            lines.append(f"{field.name}={getattr(self, field.name)!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        cfg = cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = types[key]
            if kind in ("bool", bool):
                setattr(cfg, key, value in ("True", "true", "1"))
            elif kind in ("int", int):
                setattr(cfg, key, int(value))
            else:
                setattr(cfg, key, float(value))
        return cfg

    def snapshot(self) -> str:
        return "\n".join(
            f"{f.name}={getattr(self, f.name)!r}" for f in dataclasses.fields(self)
        )

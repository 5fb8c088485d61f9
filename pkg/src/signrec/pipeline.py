"""End-to-end extraction: recordings in, per-frame feature samples out.

Left-handed recordings are mirrored before processing so every sample is
analyzed in a right-handed canonical frame. Extracted features are cached
on disk keyed by a content hash of the sequence bytes and the relevant
configuration, so repeated evaluations skip the expensive stages.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
from pathlib import Path

from .config import Config
from .dataio import DatasetManifest, load_sequence, mirror_sequence
from .features import FeatureSample, assemble, load_sample, save_sample
from .segmentation import SequenceSegmenter, SkinHistogram
from .synth import load_skin_corpus

log = logging.getLogger(__name__)

_CFG_KEYS = (
    "hist_bins", "skin_alpha", "skin_threshold", "motion_threshold",
    "face_depth_threshold", "face_update_rate", "min_blob_area",
    "body_depth_front", "body_depth_back", "weight_depth", "weight_size",
    "weight_proximity", "min_assign_score", "depth_score_scale",
    "proximity_scale", "process_noise", "measurement_noise",
    "initial_covariance", "window_pad_frac", "window_pad_min", "max_coast",
    "eccentricity_as_printed", "focal_per_width",
)


def general_skin_model(corpus_dir, cfg: Config) -> SkinHistogram:
    skin, nonskin = load_skin_corpus(corpus_dir)
    return SkinHistogram.from_pixels(skin, nonskin, bins=cfg.hist_bins)


def extract_sequence(seq_dir, general_model, cfg: Config, debug_dir=None) -> FeatureSample:
    seq = load_sequence(seq_dir)
    if seq.handedness == "left":
        seq = mirror_sequence(seq)
    segmenter = SequenceSegmenter(general_model, cfg)
    result = segmenter.run(seq, debug_dir=debug_dir)
    return assemble(seq, result, cfg)


def _sequence_digest(seq_dir, cfg: Config) -> str:
    digest = hashlib.sha256()
    for path in sorted(Path(seq_dir).iterdir()):
        if path.name.startswith("gt_"):
            continue
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    for key in _CFG_KEYS:
        digest.update(f"{key}={getattr(cfg, key)!r};".encode())
    return digest.hexdigest()


def _extract_one(args):
    seq_dir, general_model, cfg = args
    return extract_sequence(seq_dir, general_model, cfg)


def _cache_name(entry_path):
    return entry_path.replace("/", "__") + ".txt"


def extract_corpus(manifest_path, cfg: Config, cache_dir=None, jobs=None):
    """Extract every manifest entry, reusing cached feature files.

    Returns a list of (entry, FeatureSample) in manifest order.
    """
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    root = manifest_path.parent
    general_model = general_skin_model(root, cfg)
    jobs = jobs or cfg.jobs

    cache_index = {}
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        index_path = cache_dir / "index.json"
        if index_path.exists():
            cache_index = json.loads(index_path.read_text())

    digests = {e.path: _sequence_digest(root / e.path, cfg) for e in manifest.entries}
    pending = []
    results: dict[str, FeatureSample] = {}
    for entry in manifest.entries:
        key = digests[entry.path]
        cached = cache_index.get(entry.path)
        if cache_dir is not None and cached == key and (cache_dir / _cache_name(entry.path)).exists():
            results[entry.path] = load_sample(cache_dir / _cache_name(entry.path))
        else:
            pending.append(entry)

    if pending:
        tasks = [(str(root / e.path), general_model, cfg) for e in pending]
        if jobs > 1 and len(tasks) > 1:
            with multiprocessing.Pool(jobs) as pool:
                extracted = pool.map(_extract_one, tasks)
        else:
            extracted = [_extract_one(t) for t in tasks]
        for entry, sample in zip(pending, extracted):
            results[entry.path] = sample
            if cache_dir is not None:
                save_sample(sample, cache_dir / _cache_name(entry.path))
                cache_index[entry.path] = digests[entry.path]
        if cache_dir is not None:
            (cache_dir / "index.json").write_text(
                json.dumps(cache_index, sort_keys=True, indent=0)
            )
        log.info("extracted %d sequences (%d cached)", len(pending),
                 len(manifest.entries) - len(pending))
    return [(entry, results[entry.path]) for entry in manifest.entries]

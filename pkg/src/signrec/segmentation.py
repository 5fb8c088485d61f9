"""Hand segmentation from RGB-D frames.

Skin color is modeled by a pair of histograms over normalized (r, g)
chromaticity, adapted online to the current signer. Candidate hand pixels
are skin pixels that also changed since the previous frame; after
morphological cleanup the surviving blobs are ranked by depth, size and
proximity to the tracker predictions. Depth resolves hand-over-face
occlusion; template matching of the last pre-occlusion shapes resolves
hand-over-hand occlusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

_STRUCT3 = np.ones((3, 3), dtype=bool)


# --- color ------------------------------------------------------------------

def rg_normalize(rgb):
    """Map 8-bit RGB to normalized (r, g) chromaticity.

    Black pixels (R+G+B = 0) map to the uninformative point (1/3, 1/3).
    Accepts a single pixel or an array with a trailing channel axis.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    total = arr[..., 0] + arr[..., 1] + arr[..., 2]
    safe = np.where(total > 0, total, 3.0)
    r = np.where(total > 0, arr[..., 0] / safe, 1.0 / 3.0)
    g = np.where(total > 0, arr[..., 1] / safe, 1.0 / 3.0)
    return r, g


def to_gray(rgb):
    arr = np.asarray(rgb, dtype=np.float64)
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]


def _rg_bins(rgb, bins):
    r, g = rg_normalize(rgb)
    ir = np.minimum((r * bins).astype(np.intp), bins - 1)
    ig = np.minimum((g * bins).astype(np.intp), bins - 1)
    return ir, ig


def _pixel_counts(rgb_pixels, bins):
    if len(rgb_pixels) == 0:
        return np.zeros((bins, bins), dtype=np.float64)
    ir, ig = _rg_bins(rgb_pixels, bins)
    flat = np.bincount(ir * bins + ig, minlength=bins * bins)
    return flat.reshape(bins, bins).astype(np.float64)


@dataclass
class SkinHistogram:
    """Skin and non-skin histograms over (r, g) chromaticity bins."""

    skin_counts: np.ndarray
    nonskin_counts: np.ndarray
    bins: int = 32

    @classmethod
    def from_pixels(cls, skin_rgb, nonskin_rgb, bins=32):
        return cls(
            skin_counts=_pixel_counts(np.asarray(skin_rgb), bins),
            nonskin_counts=_pixel_counts(np.asarray(nonskin_rgb), bins),
            bins=bins,
        )

    def ratio_table(self):
        """Laplace-smoothed P(bin|skin) / P(bin|nonskin) for every bin."""
        n = self.bins * self.bins
        skin_total = self.skin_counts.sum()
        if skin_total <= 0:
            raise ValueError("skin histogram is empty")
        p_skin = (self.skin_counts + 1.0) / (skin_total + n)
        p_non = (self.nonskin_counts + 1.0) / (self.nonskin_counts.sum() + n)
        return p_skin / p_non


def skin_mask(rgb, model: SkinHistogram, threshold, region=None):
    """Binary mask of pixels whose skin likelihood ratio exceeds threshold.

    When given, evaluation is restricted to the body region mask.
    """
    ir, ig = _rg_bins(rgb, model.bins)
    mask = model.ratio_table()[ir, ig] > threshold
    if region is not None:
        mask &= region
    return mask


def update_adaptive_model(model: SkinHistogram, skin_rgb, nonskin_rgb, alpha) -> SkinHistogram:
    """Blend per-bin counts: (1 - alpha) * previous + alpha * current pixels."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    new_skin = _pixel_counts(np.asarray(skin_rgb), model.bins)
    new_non = _pixel_counts(np.asarray(nonskin_rgb), model.bins)
    return SkinHistogram(
        skin_counts=(1.0 - alpha) * model.skin_counts + alpha * new_skin,
        nonskin_counts=(1.0 - alpha) * model.nonskin_counts + alpha * new_non,
        bins=model.bins,
    )


def motion_mask(gray_t, gray_prev, threshold):
    gray_t = np.asarray(gray_t, dtype=np.float64)
    gray_prev = np.asarray(gray_prev, dtype=np.float64)
    if gray_t.shape != gray_prev.shape:
        raise ValueError("frames differ in shape")
    return np.abs(gray_t - gray_prev) > threshold


def body_region(depth, torso_z, front=1200.0, back=300.0):
    """Pixels with a valid depth reading near the torso plane."""
    depth = np.asarray(depth, dtype=np.float64)
    return (depth > 0) & (depth > torso_z - front) & (depth < torso_z + back)


# --- blobs -------------------------------------------------------------------

@dataclass
class Blob:
    mask: np.ndarray            # cropped boolean patch
    bbox: tuple[int, int, int, int]   # x, y, w, h in full-image coordinates
    area: int
    centroid: tuple[float, float]

    def full_mask(self, shape):
        out = np.zeros(shape, dtype=bool)
        x, y, w, h = self.bbox
        out[y : y + h, x : x + w] = self.mask
        return out

    def median_depth(self, depth_frame):
        x, y, w, h = self.bbox
        patch = np.asarray(depth_frame, dtype=np.float64)[y : y + h, x : x + w]
        values = patch[self.mask & (patch > 0)]
        if values.size == 0:
            return float("nan")
        return float(np.median(values))


def clean_mask(skin, motion=None, min_area=30):
    """AND the masks, open with a 3x3 square, and return the surviving blobs.

    Connected components use 8-connectivity; components below min_area are
    dropped.
    """
    cand = np.asarray(skin, dtype=bool)
    if motion is not None:
        cand = cand & np.asarray(motion, dtype=bool)
    opened = ndimage.binary_dilation(
        ndimage.binary_erosion(cand, structure=_STRUCT3), structure=_STRUCT3
    )
    labels, count = ndimage.label(opened, structure=_STRUCT3)
    blobs = []
    for index, slc in enumerate(ndimage.find_objects(labels), start=1):
        if slc is None:
            continue
        patch = labels[slc] == index
        area = int(patch.sum())
        if area < min_area:
            continue
        ys, xs = np.nonzero(patch)
        x0, y0 = slc[1].start, slc[0].start
        blobs.append(
            Blob(
                mask=patch,
                bbox=(x0, y0, patch.shape[1], patch.shape[0]),
                area=area,
                centroid=(float(xs.mean()) + x0, float(ys.mean()) + y0),
            )
        )
    return blobs


# --- hand assignment ----------------------------------------------------------

@dataclass
class HandObservation:
    mask: np.ndarray
    bbox: tuple[int, int, int, int]
    centroid: tuple[float, float]
    depth: float
    occlusion: str = "none"      # none | hand_over_hand | hand_over_face
    shape_frozen: bool = False


@dataclass
class HandPrediction:
    position: tuple[float, float]
    box: tuple[float, float]
    depth: float = float("nan")


def _blob_score(blob: Blob, pred: HandPrediction, blob_depth, cfg):
    if np.isnan(blob_depth) or np.isnan(pred.depth):
        depth_score = 0.5
    else:
        depth_score = max(0.0, 1.0 - abs(blob_depth - pred.depth) / cfg.depth_score_scale)
    pred_area = max(pred.box[0] * pred.box[1], 1.0)
    size_score = min(blob.area, pred_area) / max(blob.area, pred_area)
    dist = float(np.hypot(blob.centroid[0] - pred.position[0],
                          blob.centroid[1] - pred.position[1]))
    prox_score = max(0.0, 1.0 - dist / cfg.proximity_scale)
    return (
        cfg.weight_depth * depth_score
        + cfg.weight_size * size_score
        + cfg.weight_proximity * prox_score
    )


def _observation_from_blob(blob: Blob, depth_frame, occlusion="none"):
    return HandObservation(
        mask=blob.mask.copy(),
        bbox=blob.bbox,
        centroid=blob.centroid,
        depth=blob.median_depth(depth_frame),
        occlusion=occlusion,
    )


def rank_and_assign(blobs, pred_left: HandPrediction, pred_right: HandPrediction,
                    depth_frame, cfg, allow_shared=False):
    """Assign the best-scoring blob to each hand.

    Scores combine depth agreement, size agreement and proximity to the
    predicted position, each in [0, 1]. Assignment is one-to-one unless
    allow_shared is set (hand-overlap flagged by the tracker). A hand whose
    best score falls below cfg.min_assign_score is reported missing (None).
    """
    if not blobs:
        return None, None
    depths = [blob.median_depth(depth_frame) for blob in blobs]
    scores = {}
    for hand, pred in (("right", pred_right), ("left", pred_left)):
        for i, blob in enumerate(blobs):
            scores[(hand, i)] = _blob_score(blob, pred, depths[i], cfg)

    assigned = {}
    taken = set()
    # right hand first on ties, then lower blob index
    order = sorted(
        scores.items(),
        key=lambda kv: (-kv[1], kv[0][0] != "right", kv[0][1]),
    )
    for (hand, i), score in order:
        if hand in assigned:
            continue
        if not allow_shared and i in taken:
            continue
        if score < cfg.min_assign_score:
            continue
        assigned[hand] = i
        taken.add(i)

    def build(hand):
        if hand not in assigned:
            return None
        return _observation_from_blob(blobs[assigned[hand]], depth_frame)

    return build("left"), build("right")


# --- occlusion ----------------------------------------------------------------

@dataclass
class FaceDepthModel:
    bbox: tuple[int, int, int, int]
    depth: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_frame(cls, depth_frame, bbox):
        x, y, w, h = bbox
        patch = np.asarray(depth_frame, dtype=np.float64)[y : y + h, x : x + w]
        return cls(bbox=bbox, depth=patch.copy(), valid=patch > 0)

    def update(self, depth_frame, exclude=None, rate=0.3):
        """Blend current depths into the model, skipping excluded pixels and
        invalid readings."""
        x, y, w, h = self.bbox
        patch = np.asarray(depth_frame, dtype=np.float64)[y : y + h, x : x + w]
        ok = patch > 0
        if exclude is not None:
            ok &= ~exclude
        fresh = ok & ~self.valid
        blend = ok & self.valid
        self.depth[blend] = (1.0 - rate) * self.depth[blend] + rate * patch[blend]
        self.depth[fresh] = patch[fresh]
        self.valid |= fresh


def resolve_face_occlusion(depth_frame, face_model: FaceDepthModel, threshold,
                           update_rate=0.3):
    """Foreground (hand) pixels inside the face box, by depth difference.

    A pixel is foreground when the face model sits more than threshold mm
    behind the current reading. The model is then updated everywhere except
    at the returned foreground pixels, so the hand never bleeds into it.
    """
    x, y, w, h = face_model.bbox
    patch = np.asarray(depth_frame, dtype=np.float64)[y : y + h, x : x + w]
    usable = (patch > 0) & face_model.valid
    fg = usable & (face_model.depth - patch > threshold)
    face_model.update(depth_frame, exclude=fg, rate=update_rate)
    out = np.zeros(np.asarray(depth_frame).shape, dtype=bool)
    out[y : y + h, x : x + w] = fg
    return out


def match_template(joint_mask, template):
    """Best placement of a template mask inside a joint blob mask.

    Returns (dy, dx, ratio): the template origin relative to the joint mask
    origin and the achieved overlap ratio (intersection / template area).
    """
    template = np.asarray(template, dtype=bool)
    joint = np.asarray(joint_mask, dtype=bool)
    th, tw = template.shape
    jh, jw = joint.shape
    padded = np.zeros((jh + 2 * (th - 1), jw + 2 * (tw - 1)), dtype=np.float64)
    padded[th - 1 : th - 1 + jh, tw - 1 : tw - 1 + jw] = joint
    windows = sliding_window_view(padded, (th, tw))
    overlap = np.einsum("ijkl,kl->ij", windows, template.astype(np.float64))
    best = np.unravel_index(int(np.argmax(overlap)), overlap.shape)
    ratio = overlap[best] / float(template.sum())
    return best[0] - (th - 1), best[1] - (tw - 1), float(ratio)


def resolve_hand_over_hand(joint: Blob, template_left, template_right,
                           fallback_left, fallback_right):
    """Locate both hands inside a merged blob via their pre-occlusion shapes.

    Each stored mask slides over the joint blob; the placement maximizing the
    overlap ratio wins. A hand whose template no longer fits (joint blob
    smaller than the template) falls back to its predicted position. Returns
    ((left_xy), (right_xy), same_spot) where same_spot flags both hands
    resolving to (nearly) the same location.
    """
    jx, jy = joint.bbox[0], joint.bbox[1]
    results = []
    for template, fallback in ((template_left, fallback_left),
                               (template_right, fallback_right)):
        if template is None or joint.area < int(np.sum(template)):
            results.append((float(fallback[0]), float(fallback[1])))
            continue
        dy, dx, _ratio = match_template(joint.mask, template)
        ys, xs = np.nonzero(template)
        cx = jx + dx + float(xs.mean())
        cy = jy + dy + float(ys.mean())
        results.append((cx, cy))
    left, right = results
    same_spot = bool(np.hypot(left[0] - right[0], left[1] - right[1]) < 2.0)
    return left, right, same_spot


# --- per-sequence driver --------------------------------------------------------

@dataclass
class FrameResult:
    left: HandObservation | None
    right: HandObservation | None
    left_track: "object"
    right_track: "object"


@dataclass
class SegmentationResult:
    frames: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)


def _face_box(pose, span, shape):
    h, w = shape
    hx, hy, _ = pose.joints.get("head", pose.joints["neck"])
    half = 0.45 * span
    x0 = int(max(0, np.floor(hx - half)))
    y0 = int(max(0, np.floor(hy - half)))
    x1 = int(min(w, np.ceil(hx + half)))
    y1 = int(min(h, np.ceil(hy + half)))
    return (x0, y0, max(1, x1 - x0), max(1, y1 - y0))


def _placed_observation(template, centroid, shape, depth_frame, occlusion):
    th, tw = template.shape
    h, w = shape
    ys, xs = np.nonzero(template)
    x0 = int(round(centroid[0] - xs.mean()))
    y0 = int(round(centroid[1] - ys.mean()))
    x0 = min(max(x0, 0), w - tw)
    y0 = min(max(y0, 0), h - th)
    blob = Blob(
        mask=template.copy(),
        bbox=(x0, y0, tw, th),
        area=int(template.sum()),
        centroid=(float(centroid[0]), float(centroid[1])),
    )
    obs = _observation_from_blob(blob, depth_frame, occlusion=occlusion)
    obs.shape_frozen = occlusion == "hand_over_hand"
    return obs


class SequenceSegmenter:
    """Stateful per-sequence segmentation: adaptive skin model, face depth
    model, dual Kalman trackers and occlusion bookkeeping, advanced strictly
    in frame order."""

    def __init__(self, general_model: SkinHistogram, cfg):
        self.general_model = general_model
        self.cfg = cfg

    def run(self, seq, debug_dir=None) -> SegmentationResult:
        from . import dataio, tracking

        cfg = self.cfg
        span = dataio.shoulder_distance(seq)
        shape = seq.frame_shape
        signer_model = None
        face_model = None
        prev_gray = None
        templates = {"left": None, "right": None}
        tracks = {}
        result = SegmentationResult()

        for t in range(len(seq)):
            rgb = seq.color_frames[t]
            depth = np.asarray(seq.depth_frames[t], dtype=np.float64)
            pose = seq.skeleton[t]
            gray = to_gray(rgb)
            torso_z = pose.joints["torso"][2]
            body = body_region(depth, torso_z, cfg.body_depth_front, cfg.body_depth_back)

            if t == 0:
                boot = skin_mask(rgb, self.general_model, cfg.skin_threshold, region=body)
                if boot.any():
                    signer_model = SkinHistogram.from_pixels(
                        rgb[boot], rgb[body & ~boot], bins=cfg.hist_bins
                    )
                face_model = FaceDepthModel.from_frame(depth, _face_box(pose, span, shape))
                for hand in ("left", "right"):
                    jx, jy, jz = pose.joints[f"hand_{hand}"]
                    tracks[hand] = tracking.HandTrack.seed(
                        (jx, jy),
                        box=(0.5 * span, 0.5 * span),
                        depth=jz,
                        initial_cov=cfg.initial_covariance,
                    )
                cand = boot
            else:
                model = signer_model if signer_model is not None else self.general_model
                skin = skin_mask(rgb, model, cfg.skin_threshold, region=body)
                cand = skin & motion_mask(gray, prev_gray, cfg.motion_threshold)

            predicted = {h: tracking.predict(tracks[h], cfg.process_noise) for h in tracks}
            windows = {
                h: tracking.search_window(predicted[h], shape, cfg.window_pad_frac,
                                          cfg.window_pad_min)
                for h in predicted
            }

            # hand-over-face: depth against the face model recovers hand pixels
            face_rect = (face_model.bbox[0], face_model.bbox[1],
                         face_model.bbox[0] + face_model.bbox[2],
                         face_model.bbox[1] + face_model.bbox[3])
            near_face = [
                h for h in windows if tracking.windows_intersect(windows[h], face_rect)
            ]
            if near_face:
                skin_now = skin_mask(
                    rgb,
                    signer_model if signer_model is not None else self.general_model,
                    cfg.skin_threshold,
                )
                fg = resolve_face_occlusion(
                    depth, face_model, cfg.face_depth_threshold, cfg.face_update_rate
                )
                cand = cand | (fg & skin_now)
            else:
                face_model.update(depth, rate=cfg.face_update_rate)

            blobs = clean_mask(cand, min_area=cfg.min_blob_area)
            preds = {
                h: HandPrediction(
                    position=tuple(predicted[h].position),
                    box=tuple(predicted[h].box),
                    depth=predicted[h].last_depth,
                )
                for h in predicted
            }

            overlap = tracking.detect_overlap(
                windows["left"], windows["right"], blobs, cfg.min_blob_area
            )
            obs = {"left": None, "right": None}
            if overlap and templates["left"] is not None and templates["right"] is not None:
                joint = max(blobs, key=lambda b: b.area)
                lc, rc, _same = resolve_hand_over_hand(
                    joint,
                    templates["left"],
                    templates["right"],
                    preds["left"].position,
                    preds["right"].position,
                )
                obs["left"] = _placed_observation(
                    templates["left"], lc, shape, depth, "hand_over_hand"
                )
                obs["right"] = _placed_observation(
                    templates["right"], rc, shape, depth, "hand_over_hand"
                )
            else:
                left_obs, right_obs = rank_and_assign(
                    blobs, preds["left"], preds["right"], depth, cfg,
                    allow_shared=overlap,
                )
                obs = {"left": left_obs, "right": right_obs}
                for hand in ("left", "right"):
                    o = obs[hand]
                    if o is None:
                        continue
                    if near_face and _centroid_in_box(o.centroid, face_model.bbox):
                        o.occlusion = "hand_over_face"
                    else:
                        templates[hand] = o.mask.copy()

            for hand in ("left", "right"):
                track = predicted[hand]
                o = obs[hand]
                if o is not None and np.all(np.isfinite(o.centroid)):
                    track = tracking.update(
                        track,
                        o.centroid,
                        (o.bbox[2], o.bbox[3]),
                        cfg.measurement_noise,
                        depth=o.depth if np.isfinite(o.depth) else None,
                    )
                elif track.coast_count > cfg.max_coast:
                    jx, jy, jz = pose.joints[f"hand_{hand}"]
                    track = tracking.HandTrack.seed(
                        (jx, jy),
                        box=tuple(track.box),
                        depth=jz,
                        initial_cov=cfg.initial_covariance,
                    )
                tracks[hand] = track

            if signer_model is not None and t >= 1:
                hands_mask = np.zeros(shape, dtype=bool)
                for o in obs.values():
                    if o is not None:
                        x, y, w, h = o.bbox
                        hands_mask[y : y + h, x : x + w] |= o.mask
                if hands_mask.any():
                    nonskin = body & ~hands_mask & ~cand
                    signer_model = update_adaptive_model(
                        signer_model, rgb[hands_mask], rgb[nonskin], cfg.skin_alpha
                    )

            if debug_dir is not None:
                _dump_debug(debug_dir, t, gray, cand, obs, shape)

            result.frames.append(
                FrameResult(
                    left=obs["left"],
                    right=obs["right"],
                    left_track=tracks["left"],
                    right_track=tracks["right"],
                )
            )
            prev_gray = gray
        return result


def _centroid_in_box(centroid, bbox):
    x, y, w, h = bbox
    return x <= centroid[0] <= x + w and y <= centroid[1] <= y + h


def _dump_debug(debug_dir, t, gray, cand, obs, shape):
    from . import dataio
    from pathlib import Path

    out = Path(debug_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_pgm8(out / f"frame_{t:06d}.pgm", np.clip(gray, 0, 255).astype(np.uint8))
    dataio.write_pgm8(out / f"candidates_{t:06d}.pgm", cand.astype(np.uint8) * 255)
    hands = np.zeros(shape, dtype=np.uint8)
    for value, o in ((128, obs.get("left")), (255, obs.get("right"))):
        if o is None:
            continue
        x, y, w, h = o.bbox
        hands[y : y + h, x : x + w][o.mask] = value
    dataio.write_pgm8(out / f"hands_{t:06d}.pgm", hands)

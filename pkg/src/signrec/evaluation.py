"""Recognition experiments: per-signer leave-one-sample-out and
leave-one-signer-out with an optional signer-independent feature transform.

Held-out data never reaches model fitting: in the signer-independent
protocol both the feature transform and the sign models are built from the
training signers only, and the held-out signer's samples are merely
projected and scored.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .features import FeatureSample, FeatureSetSpec, zero_idle_hand
from .hmm import train_bank
from .signerlda import fit_transform, project

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    protocol: str                 # "SD-LOOCV" or "SI-LOSO"
    feature_spec: str
    lda_dims: int
    vocabulary: list[str]
    per_signer: dict[str, float]
    mean_accuracy: float          # unweighted mean over signers
    overall_accuracy: float       # trace / total of the confusion matrix
    confusion: np.ndarray         # (C, C) counts, rows = true class
    runtime_seconds: float
    config_snapshot: str

    def to_json(self):
        payload = {
            "protocol": self.protocol,
            "feature_spec": self.feature_spec,
            "lda_dims": self.lda_dims,
            "vocabulary": self.vocabulary,
            "per_signer": self.per_signer,
            "mean_accuracy": self.mean_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "confusion": self.confusion.astype(int).tolist(),
            "runtime_seconds": self.runtime_seconds,
            "config_snapshot": self.config_snapshot,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(
            protocol=data["protocol"],
            feature_spec=data["feature_spec"],
            lda_dims=data["lda_dims"],
            vocabulary=data["vocabulary"],
            per_signer=data["per_signer"],
            mean_accuracy=data["mean_accuracy"],
            overall_accuracy=data["overall_accuracy"],
            confusion=np.array(data["confusion"], dtype=np.int64),
            runtime_seconds=data["runtime_seconds"],
            config_snapshot=data["config_snapshot"],
        )


@dataclass
class _PreparedSample:
    signer: str
    label: str
    frames: np.ndarray        # selected feature matrix
    posxy: np.ndarray         # alignment features from the full matrix


def prepare_dataset(extracted, spec: FeatureSetSpec, cfg: Config):
    """Select the feature set (after optional idle-hand zeroing) and keep the
    hand positions used for alignment."""
    prepared = []
    for entry, sample in extracted:
        full = sample
        if cfg.zero_idle:
            full = zero_idle_hand(
                full, cfg.idle_path_threshold, cfg.idle_speed_threshold
            )
        prepared.append(
            _PreparedSample(
                signer=entry.signer_id,
                label=entry.sign_label,
                frames=full.select(spec).frames,
                posxy=full.posxy(),
            )
        )
    return prepared


def _by_class(samples):
    grouped: dict[str, list] = {}
    for s in samples:
        grouped.setdefault(s.label, []).append(s)
    return grouped


def _train_kwargs(cfg: Config):
    return dict(
        n_states=cfg.hmm_states,
        self_prob=cfg.hmm_self_prob,
        max_iter=cfg.hmm_max_iter,
        tol=cfg.hmm_tol,
        var_floor=cfg.variance_floor,
    )


def _map_ordered(worker, tasks, jobs):
    """Run tasks, possibly in parallel; results always in task order."""
    if jobs > 1 and len(tasks) > 1:
        import multiprocessing

        with multiprocessing.Pool(min(jobs, len(tasks))) as pool:
            return pool.map(worker, tasks)
    return [worker(t) for t in tasks]


def _sd_one_signer(args):
    """All leave-one-sample-out folds of a single signer.

    Removing one sample only changes the model of its own class, so the
    other classes reuse a model trained on all of their samples; the fold
    bank is exactly the one strict leave-one-out training would produce.
    """
    signer, own, vocabulary, cfg = args
    grouped = _by_class(own)
    if any(len(grouped.get(label, [])) < 2 for label in vocabulary):
        return signer, None, None
    index = {label: i for i, label in enumerate(vocabulary)}
    confusion = np.zeros((len(vocabulary), len(vocabulary)), dtype=np.int64)
    full_bank = train_bank(
        {label: [s.frames for s in grouped[label]] for label in vocabulary},
        **_train_kwargs(cfg),
    )
    correct = total = 0
    for label in vocabulary:
        group = grouped[label]
        for hold in range(len(group)):
            rest = [s.frames for k, s in enumerate(group) if k != hold]
            loo_bank = train_bank({label: rest}, **_train_kwargs(cfg))
            models = dict(full_bank.models)
            models[label] = loo_bank.models[label]
            bank = type(full_bank)(models=models, vocabulary=vocabulary)
            predicted, _ = bank.classify(group[hold].frames)
            confusion[index[label], index[predicted]] += 1
            correct += predicted == label
            total += 1
    return signer, correct / total, confusion


def run_sd_loocv(prepared, cfg: Config, feature_spec_name="", jobs=None) -> EvalReport:
    """Per signer: hold out each sample in turn, train on the rest."""
    start = time.monotonic()
    vocabulary = sorted({s.label for s in prepared})
    signers = sorted({s.signer for s in prepared})
    tasks = [
        (signer, [s for s in prepared if s.signer == signer], vocabulary, cfg)
        for signer in signers
    ]
    confusion = np.zeros((len(vocabulary), len(vocabulary)), dtype=np.int64)
    per_signer = {}
    for signer, accuracy, conf in _map_ordered(_sd_one_signer, tasks, jobs or cfg.jobs):
        if accuracy is None:
            log.warning("skipping signer %s: fewer than 2 samples for some class", signer)
            continue
        per_signer[signer] = accuracy
        confusion += conf

    if not per_signer:
        raise ValueError("no signer had enough samples for leave-one-out")
    return EvalReport(
        protocol="SD-LOOCV",
        feature_spec=feature_spec_name,
        lda_dims=0,
        vocabulary=vocabulary,
        per_signer=per_signer,
        mean_accuracy=float(np.mean(list(per_signer.values()))),
        overall_accuracy=float(np.trace(confusion) / max(confusion.sum(), 1)),
        confusion=confusion,
        runtime_seconds=time.monotonic() - start,
        config_snapshot=cfg.snapshot(),
    )


def _si_one_signer(args):
    """One held-out signer: fit the transform (if any) and the sign models on
    the training signers only, then score the held-out samples."""
    held_out, train, test, vocabulary, cfg, lda_dims, feature_spec_name = args
    grouped = _by_class(train)
    missing = [label for label in vocabulary if not grouped.get(label)]
    if missing:
        return held_out, None, None
    index = {label: i for i, label in enumerate(vocabulary)}
    confusion = np.zeros((len(vocabulary), len(vocabulary)), dtype=np.int64)

    transform = None
    if lda_dims > 0:
        transform = fit_transform(
            {label: [s.frames for s in grouped[label]] for label in vocabulary},
            {label: [s.posxy for s in grouped[label]] for label in vocabulary},
            out_dim=lda_dims,
            keep_frames=cfg.lda_resample_third,
            shrinkage=cfg.lda_shrinkage,
            shrinkage_max=cfg.lda_shrinkage_max,
            feature_spec=feature_spec_name,
        )

    def view(frames):
        return project(frames, transform) if transform is not None else frames

    bank = train_bank(
        {label: [view(s.frames) for s in grouped[label]] for label in vocabulary},
        **_train_kwargs(cfg),
    )
    correct = 0
    for s in test:
        predicted, _ = bank.classify(view(s.frames))
        confusion[index[s.label], index[predicted]] += 1
        correct += predicted == s.label
    return held_out, correct / len(test), confusion


def run_si_loso(prepared, cfg: Config, lda_dims=0, feature_spec_name="",
                jobs=None) -> EvalReport:
    """Leave one signer out; optionally fit the feature transform on the
    remaining signers and project everything through it before training."""
    start = time.monotonic()
    signers = sorted({s.signer for s in prepared})
    if len(signers) < 2:
        raise ValueError("leave-one-signer-out needs at least 2 signers")
    vocabulary = sorted({s.label for s in prepared})
    tasks = [
        (
            held_out,
            [s for s in prepared if s.signer != held_out],
            [s for s in prepared if s.signer == held_out],
            vocabulary,
            cfg,
            lda_dims,
            feature_spec_name,
        )
        for held_out in signers
    ]
    confusion = np.zeros((len(vocabulary), len(vocabulary)), dtype=np.int64)
    per_signer = {}
    for held_out, accuracy, conf in _map_ordered(_si_one_signer, tasks, jobs or cfg.jobs):
        if accuracy is None:
            log.warning("skipping held-out %s: some class has no training data", held_out)
            continue
        per_signer[held_out] = accuracy
        confusion += conf

    if not per_signer:
        raise ValueError("no held-out signer could be evaluated")
    return EvalReport(
        protocol="SI-LOSO",
        feature_spec=feature_spec_name,
        lda_dims=lda_dims,
        vocabulary=vocabulary,
        per_signer=per_signer,
        mean_accuracy=float(np.mean(list(per_signer.values()))),
        overall_accuracy=float(np.trace(confusion) / max(confusion.sum(), 1)),
        confusion=confusion,
        runtime_seconds=time.monotonic() - start,
        config_snapshot=cfg.snapshot(),
    )


# --- rendering ---------------------------------------------------------------

def _report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])
    writer.writerow(["protocol", report.protocol])
    writer.writerow(["feature_spec", report.feature_spec])
    writer.writerow(["lda_dims", report.lda_dims])
    writer.writerow(["classes", len(report.vocabulary)])
    writer.writerow(["mean_accuracy", f"{report.mean_accuracy:.6f}"])
    writer.writerow(["overall_accuracy", f"{report.overall_accuracy:.6f}"])
    writer.writerow(["runtime_seconds", f"{report.runtime_seconds:.3f}"])
    for signer in sorted(report.per_signer):
        writer.writerow(["signer_accuracy", signer, f"{report.per_signer[signer]:.6f}"])
    return buf.getvalue()


def _confusion_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted"] + report.vocabulary)
    for i, label in enumerate(report.vocabulary):
        writer.writerow([label] + [int(v) for v in report.confusion[i]])
    return buf.getvalue()


def _confusion_svg(report: EvalReport, cell=14, margin=64) -> str:
    n = len(report.vocabulary)
    size = margin + n * cell + 8
    peak = max(int(report.confusion.max()), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for i in range(n):
        for j in range(n):
            value = int(report.confusion[i, j])
            shade = 255 - int(round(215 * value / peak)) if value else 255
            color = f"rgb({shade},{shade},255)" if value else "rgb(245,245,245)"
            x = margin + j * cell
            y = margin + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell - 1}" height="{cell - 1}" '
                f'fill="{color}"/>'
            )
    for i, label in enumerate(report.vocabulary):
        y = margin + i * cell + cell - 4
        parts.append(
            f'<text x="{margin - 4}" y="{y}" font-size="8" text-anchor="end" '
            f'font-family="monospace">{label}</text>'
        )
        x = margin + i * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{margin - 6}" font-size="8" text-anchor="middle" '
            f'font-family="monospace">{i}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, out_dir):
    """Write report.csv, confusion.csv, confusion.svg and config.txt.

    Output bytes depend only on the report contents, so re-emitting the same
    report reproduces the files exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(_report_csv(report))
    (out / "confusion.csv").write_text(_confusion_csv(report))
    (out / "confusion.svg").write_text(_confusion_svg(report))
    (out / "config.txt").write_text(report.config_snapshot + "\n")
    (out / "report.json").write_text(report.to_json() + "\n")
    return out

"""End-to-end storyboard runs over the toy denoiser, plus report emission."""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__, kernels
from ..masks import DropoutParams
from .config import RunConfig
from .toy import StepContext, initial_latents, toy_denoise_step

REPORT_FORMAT = 1


def token_centers(height: int, width: int) -> np.ndarray:
    """(N, 2) cell centres (x, y) in normalized image coordinates, row-major."""
    ys, xs = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width,
                         indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def _by_subject(masks) -> dict:
    out: dict = {}
    for m in masks:
        out.setdefault(m.subject, []).append(m)
    return out


def subject_consistency(z: np.ndarray, masks) -> dict:
    """Mean cosine similarity of each subject's mean region feature across frame pairs.

    Subjects seen in fewer than two frames map to ``None``.
    """
    out = {}
    for subject, ms in _by_subject(masks).items():
        means = [z[m.frame][m.bits].mean(axis=0) for m in ms]
        sims = []
        for a, b in itertools.combinations(means, 2):
            denom = np.linalg.norm(a) * np.linalg.norm(b)
            sims.append(float(np.clip(a @ b / denom, -1.0, 1.0)) if denom > 0 else 0.0)
        out[subject] = float(np.mean(sims)) if sims else None
    return out


def pose_variance(z: np.ndarray, masks) -> dict:
    """Mean pairwise distance between a subject's feature-mass centroids across frames.

    Each token's mass is its squared feature norm; the centroid is the
    mass-weighted mean of the token centres inside the subject region.
    """
    shape = masks[0].shape
    centers = token_centers(*shape)
    out = {}
    for subject, ms in _by_subject(masks).items():
        cents = []
        for m in ms:
            f = z[m.frame][m.bits]
            mass = np.einsum("ij,ij->i", f, f)
            pts = centers[m.bits]
            total = mass.sum()
            cents.append(pts.mean(axis=0) if total <= 0 else mass @ pts / total)
        dists = [float(np.linalg.norm(a - b)) for a, b in itertools.combinations(cents, 2)]
        out[subject] = float(np.mean(dists)) if dists else None
    return out


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True, eq=False)
class RunReport:
    config: dict
    timesteps: list
    subjects: list
    leakage: dict                      # subject -> per-step series
    consistency: dict
    pose_variance: dict
    version: str = __version__
    backend: str = kernels.BACKEND
    wall_clock_s: float = field(default=0.0)

    @property
    def mean_leakage(self) -> float:
        return _mean(v for series in self.leakage.values() for v in series) or 0.0

    @property
    def mean_consistency(self) -> float | None:
        return _mean(self.consistency.values())

    @property
    def mean_pose_variance(self) -> float | None:
        return _mean(self.pose_variance.values())

    def to_document(self) -> dict:
        """Canonical document; wall clock time is kept out so reruns are byte-identical."""
        return {
            "format": REPORT_FORMAT,
            "version": self.version,
            "backend": self.backend,
            "config": self.config,
            "subjects": list(self.subjects),
            "timesteps": list(self.timesteps),
            "leakage": {s: list(self.leakage[s]) for s in self.subjects},
            "consistency": {s: self.consistency[s] for s in self.subjects},
            "pose_variance": {s: self.pose_variance[s] for s in self.subjects},
            "summary": {
                "mean_leakage": self.mean_leakage,
                "mean_consistency": self.mean_consistency,
                "mean_pose_variance": self.mean_pose_variance,
            },
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RunReport":
        return cls(config=doc["config"], timesteps=list(doc["timesteps"]),
                   subjects=list(doc["subjects"]), leakage=dict(doc["leakage"]),
                   consistency=dict(doc["consistency"]), pose_variance=dict(doc["pose_variance"]),
                   version=doc["version"], backend=doc["backend"])

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return self.to_document() == other.to_document()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RunResult:
    report: RunReport
    latents: np.ndarray
    subject_masks: list
    attention_masks: list = field(default_factory=list)   # (step, layer, AttentionMask)


def run_storyboard(config: RunConfig, *, keep_masks: bool = False, emit: bool = True) -> RunResult:
    """Run the full ladder from seeded latents; writes artifacts when ``out_dir`` is set."""
    started = time.perf_counter()
    toy = config.toy_config()
    ctx = StepContext.build(config.plan, toy)
    z = initial_latents(toy, config.seeds.noise)
    dropout = DropoutParams(config.beta_d, config.seeds.dropout, config.dropout_enabled)
    subjects = list(config.plan.subject_ids)
    leakage = {s: [] for s in subjects}
    dumped = []
    for step, t in enumerate(config.ladder[:-1]):
        z, trace = toy_denoise_step(z, t, ctx, bounding=config.bounding, merging=config.merging,
                                    schedule=config.schedule, dropout=dropout, step=step)
        for s in subjects:
            leakage[s].append(trace.leakage.get(s, 0.0))
        if keep_masks:
            dumped.extend((step, layer, m) for layer, m in enumerate(trace.masks) if m is not None)
    report = RunReport(
        config=replace(config, out_dir=None).to_document(),   # where it was written is not part of the run
        timesteps=list(config.ladder),
        subjects=subjects,
        leakage=leakage,
        consistency=subject_consistency(z, ctx.masks),
        pose_variance=pose_variance(z, ctx.masks),
        wall_clock_s=time.perf_counter() - started,
    )
    result = RunResult(report, z, list(ctx.masks), dumped)
    if emit and config.out_dir is not None:
        emit_report(result, config.out_dir, dump_masks=keep_masks)
    return result


# --------------------------------------------------------------------------
# artifacts


def canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def leakage_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "subject_id", "leakage"])
    for s in report.subjects:
        for step, value in enumerate(report.leakage[s]):
            writer.writerow([step, s, repr(float(value))])
    return buf.getvalue()


def pgm_bytes(bits: np.ndarray) -> bytes:
    """Binary (P5) greymap: allowed/set = 255, otherwise 0."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.where(bits, 255, 0).astype(np.uint8).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4] if len(parts) > 4 else b"", dtype=np.uint8)[: w * h].reshape(h, w)


def mask_csv(bits: np.ndarray) -> str:
    return "".join(",".join("1" if v else "0" for v in row) + "\n" for row in np.asarray(bits, dtype=bool))


def write_mask(directory: Path, stem: str, bits: np.ndarray) -> None:
    (directory / f"{stem}.pgm").write_bytes(pgm_bytes(bits))
    (directory / f"{stem}.csv").write_text(mask_csv(bits), encoding="ascii")


def write_subject_masks(directory: Path, masks) -> None:
    for m in masks:
        write_mask(directory, f"subject_{m.subject}_frame{m.frame}", m.grid2d())


def emit_report(result: RunResult | RunReport, out_dir, *, dump_masks: bool = False) -> list[Path]:
    """Write report.json, leakage.csv, timing.json and optionally the mask dumps."""
    report = result.report if isinstance(result, RunResult) else result
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "leakage.csv", out / "timing.json"]
    written[0].write_text(canonical_json(report.to_document()), encoding="utf-8")
    written[1].write_text(leakage_csv(report), encoding="utf-8")
    written[2].write_text(canonical_json({"wall_clock_s": report.wall_clock_s}), encoding="utf-8")
    if dump_masks and isinstance(result, RunResult):
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        write_subject_masks(mask_dir, result.subject_masks)
        for step, layer, mask in result.attention_masks:
            write_mask(mask_dir, f"step{step:03d}_layer{layer}_{report.config['bounding']}", mask.bits)
        written.append(mask_dir)
    return written


__all__ = [
    "RunReport", "RunResult", "run_storyboard", "emit_report", "subject_consistency",
    "pose_variance", "token_centers", "leakage_csv", "pgm_bytes", "read_pgm", "canonical_json",
]

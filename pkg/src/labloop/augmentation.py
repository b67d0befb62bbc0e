"""Curriculum lighting augmentation and episode ingestion.

Four perturbation operators (brightness, contrast, low illumination,
overexposure) share the same contract: integer per-channel formulas,
round-half-up, clamp to [0, 255], and exact identity at intensity 0.
Training epochs pass through three stages: clean frames first, then
fully perturbed frames with a linearly ramped intensity, then a
lambda-weighted blend of clean and perturbed — the easy-to-hard schedule.
Stage 1 consumes no randomness; stages 2 and 3 draw exactly one sample
per frame (the operator choice), so augmented datasets replay bit-exactly
from a seed.

Episodes live in a simple directory layout (meta.json, frames/*.ppm,
states.json, actions.json); loaders check stream lengths agree.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError, EpochOutOfRange, IoError, LengthMismatch, ShapeMismatch
from .executor import ActionChunk
from .types import Observation, RobotState

OP_KINDS = ("brightness", "contrast", "low_illumination", "overexposure")

BRIGHTNESS_SHIFT_SCALE = 64


@dataclass(frozen=True)
class AugmentationOp:
    kind: str
    alpha: float

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation op {self.kind!r}")
        object.__setattr__(self, "alpha", min(1.0, max(0.0, float(self.alpha))))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _finish(x: np.ndarray) -> np.ndarray:
    return np.clip(_round_half_up(x), 0, 255).astype(np.uint8)


def apply_op(image: np.ndarray, op: AugmentationOp) -> np.ndarray:
    """Apply one lighting perturbation; alpha=0 is the identity for all ops."""
    if image.dtype != np.uint8:
        raise ValueError("augmentation operates on uint8 images")
    p = image.astype(np.float64)
    a = op.alpha
    if op.kind == "brightness":
        shift = float(_round_half_up(np.float64(a * BRIGHTNESS_SHIFT_SCALE)))
        out = p + shift
    elif op.kind == "contrast":
        out = (p - 128.0) * (1.0 + a) + 128.0
    elif op.kind == "low_illumination":
        out = p * (1.0 - a)
    else:  # overexposure
        out = p * (1.0 - a) + 255.0 * a
    return _finish(out)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Stage boundaries and the intensity ramp of the training curriculum."""

    stage1_end: int
    stage2_end: int
    total_epochs: int
    alpha_start: float = 0.1
    alpha_max: float = 0.8
    mix_lambda: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.stage1_end < self.stage2_end < self.total_epochs:
            raise ValueError("stage boundaries must satisfy 0 < stage1_end < stage2_end < total_epochs")
        if not 0.0 <= self.alpha_start <= self.alpha_max <= 1.0:
            raise ValueError("need 0 <= alpha_start <= alpha_max <= 1")
        if not 0.0 <= self.mix_lambda <= 1.0:
            raise ValueError("mix_lambda must be within [0, 1]")

    def stage_of(self, epoch: int) -> int:
        if not 0 <= epoch < self.total_epochs:
            raise EpochOutOfRange(f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch < self.stage1_end:
            return 1
        if epoch < self.stage2_end:
            return 2
        return 3

    @classmethod
    def default_for(cls, total_epochs: int, alpha_start: float = 0.1, alpha_max: float = 0.8,
                    mix_lambda: float = 0.5) -> "CurriculumSchedule":
        # default split: first 40% clean, next 30% perturbed, final 30% mixed
        stage1 = max(1, int(total_epochs * 0.4))
        stage2 = max(stage1 + 1, int(total_epochs * 0.7))
        if stage2 >= total_epochs:
            stage2 = total_epochs - 1
        return cls(stage1_end=stage1, stage2_end=stage2, total_epochs=total_epochs,
                   alpha_start=alpha_start, alpha_max=alpha_max, mix_lambda=mix_lambda)

    def to_dict(self) -> dict:
        return {
            "stage1_end": self.stage1_end,
            "stage2_end": self.stage2_end,
            "total_epochs": self.total_epochs,
            "alpha_start": self.alpha_start,
            "alpha_max": self.alpha_max,
            "lambda": self.mix_lambda,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumSchedule":
        return cls(
            stage1_end=int(d["stage1_end"]),
            stage2_end=int(d["stage2_end"]),
            total_epochs=int(d["total_epochs"]),
            alpha_start=float(d.get("alpha_start", 0.1)),
            alpha_max=float(d.get("alpha_max", 0.8)),
            mix_lambda=float(d.get("lambda", 0.5)),
        )


def alpha_schedule(epoch: int, sched: CurriculumSchedule) -> float:
    """Perturbation intensity: 0 through stage 1, then a linear ramp from
    alpha_start to alpha_max at the final epoch."""
    stage = sched.stage_of(epoch)  # raises on out-of-range epochs
    if stage == 1:
        return 0.0
    ramp_span = (sched.total_epochs - 1) - sched.stage1_end
    if ramp_span == 0:
        return sched.alpha_max
    frac = (epoch - sched.stage1_end) / ramp_span
    return sched.alpha_start + (sched.alpha_max - sched.alpha_start) * frac


def _curriculum_with_op(
    image: np.ndarray, epoch: int, sched: CurriculumSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, str | None]:
    stage = sched.stage_of(epoch)
    if stage == 1:
        return image.copy(), None
    kind = OP_KINDS[int(rng.integers(0, len(OP_KINDS)))]
    aug = apply_op(image, AugmentationOp(kind=kind, alpha=alpha_schedule(epoch, sched)))
    if stage == 2:
        return aug, kind
    lam = sched.mix_lambda
    blended = lam * image.astype(np.float64) + (1.0 - lam) * aug.astype(np.float64)
    return _finish(blended), kind


def curriculum_observation(
    image: np.ndarray, epoch: int, sched: CurriculumSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Stage-dependent frame: clean, perturbed, or lambda-blended.

    Stage 1 returns the input bytes untouched and consumes no randomness;
    stages 2 and 3 consume exactly one draw (the uniform operator choice).
    """
    output, _ = _curriculum_with_op(image, epoch, sched, rng)
    return output


def action_mse_loss(predicted: ActionChunk, target: ActionChunk) -> float:
    """Mean squared error over every scalar action component."""
    if predicted.horizon != target.horizon:
        raise ShapeMismatch(f"horizons differ: {predicted.horizon} vs {target.horizon}")
    a = np.asarray(predicted.actions, dtype=np.float64)
    b = np.asarray(target.actions, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# --- episode storage ---------------------------------------------------------


@dataclass
class Episode:
    frames: list[Observation]
    states: list[RobotState]
    actions: list[tuple[float, ...]]
    instruction: str
    task_key: str

    def __post_init__(self) -> None:
        if not (len(self.frames) == len(self.states) == len(self.actions)):
            raise LengthMismatch("frames, states and actions must have equal lengths")

    def __len__(self) -> int:
        return len(self.frames)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM writer expects HxWx3 uint8")
    h, w = image.shape[:2]
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read frame {path}: {exc}") from exc
    m = re.match(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise DecodeError(f"{path} is not a binary P6 pixmap")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise DecodeError(f"{path}: only 8-bit pixmaps supported (maxval {maxval})")
    data = blob[m.end():]
    expected = w * h * 3
    if len(data) < expected:
        raise DecodeError(f"{path}: truncated pixel data")
    return np.frombuffer(data[:expected], dtype=np.uint8).reshape(h, w, 3).copy()


def write_episode(directory: str | Path, episode: Episode) -> Path:
    """Persist an episode in the directory layout ingest_episode reads."""
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    meta = {"instruction": episode.instruction, "task_key": episode.task_key, "num_frames": len(episode)}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    for i, obs in enumerate(episode.frames):
        write_ppm(directory / "frames" / f"{i:05d}.ppm", obs.image)
    (directory / "states.json").write_text(
        json.dumps([s.to_dict() for s in episode.states], indent=2), encoding="utf-8"
    )
    (directory / "actions.json").write_text(
        json.dumps([list(a) for a in episode.actions]), encoding="utf-8"
    )
    return directory


def ingest_episode(path: str | Path) -> Episode:
    """Load one episode directory; all three streams must align."""
    directory = Path(path)
    meta_path = directory / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DecodeError(f"{meta_path} is not valid JSON: {exc}") from exc
    frame_paths = sorted((directory / "frames").glob("*.ppm"))
    frames = [
        Observation(image=read_ppm(p), timestamp=i, camera_id="episode") for i, p in enumerate(frame_paths)
    ]
    try:
        states_raw = json.loads((directory / "states.json").read_text(encoding="utf-8"))
        actions_raw = json.loads((directory / "actions.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"episode stream missing: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DecodeError(f"episode stream not valid JSON: {exc}") from exc
    states = [RobotState.from_dict(s) for s in states_raw]
    actions = [tuple(float(x) for x in frame) for frame in actions_raw]
    lengths = {len(frames), len(states), len(actions)}
    if len(lengths) != 1 or not frames:
        raise LengthMismatch(
            f"episode streams disagree: frames={len(frames)} states={len(states)} actions={len(actions)}"
        )
    declared = int(meta.get("num_frames", len(frames)))
    if declared != len(frames):
        raise LengthMismatch(f"meta declares {declared} frames, directory has {len(frames)}")
    return Episode(
        frames=frames,
        states=states,
        actions=actions,
        instruction=meta.get("instruction", ""),
        task_key=meta.get("task_key", ""),
    )


def augment_episode(
    episode_dir: str | Path,
    out_dir: str | Path,
    epoch: int,
    sched: CurriculumSchedule,
    seed: int,
) -> dict:
    """Write perturbed frames for one epoch plus a manifest of applied ops."""
    episode = ingest_episode(episode_dir)
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    stage = sched.stage_of(epoch)
    alpha = alpha_schedule(epoch, sched)
    manifest: dict = {
        "episode": str(episode_dir),
        "epoch": epoch,
        "stage": stage,
        "alpha": alpha,
        "lambda": sched.mix_lambda,
        "seed": seed,
        "frames": [],
    }
    for i, obs in enumerate(episode.frames):
        output, op_kind = _curriculum_with_op(obs.image, epoch, sched, rng)
        write_ppm(out / "frames" / f"{i:05d}.ppm", output)
        manifest["frames"].append({"index": i, "op": op_kind, "alpha": alpha if op_kind else 0.0})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest

"""Per-frame 21-dim geometric features and their temporal assembly.

Feature layout per frame (21 values):
  [0:9)   three unit 3D vanishing directions (3 x 3, slot-major)
  [9:15)  three 2D vanishing points, diagonal-normalized and clamped
  [15:18) outside distances (diagonal-normalized, clamped)
  [18:21) visibility flags
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Intrinsics, normalize_direction_real_h, unproject_h
from .errors import NoLines, TooShort
from .lines import FrameLines, LineSegment
from .vanishing import RansacConfig, estimate_vanishing_points

FEATURE_DIM = 21
COORD_CLAMP = 8.0
REAL = "real"
GENERATED = "generated"


@dataclass
class FeatureSequence:
    video_id: str
    label: str                      # "real" | "generated"
    features: np.ndarray            # (T, 21)
    frames: list[FrameLines]        # retained for geometry-head pretraining
    k_ref: Intrinsics
    vp2d: np.ndarray                # (T, 3, 2) raw pixel VPs (unclamped)
    visible: np.ndarray             # (T, 3) 0/1
    assignments: list[np.ndarray]   # per frame: segment -> slot or -1

    @property
    def T(self) -> int:
        return self.features.shape[0]

    def to_dict(self) -> dict:
        lines = []
        for t, fl in enumerate(self.frames):
            lines.append({
                "frame": fl.frame_index,
                "width": fl.width,
                "height": fl.height,
                "segments": [s.as_list() for s in fl.segments],
                "vp_assign": self.assignments[t].tolist(),
                "vp2d": self.vp2d[t].tolist(),
                "visible": self.visible[t].astype(int).tolist(),
            })
        return {
            "video_id": self.video_id,
            "label": self.label,
            "T": self.T,
            "features": self.features.tolist(),
            "lines": lines,
            "k_ref": self.k_ref.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSequence":
        frames = []
        assignments = []
        vp2d = []
        visible = []
        for rec in d["lines"]:
            frames.append(FrameLines(
                frame_index=int(rec["frame"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                segments=[LineSegment(*xy) for xy in rec["segments"]],
            ))
            assignments.append(np.asarray(rec["vp_assign"], dtype=int))
            vp2d.append(rec["vp2d"])
            visible.append(rec["visible"])
        return cls(
            video_id=d["video_id"],
            label=d["label"],
            features=np.asarray(d["features"], dtype=float),
            frames=frames,
            k_ref=Intrinsics.from_dict(d["k_ref"]),
            vp2d=np.asarray(vp2d, dtype=float),
            visible=np.asarray(visible, dtype=float),
            assignments=assignments,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSequence":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _match_slots(dirs: list[np.ndarray | None], memory: np.ndarray) -> tuple[int, ...]:
    """Permutation sending detected index -> slot, maximizing the summed
    |dot| with the per-slot direction memory over visible detections.
    Sign-invariant; deterministic tie-break by permutation order."""
    best_perm = (0, 1, 2)
    best_score = -1.0
    for perm in itertools.permutations((0, 1, 2)):
        score = 0.0
        for det, slot in enumerate(perm):
            if dirs[det] is not None:
                score += abs(float(dirs[det] @ memory[:, slot]))
        if score > best_score + 1e-15:
            best_score = score
            best_perm = perm
    return best_perm


def build_sequence(
    frames: list[tuple[FrameLines, Intrinsics]],
    domain: str,
    k_ref: Intrinsics | None = None,
    ransac: RansacConfig | None = None,
    video_id: str = "",
) -> FeatureSequence:
    """Estimate per-frame vanishing points, normalize directions for the
    given domain, associate VP identities over time, and stack Tx21 features.

    Frames that raise NoLines become all-invisible zero rows. Slot identity
    memory starts at the camera axes (canonicalizing the first visible
    frame) and holds the last seen direction per slot thereafter.
    """
    if domain not in (REAL, GENERATED):
        raise ValueError(f"domain must be '{REAL}' or '{GENERATED}', got {domain!r}")
    if len(frames) < 2:
        raise TooShort(f"need at least 2 frames, got {len(frames)}")
    if k_ref is None:
        from .camera import reference_intrinsics
        k_ref = reference_intrinsics([k for _, k in frames])

    T = len(frames)
    feats = np.zeros((T, FEATURE_DIM))
    vp2d_raw = np.zeros((T, 3, 2))
    visible = np.zeros((T, 3))
    assignments: list[np.ndarray] = []
    frame_list: list[FrameLines] = []
    memory = np.eye(3)  # per-slot direction memory, init = camera axes

    for t, (fl, k_t) in enumerate(frames):
        frame_list.append(fl)
        try:
            est = estimate_vanishing_points(fl, k_t if domain == REAL else k_ref, ransac)
        except NoLines:
            assignments.append(np.zeros(len(fl), dtype=int) - 1)
            continue

        dirs: list[np.ndarray | None] = [None, None, None]
        for i in range(3):
            if est.m[i] > 0:
                if domain == REAL:
                    dirs[i] = normalize_direction_real_h(est.vph[i], k_t, k_ref)
                else:
                    dirs[i] = unproject_h(est.vph[i], k_ref)
        perm = _match_slots(dirs, memory)

        remap = np.zeros(3, dtype=int)
        diag = fl.diagonal
        for det, slot in enumerate(perm):
            remap[det] = slot
            if dirs[det] is None:
                continue
            memory[:, slot] = dirs[det]
            visible[t, slot] = 1.0
            vp2d_raw[t, slot] = est.vp2d[det]
            feats[t, 3 * slot:3 * slot + 3] = dirs[det]
            feats[t, 9 + 2 * slot:9 + 2 * slot + 2] = np.clip(
                est.vp2d[det] / diag, -COORD_CLAMP, COORD_CLAMP)
            feats[t, 15 + slot] = min(est.d[det], COORD_CLAMP)
            feats[t, 18 + slot] = 1.0
        a = est.assignments.copy()
        mask = a >= 0
        a[mask] = remap[a[mask]]
        assignments.append(a)

    return FeatureSequence(
        video_id=video_id,
        label=domain,
        features=feats,
        frames=frame_list,
        k_ref=k_ref,
        vp2d=vp2d_raw,
        visible=visible,
        assignments=assignments,
    )

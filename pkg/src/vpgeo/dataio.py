"""Reading and writing the on-disk formats (see FORMATS.md)."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .camera import Intrinsics, rescale_intrinsics
from .errors import IoError
from .features import FeatureSequence, build_sequence
from .lines import FrameLines, LineSegment
from .synthworld import mask_frame_segments, stable_hash
from .vanishing import RansacConfig

MIN_SEGMENT_LENGTH = 12.0


def read_segments_jsonl(path, min_length: float = MIN_SEGMENT_LENGTH) -> list[FrameLines]:
    """One frame per line: {"frame", "width", "height", "segments"}.
    Segments shorter than min_length are dropped; endpoints are clamped to
    the frame rectangle."""
    frames = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        w, h = int(rec["width"]), int(rec["height"])
        segs = []
        for x1, y1, x2, y2 in rec["segments"]:
            s = LineSegment(float(np.clip(x1, 0, w)), float(np.clip(y1, 0, h)),
                            float(np.clip(x2, 0, w)), float(np.clip(y2, 0, h)))
            if s.length >= min_length:
                segs.append(s)
        frames.append(FrameLines(frame_index=int(rec["frame"]), width=w, height=h,
                                 segments=segs))
    frames.sort(key=lambda f: f.frame_index)
    return frames


def read_intrinsics_sidecar(path, n_frames: int,
                            frame_size: tuple[int, int] | None = None) -> list[Intrinsics]:
    """Either {"frames": [{fx,fy,cx,cy}, ...]} or a single {fx,fy,cx,cy},
    optionally carrying "resolution": [W, H]; a single-object sidecar is
    rescaled when its resolution differs from the frames'."""
    data = json.loads(Path(path).read_text())
    if "frames" in data:
        ks = [Intrinsics.from_dict(d) for d in data["frames"]]
        if len(ks) != n_frames:
            raise IoError(f"intrinsics sidecar has {len(ks)} frames, expected {n_frames}")
        return ks
    k = Intrinsics.from_dict(data)
    if frame_size is not None and "resolution" in data:
        sidecar_size = tuple(data["resolution"])
        if tuple(frame_size) != sidecar_size:
            k = rescale_intrinsics(k, sidecar_size, frame_size)
    return [k] * n_frames


def extract_sample(
    sample_dir,
    domain: str,
    video_id: str = "",
    ransac: RansacConfig | None = None,
    mask_ratio: float = 0.0,
    mask_seed: int = 0,
) -> FeatureSequence:
    """Segments + intrinsics sidecar -> feature sequence, optionally block
    masking each frame's segments first (foreground-removal analog)."""
    sample_dir = Path(sample_dir)
    frames = read_segments_jsonl(sample_dir / "segments.jsonl")
    if not frames:
        raise IoError(f"no frames in {sample_dir}")
    intr = read_intrinsics_sidecar(sample_dir / "intrinsics.json", len(frames),
                                   frame_size=(frames[0].width, frames[0].height))
    if mask_ratio > 0.0:
        frames = [
            mask_frame_segments(
                f, mask_ratio,
                np.random.default_rng(stable_hash(mask_seed, video_id, f.frame_index)))
            for f in frames
        ]
    return build_sequence(list(zip(frames, intr)), domain=domain,
                          ransac=ransac, video_id=video_id or sample_dir.name)


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise IoError(f"no manifest.json in {dataset_dir}")
    return json.loads(path.read_text())


def _extract_record(args) -> FeatureSequence:
    dataset_dir, rec, ransac, mask_ratio, mask_seed = args
    return extract_sample(
        Path(dataset_dir) / rec["path"],
        domain=rec["label"],
        video_id=rec["id"],
        ransac=ransac,
        mask_ratio=mask_ratio,
        mask_seed=mask_seed,
    )


def extract_dataset(
    dataset_dir,
    split: str | None = None,
    ransac: RansacConfig | None = None,
    mask_ratio: float = 0.0,
    mask_seed: int = 0,
    workers: int = 1,
) -> list[FeatureSequence]:
    """Extract features for every manifest sample in a split (or all).
    Samples are independent, so extraction parallelizes without changing
    the result."""
    manifest = load_manifest(dataset_dir)
    records = [r for r in manifest["samples"] if split is None or r["split"] == split]
    jobs = [(str(dataset_dir), rec, ransac, mask_ratio, mask_seed) for rec in records]
    if workers > 1 and len(jobs) > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            return pool.map(_extract_record, jobs)
    return [_extract_record(j) for j in jobs]


def read_image_grayscale(path) -> np.ndarray:
    """PGM/PNG (or anything Pillow reads) -> float intensity grid in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=float) / 255.0

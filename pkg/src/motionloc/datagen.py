"""Synthetic two-stream corpus with weak video-level labels.

Each video carries an appearance stream and a motion stream (T x d each).
The motion stream is action-discriminative: inside an action interval it
follows the class motion prototype, outside it is low-energy noise. The
appearance stream carries deliberate confounders: a fraction of background
snippets look like an action class while their motion stays background,
mimicking stationary narration frames that fool appearance-only models.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numcore import split_rng

MAGIC = b"MLOC1"

_PROTO_STREAM = 0
_VIDEO_STREAM = 1

MIN_INTERVAL_LEN = 8
MAX_INTERVAL_LEN = 16
MIN_CONFOUNDER_LEN = 4
MAX_CONFOUNDER_LEN = 8
PROTOTYPE_NORM = 3.0
# box smoothing length for feature noise; keeps unit variance while giving
# adjacent snippets correlated features (videos change slowly)
NOISE_SMOOTHING = 4


class GenerationError(RuntimeError):
    """Interval placement failed after the retry budget."""


class CorpusFormatError(ValueError):
    """A corpus file on disk is malformed."""


@dataclass(frozen=True)
class CorpusSpec:
    n_train: int = 200
    n_test: int = 50
    T: int = 64
    d: int = 16
    C: int = 5
    confounder_rate: float = 0.3
    noise_sigma: float = 0.3
    seed: int = 7

    def validate(self) -> None:
        for name in ("n_train", "n_test", "T", "d", "C"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.confounder_rate <= 1.0:
            raise ValueError("confounder_rate must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class SyntheticVideo:
    id: str
    T: int
    appearance: np.ndarray            # T x d
    motion: np.ndarray                # T x d
    gt_intervals: list[tuple[int, int, int]]  # (start, end inclusive, class)
    label: np.ndarray                 # multi-hot, length C
    confounder_idx: list[int] = field(default_factory=list)

    def gt_mask(self) -> np.ndarray:
        """Binary snippet mask, 1 inside any ground-truth interval."""
        mask = np.zeros(self.T, dtype=np.float64)
        for s, e, _ in self.gt_intervals:
            mask[s : e + 1] = 1.0
        return mask

    def validate(self, C: int) -> None:
        if not self.gt_intervals:
            raise ValueError(f"{self.id}: needs at least one interval")
        for s, e, c in self.gt_intervals:
            if not (0 <= s <= e < self.T):
                raise ValueError(f"{self.id}: bad interval ({s}, {e})")
            if not 0 <= c < C:
                raise ValueError(f"{self.id}: bad class {c}")
        expect = np.zeros(C)
        for _, _, c in self.gt_intervals:
            expect[c] = 1.0
        if not np.array_equal(expect, self.label):
            raise ValueError(f"{self.id}: label inconsistent with intervals")
        if not (np.isfinite(self.appearance).all() and np.isfinite(self.motion).all()):
            raise ValueError(f"{self.id}: non-finite features")


def videos_equal(a: SyntheticVideo, b: SyntheticVideo) -> bool:
    return (
        a.id == b.id
        and a.T == b.T
        and a.gt_intervals == b.gt_intervals
        and np.array_equal(a.label, b.label)
        and a.confounder_idx == b.confounder_idx
        and np.array_equal(a.appearance, b.appearance)
        and np.array_equal(a.motion, b.motion)
    )


def _smoothed_noise(rng: np.random.Generator, T: int, d: int) -> np.ndarray:
    """Unit-variance Gaussian noise with short-range temporal correlation."""
    L = NOISE_SMOOTHING
    white = rng.standard_normal((T + L - 1, d))
    out = np.zeros((T, d))
    for w in range(L):
        out += white[w : w + T]
    return out / np.sqrt(L)


def _place_intervals(rng: np.random.Generator, T: int,
                     lengths: list[int]) -> list[int]:
    """Sample non-overlapping starts by rejection; error after 100 attempts."""
    for _ in range(100):
        starts = [int(rng.integers(0, T - ln + 1)) if T >= ln else -1
                  for ln in lengths]
        if any(s < 0 for s in starts):
            continue
        spans = sorted(zip(starts, lengths))
        if all(spans[i][0] + spans[i][1] <= spans[i + 1][0]
               for i in range(len(spans) - 1)):
            return starts
    raise GenerationError(f"could not place intervals of lengths {lengths} in T={T}")


def _generate_video(spec: CorpusSpec, vid: str, rng: np.random.Generator,
                    motion_protos: np.ndarray, appearance_protos: np.ndarray,
                    background_proto: np.ndarray) -> SyntheticVideo:
    T, d, C = spec.T, spec.d, spec.C
    n_int = int(rng.integers(1, 4))
    n_cls = int(rng.integers(1, min(2, C) + 1))
    n_cls = min(n_cls, n_int)
    classes = rng.choice(C, size=n_cls, replace=False)
    interval_classes = [int(classes[i]) if i < n_cls else int(rng.choice(classes))
                        for i in range(n_int)]
    max_len = min(MAX_INTERVAL_LEN, T)
    min_len = min(MIN_INTERVAL_LEN, max_len)
    lengths = [int(rng.integers(min_len, max_len + 1)) for _ in range(n_int)]
    starts = _place_intervals(rng, T, lengths)

    intervals = sorted(
        (s, s + ln - 1, c) for s, ln, c in zip(starts, lengths, interval_classes)
    )
    label = np.zeros(C)
    for _, _, c in intervals:
        label[c] = 1.0
    label_classes = [c for c in range(C) if label[c] == 1.0]

    sigma = spec.noise_sigma
    appearance = np.tile(background_proto, (T, 1)) + sigma * _smoothed_noise(rng, T, d)
    motion = sigma * _smoothed_noise(rng, T, d)

    inside = np.zeros(T, dtype=bool)
    for s, e, c in intervals:
        inside[s : e + 1] = True
        motion[s : e + 1] = motion_protos[c] + sigma * _smoothed_noise(rng, e - s + 1, d)
        appearance[s : e + 1] = (
            appearance_protos[c] + sigma * _smoothed_noise(rng, e - s + 1, d)
        )

    # Confounders are contiguous background segments that look like one of
    # the video's own action classes (a narration still reusing the action
    # backdrop) while their motion stays at background level. The per-video
    # budget is confounder_rate of the background snippet count, spent on
    # runs of a few snippets each.
    confounder_idx: list[int] = []
    occupied = inside.copy()
    budget = int(round(spec.confounder_rate * int((~inside).sum())))
    while budget > 0:
        run_len = min(budget, int(rng.integers(MIN_CONFOUNDER_LEN,
                                               MAX_CONFOUNDER_LEN + 1)))
        placed = False
        while run_len >= 1:
            starts = [t for t in range(T - run_len + 1)
                      if not occupied[t : t + run_len].any()]
            if starts:
                s = int(starts[int(rng.integers(0, len(starts)))])
                c = int(rng.choice(label_classes))
                appearance[s : s + run_len] = (
                    appearance_protos[c]
                    + sigma * _smoothed_noise(rng, run_len, d)
                )
                occupied[s : s + run_len] = True
                confounder_idx.extend(range(s, s + run_len))
                budget -= run_len
                placed = True
                break
            run_len -= 1
        if not placed:
            break
    confounder_idx.sort()

    # freeze to f32 precision once so disk round trips are lossless
    appearance = appearance.astype(np.float32).astype(np.float64)
    motion = motion.astype(np.float32).astype(np.float64)

    video = SyntheticVideo(
        id=vid, T=T, appearance=appearance, motion=motion,
        gt_intervals=[tuple(iv) for iv in intervals], label=label,
        confounder_idx=confounder_idx,
    )
    video.validate(C)
    return video


def generate_corpus(spec: CorpusSpec) -> tuple[list[SyntheticVideo], list[SyntheticVideo]]:
    """Deterministic (train, test) lists; every stream derives from spec.seed."""
    spec.validate()
    proto_rng = split_rng(spec.seed, _PROTO_STREAM)

    def draw_protos(n):
        p = proto_rng.standard_normal((n, spec.d))
        norms = np.linalg.norm(p, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return PROTOTYPE_NORM * p / norms

    motion_protos = draw_protos(spec.C)
    appearance_protos = draw_protos(spec.C)
    background_proto = draw_protos(1)[0]

    def make(split: str, count: int, offset: int) -> list[SyntheticVideo]:
        return [
            _generate_video(
                spec, f"{split}-{i:04d}", split_rng(spec.seed, _VIDEO_STREAM, offset + i),
                motion_protos, appearance_protos, background_proto,
            )
            for i in range(count)
        ]

    train = make("train", spec.n_train, 0)
    test = make("test", spec.n_test, spec.n_train)
    return train, test


# ---------------------------------------------------------------------------
# on-disk format: manifest.json + one binary record per video


def _record_bytes(video: SyntheticVideo, d: int, C: int) -> bytes:
    parts = [MAGIC]
    parts.append(struct.pack("<IIII", video.T, d, C, len(video.gt_intervals)))
    for s, e, c in video.gt_intervals:
        parts.append(struct.pack("<III", s, e, c))
    parts.append(video.appearance.astype("<f4").tobytes(order="C"))
    parts.append(video.motion.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def _parse_record(raw: bytes, path: str) -> SyntheticVideo:
    def fail(offset: int, why: str):
        raise CorpusFormatError(f"{path}: offset {offset}: {why}")

    if raw[: len(MAGIC)] != MAGIC:
        fail(0, f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    try:
        T, d, C, n_int = struct.unpack_from("<IIII", raw, off)
    except struct.error:
        fail(off, "truncated header")
    off += 16
    intervals = []
    for _ in range(n_int):
        try:
            s, e, c = struct.unpack_from("<III", raw, off)
        except struct.error:
            fail(off, "truncated interval table")
        intervals.append((s, e, c))
        off += 12
    need = T * d * 4
    if len(raw) < off + 2 * need:
        fail(off, f"truncated features: need {2 * need} bytes, have {len(raw) - off}")
    appearance = np.frombuffer(raw, dtype="<f4", count=T * d, offset=off)
    off += need
    motion = np.frombuffer(raw, dtype="<f4", count=T * d, offset=off)
    off += need
    if len(raw) != off:
        fail(off, f"{len(raw) - off} trailing bytes")
    label = np.zeros(C)
    for s, e, c in intervals:
        if not (0 <= s <= e < T) or not 0 <= c < C:
            fail(0, f"invalid interval ({s}, {e}, {c})")
        label[c] = 1.0
    return SyntheticVideo(
        id="", T=T,
        appearance=appearance.astype(np.float64).reshape(T, d),
        motion=motion.astype(np.float64).reshape(T, d),
        gt_intervals=intervals, label=label,
    )


def save_corpus(path: str | Path, train: list[SyntheticVideo],
                test: list[SyntheticVideo], spec: CorpusSpec) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    def index(videos: list[SyntheticVideo]) -> list[dict]:
        entries = []
        for v in videos:
            fname = f"{v.id}.bin"
            (root / fname).write_bytes(_record_bytes(v, spec.d, spec.C))
            entries.append({
                "id": v.id,
                "file": fname,
                "label": [int(x) for x in v.label],
                "confounder_idx": list(v.confounder_idx),
            })
        return entries

    manifest = {
        "format": MAGIC.decode(),
        "spec": asdict(spec),
        "train": index(train),
        "test": index(test),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_corpus(path: str | Path) -> tuple[list[SyntheticVideo], list[SyntheticVideo], CorpusSpec]:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise CorpusFormatError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise CorpusFormatError(
            f"{manifest_path}: line {err.lineno}: {err.msg}") from err
    if manifest.get("format") != MAGIC.decode():
        raise CorpusFormatError(f"{manifest_path}: unknown format {manifest.get('format')!r}")
    spec = CorpusSpec(**manifest["spec"])

    def read(entries: list[dict]) -> list[SyntheticVideo]:
        videos = []
        for entry in entries:
            record = root / entry["file"]
            video = _parse_record(record.read_bytes(), str(record))
            video.id = entry["id"]
            video.confounder_idx = [int(t) for t in entry.get("confounder_idx", [])]
            video.validate(spec.C)
            videos.append(video)
        return videos

    return read(manifest["train"]), read(manifest["test"]), spec

"""Anticipation QA construction: frames -> fixed-length clips -> templated QA.

Annotation files are per-video CSVs (``<video>.csv``) of 1 FPS frames with
the current phase, step and instruments plus remaining minutes. Feature
files (``<video>.feat``) hold one row per frame: two little-endian int64
header words ``T, D`` followed by ``T*D`` little-endian float64 values.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

log = logging.getLogger(__name__)

STEPS = (
    "nasal corridor creation", "anterior sphenoidotomy", "septum displacement",
    "sphenoid sinus clearance", "sellotomy", "haemostasis", "synthetic graft placement",
    "durotomy", "tumour excision", "fat graft placement", "gasket seal construct",
    "dural sealant", "nasal packing", "debris clearance", "end of step",
)
PHASES = ("nasal sphenoid", "sellar", "closure", "end of phase")
INSTRUMENTS = (
    "suction", "freer elevator", "pituitary rongeurs", "spatula dissector", "kerrisons",
    "cottle", "haemostatic foam", "micro doppler", "nasal cutting forceps", "stealth pointer",
    "irrigation syringe", "retractable knife", "dural scissors", "ring curette", "cup forceps",
    "bipolar forceps", "tissue glue", "surgical drill",
)
TIME_SCOPES = ("step", "phase", "overall")
CATEGORIES = ("future-phase", "future-step", "future-instrument", "time")
END_STEP, END_PHASE = STEPS[-1], PHASES[-1]
DEFAULT_TEST_VIDEOS = ("02", "06", "12", "13", "24")

_FEAT_HEADER = struct.Struct("<qq")
_CSV_FIELDS = ("frame", "phase", "step", "instruments", "valid",
               "min_phase", "min_step", "min_overall")


@dataclass(frozen=True)
class FrameAnnotation:
    video: str
    frame: int
    phase: str | None
    step: str | None
    instruments: tuple = ()
    valid: bool = True
    min_phase: float | None = None
    min_step: float | None = None
    min_overall: float | None = None
    # derived from the video timeline by annotate_future()
    next_phase: str | None = None
    next_step: str | None = None
    next_instruments: tuple | None = None


@dataclass(frozen=True)
class VideoClip:
    video: str
    t_end: int
    k: int
    last: FrameAnnotation = field(repr=False, compare=False, default=None)

    @property
    def frames(self):
        return list(range(self.t_end - self.k + 1, self.t_end + 1))


@dataclass
class QAItem:
    video: str
    t_end: int
    k: int
    category: str
    question: str
    answer: str
    label: object
    scope: str | None = None

    def to_json(self):
        return json.dumps({"video": self.video, "t_end": self.t_end, "k": self.k,
                           "category": self.category, "question": self.question,
                           "answer": self.answer, "label": self.label, "scope": self.scope},
                          ensure_ascii=False)

    @classmethod
    def from_dict(cls, d):
        return cls(video=str(d["video"]), t_end=int(d["t_end"]), k=int(d["k"]),
                   category=d["category"], question=d["question"], answer=d["answer"],
                   label=d["label"], scope=d.get("scope"))

    @property
    def key(self):
        return (self.video, self.t_end, self.k, self.question)


@dataclass(frozen=True)
class Template:
    tag: str
    question: str
    answer: str
    index: int = 0

    @property
    def category(self):
        return "time" if self.tag.startswith("time") else self.tag

    @property
    def scope(self):
        return self.tag.split(":", 1)[1] if self.tag.startswith("time:") else None


# ------------------------------------------------------------------ rendering

def round_half_up(x):
    return int(math.floor(x + 0.5))


def render_minutes(minutes):
    return f"{round_half_up(minutes)} minutes"


def render_label(category, label):
    if category == "time":
        return render_minutes(label)
    if category == "future-instrument":
        return ", ".join(label)
    return label


def render_answer(template, label):
    return template.answer.replace("{answer}", render_label(template.category, label))


# ------------------------------------------------------------------ templates

def default_templates_path():
    return resources.files("surgant") / "data" / "templates_v1.txt"


def load_templates(path=None):
    path = default_templates_path() if path is None else Path(path)
    templates = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3 or "{answer}" not in parts[2]:
            raise ConfigError(f"{path}:{lineno}: expected 'tag | question | answer {{answer}}'")
        tag = parts[0]
        if tag not in CATEGORIES[:3] and tag not in {f"time:{s}" for s in TIME_SCOPES}:
            raise ConfigError(f"{path}:{lineno}: unknown template tag {tag!r}")
        templates.append(Template(tag, parts[1], parts[2], index=len(templates)))
    if not templates:
        raise ConfigError(f"{path}: no templates")
    return templates


# ---------------------------------------------------------------- file io

def write_features(path, features):
    arr = np.ascontiguousarray(features, dtype="<f8")
    if arr.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(*arr.shape))
        fh.write(arr.tobytes())


def read_features(path):
    blob = Path(path).read_bytes()
    if len(blob) < _FEAT_HEADER.size:
        raise InputError(f"{path}: truncated feature file")
    t, d = _FEAT_HEADER.unpack_from(blob)
    data = np.frombuffer(blob, dtype="<f8", offset=_FEAT_HEADER.size)
    if data.size != t * d:
        raise InputError(f"{path}: header says {t}x{d} but holds {data.size} values")
    return data.astype(np.float64).reshape(t, d)


class FeatureStore:
    """Lazily loaded per-video feature matrices from ``<dir>/<video>.feat``."""

    def __init__(self, directory=None, arrays=None):
        self.directory = None if directory is None else Path(directory)
        self._cache = dict(arrays or {})

    def video(self, video):
        if video not in self._cache:
            if self.directory is None:
                raise InputError(f"no features for video {video!r}")
            self._cache[video] = read_features(self.directory / f"{video}.feat")
        return self._cache[video]

    def clip(self, video, t_end, k):
        feats = self.video(video)
        if t_end - k + 1 < 0 or t_end >= len(feats):
            raise InputError(f"clip {video}:{t_end} (k={k}) outside feature rows")
        return feats[t_end - k + 1: t_end + 1]


def _fmt_float(x):
    return "" if x is None else repr(float(x))


def write_annotations(path, frames):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CSV_FIELDS)
        for f in frames:
            writer.writerow([f.frame, f.phase or "", f.step or "", ";".join(f.instruments),
                             int(f.valid), _fmt_float(f.min_phase), _fmt_float(f.min_step),
                             _fmt_float(f.min_overall)])


def read_annotations(path, video=None):
    path = Path(path)
    video = path.stem if video is None else video
    frames = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            def num(key):
                return float(row[key]) if row.get(key) not in (None, "") else None

            inst = tuple(i for i in (row.get("instruments") or "").split(";") if i)
            frames.append(FrameAnnotation(
                video=video, frame=int(row["frame"]), phase=row.get("phase") or None,
                step=row.get("step") or None, instruments=inst,
                valid=row.get("valid", "1") not in ("0", "false", "False", ""),
                min_phase=num("min_phase"), min_step=num("min_step"),
                min_overall=num("min_overall")))
    frames.sort(key=lambda f: f.frame)
    return frames


def load_annotation_dir(directory):
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise InputError(f"no annotation CSVs in {directory}")
    return {p.stem: annotate_future(read_annotations(p)) for p in paths}


# ------------------------------------------------------------- future labels

def _spans(values):
    spans, start = [], 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            spans.append((start, i))
            start = i
    return spans


def annotate_future(frames):
    """Attach next phase / next step / next-step instruments to each frame."""
    if not frames:
        return []
    steps = [f.step for f in frames]
    phases = [f.phase for f in frames]
    out = list(frames)
    step_spans = _spans(steps)
    for i, (a, b) in enumerate(step_spans):
        if steps[a] is None:
            continue
        if i + 1 < len(step_spans):
            na, nb = step_spans[i + 1]
            nxt = steps[na]
            tools = set()
            for f in frames[na:nb]:
                tools.update(f.instruments)
            inst = tuple(x for x in INSTRUMENTS if x in tools) or None
        else:
            nxt, inst = END_STEP, None
        for j in range(a, b):
            out[j] = replace(out[j], next_step=nxt, next_instruments=inst)
    phase_spans = _spans(phases)
    for i, (a, b) in enumerate(phase_spans):
        if phases[a] is None:
            continue
        nxt = phases[phase_spans[i + 1][0]] if i + 1 < len(phase_spans) else END_PHASE
        for j in range(a, b):
            out[j] = replace(out[j], next_phase=nxt)
    return out


# ------------------------------------------------------------------- clips

def build_clips(frames_by_video, k, stride=1):
    """Sliding windows of ``k`` consecutive valid frames within each video."""
    if k < 1:
        raise ConfigError(f"clip length must be >= 1, got {k}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    clips = []
    for video in sorted(frames_by_video):
        frames = frames_by_video[video]
        run = 0  # consecutive valid frames ending at i
        for i, f in enumerate(frames):
            contiguous = i > 0 and f.frame == frames[i - 1].frame + 1
            run = (run + 1 if contiguous else 1) if f.valid else 0
            if run >= k and (f.frame - frames[0].frame - (k - 1)) % stride == 0:
                clips.append(VideoClip(video, f.frame, k, last=f))
    return clips


# ---------------------------------------------------------------------- QA

def _label_for(template, frame):
    if template.category == "future-phase":
        return frame.next_phase
    if template.category == "future-step":
        return frame.next_step
    if template.category == "future-instrument":
        return list(frame.next_instruments) if frame.next_instruments else None
    return {"step": frame.min_step, "phase": frame.min_phase,
            "overall": frame.min_overall}[template.scope]


def generate_qa(clip, templates, counters=None):
    """One item per template whose label exists on the clip's last frame."""
    items = []
    last = clip.last
    for tpl in templates:
        label = _label_for(tpl, last)
        if label is None:
            if counters is not None:
                counters["skipped"] += 1
            continue
        items.append(QAItem(video=clip.video, t_end=clip.t_end, k=clip.k,
                            category=tpl.category, question=tpl.question,
                            answer=render_answer(tpl, label), label=label, scope=tpl.scope))
    return items


def canonical_order(items, templates=None):
    rank = {t.question: t.index for t in templates or ()}
    return sorted(items, key=lambda it: (it.video, it.t_end, it.category,
                                         rank.get(it.question, 0), it.question))


def split_by_video(items, test_videos, known_videos=None):
    test = set(test_videos or ())
    known = {it.video for it in items} if known_videos is None else set(known_videos)
    unknown = sorted(test - known)
    if unknown:
        raise ConfigError(f"unknown test video ids: {', '.join(unknown)}")
    train = [it for it in items if it.video not in test]
    held = [it for it in items if it.video in test]
    return train, held


def statistics(items, clips=None, skipped=0, train=None, test=None):
    cats = Counter(it.category for it in items)
    scopes = Counter(it.scope for it in items if it.category == "time")
    total = len(items)
    stats = {
        "total": total,
        "categories": {c: cats.get(c, 0) for c in CATEGORIES},
        "time_scopes": {s: scopes.get(s, 0) for s in TIME_SCOPES},
        "time_fraction": (cats.get("time", 0) / total) if total else 0.0,
        "videos": dict(sorted(Counter(it.video for it in items).items())),
        "skipped": skipped,
    }
    if clips is not None:
        stats["clips"] = len(clips)
    if train is not None:
        stats["train"] = len(train)
        stats["test"] = len(test)
    return stats


def write_jsonl(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            fh.write(it.to_json())
            fh.write("\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [QAItem.from_dict(json.loads(line)) for line in fh if line.strip()]


def _video_items(frames, k, templates):
    counters = Counter()
    items = []
    clips = build_clips({frames[0].video: frames} if frames else {}, k)
    for clip in clips:
        items.extend(generate_qa(clip, templates, counters))
    return clips, items, counters["skipped"]


def build_dataset(frames_by_video, templates, k=8, test_videos=(), workers=1):
    """Clips, QA items and the train/test split for a set of videos.

    Output order is canonical regardless of ``workers``.
    """
    videos = sorted(frames_by_video)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda v: _video_items(frames_by_video[v], k, templates),
                                  videos))
    else:
        parts = [_video_items(frames_by_video[v], k, templates) for v in videos]
    clips = [c for p in parts for c in p[0]]
    items = canonical_order([i for p in parts for i in p[1]], templates)
    skipped = sum(p[2] for p in parts)
    if skipped:
        log.warning("skipped %d QA items with missing annotation fields", skipped)
    train, test = split_by_video(items, test_videos, known_videos=videos)
    stats = statistics(items, clips=clips, skipped=skipped, train=train, test=test)
    stats["k"] = k
    return items, train, test, stats


def write_stats(path, stats):
    Path(path).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------- synthetic

# (phase, step, relative dwell); "septum displacement" is skipped with p=0.25
SURGICAL_PLAN = (
    ("nasal sphenoid", "nasal corridor creation", 2.0),
    ("nasal sphenoid", "septum displacement", 1.0),
    ("nasal sphenoid", "anterior sphenoidotomy", 2.0),
    ("nasal sphenoid", "haemostasis", 0.8),
    ("nasal sphenoid", "sphenoid sinus clearance", 1.5),
    ("sellar", "sellotomy", 1.2),
    ("sellar", "durotomy", 0.8),
    ("sellar", "tumour excision", 3.0),
    ("sellar", "haemostasis", 0.8),
    ("sellar", "debris clearance", 1.0),
    ("closure", "synthetic graft placement", 1.0),
    ("closure", "fat graft placement", 1.2),
    ("closure", "haemostasis", 0.8),
    ("closure", "gasket seal construct", 1.0),
    ("closure", "dural sealant", 0.8),
    ("closure", "nasal packing", 1.2),
)
OPTIONAL_STEPS = {"septum displacement": 0.25}
STEP_INSTRUMENTS = {
    "nasal corridor creation": ("suction", "cottle"),
    "septum displacement": ("freer elevator", "cottle"),
    "anterior sphenoidotomy": ("kerrisons", "surgical drill"),
    "haemostasis": ("suction", "haemostatic foam", "bipolar forceps"),
    "sphenoid sinus clearance": ("suction", "pituitary rongeurs"),
    "sellotomy": ("kerrisons", "surgical drill"),
    "durotomy": ("micro doppler", "retractable knife"),
    "tumour excision": ("suction", "ring curette"),
    "debris clearance": ("irrigation syringe", "cup forceps"),
    "synthetic graft placement": ("spatula dissector",),
    "fat graft placement": ("spatula dissector", "cup forceps"),
    "gasket seal construct": ("stealth pointer", "dural scissors"),
    "dural sealant": ("tissue glue",),
    "nasal packing": ("nasal cutting forceps",),
}


@dataclass
class SynthConfig:
    seed: int = 0
    n_videos: int = 25
    minutes_per_video: float = 30.0
    feature_dim: int = 32
    dwell_jitter: float = 0.1
    static_scale: float = 2.0
    motion_scale: float = 3.0
    progress_scale: float = 2.0
    noise: float = 0.3
    blur_runs_per_10min: float = 3.0


def phase_motion(phase_index, t):
    """Zero-mean periodic cue whose direction of travel encodes the phase.

    Any window of 8 consecutive frames averages to exactly zero, so the
    phase is recoverable from frame order but not from a mean-pooled clip.
    """
    if phase_index == 0:
        return ((t % 8) - 3.5) / 3.5
    if phase_index == 1:
        return (3.5 - (t % 8)) / 3.5
    return ((t % 4) - 1.5) / 1.5


def _world(cfg):
    rng = np.random.default_rng([cfg.seed, 0])
    d = cfg.feature_dim
    if d < 4:
        raise ConfigError("synthetic features need feature_dim >= 4")
    protos = rng.normal(size=(len(STEPS), d))
    protos *= cfg.static_scale / np.linalg.norm(protos, axis=1, keepdims=True)
    q, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    return protos, q[:, 0], q[:, 1]


def _video_plan(rng, cfg):
    plan = [p for p in SURGICAL_PLAN
            if p[1] not in OPTIONAL_STEPS or rng.random() >= OPTIONAL_STEPS[p[1]]]
    unit = cfg.minutes_per_video * 60.0 / sum(w for _, _, w in SURGICAL_PLAN)
    out = []
    for phase, step, weight in plan:
        jitter = 1.0 + cfg.dwell_jitter * (2.0 * rng.random() - 1.0)
        out.append((phase, step, max(2, int(round(weight * unit * jitter)))))
    return out


def synth_video(video_index, cfg, world=None):
    """Frames and per-frame features for one synthetic procedure."""
    protos, motion_dir, progress_dir = _world(cfg) if world is None else world
    rng = np.random.default_rng([cfg.seed, 1, video_index])
    video = f"{video_index:02d}"
    plan = _video_plan(rng, cfg)
    n = sum(dur for _, _, dur in plan)
    phase_end = {}
    start = 0
    for phase, _, dur in plan:
        phase_end[phase] = start + dur
        start += dur
    invalid = np.zeros(n, dtype=bool)
    for _ in range(int(round(cfg.blur_runs_per_10min * n / 600.0))):
        a = int(rng.integers(0, n))
        invalid[a: a + int(rng.integers(1, 6))] = True
    feats = np.empty((n, cfg.feature_dim))
    noise = rng.normal(size=(n, cfg.feature_dim)) * cfg.noise
    frames = []
    t = 0
    for phase, step, dur in plan:
        p_idx = PHASES.index(phase)
        base = protos[STEPS.index(step)]
        for j in range(dur):
            feats[t] = (base + cfg.motion_scale * phase_motion(p_idx, t) * motion_dir
                        + cfg.progress_scale * (j / dur - 0.5) * progress_dir + noise[t])
            frames.append(FrameAnnotation(
                video=video, frame=t, phase=phase, step=step,
                instruments=STEP_INSTRUMENTS[step], valid=not invalid[t],
                min_phase=(phase_end[phase] - t) / 60.0, min_step=(dur - j) / 60.0,
                min_overall=(n - t) / 60.0))
            t += 1
    return video, frames, feats


def synth_annotations(out_dir, seed=0, n_videos=25, minutes_per_video=30.0, feature_dim=32,
                      **overrides):
    """Write ``<video>.csv`` and ``<video>.feat`` for each synthetic video."""
    cfg = SynthConfig(seed=seed, n_videos=n_videos, minutes_per_video=minutes_per_video,
                      feature_dim=feature_dim, **overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = _world(cfg)
    written = []
    for i in range(1, cfg.n_videos + 1):
        video, frames, feats = synth_video(i, cfg, world)
        write_annotations(out_dir / f"{video}.csv", frames)
        write_features(out_dir / f"{video}.feat", feats)
        written.append(video)
    return written


def synth_in_memory(cfg):
    """Frames (with future labels) and a FeatureStore without touching disk."""
    world = _world(cfg)
    frames, arrays = {}, {}
    for i in range(1, cfg.n_videos + 1):
        video, fr, feats = synth_video(i, cfg, world)
        frames[video] = annotate_future(fr)
        arrays[video] = feats
    return frames, FeatureStore(arrays=arrays)

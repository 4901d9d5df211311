"""Per-frame motion tagging, tag smoothing/segmentation, and template captions.

The label space is 27 translation combinations (left/static/right x
up/static/down x forward/static/backward) crossed with 7 rotation actions
(static, pitch up/down, yaw left/right, roll left/right); rotation is
always a single base action, never a combination.

Captions use a fixed, machine-invertible grammar over the vocabulary
truck/pedestal/dolly (translation), pan/tilt/roll (rotation) and
"stays still", with duration qualifiers "briefly" (< 25% of frames) and
"for a long stretch" (> 60%).  ``parse_caption`` is the shipped inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import Trajectory, kinematics

TRANS_X = ("left", "static", "right")
TRANS_Y = ("up", "static", "down")
TRANS_Z = ("forward", "static", "backward")
ROTATIONS = ("static", "pitch_up", "pitch_down", "yaw_left", "yaw_right",
             "roll_left", "roll_right")

# Compact single-letter / short codes for the JSON-lines tag export.
_X_CODE = {"left": "L", "static": "_", "right": "R"}
_Y_CODE = {"up": "U", "static": "_", "down": "D"}
_Z_CODE = {"forward": "F", "static": "_", "backward": "B"}
_ROT_CODE = {"static": "_", "pitch_up": "pitchU", "pitch_down": "pitchD",
             "yaw_left": "yawL", "yaw_right": "yawR",
             "roll_left": "rollL", "roll_right": "rollR"}
_X_FROM = {v: k for k, v in _X_CODE.items()}
_Y_FROM = {v: k for k, v in _Y_CODE.items()}
_Z_FROM = {v: k for k, v in _Z_CODE.items()}
_ROT_FROM = {v: k for k, v in _ROT_CODE.items()}


@dataclass(frozen=True)
class MotionTag:
    """Joint per-frame label: one value per translation axis + one rotation."""

    trans_x: str = "static"
    trans_y: str = "static"
    trans_z: str = "static"
    rotation: str = "static"

    def __post_init__(self):
        if self.trans_x not in TRANS_X:
            raise ValidationError(f"bad trans_x {self.trans_x!r}")
        if self.trans_y not in TRANS_Y:
            raise ValidationError(f"bad trans_y {self.trans_y!r}")
        if self.trans_z not in TRANS_Z:
            raise ValidationError(f"bad trans_z {self.trans_z!r}")
        if self.rotation not in ROTATIONS:
            raise ValidationError(f"bad rotation {self.rotation!r}")

    @property
    def is_static(self) -> bool:
        return (self.trans_x == "static" and self.trans_y == "static"
                and self.trans_z == "static" and self.rotation == "static")

    def atomic_labels(self) -> frozenset[str]:
        """Active direction labels, e.g. {right, forward, yaw_left}."""
        labels = [v for v in (self.trans_x, self.trans_y, self.trans_z) if v != "static"]
        if self.rotation != "static":
            labels.append(self.rotation)
        return frozenset(labels)

    def code(self) -> str:
        """Compact form like ``R__|yawL``."""
        return (_X_CODE[self.trans_x] + _Y_CODE[self.trans_y]
                + _Z_CODE[self.trans_z] + "|" + _ROT_CODE[self.rotation])

    @classmethod
    def from_code(cls, code: str) -> "MotionTag":
        try:
            trans, rot = code.split("|")
            return cls(_X_FROM[trans[0]], _Y_FROM[trans[1]], _Z_FROM[trans[2]],
                       _ROT_FROM[rot])
        except (KeyError, ValueError, IndexError):
            raise ValidationError(f"bad tag code {code!r}") from None


STATIC_TAG = MotionTag()


@dataclass(frozen=True)
class TagSegment:
    """Half-open frame range [start, end) carrying one tag."""

    start: int
    end: int
    tag: MotionTag

    def __post_init__(self):
        if not self.start < self.end:
            raise ValidationError(f"empty segment [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class TagThresholds:
    v_min: float = 0.1        # speed floor, fraction of the trajectory P95 speed
    dominance: float = 0.3    # axis active above this fraction of the max axis speed
    w_min: float = 0.02       # angular-rate floor, rad/s
    min_run: int = 5          # smoothing run length, frames

    def __post_init__(self):
        if self.v_min <= 0 or self.w_min <= 0 or self.min_run <= 0:
            raise ValidationError("thresholds must be positive")
        if not (0 < self.dominance <= 1):
            raise ValidationError("dominance must be in (0, 1]")


def tag_frames(traj: Trajectory, th: TagThresholds = TagThresholds()) -> list[MotionTag]:
    """Per-frame motion tags (length = len(traj) - 1).

    A frame is translation-static when its speed is below v_min times the
    trajectory's P95 speed; otherwise each axis is active (with its sign)
    iff its |velocity| is at least ``dominance`` times the largest axis
    |velocity| of that frame.  The rotation tag is the axis of largest
    |angular rate| when that rate reaches w_min, else static (ties resolve
    in pitch, yaw, roll order).
    """
    linear, angular = kinematics(traj)
    speeds = np.linalg.norm(linear, axis=1)
    p95 = float(np.percentile(speeds, 95)) if speeds.size else 0.0
    v_floor = th.v_min * p95

    tags: list[MotionTag] = []
    for v, w, speed in zip(linear, angular, speeds):
        if p95 == 0.0 or speed < v_floor or speed == 0.0:
            tx = ty = tz = "static"
        else:
            cut = th.dominance * float(np.max(np.abs(v)))
            tx = ("right" if v[0] > 0 else "left") if abs(v[0]) >= cut else "static"
            ty = ("down" if v[1] > 0 else "up") if abs(v[1]) >= cut else "static"
            tz = ("forward" if v[2] > 0 else "backward") if abs(v[2]) >= cut else "static"
        a = int(np.argmax(np.abs(w)))
        if abs(w[a]) >= th.w_min:
            rot = (("pitch_up", "pitch_down"), ("yaw_right", "yaw_left"),
                   ("roll_right", "roll_left"))[a][0 if w[a] > 0 else 1]
        else:
            rot = "static"
        tags.append(MotionTag(tx, ty, tz, rot))
    return tags


def _runs(tags: list[MotionTag]) -> list[list]:
    runs: list[list] = []
    for t in tags:
        if runs and runs[-1][0] == t:
            runs[-1][1] += 1
        else:
            runs.append([t, 1])
    return runs


def smooth_tags(tags: list[MotionTag], min_run: int = 5) -> list[MotionTag]:
    """Absorb runs shorter than ``min_run`` into their longer neighbor.

    Repeatedly takes the shortest run below min_run (leftmost on ties) and
    relabels it with the longer adjacent run's tag (equal-length neighbors:
    the preceding run wins).  A sequence that collapses to a single run is
    returned as-is even if shorter than min_run.
    """
    if not tags:
        raise ValidationError("tags must be non-empty")
    runs = _runs(tags)
    while len(runs) > 1:
        short = [(n, i) for i, (_, n) in enumerate(runs) if n < min_run]
        if not short:
            break
        _, i = min(short)
        if i == 0:
            j = 1
        elif i == len(runs) - 1:
            j = i - 1
        else:
            j = i - 1 if runs[i - 1][1] >= runs[i + 1][1] else i + 1
        runs[i][0] = runs[j][0]
        # merge equal-tag neighbors back together
        merged: list[list] = []
        for tag, n in runs:
            if merged and merged[-1][0] == tag:
                merged[-1][1] += n
            else:
                merged.append([tag, n])
        runs = merged
    out: list[MotionTag] = []
    for tag, n in runs:
        out.extend([tag] * n)
    return out


def segment_tags(tags: list[MotionTag]) -> list[TagSegment]:
    """Run-length encode a tag timeline into contiguous segments."""
    if not tags:
        raise ValidationError("tags must be non-empty")
    segments: list[TagSegment] = []
    start = 0
    for i in range(1, len(tags) + 1):
        if i == len(tags) or tags[i] != tags[start]:
            segments.append(TagSegment(start, i, tags[start]))
            start = i
    return segments


# Caption grammar tables -----------------------------------------------------

_TRANS_VERB = {
    "left": "trucks left", "right": "trucks right",
    "up": "pedestals up", "down": "pedestals down",
    "forward": "dollies forward", "backward": "dollies backward",
}
_ROT_VERB = {
    "pitch_up": "tilts up", "pitch_down": "tilts down",
    "yaw_left": "pans left", "yaw_right": "pans right",
    "roll_left": "rolls left", "roll_right": "rolls right",
}
_ROT_GERUND = {
    "pitch_up": "tilting up", "pitch_down": "tilting down",
    "yaw_left": "panning left", "yaw_right": "panning right",
    "roll_left": "rolling left", "roll_right": "rolling right",
}
_TERSE_TRANS = {
    "left": "truck left", "right": "truck right",
    "up": "pedestal up", "down": "pedestal down",
    "forward": "dolly forward", "backward": "dolly backward",
}
_TERSE_ROT = {
    "pitch_up": "tilt up", "pitch_down": "tilt down",
    "yaw_left": "pan left", "yaw_right": "pan right",
    "roll_left": "roll left", "roll_right": "roll right",
}

_VERB_TO_TRANS = {v: k for k, v in _TRANS_VERB.items()}
_VERB_TO_ROT = {v: k for k, v in _ROT_VERB.items()}
_GERUND_TO_ROT = {v: k for k, v in _ROT_GERUND.items()}
_TERSE_TO_TRANS = {v: k for k, v in _TERSE_TRANS.items()}
_TERSE_TO_ROT = {v: k for k, v in _TERSE_ROT.items()}

BRIEF_FRACTION = 0.25
LONG_FRACTION = 0.60


def _duration_bucket(fraction: float) -> str:
    if fraction < BRIEF_FRACTION:
        return "brief"
    if fraction > LONG_FRACTION:
        return "long"
    return "plain"


def caption_from_tags(segments: list[TagSegment], style: str = "sentence") -> str:
    """Deterministic caption for a segment timeline.

    Every segment becomes one clause (static segments read "stays still"),
    in temporal order, with a duration qualifier per the segment's share of
    the total frame count.  The grammar is invertible via parse_caption.
    """
    if not segments:
        raise ValidationError("need at least one segment")
    if style not in ("sentence", "terse"):
        raise ValidationError(f"unknown caption style {style!r}")
    total = sum(len(s) for s in segments)
    clauses = []
    for seg in segments:
        # fully static clauses read as plain "stays still" / "hold"
        bucket = "plain" if seg.tag.is_static else _duration_bucket(len(seg) / total)
        tag = seg.tag
        active = [v for v in (tag.trans_x, tag.trans_y, tag.trans_z) if v != "static"]
        if style == "sentence":
            if tag.is_static:
                clause = "stays still"
            elif active:
                clause = " and ".join(_TRANS_VERB[a] for a in active)
                if tag.rotation != "static":
                    clause += " while " + _ROT_GERUND[tag.rotation]
            else:
                clause = _ROT_VERB[tag.rotation]
            if bucket == "brief":
                clause += " briefly"
            elif bucket == "long":
                clause += " for a long stretch"
        else:
            parts = [_TERSE_TRANS[a] for a in active]
            if tag.rotation != "static":
                parts.append(_TERSE_ROT[tag.rotation])
            clause = "+".join(parts) if parts else "hold"
            if bucket == "brief":
                clause += " (brief)"
            elif bucket == "long":
                clause += " (long)"
        clauses.append(clause)
    if style == "sentence":
        return "The camera " + ", then ".join(clauses) + "."
    return "; ".join(clauses)


def parse_caption(text: str) -> list[MotionTag]:
    """Inverse of caption_from_tags: recover the segment label sequence."""
    text = text.strip()
    if text.startswith("The camera ") and text.endswith("."):
        clauses = text[len("The camera "):-1].split(", then ")
        return [_parse_sentence_clause(c) for c in clauses]
    return [_parse_terse_clause(c) for c in text.split("; ")]


def _parse_sentence_clause(clause: str) -> MotionTag:
    for suffix in (" for a long stretch", " briefly"):
        if clause.endswith(suffix):
            clause = clause[: -len(suffix)]
            break
    if clause == "stays still":
        return STATIC_TAG
    rotation = "static"
    if " while " in clause:
        clause, gerund = clause.split(" while ")
        rotation = _lookup(_GERUND_TO_ROT, gerund)
        parts = clause.split(" and ")
    elif clause in _VERB_TO_ROT:
        return MotionTag(rotation=_VERB_TO_ROT[clause])
    else:
        parts = clause.split(" and ")
    fields = {"rotation": rotation}
    for part in parts:
        direction = _lookup(_VERB_TO_TRANS, part)
        fields[_axis_of(direction)] = direction
    return MotionTag(**fields)


def _parse_terse_clause(clause: str) -> MotionTag:
    for suffix in (" (long)", " (brief)"):
        if clause.endswith(suffix):
            clause = clause[: -len(suffix)]
            break
    if clause == "hold":
        return STATIC_TAG
    fields = {}
    for part in clause.split("+"):
        if part in _TERSE_TO_TRANS:
            direction = _TERSE_TO_TRANS[part]
            fields[_axis_of(direction)] = direction
        elif part in _TERSE_TO_ROT:
            fields["rotation"] = _TERSE_TO_ROT[part]
        else:
            raise ValidationError(f"cannot parse caption fragment {part!r}")
    return MotionTag(**fields)


def _axis_of(direction: str) -> str:
    if direction in ("left", "right"):
        return "trans_x"
    if direction in ("up", "down"):
        return "trans_y"
    return "trans_z"


def _lookup(table: dict, phrase: str) -> str:
    try:
        return table[phrase]
    except KeyError:
        raise ValidationError(f"cannot parse caption fragment {phrase!r}") from None


def segments_to_json_records(segments: list[TagSegment]) -> list[dict]:
    """JSON-ready records for the tag timeline export."""
    return [{"start": s.start, "end": s.end, "tag": s.tag.code()} for s in segments]


def caption_vocabulary() -> list[str]:
    """Every word the caption grammar can emit (lowercase, sorted)."""
    words: set[str] = set()
    for phrase_table in (_TRANS_VERB, _ROT_VERB, _ROT_GERUND, _TERSE_TRANS, _TERSE_ROT):
        for phrase in phrase_table.values():
            words.update(phrase.split())
    words.update("the camera stays still and then while briefly for a long "
                 "stretch hold brief".split())
    return sorted(words)

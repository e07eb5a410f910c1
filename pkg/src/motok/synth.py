"""Deterministic synthetic motion generators for experiments and tests."""

from __future__ import annotations

import numpy as np

from .ddim import NoiseSchedule
from .motion import FRAME_DIM, MotionSequence


_BASE_POSE = np.zeros(FRAME_DIM)
_BASE_POSE[1] = 0.9   # pelvis height
_BASE_POSE[70] = 0.7  # object height

SEGMENT_FRAMES = 8
PATTERN_DECAY = 0.85


def _segment_patterns(rng: np.random.Generator, num_patterns: int) -> np.ndarray:
    """Orthonormal 8-frame sinusoid patterns, (num_patterns, 8, 75)."""
    t = np.arange(SEGMENT_FRAMES) / 30.0
    raw = np.empty((num_patterns, SEGMENT_FRAMES, FRAME_DIM))
    for i in range(num_patterns):
        freq = rng.uniform(0.5, 3.5, size=FRAME_DIM)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=FRAME_DIM)
        amp = rng.uniform(0.3, 1.0, size=FRAME_DIM)
        raw[i] = amp * np.sin(2.0 * np.pi * freq * t[:, None] + phase)
    flat, _ = np.linalg.qr(raw.reshape(num_patterns, -1).T)
    return flat.T.reshape(num_patterns, SEGMENT_FRAMES, FRAME_DIM)


def make_corpus(num_sequences: int = 16, num_frames: int = 96, seed: int = 0,
                fps: int = 30, num_patterns: int = 13) -> list[MotionSequence]:
    """A reproducible sinusoid-pattern corpus for tokenizer experiments.

    Every 8-frame segment is a random +/-1 mixture of shared orthonormal
    sinusoid patterns whose amplitudes decay geometrically, so each segment
    carries ``num_patterns`` binary attributes of steeply decreasing
    importance.  Reconstruction error is then governed by how many attributes
    a code can resolve: room for a clean capacity ladder across vocabulary
    sizes.
    """
    rng = np.random.default_rng(seed)
    patterns = _segment_patterns(rng, num_patterns)
    amplitudes = 1.9 * PATTERN_DECAY ** np.arange(num_patterns)
    weighted = amplitudes[:, None, None] * patterns

    # keep rotation channels comfortably inside (-2*pi, 2*pi)
    reach = np.abs(weighted).sum(axis=0).max()
    if reach > 1.8:
        weighted *= 1.8 / reach

    if num_frames % SEGMENT_FRAMES:
        raise ValueError(f"num_frames must be a multiple of {SEGMENT_FRAMES}")
    per_seq = num_frames // SEGMENT_FRAMES
    corpus = []
    for _ in range(num_sequences):
        bits = rng.choice([-1.0, 1.0], size=(per_seq, num_patterns))
        segments = _BASE_POSE + np.einsum("sp,ptc->stc", bits, weighted)
        corpus.append(MotionSequence(segments.reshape(num_frames, FRAME_DIM),
                                     fps=fps, is_canonical=False))
    return corpus


def make_walk_sequence(num_frames: int = 61, fps: int = 30, speed: float = 1.0,
                       arm_swing: float = 0.4, with_object: bool = False) -> MotionSequence:
    """Canonical straight walk along +z with swinging arms.

    Starts at the XZ origin with zero yaw; handy for placement tests where
    the footprint of the motion matters.
    """
    t = np.arange(num_frames) / fps
    frames = np.zeros((num_frames, FRAME_DIM))
    frames[:, 1] = 0.9
    frames[:, 2] = speed * t
    swing = arm_swing * np.sin(2.0 * np.pi * 1.5 * t)
    frames[:, 6 + 15 * 3 + 0] = swing   # left shoulder (joint 16)
    frames[:, 6 + 16 * 3 + 0] = -swing  # right shoulder (joint 17)
    if with_object:
        frames[:, 69] = 0.3
        frames[:, 70] = 0.8
        frames[:, 71] = speed * t + 0.4
    return MotionSequence(frames, fps=fps, is_canonical=True)


def toy_walk_track(num_waypoints: int, heading: float = 0.0, speed: float = 1.0) -> np.ndarray:
    """Per-second waypoint mean track of a straight walk: (W, 12).

    Columns are root translation, root orientation, object translation,
    object orientation; the object rides slightly ahead of the root.
    """
    steps = np.arange(num_waypoints, dtype=np.float64)
    cos, sin = np.cos(heading), np.sin(heading)
    track = np.zeros((num_waypoints, 12))
    track[:, 0] = speed * steps * sin
    track[:, 1] = 0.9
    track[:, 2] = speed * steps * cos
    track[:, 4] = heading
    carry = np.array([0.3, -0.1, 0.4])
    track[:, 6] = track[:, 0] + carry[0] * cos + carry[2] * sin
    track[:, 7] = track[:, 1] + carry[1]
    track[:, 8] = track[:, 2] - carry[0] * sin + carry[2] * cos
    return track


def toy_walk_denoiser(schedule: NoiseSchedule, num_waypoints: int,
                      sigma: float = 0.15, speed: float = 1.0):
    """Clean-sample predictor pulling noisy waypoint tracks toward a walk.

    The condition's ``text`` slot, when present, is read as a heading in
    radians; a ``coarse`` track from a first sampling pass is blended into
    the walk mean.  Analytically this is the Gaussian posterior mean around
    the heading-dependent track, so sampling stays deterministic per seed
    while varying smoothly with the guidance scale.
    """

    def denoiser(w_t: np.ndarray, t: int, condition) -> np.ndarray:
        heading = 0.0
        coarse = None
        if condition is not None:
            if condition.text is not None:
                heading = float(condition.text)
            coarse = condition.coarse
        # sized from the noisy input so strided coarse passes work too
        mean = toy_walk_track(w_t.shape[0], heading, speed)
        if coarse is not None:
            mean = 0.5 * (mean + np.asarray(coarse, dtype=np.float64))
        ab = schedule.alpha_bars[int(t)]
        denom = ab * sigma * sigma + (1.0 - ab)
        return (np.sqrt(ab) * sigma * sigma * w_t + (1.0 - ab) * mean) / denom

    return denoiser


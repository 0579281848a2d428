"""Synthetic sports sequences with ground truth and noisy feature sidecars.

Players wander a field with piecewise-linear motion; a panning, zooming camera
maps them to frame boxes. Appearance embeddings are an identity mean plus three
noise sources of increasing temporal correlation (white, fast drift, slow
drift). Their amplitudes are fitted on the realised draws so the frame-gap
identity accuracy hits configured targets.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .ingest import (
    SEQUENCE_FILES,
    FeatureRecord,
    FeatureTable,
    SequenceBundle,
    write_detections,
    write_features,
    write_homographies,
    write_tracks,
)
from .model import CHAR_SIZE, EOL, CharConfidences, Detection, EngineConfig, SequenceInfo, TrackPoint, TrackSet

log = logging.getLogger(__name__)

FIELD_SIZES = {"soccer": (105.0, 68.0), "hockey": (61.0, 26.0)}
PLAYER_HEIGHT_M = 1.8
# Frame-gap accuracy targets (percent) of a fine-tuned soccer re-id model.
SOCCER_REID_TARGETS = ((1, 99.1), (50, 79.1), (100, 72.2), (300, 62.2))
SCENARIO_FILE = "scenario.json"


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic sequence. Everything random derives from the seed."""

    name: str = "custom"
    sport: str = "soccer"
    n_frames: int = 600
    fps: float = 25.0
    width: int = 1920
    height: int = 1080
    players_per_team: int = 5
    n_referees: int = 1
    # (identity, first occluded frame, duration in frames)
    occlusions: tuple[tuple[int, int, int], ...] = ()
    speed: tuple[float, float] = (0.5, 3.0)  # m/s
    turn_interval: float = 40.0  # mean frames between direction changes
    jersey_legible_prob: float = 0.3
    jersey_dwell: float = 15.0  # mean frames a legibility state persists
    appearance_dim: int = 32
    identity_spread: float = 1.0  # identity offset relative to the shared team direction
    team_dim: int = 8
    team_noise: float = 0.35
    # (gap, accuracy %) pairs the appearance noise is fitted to; empty = noiseless
    reid_targets: tuple[tuple[int, float], ...] = SOCCER_REID_TARGETS
    noise: Optional[tuple[float, float, float]] = None  # explicit (white, fast, slow)
    fast_tau: float = 25.0
    slow_tau: float = 250.0
    camera_pan: float = 0.2  # pan amplitude as a fraction of field length
    camera_zoom: float = 0.25
    camera_cuts: float = 0.0  # abrupt camera jumps per 1000 frames
    camera_period: float = 1.0  # time scale of pan and zoom oscillations
    homography_dropout: float = 0.02
    registration_noise: float = 0.0  # metres; slowly varying error of the written homographies
    cluster: float = 0.0  # chance that a direction change heads for the moving ball

    def __post_init__(self):
        object.__setattr__(self, "occlusions", tuple(tuple(int(v) for v in o) for o in self.occlusions))
        object.__setattr__(self, "reid_targets", tuple((int(g), float(a)) for g, a in self.reid_targets))
        object.__setattr__(self, "speed", tuple(float(v) for v in self.speed))
        if self.noise is not None:
            object.__setattr__(self, "noise", tuple(float(v) for v in self.noise))
        if self.sport not in FIELD_SIZES:
            raise ValueError(f"unknown sport {self.sport!r}")
        if self.n_frames < 1 or self.players_per_team < 0 or self.n_referees < 0:
            raise ValueError("frame and identity counts must be non-negative")
        if self.n_identities < 1:
            raise ValueError("scenario needs at least one identity")
        for ident, start, dur in self.occlusions:
            if not 0 <= ident < self.n_identities:
                raise ValueError(f"occlusion names unknown identity {ident}")
            if dur < 1 or start < 0 or start + dur > self.n_frames:
                raise ValueError(f"occlusion ({ident}, {start}, {dur}) exceeds the sequence "
                                 f"of {self.n_frames} frames")

    @property
    def n_identities(self) -> int:
        return 2 * self.players_per_team + self.n_referees

    @property
    def field_size(self) -> tuple[float, float]:
        return FIELD_SIZES[self.sport]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("occlusions", "reid_targets"):
            d[k] = [list(v) for v in d[k]]
        d["speed"] = list(self.speed)
        d["noise"] = None if self.noise is None else list(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("occlusions", "reid_targets"):
            if k in d:
                d[k] = tuple(tuple(v) for v in d[k])
        if d.get("speed") is not None:
            d["speed"] = tuple(d["speed"])
        if d.get("noise") is not None:
            d["noise"] = tuple(d["noise"])
        return cls(**d)

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)


def load_spec(path: Union[str, Path]) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return ScenarioSpec.from_dict(data.get("spec", data))


# ---------------------------------------------------------------------------
# Motion and camera


def simulate_positions(spec: ScenarioSpec, rng: np.random.Generator,
                       ball_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Field positions, shape (n_frames, n_identities, 2), in metres.

    Headings change at random times; with ``spec.cluster > 0`` some changes
    steer towards a personal spot near a wandering ball, which bunches
    players together.
    """
    T, n = spec.n_frames, spec.n_identities
    L, W = spec.field_size
    clustering = spec.cluster > 0 and ball_rng is not None
    if clustering:
        ball = np.stack([L / 2.0 + 0.35 * L * _smooth_curve(T, ball_rng, 0.5),
                         W / 2.0 + 0.35 * W * _smooth_curve(T, ball_rng, 0.5)], axis=1)
        spot = ball_rng.normal(0.0, 6.0, (n, 2))
    margin = 1.0
    lo, hi = np.array([margin, margin]), np.array([L - margin, W - margin])
    pos = rng.uniform(lo, hi, size=(n, 2))
    heading = rng.uniform(0, 2 * np.pi, n)
    speed = rng.uniform(*spec.speed, n)
    out = np.empty((T, n, 2))
    turn_p = 1.0 / max(spec.turn_interval, 1.0)
    for t in range(T):
        out[t] = pos
        turn = rng.random(n) < turn_p
        heading = np.where(turn, heading + rng.normal(0.0, 1.2, n), heading)
        if clustering:
            d = ball[t] + spot - pos
            toward = np.arctan2(d[:, 1], d[:, 0]) + ball_rng.normal(0.0, 0.3, n)
            heading = np.where(turn & (ball_rng.random(n) < spec.cluster), toward, heading)
        speed = np.where(turn, rng.uniform(*spec.speed, n), speed)
        step = np.stack([np.cos(heading), np.sin(heading)], axis=1) * (speed / spec.fps)[:, None]
        pos = pos + step
        # reflect off the boundary
        for axis in range(2):
            below, above = pos[:, axis] < lo[axis], pos[:, axis] > hi[axis]
            pos[below, axis] = 2 * lo[axis] - pos[below, axis]
            pos[above, axis] = 2 * hi[axis] - pos[above, axis]
            flip = below | above
            if axis == 0:
                heading = np.where(flip, np.pi - heading, heading)
            else:
                heading = np.where(flip, -heading, heading)
    return out


def _smooth_curve(T: int, rng: np.random.Generator, period: float = 1.0) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)
    periods = period * np.array([700.0, 260.0, 90.0])
    weights = np.array([0.6, 0.3, 0.1])
    curve = sum(w * np.sin(2 * np.pi * t / p + rng.uniform(0, 2 * np.pi)) for w, p in zip(weights, periods))
    return curve / weights.sum()


@dataclass(frozen=True)
class Camera:
    """Per-frame affine view: pixel = scale * (field - center) + image centre."""

    scale: np.ndarray  # (T,)
    center: np.ndarray  # (T, 2)
    cuts: tuple[int, ...]
    width: int
    height: int

    def to_pixels(self, t: int, xy: np.ndarray) -> np.ndarray:
        return self.scale[t] * (xy - self.center[t]) + np.array([self.width / 2.0, self.height / 2.0])

    def frame_to_field(self, t: int) -> np.ndarray:
        s, (cx, cy) = self.scale[t], self.center[t]
        return np.array([[1.0 / s, 0.0, cx - self.width / (2.0 * s)],
                         [0.0, 1.0 / s, cy - self.height / (2.0 * s)],
                         [0.0, 0.0, 1.0]])


def simulate_camera(spec: ScenarioSpec, rng: np.random.Generator) -> Camera:
    T = spec.n_frames
    L, W = spec.field_size
    base = spec.width / (1.1 * L)
    p = spec.camera_period
    scale = base * (1.0 + spec.camera_zoom * (0.5 + 0.5 * _smooth_curve(T, rng, p)))
    cx = L / 2.0 + spec.camera_pan * L * _smooth_curve(T, rng, p)
    cy = W / 2.0 + 0.1 * spec.camera_pan * W * _smooth_curve(T, rng, p)
    n_cuts = rng.poisson(spec.camera_cuts * T / 1000.0) if spec.camera_cuts > 0 else 0
    cuts = tuple(sorted(set(int(c) for c in rng.integers(1, max(T, 2), n_cuts)))) if n_cuts else ()
    offset = np.zeros((T, 2))
    zoom_jump = np.ones(T)
    for c in cuts:
        offset[c:] += rng.uniform(-0.3, 0.3, 2) * np.array([L, W * 0.3])
        zoom_jump[c:] *= rng.uniform(0.8, 1.25)
    center = np.stack([cx, cy], axis=1) + offset
    return Camera(scale * zoom_jump, center, cuts, spec.width, spec.height)


# ---------------------------------------------------------------------------
# Appearance noise and calibration


def ou_process(rng: np.random.Generator, T: int, shape: tuple[int, ...], tau: float) -> np.ndarray:
    """Stationary unit-variance Ornstein-Uhlenbeck samples along axis 0."""
    rho = float(np.exp(-1.0 / tau))
    innov = rng.standard_normal((T,) + shape)
    out = np.empty_like(innov)
    out[0] = innov[0]
    k = np.sqrt(1.0 - rho * rho)
    for t in range(1, T):
        out[t] = rho * out[t - 1] + k * innov[t]
    return out


@dataclass
class AppearanceDraws:
    """Identity means and unit noise draws on the (frame, identity) grid."""

    mean: np.ndarray  # (n, D)
    white: np.ndarray  # (T, n, D)
    fast: np.ndarray
    slow: np.ndarray
    visible: np.ndarray  # (T, n) bool

    def grid(self, noise: Sequence[float], frames=slice(None)) -> np.ndarray:
        a, b, c = noise
        return (self.mean[None] + a * self.white[frames] + b * self.fast[frames]
                + c * self.slow[frames]).astype(np.float32)


def grid_gap_accuracy(X: np.ndarray, visible: np.ndarray, gap: int, stride: int = 1) -> float:
    """Frame-gap nearest-cosine accuracy when each identity has one row per frame.

    Equivalent to ``evaluation.gap_accuracy`` on the visible rows of the grid,
    optionally using every ``stride``-th query frame.
    """
    if gap == 0:
        return 100.0
    T, n = visible.shape
    if gap >= T:
        return float("nan")
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=2, keepdims=True)
    U = np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)
    A, B = U[:-gap:stride], U[gap::stride]
    va, vb = visible[:-gap:stride], visible[gap::stride]
    sims = np.einsum("tid,tjd->tij", A, B)
    sims = np.where(vb[:, None, :], sims, -np.inf)
    best = sims.argmax(axis=2)
    valid = va & vb
    if not valid.any():
        return float("nan")
    return float(100.0 * np.mean(best[valid] == np.broadcast_to(np.arange(n), valid.shape)[valid]))


def calibrate_noise(draws: AppearanceDraws, targets: Sequence[tuple[int, float]],
                    iters: int = 12, tol: float = 0.25, stride: int = 2,
                    upper: float = 3.0) -> tuple[float, float, float]:
    """Fit (white, fast, slow) amplitudes to frame-gap accuracy targets.

    The smallest gap fixes the white amplitude, a middle gap the fast drift
    and the largest gap the slow drift. Drift shared between nearby frames
    sharpens short-gap matching, so the fit is nested: for each trial slow
    amplitude the fast one is solved, and for each trial fast amplitude the
    white one.
    """
    targets = sorted(targets)
    if not targets:
        return (0.0, 0.0, 0.0)
    g_white, t_white = targets[0]
    g_fast, t_fast = targets[(len(targets) - 1) // 2]
    g_slow, t_slow = targets[-1]

    T = draws.visible.shape[0]

    def acc(noise, gap):
        if gap >= T:
            return 100.0
        q = np.arange(0, T - gap, stride)
        frames = np.concatenate([q, q + gap])
        X = draws.grid(noise, frames)
        v = grid_gap_accuracy(X, draws.visible[frames], len(q))
        return 100.0 if np.isnan(v) else v

    def solve(f, target):
        # f decreasing in its argument; returns (argument, value)
        lo, hi = 0.0, upper
        x, val = 0.0, f(0.0)
        if val <= target:
            return x, val
        for _ in range(iters):
            x = 0.5 * (lo + hi)
            val = f(x)
            if abs(val - target) <= tol:
                break
            lo, hi = (x, hi) if val > target else (lo, x)
        return x, val

    def white_for(b, c):
        return solve(lambda a: acc((a, b, c), g_white), t_white)[0]

    def fast_for(c):
        b, _ = solve(lambda b: acc((white_for(b, c), b, c), g_fast), t_fast)
        return b

    def slow_acc(c):
        b = fast_for(c)
        return acc((white_for(b, c), b, c), g_slow)

    c, _ = solve(slow_acc, t_slow)
    b = fast_for(c)
    a = white_for(b, c)
    return (float(a), float(b), float(c))


# ---------------------------------------------------------------------------
# Jersey reads and team embeddings


def jersey_numbers(spec: ScenarioSpec, rng: np.random.Generator) -> list[Optional[int]]:
    p = spec.players_per_team
    out: list[Optional[int]] = []
    for _ in range(2):
        out.extend(int(v) for v in rng.choice(np.arange(1, 100), size=p, replace=False))
    out.extend([None] * spec.n_referees)
    return out


def _peaked(rng: np.random.Generator, index: int, strength: float) -> np.ndarray:
    rest = rng.dirichlet(np.full(CHAR_SIZE, 0.5)) * (1.0 - strength)
    rest[index] += strength
    return np.clip(rest, 0.0, 1.0)


def char_reading(number: int, legible: bool, rng: np.random.Generator) -> CharConfidences:
    if not legible:
        c1, c2 = _peaked(rng, EOL, rng.uniform(0.5, 0.9)), rng.dirichlet(np.full(CHAR_SIZE, 0.5))
    else:
        q1, q2 = rng.uniform(0.6, 0.95, 2)
        if number < 10:
            c1, c2 = _peaked(rng, 1 + number, q1), _peaked(rng, EOL, q2)
        else:
            c1, c2 = _peaked(rng, 1 + number // 10, q1), _peaked(rng, 1 + number % 10, q2)
    # the sidecar stores 32-bit values; keep the in-memory bundle identical to the file
    return CharConfidences(c1.astype(np.float32), c2.astype(np.float32))


def legibility(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    """Two-state Markov legibility per identity, shape (n_frames, n_identities)."""
    T, n = spec.n_frames, spec.n_identities
    p = float(np.clip(spec.jersey_legible_prob, 0.0, 1.0))
    if p in (0.0, 1.0):
        return np.full((T, n), p == 1.0)
    leave_leg = 1.0 / spec.jersey_dwell
    leave_ill = leave_leg * p / (1.0 - p)
    state = rng.random(n) < p
    out = np.empty((T, n), dtype=bool)
    for t in range(T):
        out[t] = state
        u = rng.random(n)
        state = np.where(state, u >= leave_leg, u < leave_ill)
    return out


# ---------------------------------------------------------------------------
# Generation


@dataclass
class SyntheticSequence:
    spec: ScenarioSpec
    seed: int
    bundle: SequenceBundle
    gt: TrackSet
    identity: np.ndarray  # ground-truth identity per det_id
    noise: tuple[float, float, float]
    positions: np.ndarray
    camera: Camera

    def write(self, out_dir: Union[str, Path]) -> Path:
        return write_sequence(self, out_dir)


def generate(spec: ScenarioSpec, seed: int = 0, out_dir: Optional[Union[str, Path]] = None) -> SyntheticSequence:
    """Build a sequence from ``spec``; same (spec, seed) gives the same bytes."""
    root = np.random.SeedSequence([int(seed), 0x5EED])
    rngs = [np.random.default_rng(s) for s in root.spawn(8)]
    r_motion, r_cam, r_app, r_jersey, r_team, r_hom, r_ball, r_reg = rngs
    T, n, D = spec.n_frames, spec.n_identities, spec.appearance_dim
    positions = simulate_positions(spec, r_motion, r_ball)
    camera = simulate_camera(spec, r_cam)

    visible = np.ones((T, n), dtype=bool)
    for ident, start, dur in spec.occlusions:
        visible[start:start + dur, ident] = False

    team_of = np.array([0] * spec.players_per_team + [1] * spec.players_per_team + [2] * spec.n_referees)
    rows_t, rows_i = np.nonzero(visible)  # frame-major, then identity

    # appearance: identity means share a per-team direction
    centers = r_app.standard_normal((3, D)) / np.sqrt(D)
    offsets = r_app.standard_normal((n, D)) / np.sqrt(D)
    means = centers[team_of] + spec.identity_spread * offsets
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    scale = 1.0 / np.sqrt(D)
    white = r_app.standard_normal((T, n, D)) * scale
    fast = ou_process(r_app, T, (n, D), spec.fast_tau) * scale
    slow = ou_process(r_app, T, (n, D), spec.slow_tau) * scale
    draws = AppearanceDraws(means, white, fast, slow, visible)
    if spec.noise is not None:
        noise = spec.noise
    else:
        noise = calibrate_noise(draws, spec.reid_targets)
    appearance = draws.grid(noise)[rows_t, rows_i]

    numbers = jersey_numbers(spec, r_jersey)
    legible = legibility(spec, r_jersey)

    team_dim = spec.team_dim
    team_centers = r_team.standard_normal((3, team_dim))
    team_emb = (team_centers[team_of[rows_i]]
                + spec.team_noise * r_team.standard_normal((len(rows_i), team_dim))).astype(np.float32)

    H = spec.height
    detections, records, gt_points = [], {}, {i: [] for i in range(n)}
    for k, (t, i) in enumerate(zip(rows_t.tolist(), rows_i.tolist())):
        u, v = camera.to_pixels(t, positions[t, i])
        h = camera.scale[t] * PLAYER_HEIGHT_M
        w = 0.45 * h
        bbox = tuple(round(float(x), 2) for x in (u - w / 2.0, v - h / 2.0, w, h))
        detections.append(Detection(t, bbox, 1.0, k))
        gt_points[i].append(TrackPoint(t, bbox, 1.0, det_id=k))
        number = numbers[i]
        chars = None if number is None else char_reading(number, bool(legible[t, i]), r_jersey)
        records[k] = FeatureRecord(k, appearance[k], chars, None, team_emb[k], bool(team_of[i] == 2))

    protect = set()
    for c in camera.cuts:
        protect.update(range(c - 2, c + 3))
    protect.update((0, T - 1))
    drop = r_hom.random(T) < spec.homography_dropout
    err = None
    if spec.registration_noise > 0:
        err = ou_process(r_reg, T, (3,), 15.0) * spec.registration_noise
    homs = {}
    for t in range(T):
        if t not in protect and drop[t]:
            continue
        Hm = camera.frame_to_field(t)
        if err is not None:
            k = 1.0 + err[t, 2] / 100.0
            Hm = np.array([[k, 0.0, err[t, 0]], [0.0, k, err[t, 1]], [0.0, 0.0, 1.0]]) @ Hm
        homs[t] = Hm

    info = SequenceInfo(T, spec.fps, spec.width, H)
    table = FeatureTable(D, "embedding", team_dim, records)
    config = EngineConfig(field_extent=spec.field_size)
    bundle = SequenceBundle(detections, table, homs, None, config, info)
    gt = TrackSet({i: tuple(p) for i, p in gt_points.items() if p}, info)
    bundle.gt = gt
    seq = SyntheticSequence(spec, int(seed), bundle, gt, rows_i.astype(np.int64), noise, positions, camera)
    if out_dir is not None:
        write_sequence(seq, out_dir)
    return seq


def write_sequence(seq: SyntheticSequence, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = seq.bundle
    write_detections(b.detections, out / SEQUENCE_FILES["detections"], b.info)
    write_tracks(seq.gt, out / SEQUENCE_FILES["gt"])
    write_features(b.features, out / SEQUENCE_FILES["features"])
    write_homographies(b.homographies, out / SEQUENCE_FILES["homographies"])
    meta = {"seed": seq.seed, "noise": list(seq.noise), "spec": seq.spec.to_dict()}
    with open(out / SCENARIO_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# Presets and the ablation suite


def preset(name: str) -> ScenarioSpec:
    presets = {
        "tiny": ScenarioSpec(name="tiny", n_frames=10, players_per_team=1, n_referees=0,
                             reid_targets=()),
        "soccer": ScenarioSpec(name="soccer", n_frames=1200, players_per_team=7, n_referees=0),
        "hockey": ScenarioSpec(name="hockey", sport="hockey", n_frames=1200, players_per_team=6,
                               n_referees=2, speed=(1.0, 6.0)),
        "occlusion": occlusion_spec(),
    }
    if name not in presets:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return presets[name]


def occlusion_spec(duration: int = 300) -> ScenarioSpec:
    """Noise-free scene where identity 0 disappears for ``duration`` frames."""
    return ScenarioSpec(
        name=f"occlusion{duration}", n_frames=600, players_per_team=3, n_referees=0,
        occlusions=((0, 100, duration),), reid_targets=(), speed=(0.1, 0.4),
        camera_cuts=0.0, homography_dropout=0.0,
    )


REGISTRATION_NOISE = 2.0  # metres of drift in the frame-to-field registration
CLUSTER = 0.6  # pull of players toward the ball


def ablation_scene(seed: int, n_frames: int = 1200, players: int = 8, episodes: int = 2,
                   duration: tuple[int, int] = (100, 460), kind: str = "long") -> ScenarioSpec:
    """Crowded occlusion scene under a fast-moving camera, reproducible from ``seed``.

    Every identity vanishes ``episodes`` times for a duration drawn from
    ``duration`` while moving fast enough that its reappearance point is
    ambiguous.
    """
    rng = np.random.default_rng([int(seed), 0xAB1, len(kind)])
    n_ids = 2 * players
    occ = []
    for ident in range(n_ids):
        cursor = 10
        for k in range(episodes):
            room = (n_frames - cursor) // (episodes - k)
            dur = int(rng.integers(duration[0], min(duration[1], room - 30)))
            start = cursor + int(rng.integers(10, room - dur - 10))
            occ.append((ident, start, dur))
            cursor = start + dur + 10
    return ScenarioSpec(
        name=f"{kind}{seed}", n_frames=n_frames, players_per_team=players, n_referees=0,
        occlusions=tuple(occ), speed=(1.0, 6.0), turn_interval=30.0, camera_cuts=6.0,
        camera_pan=0.35, camera_zoom=0.5, camera_period=0.4, jersey_legible_prob=0.35,
        registration_noise=REGISTRATION_NOISE, cluster=CLUSTER,
    )


def feature_scene(seed: int) -> ScenarioSpec:
    """Occlusions short enough for a 9-level window, so identity cues decide."""
    return ablation_scene(seed, episodes=3, duration=(60, 240), kind="features")


def long_occlusion_scene(seed: int) -> ScenarioSpec:
    return ablation_scene(seed, episodes=2, duration=(100, 460), kind="layers")


@dataclass(frozen=True)
class AblationCase:
    name: str
    group: str  # "feature" or "layer"
    config: EngineConfig
    spec: ScenarioSpec
    seed: int
    train_spec: ScenarioSpec
    train_seed: int


FEATURE_CONFIGS = {
    "reid_only": dict(spatial_mode="frame", use_jersey=False, use_team=False),
    "reid_field": dict(spatial_mode="field", use_jersey=False, use_team=False),
    "reid_field_jersey": dict(spatial_mode="field", use_jersey=True, use_team=False),
}
LAYER_COUNTS = (7, 9, 10)
TRAIN_SEED_OFFSET = 1000


def ablation_suite(seed: int = 0) -> tuple[AblationCase, ...]:
    """Feature-channel cases on one scene and layer-count cases on a long-occlusion scene.

    Each case carries its test scene and a training scene drawn from the same
    generator with a different seed.
    """
    ts = seed + TRAIN_SEED_OFFSET
    fs, fs_train = feature_scene(seed), feature_scene(ts)
    ls, ls_train = long_occlusion_scene(seed), long_occlusion_scene(ts)
    cases = []
    for name, over in FEATURE_CONFIGS.items():
        cfg = EngineConfig(levels=9, field_extent=fs.field_size, **over)
        cases.append(AblationCase(name, "feature", cfg, fs, seed, fs_train, ts))
    for L in LAYER_COUNTS:
        cfg = EngineConfig(levels=L, field_extent=ls.field_size, **FEATURE_CONFIGS["reid_field_jersey"])
        cases.append(AblationCase(f"layers{L}", "layer", cfg, ls, seed, ls_train, ts))
    return tuple(cases)


@dataclass(frozen=True)
class AblationResult:
    name: str
    group: str
    hota: float
    deta: float
    assa: float
    n_tracks: int


def run_ablation(cases: Sequence[AblationCase], train_cfg=None,
                 train_levels: int = max(LAYER_COUNTS)) -> list[AblationResult]:
    """Train a logistic scorer per feature layout, then track and score every case.

    Cases sharing a feature layout share weights, trained at ``train_levels``
    on the training scene of the first such case; the test scene is tracked
    at each case's own level count.
    """
    from .evaluation import evaluate
    from .features import EdgeLayout, build_features
    from .hierarchy import run_hierarchy, training_graphs
    from .scorer import TrainConfig, init_weights, train_scorer

    train_cfg = train_cfg or TrainConfig(stage_iters=150, epochs=20)
    scenes: dict[tuple, SyntheticSequence] = {}

    def scene(spec, seed):
        key = (spec, seed)
        if key not in scenes:
            scenes[key] = generate(spec, seed)
        return scenes[key]

    weights = {}
    out = []
    for case in cases:
        key = (case.config.spatial_mode, case.config.use_jersey, case.config.use_team,
               case.train_spec, case.train_seed)
        if key not in weights:
            cfg = case.config.replace(levels=train_levels)
            train = scene(case.train_spec, case.train_seed)
            feats = build_features(train.bundle, cfg)
            graphs = training_graphs(feats, dict(enumerate(train.identity.tolist())), cfg)
            layout = EdgeLayout.from_config(cfg, feats.image_diag)
            init = init_weights("logistic", layout.names, train_levels, seed=cfg.seed)
            weights[key] = train_scorer(graphs, init, train_cfg).weights
        test = scene(case.spec, case.seed)
        feats = build_features(test.bundle, case.config)
        tracks = run_hierarchy(feats, weights[key], case.config, info=test.bundle.info)
        r = evaluate(tracks, test.gt)
        log.info("ablation %s: HOTA %.2f AssA %.2f tracks %d", case.name, r.hota, r.assa, len(tracks))
        out.append(AblationResult(case.name, case.group, r.hota, r.deta, r.assa, len(tracks)))
    return out

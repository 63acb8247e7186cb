"""Procedural pixel control tasks with optional distractor video backgrounds.

Two tasks cover the sparse and dense-reward regimes:
  dot_reacher       2-D point agent, sparse reward when on target
  pendulum_swingup  torque-limited damped pendulum, dense shaped reward

In noise_video mode the background is a temporally coherent procedural
video (drifting, rotating smoothed-noise octaves) instead of a constant
color. Train and eval episodes draw background seeds from disjoint pools,
so evaluation always sees unseen distractors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

TRAIN_POOL_BASE = 0
EVAL_POOL_BASE = 1_000_000
POOL_SIZE = 1_000_000

TASKS = ("dot_reacher", "pendulum_swingup")
BACKGROUNDS = ("clean", "noise_video")

CLEAN_BG_COLOR = np.array([0.25, 0.25, 0.32], dtype=np.float32)
AGENT_COLOR = np.array([0.15, 0.95, 0.25], dtype=np.float32)
TARGET_COLOR = np.array([0.95, 0.15, 0.15], dtype=np.float32)
ARM_COLOR = np.array([0.85, 0.85, 0.90], dtype=np.float32)
BOB_COLOR = np.array([0.95, 0.55, 0.10], dtype=np.float32)


@dataclass
class EnvConfig:
    task: str = "dot_reacher"
    image_size: int = 32
    channels: int = 3
    action_repeat: int = 2
    episode_length: int = 200          # policy steps, after action repeat
    background: str = "clean"
    background_seed_pool: str = "train"
    seed: int = 0
    dot_speed: float = 0.1             # arena units per inner step
    dot_goal_radius: float = 0.1
    frame_dump_dir: str | None = None
    log_csv: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.background_seed_pool not in ("train", "eval"):
            raise ValueError(f"unknown seed pool {self.background_seed_pool!r}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if self.action_repeat < 1:
            raise ValueError(f"action_repeat must be >= 1, got {self.action_repeat}")


@dataclass
class EnvStep:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class BackgroundVideo:
    """Deterministic distractor video: 3 drifting, rotating noise octaves.

    Frame t is a pure function of (seed, t); consecutive frames are close
    but never identical, imitating task-irrelevant natural video.
    """

    TEX = 48  # periodic texture side, pixels

    def __init__(self, seed: int, size: int):
        self.seed = int(seed)
        self.size = size
        rng = Rng(self.seed).child("background")
        self.textures = []
        self.scales = []
        self.spins = []
        self.angles = []
        self.drifts = []
        self.colors = []
        for k in range(3):
            tex = rng.uniform(0.0, 1.0, (self.TEX, self.TEX), dtype=np.float64)
            for _ in range(3):  # periodic box blur keeps the texture tileable
                acc = np.zeros_like(tex)
                for s in (-2, -1, 0, 1, 2):
                    acc += np.roll(tex, s, axis=0)
                tex = acc / 5.0
                acc = np.zeros_like(tex)
                for s in (-2, -1, 0, 1, 2):
                    acc += np.roll(tex, s, axis=1)
                tex = acc / 5.0
            tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-9)
            self.textures.append(tex.astype(np.float32))
            self.scales.append(10.0 * (2.0 ** k))
            self.angles.append(float(rng.uniform(0.0, 2 * np.pi)))
            self.spins.append(float(rng.uniform(0.015, 0.04)) * (1 if rng.uniform() < 0.5 else -1))
            drift = rng.uniform(0.35, 1.0, 2, dtype=np.float64)
            sign = np.where(rng.uniform(0.0, 1.0, 2) < 0.5, -1.0, 1.0)
            self.drifts.append(drift * sign)
            self.colors.append(rng.uniform(0.35, 1.0, 3, dtype=np.float32))
        self.weights = np.array([0.55, 0.30, 0.15], dtype=np.float32)

        s = self.size
        centers = (np.arange(s, dtype=np.float64) + 0.5) / s - 0.5
        self._gy, self._gx = np.meshgrid(centers, centers, indexing="ij")

    def _sample_wrap(self, tex: np.ndarray, cy: np.ndarray, cx: np.ndarray) -> np.ndarray:
        n = tex.shape[0]
        y0 = np.floor(cy).astype(np.int64)
        x0 = np.floor(cx).astype(np.int64)
        fy = (cy - y0).astype(np.float32)
        fx = (cx - x0).astype(np.float32)
        y0 %= n
        x0 %= n
        y1 = (y0 + 1) % n
        x1 = (x0 + 1) % n
        return ((1 - fy) * (1 - fx) * tex[y0, x0] + (1 - fy) * fx * tex[y0, x1]
                + fy * (1 - fx) * tex[y1, x0] + fy * fx * tex[y1, x1])

    def frame(self, t: int) -> np.ndarray:
        """(C, S, S) distractor frame for physics-frame index t."""
        out = np.zeros((self.size, self.size, 3), dtype=np.float32)
        for k in range(3):
            phi = self.angles[k] + self.spins[k] * t
            c, s = np.cos(phi), np.sin(phi)
            ry = (c * self._gy - s * self._gx) * self.scales[k] + self.drifts[k][0] * t
            rx = (s * self._gy + c * self._gx) * self.scales[k] + self.drifts[k][1] * t
            val = self._sample_wrap(self.textures[k], ry, rx)
            out += self.weights[k] * val[..., None] * self.colors[k]
        return np.clip(out, 0.0, 1.0).transpose(2, 0, 1)


def _disc_mask(gy, gx, cy, cx, radius):
    return (gy - cy) ** 2 + (gx - cx) ** 2 < radius ** 2


def _segment_mask(gy, gx, p0, p1, width):
    d = np.array(p1) - np.array(p0)
    length_sq = max(float(d @ d), 1e-12)
    t = ((gy - p0[0]) * d[0] + (gx - p0[1]) * d[1]) / length_sq
    t = np.clip(t, 0.0, 1.0)
    py = p0[0] + t * d[0]
    px = p0[1] + t * d[1]
    return (gy - py) ** 2 + (gx - px) ** 2 < width ** 2


class PixelEnv:
    """Common machinery: action repeat, rendering, background, episode clock."""

    def __init__(self, config: EnvConfig):
        self.config = config
        s = config.image_size
        centers = (np.arange(s, dtype=np.float32) + 0.5) / s
        self._gy, self._gx = np.meshgrid(centers, centers, indexing="ij")
        self._episode = -1
        self._t = None
        self._frame_index = 0
        self._done = True
        self._bg = None
        self._log_rows = []

    @property
    def action_dim(self) -> int:
        raise NotImplementedError

    def _reset_state(self, rng: Rng) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        """One inner physics step; returns the inner reward."""
        raise NotImplementedError

    def _combine_inner_rewards(self, rewards: list[float]) -> float:
        raise NotImplementedError

    def _draw_sprites(self, img: np.ndarray) -> None:
        raise NotImplementedError

    def _info(self) -> dict:
        raise NotImplementedError

    def reset(self, seed: int | None = None) -> EnvStep:
        self._episode += 1
        if seed is None:
            seed = self.config.seed + 7919 * self._episode
        rng = Rng(int(seed)).child("episode")
        self._reset_state(rng.child("physics"))
        if self.config.background == "noise_video":
            base = TRAIN_POOL_BASE if self.config.background_seed_pool == "train" else EVAL_POOL_BASE
            bg_seed = base + int(rng.child("bg").integers(0, POOL_SIZE))
            self._bg = BackgroundVideo(bg_seed, self.config.image_size)
        else:
            self._bg = None
        self._t = 0
        self._frame_index = 0
        self._done = False
        self._flush_log()
        step = EnvStep(self.render(), 0.0, False, self._info())
        self._log(step)
        self._dump_frame(step.observation)
        return step

    def step(self, action) -> EnvStep:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        action = np.clip(np.asarray(action, dtype=np.float32).reshape(-1), -1.0, 1.0)
        if action.shape[0] != self.action_dim:
            raise ValueError(f"action dim {action.shape[0]} != expected {self.action_dim}")
        inner = []
        for _ in range(self.config.action_repeat):
            inner.append(self._advance(action))
            self._frame_index += 1
        reward = float(self._combine_inner_rewards(inner))
        self._t += 1
        self._done = self._t >= self.config.episode_length
        step = EnvStep(self.render(), reward, self._done, self._info())
        self._log(step)
        self._dump_frame(step.observation)
        if self._done:
            self._flush_log()
        return step

    def render(self) -> np.ndarray:
        s = self.config.image_size
        if self._bg is not None:
            img = self._bg.frame(self._frame_index).copy()
        else:
            img = np.broadcast_to(CLEAN_BG_COLOR[:, None, None], (3, s, s)).copy()
        self._draw_sprites(img)
        return img

    # optional debugging outputs -------------------------------------------
    def _dump_frame(self, obs: np.ndarray) -> None:
        if not self.config.frame_dump_dir:
            return
        os.makedirs(self.config.frame_dump_dir, exist_ok=True)
        path = os.path.join(self.config.frame_dump_dir,
                            f"ep{self._episode:04d}_t{self._t:04d}.ppm")
        write_ppm(path, obs)

    def _log(self, step: EnvStep) -> None:
        if not self.config.log_csv:
            return
        self._log_rows.append((self._t, step.reward, step.done, dict(step.info)))

    def _flush_log(self) -> None:
        if not self.config.log_csv or not self._log_rows:
            self._log_rows = []
            return
        keys = sorted(self._log_rows[0][3])
        new_file = not os.path.exists(self.config.log_csv)
        with open(self.config.log_csv, "a") as f:
            if new_file:
                f.write(",".join(["episode", "t", "reward", "done"] + keys) + "\n")
            for t, reward, done, info in self._log_rows:
                vals = [str(self._episode), str(t), f"{reward:.10g}", str(int(done))]
                vals += [f"{float(info[k]):.10g}" for k in keys]
                f.write(",".join(vals) + "\n")
        self._log_rows = []


class DotReacher(PixelEnv):
    """Point agent on the unit square; reward 1 per inner step on the target."""

    AGENT_RADIUS = 0.06
    TARGET_DRAW_RADIUS = 0.1

    @property
    def action_dim(self) -> int:
        return 2

    def _reset_state(self, rng: Rng) -> None:
        self.agent = rng.uniform(0.1, 0.9, 2, dtype=np.float64)
        self.target = rng.uniform(0.15, 0.85, 2, dtype=np.float64)
        while np.linalg.norm(self.agent - self.target) < 0.3:
            self.target = rng.uniform(0.15, 0.85, 2, dtype=np.float64)

    def _advance(self, action: np.ndarray) -> float:
        self.agent = np.clip(self.agent + self.config.dot_speed * action.astype(np.float64), 0.0, 1.0)
        dist = float(np.linalg.norm(self.agent - self.target))
        return 1.0 if dist < self.config.dot_goal_radius else 0.0

    def _combine_inner_rewards(self, rewards):
        return sum(rewards)

    def _draw_sprites(self, img: np.ndarray) -> None:
        tmask = _disc_mask(self._gy, self._gx, self.target[1], self.target[0], self.TARGET_DRAW_RADIUS)
        amask = _disc_mask(self._gy, self._gx, self.agent[1], self.agent[0], self.AGENT_RADIUS)
        img[:, tmask] = TARGET_COLOR[:, None]
        img[:, amask] = AGENT_COLOR[:, None]

    def _info(self) -> dict:
        return {
            "dist": float(np.linalg.norm(self.agent - self.target)),
            "agent_x": float(self.agent[0]), "agent_y": float(self.agent[1]),
            "target_x": float(self.target[0]), "target_y": float(self.target[1]),
        }


class PendulumSwingup(PixelEnv):
    """Damped pendulum; theta = 0 is upright, reward (cos theta + 1)/2."""

    DT = 0.05
    GRAVITY = 9.8
    TORQUE_SCALE = 2.0
    DAMPING = 0.1
    MAX_SPEED = 8.0
    PIVOT = (0.55, 0.5)  # (y, x) in arena units
    ARM_LENGTH = 0.33
    ARM_WIDTH = 0.035
    BOB_RADIUS = 0.07

    @property
    def action_dim(self) -> int:
        return 1

    def _reset_state(self, rng: Rng) -> None:
        self.theta = float(np.pi + rng.uniform(-0.1, 0.1))
        self.omega = float(rng.uniform(-0.05, 0.05))

    def _advance(self, action: np.ndarray) -> float:
        torque = self.TORQUE_SCALE * float(action[0])
        acc = self.GRAVITY * np.sin(self.theta) + torque - self.DAMPING * self.omega
        self.omega = float(np.clip(self.omega + self.DT * acc, -self.MAX_SPEED, self.MAX_SPEED))
        self.theta = float(self.theta + self.DT * self.omega)
        return (np.cos(self.theta) + 1.0) / 2.0

    def _combine_inner_rewards(self, rewards):
        # average, not sum: keeps the episode return within episode_length
        return sum(rewards) / len(rewards)

    def _tip(self):
        ty = self.PIVOT[0] - self.ARM_LENGTH * np.cos(self.theta)
        tx = self.PIVOT[1] + self.ARM_LENGTH * np.sin(self.theta)
        return ty, tx

    def _draw_sprites(self, img: np.ndarray) -> None:
        ty, tx = self._tip()
        arm = _segment_mask(self._gy, self._gx, self.PIVOT, (ty, tx), self.ARM_WIDTH)
        bob = _disc_mask(self._gy, self._gx, ty, tx, self.BOB_RADIUS)
        pivot = _disc_mask(self._gy, self._gx, self.PIVOT[0], self.PIVOT[1], 0.03)
        img[:, arm] = ARM_COLOR[:, None]
        img[:, bob] = BOB_COLOR[:, None]
        img[:, pivot] = ARM_COLOR[:, None]

    def _info(self) -> dict:
        return {"theta": self.theta, "omega": self.omega,
                "upright": float((np.cos(self.theta) + 1.0) / 2.0)}


def make_env(config: EnvConfig) -> PixelEnv:
    if config.task == "dot_reacher":
        return DotReacher(config)
    return PendulumSwingup(config)


def action_dim(task: str) -> int:
    return 2 if task == "dot_reacher" else 1


def write_ppm(path: str, img: np.ndarray) -> None:
    """img: (3, H, W) floats in [0, 1]."""
    arr = (np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6 {arr.shape[1]} {arr.shape[0]} 255\n".encode())
        f.write(arr.tobytes())

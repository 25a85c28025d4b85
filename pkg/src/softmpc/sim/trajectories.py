"""End-effector reference trajectories with lookahead windows."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class TrajectoryRef:
    """Base class: subclasses implement :meth:`sample` for an array of times."""

    duration: float

    def sample(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.sample(np.asarray(t, float))

    def window(self, t0, N, Ts):
        """``N + 1`` samples at ``t0, t0 + Ts, ..., t0 + N Ts``."""
        return self.sample(t0 + Ts * np.arange(N + 1))


@dataclass(frozen=True, eq=False)
class Circle(TrajectoryRef):
    radius: float
    center: np.ndarray
    period: float

    def sample(self, t):
        t = np.asarray(t, float)
        ang = 2 * np.pi * t / self.period
        c = np.asarray(self.center, float)
        return c + self.radius * np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=-1)


@dataclass(frozen=True, eq=False)
class Square(TrajectoryRef):
    side: float
    center: np.ndarray
    height: float
    period: float

    def corners(self):
        h = 0.5 * self.side
        cx, cy = np.asarray(self.center, float)[:2]
        return np.array([[cx + h, cy + h, self.height], [cx - h, cy + h, self.height],
                         [cx - h, cy - h, self.height], [cx + h, cy - h, self.height]])

    def sample(self, t):
        t = np.asarray(t, float)
        corners = self.corners()
        phase = np.mod(t, self.period) / (self.period / 4.0)
        edge = np.floor(phase).astype(int) % 4
        frac = (phase - np.floor(phase))[..., None]
        return corners[edge] + frac * (corners[(edge + 1) % 4] - corners[edge])


@dataclass(frozen=True, eq=False)
class Fixed(TrajectoryRef):
    point: np.ndarray

    def sample(self, t):
        t = np.asarray(t, float)
        return np.broadcast_to(np.asarray(self.point, float), t.shape + (3,)).copy()


def make_circle(radius, center, period, turns=1.0):
    """Constant-height circle starting at ``center + (radius, 0, 0)``."""
    if radius <= 0 or period <= 0 or turns <= 0:
        raise ValueError("radius, period and turns must be positive")
    return Circle(float(turns * period), float(radius), np.asarray(center, float).reshape(3), float(period))


def make_square(side, center, height, period, turns=1.0):
    """Square at constant ``height`` traversed at constant speed.

    Corners are reached at multiples of ``period / 4``, starting from the
    ``(+x, +y)`` corner and moving counter-clockwise seen from above.
    """
    if side <= 0 or period <= 0 or turns <= 0:
        raise ValueError("side, period and turns must be positive")
    return Square(float(turns * period), float(side), np.asarray(center, float).reshape(-1)[:2],
                  float(height), float(period))


def make_fixed(point, duration):
    if duration < 0:
        raise ValueError("duration must be non-negative")
    return Fixed(float(duration), np.asarray(point, float).reshape(3))

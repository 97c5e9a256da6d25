import numpy as np
import pytest

from curviplan.curviframe import ReferencePath, build_frame


def straight_path(length=15.0, step=0.1):
    xs = np.arange(0.0, length + step / 2, step)
    poses = np.column_stack([xs, np.zeros_like(xs), np.zeros_like(xs)])
    return ReferencePath(poses)


def arc_path(radius=5.0, sweep=np.pi / 2, step_angle=0.02):
    """Left-turning circular arc from the origin heading +x."""
    phi = np.arange(0.0, sweep + step_angle / 2, step_angle)
    x = radius * np.sin(phi)
    y = radius * (1.0 - np.cos(phi))
    return ReferencePath(np.column_stack([x, y, phi]))


def corner_path(leg=5.0, step=0.1, sweep_steps=8):
    """Straight leg along +x, sharp 90-degree right turn on the spot at the
    corner, then straight down -y."""
    xs = np.arange(0.0, leg + step / 2, step)
    leg1 = np.column_stack([xs, np.zeros_like(xs), np.zeros_like(xs)])
    yaw = np.linspace(0.0, -np.pi / 2, sweep_steps + 1)[1:]
    sweep = np.column_stack([np.full_like(yaw, leg), np.zeros_like(yaw), yaw])
    ys = np.arange(step, leg + step / 2, step)
    leg2 = np.column_stack([np.full_like(ys, leg), -ys,
                            np.full_like(ys, -np.pi / 2)])
    return ReferencePath(np.vstack([leg1, sweep, leg2]))


def wavy_path(length=20.0, amp=2.0, freq=0.4, step=0.1):
    xs = np.arange(0.0, length + step / 2, step)
    ys = amp * np.sin(freq * xs)
    yaw = np.arctan2(amp * freq * np.cos(freq * xs), 1.0)
    return ReferencePath(np.column_stack([xs, ys, yaw]))


@pytest.fixture(scope="session")
def straight_frame():
    return build_frame(straight_path(), a=1.0, q_bounds=2.5)


@pytest.fixture(scope="session")
def corner_frame():
    return build_frame(corner_path(), a=1.0, q_bounds=2.5)


@pytest.fixture(scope="session")
def arc_frame():
    return build_frame(arc_path(), a=1.0, q_bounds=2.5)

from __future__ import annotations

import numpy as np
import pytest

from liftreg.camera import CameraIntrinsics, CameraView
from liftreg.geometry import RigidTransform, rotation_about_axis

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE[number] = (name, bool(passed), detail)
    print(f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}  {detail}")


def random_transform(rng: np.random.Generator, max_translation: float = 2.0) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = rng.uniform(-180.0, 180.0)
    return RigidTransform(rotation_about_axis(axis, angle), rng.uniform(-max_translation, max_translation, 3))


def make_view(
    depth: np.ndarray,
    color: np.ndarray | None = None,
    pose: RigidTransform | None = None,
    f: float = 50.0,
    feature_map: np.ndarray | None = None,
) -> CameraView:
    H, W = depth.shape
    intr = CameraIntrinsics(f, f, (W - 1) / 2.0, (H - 1) / 2.0, W, H)
    if color is None:
        color = np.zeros((H, W, 3))
    return CameraView(intr, pose or RigidTransform.identity(), depth, color, feature_map)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    """One noise-free synthetic pair at moderate overlap."""
    from liftreg.synth import SceneSpec, generate_scene

    return generate_scene(SceneSpec(seed=3, overlap=0.5, frames_per_side=5))

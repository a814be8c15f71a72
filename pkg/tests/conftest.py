import json

import numpy as np
import pytest

from srw.ingest import load_view
from synth import box_payload, scene_from_payload, two_room_payload, view_payload


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def box_scene(tmp_path):
    return scene_from_payload(box_payload(), tmp_path)


@pytest.fixture
def box_view(tmp_path):
    """Camera inside the box room looking at the far (x=4000) wall."""
    payload = view_payload("v0", position=(600.0, 1500.0, 1400.0), yaw=0.0)
    path = tmp_path / "v0.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return load_view(path)


@pytest.fixture
def two_room(tmp_path):
    payload, manifest = two_room_payload()
    return scene_from_payload(payload, tmp_path), manifest

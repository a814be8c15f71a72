import json

import numpy as np
import pytest
from PIL import Image

from oracles import project_point_distance
from srw.errors import InvalidRotation, ParseError, TopologyError
from srw.geometry import plane_basis, signed_area, to_plane_frame
from srw.ingest import (
    FilterReason,
    filter_scene,
    load_label_map,
    load_mask,
    load_scene,
    load_view,
    save_scene,
    save_view,
)
from srw.model import PlaneLabel
from synth import box_payload, ring_plane_payload, scene_from_payload, two_room_payload, view_payload


def write_json(tmp_path, payload, name="f.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestLoadScene:
    def test_box_counts(self, box_scene):
        assert len(box_scene.junctions) == 8
        assert len(box_scene.lines) == 12
        assert len(box_scene.planes) == 6

    def test_box_adjacency(self, box_scene):
        for line in box_scene.lines:
            assert len(line.adjacent_planes) == 2

    def test_two_room_manifest_counts(self, two_room):
        scene, manifest = two_room
        assert len(scene.junctions) == manifest["junctions"]
        assert len(scene.lines) == manifest["lines"]
        assert len(scene.planes) == manifest["planes"]

    def test_two_room_openings_attached(self, two_room):
        scene, manifest = two_room
        for wall_id, door_id in zip(manifest["wall_planes"], manifest["door_planes"]):
            wall = scene.plane_index[wall_id]
            assert [o.door_id for o in wall.openings] == [door_id]
            assert wall.openings[0].kind == PlaneLabel.DOOR

    def test_open_chain_rejected(self, tmp_path):
        payload = box_payload()
        payload["planes"][0]["lines"] = payload["planes"][0]["lines"][:3]
        with pytest.raises(TopologyError):
            load_scene(write_json(tmp_path, payload))

    def test_two_loops_rejected(self, tmp_path):
        payload = box_payload()
        # one plane listing both the floor and the ceiling boundary
        payload["planes"][0]["lines"] = [0, 1, 2, 3, 4, 5, 6, 7]
        payload["planes"][1]["lines"] = [4, 5, 6, 7]
        with pytest.raises(TopologyError):
            load_scene(write_json(tmp_path, payload))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ParseError):
            load_scene(path)

    def test_missing_field(self, tmp_path):
        payload = box_payload()
        del payload["junctions"]
        with pytest.raises(ParseError):
            load_scene(write_json(tmp_path, payload))

    def test_dangling_line_rejected(self, tmp_path):
        payload = box_payload()
        payload["junctions"].append({"id": 90, "xyz": [1.0, 1.0, 1.0]})
        payload["junctions"].append({"id": 91, "xyz": [2.0, 1.0, 1.0]})
        payload["lines"].append({"id": 90, "junctions": [90, 91]})
        with pytest.raises(TopologyError):
            load_scene(write_json(tmp_path, payload))

    def test_duplicate_junctions_merged(self, tmp_path):
        payload = box_payload()
        # re-point line 0 at an exact duplicate of junction 1
        payload["junctions"].append({"id": 50, "xyz": payload["junctions"][1]["xyz"]})
        payload["lines"][0]["junctions"] = [0, 50]
        scene = scene_from_payload(payload, tmp_path)
        assert len(scene.junctions) == 8
        assert scene.line_index[0].endpoints == (0, 1)

    def test_outer_boundaries_ccw(self, two_room):
        scene, _ = two_room
        for plane in scene.planes:
            pts = scene.positions(plane.outer_boundary)
            e1, e2 = plane_basis(plane.params.normal)
            uv = to_plane_frame(pts, pts[0], e1, e2)
            assert signed_area(uv) > 0.0

    def test_noncoplanar_opening_rejected(self, tmp_path):
        payload, _ = two_room_payload()
        # drag one door-A corner 5 mm out of its wall plane
        lines_by_id = {l["id"]: l for l in payload["lines"]}
        door_plane = next(p for p in payload["planes"] if p["label"] == "door")
        corner_id = lines_by_id[door_plane["lines"][0]]["junctions"][0]
        junction = next(j for j in payload["junctions"] if j["id"] == corner_id)
        junction["xyz"][0] += 5.0
        with pytest.raises(TopologyError):
            load_scene(write_json(tmp_path, payload))


class TestSceneRoundTrip:
    def test_load_save_load_identity(self, tmp_path, two_room):
        scene, _ = two_room
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        save_scene(scene, p1)
        scene2 = load_scene(p1)
        save_scene(scene2, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert [j.id for j in scene.junctions] == [j.id for j in scene2.junctions]
        for a, b in zip(scene.junctions, scene2.junctions):
            assert a.position.tolist() == b.position.tolist()
        for a, b in zip(scene.planes, scene2.planes):
            assert a.outer_boundary == b.outer_boundary
            assert a.params.as_vector().tolist() == b.params.as_vector().tolist()


class TestLoadView:
    def test_identity_pose_accepted(self, tmp_path):
        payload = {
            "view_id": "v", "width": 512, "height": 512,
            "fx": 256.0, "fy": 256.0, "cx": 256.0, "cy": 256.0,
            "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 0], "mask": None,
        }
        view = load_view(write_json(tmp_path, payload))
        assert view.view_id == "v"
        assert np.allclose(view.rotation, np.eye(3))

    def test_reflection_rejected(self, tmp_path):
        payload = {
            "view_id": "v", "width": 512, "height": 512,
            "fx": 256.0, "fy": 256.0, "cx": 256.0, "cy": 256.0,
            "R": [1, 0, 0, 0, 1, 0, 0, 0, -1], "t": [0, 0, 0], "mask": None,
        }
        with pytest.raises(InvalidRotation):
            load_view(write_json(tmp_path, payload))

    def test_bad_intrinsics_rejected(self, tmp_path):
        payload = view_payload("v", (0, 0, 0), 0.0)
        payload["fx"] = -1.0
        with pytest.raises(ParseError):
            load_view(write_json(tmp_path, payload))

    def test_round_trip_bit_identical(self, tmp_path):
        payload = view_payload("v", (612.3, 1500.7, 1402.9), 0.7321, 0.11)
        p1 = write_json(tmp_path, payload, "v1.json")
        view = load_view(p1)
        p2 = tmp_path / "v2.json"
        save_view(view, p2)
        view2 = load_view(p2)
        p3 = tmp_path / "v3.json"
        save_view(view2, p3)
        assert p2.read_bytes() == p3.read_bytes()
        assert view.rotation.tolist() == view2.rotation.tolist()
        assert view.translation.tolist() == view2.translation.tolist()


class TestLoadMask:
    def test_uniform_door_mask(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.full((4, 4), 7, dtype=np.uint8), mode="L").save(path)
        mask = load_mask(path, {7: "door"})
        assert mask.is_label("door").sum() == 16

    def test_unmapped_ids_are_other(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.array([[7, 3], [3, 7]], dtype=np.uint8), mode="L").save(path)
        mask = load_mask(path, {7: "door"})
        assert mask.label_at(1, 0) == "other"
        assert mask.label_at(0, 0) == "door"
        assert mask.is_label("door").sum() == 2

    def test_door_count_matches_pixel_loop_oracle(self, tmp_path, rng):
        pixels = rng.integers(0, 9, size=(16, 16)).astype(np.uint8)
        path = tmp_path / "m.png"
        Image.fromarray(pixels, mode="L").save(path)
        label_map = {4: "door", 2: "floor"}
        mask = load_mask(path, label_map)
        count = 0
        for y in range(16):
            for x in range(16):
                if label_map.get(int(pixels[y, x])) == "door":
                    count += 1
        assert int(mask.is_label("door").sum()) == count

    def test_rgb_mask_rejected(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8), mode="RGB").save(path)
        with pytest.raises(ParseError):
            load_mask(path, {})

    def test_label_map_loader(self, tmp_path):
        path = tmp_path / "lm.json"
        path.write_text(json.dumps({"7": "door", "1": "wall"}), encoding="utf-8")
        assert load_label_map(path) == {7: "door", 1: "wall"}
        path.write_text(json.dumps({"7": "sofa"}), encoding="utf-8")
        with pytest.raises(ParseError):
            load_label_map(path)


class TestFilterScene:
    def test_two_junction_plane_rejected(self, tmp_path):
        payload = box_payload()
        payload["junctions"] += [
            {"id": 20, "xyz": [100.0, 100.0, 100.0]},
            {"id": 21, "xyz": [300.0, 100.0, 100.0]},
        ]
        payload["lines"] += [
            {"id": 20, "junctions": [20, 21]},
            {"id": 21, "junctions": [21, 20]},
        ]
        payload["planes"].append(
            {"id": 20, "lines": [20, 21], "normal": [0.0, 0.0, 1.0], "offset": -100.0,
             "label": "wall", "semantic": "", "parent_wall": None}
        )
        scene = scene_from_payload(payload, tmp_path)
        report, _ = filter_scene(scene)
        assert not report.accepted
        assert report.reason == FilterReason.PLANE_WITH_TWO_JUNCTIONS

    def test_exact_cube_accepted(self, box_scene):
        report, refit = filter_scene(box_scene)
        assert report.accepted and report.reason == FilterReason.OK
        assert report.max_residual_mm < 1e-9
        for plane in refit.planes:
            pts = refit.positions(plane.outer_boundary)
            dists = np.abs(pts @ plane.params.normal + plane.params.offset)
            assert dists.max() <= 1.0

    def test_displaced_cube_rejected(self, tmp_path):
        # a 5 mm corner displacement leaves ~1.25 mm max residual after refit
        payload = box_payload()
        payload["junctions"][0]["xyz"][2] += 5.0
        scene = scene_from_payload(payload, tmp_path)
        report, _ = filter_scene(scene)
        assert not report.accepted
        assert report.reason == FilterReason.RESIDUAL_EXCEEDS_1MM
        assert 1.0 < report.max_residual_mm < 5.0
        # oracle recomputation of the reported maximum
        from srw.geometry import fit_plane_dlt

        expected = 0.0
        for plane in scene.planes:
            pts = scene.positions(plane.outer_boundary)
            params = fit_plane_dlt(pts)
            expected = max(
                expected,
                max(project_point_distance(p, params.normal, params.offset) for p in pts),
            )
        assert report.max_residual_mm == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("residual,accepted", [(0.999, True), (1.001, False)])
    def test_threshold_is_strict_1mm(self, tmp_path, residual, accepted):
        scene = scene_from_payload(ring_plane_payload(residual), tmp_path, name=f"r{residual}.json")
        report, _ = filter_scene(scene)
        assert report.accepted is accepted
        assert report.max_residual_mm == pytest.approx(residual, abs=1e-9)

    def test_accepted_scene_replaces_params(self, tmp_path):
        payload = box_payload()
        # slightly wrong supplied normal; refit must restore the exact plane
        payload["planes"][0]["normal"] = [0.02, 0.0, 1.0]
        scene = scene_from_payload(payload, tmp_path)
        report, refit = filter_scene(scene)
        assert report.accepted
        assert np.allclose(refit.plane_index[0].params.normal, [0, 0, 1], atol=1e-9)

    def test_refit_never_worse_than_supplied(self, two_room):
        scene, _ = two_room
        report, refit = filter_scene(scene)
        assert report.accepted
        for plane in scene.planes:
            pts = scene.positions(plane.outer_boundary)
            supplied = np.abs(pts @ plane.params.normal + plane.params.offset).max()
            refit_params = refit.plane_index[plane.plane_id].params
            ours = np.abs(pts @ refit_params.normal + refit_params.offset).max()
            assert ours <= supplied + 1e-9

    def test_refit_algebraic_residual_beats_supplied(self, tmp_path):
        # least-squares optimality against the file-supplied parameters on a
        # perturbed fixture
        from oracles import algebraic_residual

        payload = box_payload()
        rng = np.random.default_rng(17)
        for j in payload["junctions"]:
            j["xyz"] = [v + float(rng.normal(scale=0.05)) for v in j["xyz"]]
        scene = scene_from_payload(payload, tmp_path)
        report, refit = filter_scene(scene)
        assert report.accepted
        for plane in scene.planes:
            pts = scene.positions(plane.outer_boundary)
            supplied = algebraic_residual(pts, plane.params.as_vector())
            ours = algebraic_residual(
                pts, refit.plane_index[plane.plane_id].params.as_vector()
            )
            assert ours <= supplied + 1e-12

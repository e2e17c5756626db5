"""Case-file round trips and validation."""

import json

import pytest

from surfreg.camera import CameraModel
from surfreg.config import ProjectConfig, load_config, save_config
from surfreg.errors import SurfregError
from surfreg.geodesic import GeodesicTolerances
from surfreg.mesh import save_mesh, save_region_ids
from surfreg.synthetic import landmark_patch


@pytest.fixture()
def case_dir(tmp_path):
    region, alpha, beta = landmark_patch(11, 7)
    save_mesh(tmp_path / "patch.ply", region.parent)
    save_region_ids(tmp_path / "region.txt", region.vertex_ids)
    config = ProjectConfig(
        mesh_path=tmp_path / "patch.ply",
        region_path=tmp_path / "region.txt",
        alpha=alpha, beta=beta,
        camera=CameraModel(480, 270, 12_000),
        output_dir=tmp_path / "out",
    )
    save_config(tmp_path / "case.json", config)
    return tmp_path, config


class TestRoundTrip:
    def test_save_load_preserves_every_field(self, case_dir):
        tmp_path, original = case_dir
        loaded = load_config(tmp_path / "case.json")
        assert loaded.mesh_path == original.mesh_path
        assert loaded.region_path == original.region_path
        assert (loaded.alpha, loaded.beta) == (original.alpha, original.beta)
        assert loaded.camera == original.camera
        assert loaded.output_dir == original.output_dir
        assert loaded.tolerances == original.tolerances

    def test_tolerance_overrides_survive(self, case_dir):
        tmp_path, original = case_dir
        original.tolerances = GeodesicTolerances(max_unfold_depth=5, snap_frac=0.25)
        save_config(tmp_path / "case2.json", original)
        loaded = load_config(tmp_path / "case2.json")
        assert loaded.tolerances.max_unfold_depth == 5
        assert loaded.tolerances.snap_frac == 0.25

    def test_relative_paths_resolve_against_config_dir(self, case_dir):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        doc["mesh"] = "patch.ply"
        doc["region"] = "region.txt"
        doc["output_dir"] = "out"
        (tmp_path / "rel.json").write_text(json.dumps(doc))
        loaded = load_config(tmp_path / "rel.json")
        assert loaded.mesh_path == tmp_path / "patch.ply"
        assert loaded.output_dir == tmp_path / "out"

    def test_region_none_means_whole_mesh(self, case_dir):
        tmp_path, original = case_dir
        original.region_path = None
        save_config(tmp_path / "whole.json", original)
        loaded = load_config(tmp_path / "whole.json")
        assert loaded.region_path is None
        mesh, region = loaded.load_mesh_and_region()
        assert region.n_vertices == mesh.n_vertices

    def test_load_mesh_and_region(self, case_dir):
        tmp_path, _ = case_dir
        mesh, region = load_config(tmp_path / "case.json").load_mesh_and_region()
        assert region.n_vertices == 11 * 7
        assert region.parent is mesh


class TestValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(SurfregError, match="missing config file"):
            load_config(tmp_path / "ghost.json")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "broken.json").write_text("{not json")
        with pytest.raises(SurfregError, match="not valid JSON"):
            load_config(tmp_path / "broken.json")

    def test_foreign_format(self, tmp_path):
        (tmp_path / "foreign.json").write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(SurfregError, match="not a surfreg-config"):
            load_config(tmp_path / "foreign.json")

    @pytest.mark.parametrize("missing", ["mesh", "alpha", "beta", "camera", "output_dir"])
    def test_each_required_field(self, case_dir, missing):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        del doc[missing]
        (tmp_path / "partial.json").write_text(json.dumps(doc))
        with pytest.raises(SurfregError, match=missing):
            load_config(tmp_path / "partial.json")

    def test_missing_mesh_file_names_the_path(self, case_dir):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        doc["mesh"] = "ghost.ply"
        (tmp_path / "badmesh.json").write_text(json.dumps(doc))
        with pytest.raises(SurfregError, match="ghost.ply"):
            load_config(tmp_path / "badmesh.json")

    def test_missing_region_file_names_the_path(self, case_dir):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        doc["region"] = "ghost.txt"
        (tmp_path / "badregion.json").write_text(json.dumps(doc))
        with pytest.raises(SurfregError, match="ghost.txt"):
            load_config(tmp_path / "badregion.json")

    def test_unknown_tolerance_rejected(self, case_dir):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        doc["tolerances"] = {"warp_speed": 9}
        (tmp_path / "badtol.json").write_text(json.dumps(doc))
        with pytest.raises(SurfregError, match="warp_speed"):
            load_config(tmp_path / "badtol.json")

    def test_pole_outside_region_rejected_at_load_time(self, case_dir):
        tmp_path, _ = case_dir
        doc = json.loads((tmp_path / "case.json").read_text())
        doc["beta"] = 10_000
        (tmp_path / "badpole.json").write_text(json.dumps(doc))
        config = load_config(tmp_path / "badpole.json")
        with pytest.raises(SurfregError, match="pole beta=10000"):
            config.load_mesh_and_region()

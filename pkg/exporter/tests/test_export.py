from __future__ import annotations

import numpy as np
import pytest
import torch

from ddrf_exporter.export import ExportError, ExportJob, export_features, resolve_layer

degsim_features = pytest.importorskip("degsim.features")
degsim_ggd = pytest.importorskip("degsim.ggd")


def _make_model(path):
    torch.manual_seed(0)
    model = torch.nn.Sequential(
        torch.nn.Conv2d(3, 8, 3, stride=1, padding=1),
        torch.nn.ReLU(),
        torch.nn.Conv2d(8, 16, 3, stride=2, padding=1),
        torch.nn.ReLU(),
        torch.nn.Conv2d(16, 16, 3, stride=1, padding=1),
    )
    model.eval()
    torch.save(model, str(path))
    return path


def _make_images(directory, count=3, side=96):
    from PIL import Image

    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    paths = []
    for i in range(count):
        ramp = np.linspace(40, 210, side, dtype=np.float64)[:, None]
        arr = np.clip(ramp + rng.normal(0, 25, (side, side, 3)), 0, 255).astype(np.uint8)
        p = directory / f"img_{i}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    return _make_model(tmp_path_factory.mktemp("model") / "net.pt")


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("images")
    _make_images(directory)
    return directory


class TestExport:
    def test_one_ddrf_per_image(self, model_path, image_dir, tmp_path):
        job = ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "out"))
        paths = export_features(job)
        assert len(paths) == 3
        assert sorted(p.stem for p in paths) == ["img_0", "img_1", "img_2"]

    def test_two_runs_byte_identical(self, model_path, image_dir, tmp_path):
        job_a = ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "a"))
        job_b = ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "b"))
        for pa, pb in zip(export_features(job_a), export_features(job_b)):
            assert pa.read_bytes() == pb.read_bytes()

    def test_primary_ingests_and_fits(self, model_path, image_dir, tmp_path):
        # Cross-component integration: the consumer reads these files through
        # its public DDRF path and fits a finite GGD.
        job = ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "out"), pooled=True)
        (pooled_path,) = export_features(job)
        tensor = degsim_features.ingest_features(pooled_path)
        assert tensor.dims[0] == 3  # items dimension preserved in pooled mode
        assert "layer=2" in tensor.extractor_id
        fit = degsim_ggd.fit_ggd(degsim_features.center_and_flatten(tensor))
        assert np.isfinite(fit.alpha) and np.isfinite(fit.sigma)
        assert fit.sigma > 0

    def test_layer_selector_zero_matches(self, model_path, image_dir, tmp_path):
        job = ExportJob(str(model_path), "missing.layer", str(image_dir), str(tmp_path / "out"))
        with pytest.raises(ExportError, match="matches no module"):
            export_features(job)

    def test_unknown_model_path(self, image_dir, tmp_path):
        job = ExportJob(str(tmp_path / "ghost.pt"), "2", str(image_dir), str(tmp_path / "out"))
        with pytest.raises(ExportError, match="not found"):
            export_features(job)

    def test_empty_image_dir(self, model_path, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        job = ExportJob(str(model_path), "2", str(empty), str(tmp_path / "out"))
        with pytest.raises(ExportError, match="no images"):
            export_features(job)

    def test_cuda_preference_falls_back_with_warning(self, model_path, image_dir, tmp_path):
        if torch.cuda.is_available():
            pytest.skip("CUDA present; fallback path not reachable")
        job = ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "out"), device="cuda")
        with pytest.warns(UserWarning, match="falling back to CPU"):
            paths = export_features(job)
        assert paths

    def test_batching_does_not_change_payloads(self, model_path, image_dir, tmp_path):
        small = export_features(ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "s"), batch_size=1))
        large = export_features(ExportJob(str(model_path), "2", str(image_dir), str(tmp_path / "l"), batch_size=8))
        for pa, pb in zip(small, large):
            assert pa.read_bytes() == pb.read_bytes()

    def test_resolve_layer_exact_name(self, model_path):
        model = torch.load(str(model_path), weights_only=False)
        site = resolve_layer(model, "4")
        assert isinstance(site, torch.nn.Conv2d)

    def test_torchscript_archive_rejected_with_guidance(self, image_dir, tmp_path):
        scripted = torch.jit.script(torch.nn.Sequential(torch.nn.Conv2d(3, 4, 3)))
        script_path = tmp_path / "scripted.pt"
        scripted.save(str(script_path))
        job = ExportJob(str(script_path), "0", str(image_dir), str(tmp_path / "out"))
        with pytest.raises(ExportError, match="TorchScript"):
            export_features(job)


class TestCli:
    def test_cli_round_trip(self, model_path, image_dir, tmp_path, capsys):
        from ddrf_exporter.cli import main

        code = main(["--model", str(model_path), "--layer", "2", "--in-dir", str(image_dir),
                     "--out-dir", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "img_0.ddrf" in out

    def test_cli_reports_errors(self, model_path, image_dir, tmp_path, capsys):
        from ddrf_exporter.cli import main

        code = main(["--model", str(model_path), "--layer", "nope", "--in-dir", str(image_dir),
                     "--out-dir", str(tmp_path / "out")])
        assert code == 1
        assert "matches no module" in capsys.readouterr().err

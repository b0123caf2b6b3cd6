from unittest.mock import Mock, patch

import pandas as pd
import pytest

from nestattn.cli import COMMANDS, main
from nestattn.core.config import Settings
from nestattn.core.exceptions import InvariantError
from nestattn.core.models import IdentityParams
from nestattn.data.identity import PALETTE
from nestattn.data.imageio import read_image, write_ppm
from nestattn.data.render import render_input

PROMPT = "subj on red plain center"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, smoke_config_path):
    """Host and nested checkpoints trained through the CLI"""
    root = tmp_path_factory.mktemp("cli")
    host_dir, nested_dir = root / "host", root / "nested"
    assert main(["train", "--config", str(smoke_config_path), "--stage", "A", "--out", str(host_dir)]) == 0
    assert main([
        "train", "--config", str(smoke_config_path), "--stage", "B", "--mechanism", "nested",
        "--host-checkpoint", str(host_dir / "model.ckpt"), "--out", str(nested_dir),
    ]) == 0
    return {"root": root, "host": host_dir / "model.ckpt", "nested": nested_dir / "model.ckpt"}


@pytest.fixture
def reference_ppm(tmp_path):
    """A reference render on disk"""
    identity = IdentityParams(glyph_id=900, body=PALETTE["teal"], accent=PALETTE["pink"], trim=PALETTE["brown"])
    return write_ppm(tmp_path / "ref.ppm", render_input(identity))


class TestUsage:
    """Argument and configuration errors"""

    def test_missing_command(self):
        """No subcommand is a usage error with exit 1"""
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 1

    def test_default_out(self, tmp_path, smoke_config_path):
        """Without --out the command writes under the configured output root"""
        with patch("nestattn.cli.get_settings", return_value=Settings(output_root=str(tmp_path))):
            assert main(["gen-data", "--config", str(smoke_config_path)]) == 0
        assert (tmp_path / "gen-data" / "manifest.csv").is_file()

    def test_missing_config(self, tmp_path):
        """An unreadable config exits 1"""
        assert main(["gen-data", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path / "out")]) == 1

    def test_non_empty_out(self, tmp_path, smoke_config_path):
        """Existing output is only overwritten with --force"""
        out = tmp_path / "out"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert main(["gen-data", "--config", str(smoke_config_path), "--out", str(out)]) == 1
        assert main(["gen-data", "--config", str(smoke_config_path), "--out", str(out), "--force"]) == 0

    def test_stage_b_needs_host(self, tmp_path, smoke_config_path):
        """Stage B without a host checkpoint exits 1"""
        assert main(["train", "--config", str(smoke_config_path), "--stage", "B", "--out", str(tmp_path / "b")]) == 1

    def test_invariant_failure_exit_code(self, tmp_path, smoke_config_path):
        """A failed check exits 2"""
        with patch.dict(COMMANDS, {"gen-data": Mock(side_effect=InvariantError("boom"))}):
            assert main(["gen-data", "--config", str(smoke_config_path), "--out", str(tmp_path / "o")]) == 2


class TestGenData:
    """Dataset rendering"""

    def test_deterministic_checksum(self, tmp_path, capsys, smoke_config_path):
        """Two runs print the same checksum and write a manifest"""
        checksums = []
        for name in ("first", "second"):
            assert main(["gen-data", "--config", str(smoke_config_path), "--out", str(tmp_path / name)]) == 0
            checksums.append(capsys.readouterr().out.strip())
            assert (tmp_path / name / "manifest.csv").is_file()
            assert (tmp_path / name / "config.toml").is_file()
        assert checksums[0] == checksums[1]
        assert len(checksums[0]) == 64


class TestPipeline:
    """Train, sweep, sample and visualize through the CLI"""

    def test_train_outputs(self, trained):
        """Training writes the checkpoint, the loss table and the config echo"""
        out = trained["nested"].parent
        losses = pd.read_csv(out / "losses.csv")
        assert losses["stage"].tolist() == ["B", "B"]
        assert 'mechanism = "nested"' in (out / "config.toml").read_text()

    def test_sweep_lambda(self, tmp_path, trained):
        """One record per lambda and a scatter plot"""
        out = tmp_path / "sweep"
        assert main(["sweep-lambda", "--checkpoint", str(trained["nested"]), "--out", str(out)]) == 0
        records = pd.read_csv(out / "records.csv")
        assert records["lambda"].tolist() == [1.0, 2.0]
        assert set(records["mechanism"]) == {"nested"}
        assert read_image(out / "scatter.ppm").shape == (160, 160, 3)

    def test_sweep_needs_adapter(self, tmp_path, trained):
        """A host checkpoint cannot be swept"""
        assert main(["sweep-lambda", "--checkpoint", str(trained["host"]), "--out", str(tmp_path / "s")]) == 1

    def test_sample_and_visualize(self, tmp_path, trained, reference_ppm):
        """Sampling with --capture feeds viz-attn"""
        out = tmp_path / "sample"
        assert main([
            "sample", "--checkpoint", str(trained["nested"]), "--prompt", PROMPT,
            "--ref-images", str(reference_ppm), "--lambda", "1.0", "2.0", "--capture", "--out", str(out),
        ]) == 0
        assert read_image(out / "sample_lambda_1.00.ppm").shape == (32, 32, 3)
        assert (out / "sample_lambda_2.00.ppm").is_file()
        capture_dir = out / "capture_lambda_1.00"
        assert capture_dir.is_dir()

        maps = tmp_path / "maps"
        assert main(["viz-attn", "--capture-dir", str(capture_dir), "--out", str(maps)]) == 0
        assert list(maps.glob("attn_*.pgm"))
        assert (maps / "tracing.csv").is_file()

    def test_sample_host_only(self, tmp_path, trained):
        """A host checkpoint samples the bare prompt"""
        out = tmp_path / "plain"
        assert main(["sample", "--checkpoint", str(trained["host"]), "--prompt", PROMPT, "--out", str(out)]) == 0
        assert (out / "sample_lambda_1.00.ppm").is_file()

    def test_subject_word_must_occur(self, tmp_path, trained, reference_ppm):
        """--subject names a word of the prompt"""
        assert main([
            "sample", "--checkpoint", str(trained["nested"]), "--prompt", PROMPT,
            "--ref-images", str(reference_ppm), "--subject", "pet", "--out", str(tmp_path / "x"),
        ]) == 1

    def test_ablate_alpha(self, tmp_path, trained, smoke_config_path):
        """One row per alpha setting"""
        out = tmp_path / "alpha"
        assert main([
            "ablate-alpha", "--config", str(smoke_config_path), "--host-checkpoint", str(trained["host"]),
            "--out", str(out),
        ]) == 0
        table = pd.read_csv(out / "alpha.csv")
        assert len(table) == 2
        assert (table["raw_norm_ratio"] > 0).all()
        assert len(list((out / "checkpoints").glob("*.ckpt"))) == 2

    def test_two_subjects(self, tmp_path, trained, reference_ppm):
        """Each --ref-images group binds to its own --subject word"""
        identity = IdentityParams(glyph_id=901, body=PALETTE["olive"], accent=PALETTE["beige"], trim=PALETTE["navy"])
        second = write_ppm(tmp_path / "second.ppm", render_input(identity))
        out = tmp_path / "pair"
        assert main([
            "sample", "--checkpoint", str(trained["nested"]), "--prompt", "person with pet on red plain center",
            "--ref-images", str(reference_ppm), "--subject", "person",
            "--ref-images", str(second), "--subject", "pet", "--out", str(out),
        ]) == 0
        assert read_image(out / "sample_lambda_1.00.ppm").shape == (32, 32, 3)

    def test_retrain_is_bit_identical(self, tmp_path, trained, smoke_config_path):
        """Repeating stage A reproduces the checkpoint byte for byte"""
        out = tmp_path / "again"
        assert main(["train", "--config", str(smoke_config_path), "--stage", "A", "--out", str(out)]) == 0
        assert (out / "model.ckpt").read_bytes() == trained["host"].read_bytes()

    def test_ablate_queries(self, tmp_path, trained, smoke_config_path):
        """One row per learned-query count, in grid order"""
        out = tmp_path / "queries"
        assert main([
            "ablate-queries", "--config", str(smoke_config_path), "--host-checkpoint", str(trained["host"]),
            "--out", str(out),
        ]) == 0
        table = pd.read_csv(out / "queries.csv")
        assert table["num_queries"].tolist() == [2, 4]

    def test_compare_mechanisms(self, tmp_path, trained, smoke_config_path):
        """Curves for every checkpoint, in mechanism order"""
        global_v = tmp_path / "global_v"
        assert main([
            "train", "--config", str(smoke_config_path), "--stage", "B", "--mechanism", "global_v",
            "--host-checkpoint", str(trained["host"]), "--out", str(global_v),
        ]) == 0
        out = tmp_path / "compare"
        assert main([
            "compare-mechanisms", "--checkpoints", str(global_v / "model.ckpt"), str(trained["nested"]),
            "--out", str(out),
        ]) == 0
        records = pd.read_csv(out / "records.csv")
        assert list(dict.fromkeys(records["mechanism"])) == ["nested", "global_v"]
        assert (out / "scatter.ppm").is_file()

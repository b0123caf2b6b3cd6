import json

import pytest

from nestattn.core.config import (
    BUDGET_KEYS,
    RunConfig,
    Settings,
    budget_signature,
    load_run_config,
    parse_config_text,
)
from nestattn.core.exceptions import ConfigurationError, InvariantError, ValidationError, exit_code_for
from nestattn.core.logging import PerformanceLogger, bind_run_context, get_logger, log_error, setup_logging
from nestattn.core.models import MechanismKind, MetricRecord, TradeoffCurve


class TestRunConfig:
    """Run config parsing, canonical text and digest"""

    def test_canonical_text_round_trip(self):
        """Canonical text parses back to an equal config"""
        config = RunConfig().with_overrides(personalization={"alpha": "none"}, eval={"seeds": [3, 4]})
        text = config.canonical_text()
        assert parse_config_text(text) == config
        assert parse_config_text(text).canonical_text() == text

    def test_canonical_text_is_sorted(self):
        """Sections appear in sorted order with LF endings"""
        text = RunConfig().canonical_text()
        sections = [line for line in text.splitlines() if line.startswith("[")]
        assert sections == sorted(sections)
        assert "\r" not in text and text.endswith("\n")

    def test_digest_tracks_content(self):
        """Equal configs share a digest; any change alters it"""
        assert RunConfig().digest() == RunConfig().digest()
        assert RunConfig().digest() != RunConfig().with_overrides(train={"seed": 4}).digest()
        assert len(RunConfig().digest()) == 64

    def test_unknown_key_rejected(self):
        """Unknown keys are configuration errors"""
        with pytest.raises(ConfigurationError) as excinfo:
            parse_config_text("[model]\nwidth = 3\n")
        assert excinfo.value.details["setting"].startswith("model")

    def test_syntax_error(self):
        """Malformed TOML is a configuration error"""
        with pytest.raises(ConfigurationError):
            parse_config_text("[model\n")

    def test_alpha_none(self):
        """alpha = "none" disables the regularization"""
        config = parse_config_text('[personalization]\nalpha = "none"\n')
        assert config.personalization.alpha_value is None
        assert RunConfig().personalization.alpha_value == 2.0

    def test_alpha_must_be_positive(self):
        """Non-positive alpha is rejected"""
        with pytest.raises(ConfigurationError):
            RunConfig().with_overrides(personalization={"alpha": -1.0})

    def test_unknown_section_override(self):
        """Overrides name existing sections only"""
        with pytest.raises(ConfigurationError):
            RunConfig().with_overrides(optimizer={"lr": 1.0})

    def test_mechanism_parsed(self):
        """Mechanism names map onto MechanismKind"""
        config = parse_config_text('[personalization]\nmechanism = "global_v"\n')
        assert config.personalization.mechanism is MechanismKind.GLOBAL_V

    def test_missing_file(self, tmp_path):
        """A missing config file is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.toml")

    def test_smoke_config(self, smoke_config):
        """The bundled smoke config loads and keeps defaults it does not set"""
        assert smoke_config.train.steps == 2
        assert smoke_config.eval.alpha_grid == ["none", 2.0]
        assert smoke_config.model.max_tokens == 8

    def test_budget_signature(self):
        """Budget keys are flattened from their sections"""
        signature = budget_signature(RunConfig().with_overrides(train={"steps": 7}))
        assert set(signature) == set(BUDGET_KEYS)
        assert signature["train.steps"] == 7


class TestSettings:
    """Process settings from the environment"""

    def test_environment_prefix(self, monkeypatch):
        """NESTATTN_* variables override defaults"""
        monkeypatch.setenv("NESTATTN_LOG_LEVEL", "DEBUG")
        monkeypatch.setenv("NESTATTN_THREADS", "2")
        settings = Settings()
        assert settings.log_level == "DEBUG"
        assert settings.threads == 2

    def test_log_format_validated(self, monkeypatch):
        """Only json and text log formats exist"""
        monkeypatch.setenv("NESTATTN_LOG_FORMAT", "xml")
        with pytest.raises(Exception):
            Settings()


class TestRecords:
    """Domain records"""

    def test_curve_requires_ascending_lambda(self):
        """Curve records must have strictly increasing lambda"""
        rows = [MetricRecord(mechanism=MechanismKind.NESTED, lambda_=v, seed=0, identity_score=0.5,
                             prompt_score=0.5, sample_count=1) for v in (2.0, 1.0)]
        with pytest.raises(ValueError):
            TradeoffCurve(mechanism=MechanismKind.NESTED, records=rows)

    def test_scores_bounded(self):
        """Scores outside [0, 1] are rejected"""
        with pytest.raises(ValueError):
            MetricRecord(mechanism=MechanismKind.NESTED, lambda_=1.0, seed=0, identity_score=1.5,
                         prompt_score=0.5, sample_count=1)

    def test_exit_codes(self):
        """Invariant failures exit 2, everything else 1"""
        assert exit_code_for(InvariantError("bad")) == 2
        assert exit_code_for(ValidationError("bad")) == 1
        assert exit_code_for(ConfigurationError("bad")) == 1


@pytest.fixture
def run_log(tmp_path):
    """JSON run log bound to a command; logging is reset afterwards"""
    path = tmp_path / "run.log"
    setup_logging(log_file=str(path), command="gen-data")
    yield path
    setup_logging()


def _lines(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


class TestLogging:
    """Structured run log"""

    def test_lines_carry_run_context(self, run_log):
        """Bound fields appear on every later line"""
        get_logger("test").info("first")
        bind_run_context(config_digest="abc123")
        get_logger("test").info("second", step=4)
        first, second = _lines(run_log)
        assert first["command"] == "gen-data" and "config_digest" not in first
        assert second["config_digest"] == "abc123" and second["step"] == 4
        assert second["event"] == "second" and "timestamp" in second

    def test_setup_drops_previous_context(self, run_log, tmp_path):
        """A new run starts from a clean context"""
        bind_run_context(config_digest="old")
        other = tmp_path / "other.log"
        setup_logging(log_file=str(other), command="train")
        get_logger("test").info("hello")
        (line,) = _lines(other)
        assert line["command"] == "train" and "config_digest" not in line

    def test_log_error_reports_details(self, run_log):
        """Library errors log their code and details"""
        log_error(ValidationError("bad lambda", field="lambda", value=0.5), {"lam_grid": "1,2"})
        (line,) = _lines(run_log)
        assert line["error_code"] == "VALIDATION_ERROR"
        assert line["field"] == "lambda" and line["value"] == 0.5
        assert line["lam_grid"] == "1,2" and line["level"] == "error"

    def test_performance_logger(self, run_log):
        """Start and completion lines share the operation context"""
        with PerformanceLogger("training", get_logger("test"), stage="A"):
            pass
        started, completed = _lines(run_log)
        assert started["operation"] == completed["operation"] == "training"
        assert completed["stage"] == "A" and completed["seconds"] >= 0

    def test_performance_logger_failure(self, run_log):
        """A raised error is logged and re-raised"""
        with pytest.raises(InvariantError):
            with PerformanceLogger("sweep", get_logger("test")):
                raise InvariantError("boom")
        assert _lines(run_log)[-1]["error_type"] == "InvariantError"

import math
from unittest.mock import patch

import pytest
import torch

from nestattn.attention import AttentionCapture
from nestattn.core.config import ModelConfig
from nestattn.core.exceptions import CheckpointError, ShapeError, TrainingError, ValidationError
from nestattn.core.models import MechanismKind
from nestattn.core.tensor import DTYPE, RandomSource, grad_check
from nestattn.core.utils import module_checksum
from nestattn.data.imageio import to_model_space
from nestattn.data.render import render_input
from nestattn.data.vocab import DEFAULT_VOCABULARY
from nestattn.denoiser import (
    DiffusionSchedule,
    PromptEmbedding,
    SubjectAdapter,
    ToyDenoiser,
    Trainer,
    bind_reference,
    build_adapter,
    build_host,
    check_host_compatible,
    forward_noising,
    initial_latent,
    knob_arguments,
    load_bundle,
    load_checkpoint,
    retarget_subject,
    sample,
    sample_loss,
    timestep_embedding,
    train_adapter,
    train_host,
    training_step,
)
from nestattn.encoder import EncoderOutput

PROMPT = "subj on red plain center"


@pytest.fixture
def prompt(smoke_config):
    """Prompt with the subject word first"""
    return PromptEmbedding.from_text(PROMPT, max_tokens=smoke_config.model.max_tokens)


@pytest.fixture
def reference(smoke_samples):
    """Reference image of the first training identity, in model space"""
    return to_model_space(render_input(smoke_samples[0].identity))


class TestSchedule:
    """Linear-beta schedule"""

    def test_alpha_bars_decrease(self):
        """alpha_bar starts near one and falls monotonically"""
        schedule = DiffusionSchedule(100, 1e-4, 0.02)
        assert schedule.alpha_bars.shape == (100,)
        assert float(schedule.alpha_bars[0]) == pytest.approx(1.0 - 1e-4)
        assert (schedule.alpha_bars[1:] < schedule.alpha_bars[:-1]).all()

    def test_sampling_steps(self):
        """Sampled steps run from T-1 down to 0 without repeats"""
        schedule = DiffusionSchedule(100)
        assert schedule.sampling_steps(4) == [99, 66, 33, 0]
        assert schedule.sampling_steps(1) == [99]
        steps = schedule.sampling_steps(100)
        assert steps == list(range(99, -1, -1))

    @pytest.mark.parametrize("count", [0, 101])
    def test_sampling_steps_bounds(self, count):
        """The step count must lie in [1, T]"""
        with pytest.raises(ValidationError):
            DiffusionSchedule(100).sampling_steps(count)

    def test_invalid_betas(self):
        """Betas must be ordered and inside (0, 1)"""
        with pytest.raises(ValidationError):
            DiffusionSchedule(10, 0.5, 0.1)
        with pytest.raises(ValidationError):
            DiffusionSchedule(0)

    def test_forward_noising(self):
        """x_t mixes the clean image and the noise by alpha_bar"""
        schedule = DiffusionSchedule(10)
        x0 = torch.zeros(2, 2, 3, dtype=DTYPE)
        noise = torch.ones(2, 2, 3, dtype=DTYPE)
        x_t = forward_noising(x0, 4, noise, schedule)
        expected = math.sqrt(1.0 - float(schedule.alpha_bar(4)))
        assert torch.allclose(x_t, torch.full((2, 2, 3), expected, dtype=DTYPE))

    @pytest.mark.parametrize("t", [0, 40, 99])
    def test_forward_noising_moments(self, t):
        """Over many noise draws x_t has mean sqrt(alpha_bar) x0 and variance 1 - alpha_bar"""
        schedule = DiffusionSchedule(100)
        alpha_bar = float(schedule.alpha_bar(t))
        x0 = torch.full((100, 100, 3), 0.5, dtype=DTYPE)
        x_t = forward_noising(x0, t, RandomSource(t, (2,)).normal(100, 100, 3), schedule)
        assert float(x_t.mean()) == pytest.approx(0.5 * math.sqrt(alpha_bar), abs=0.02)
        assert float(x_t.var()) == pytest.approx(1.0 - alpha_bar, rel=0.05, abs=1e-6)

    def test_forward_noising_shape(self):
        """Noise must match the image"""
        schedule = DiffusionSchedule(10)
        with pytest.raises(ShapeError):
            forward_noising(torch.zeros(2, 2, 3, dtype=DTYPE), 0, torch.zeros(2, 3, 3, dtype=DTYPE), schedule)

    def test_step_range(self):
        """Steps outside the schedule are rejected"""
        with pytest.raises(ValidationError):
            DiffusionSchedule(10).alpha_bar(10)


class TestModel:
    """Toy denoiser"""

    @pytest.mark.parametrize("dim", [7, 8])
    def test_timestep_embedding(self, dim):
        """One row of width dim"""
        assert timestep_embedding(5, dim).shape == (1, dim)

    def test_output_shape(self, smoke_config, prompt):
        """Predicted noise has the image shape"""
        model = build_host(smoke_config)
        x = RandomSource(1).normal(32, 32, 3)
        assert model(x, 3, prompt).shape == (32, 32, 3)
        assert len(model.cross_attention_layers) == smoke_config.model.blocks

    def test_wrong_image_shape(self, smoke_config, prompt):
        """Only image_size x image_size x 3 inputs are accepted"""
        model = build_host(smoke_config)
        with pytest.raises(ShapeError):
            model(torch.zeros(16, 16, 3, dtype=DTYPE), 0, prompt)

    def test_patch_must_divide_image(self):
        """The patch size must divide the image size"""
        with pytest.raises(ShapeError):
            ToyDenoiser(ModelConfig(patch_size=5), 32, 10, RandomSource(0))

    def test_capture_hook(self, smoke_config, prompt):
        """A registered capture is used until removed"""
        model = build_host(smoke_config)
        capture = AttentionCapture()
        handle = model.register_capture_hook(capture)
        assert model.registered_capture is capture
        handle.remove()
        assert model.registered_capture is None


class TestPrompt:
    """Prompt embeddings"""

    def test_subject_position(self, prompt):
        """The subject word index points at the subject word"""
        assert prompt.subject_word_index == 0
        assert prompt.subject_word == "subj"
        assert prompt.length == 8

    def test_retarget_keeps_position(self, prompt):
        """Swapping the subject word keeps its index"""
        retargeted = retarget_subject(prompt, "pet")
        assert retargeted.subject_word == "pet"
        assert retargeted.subject_word_index == prompt.subject_word_index
        assert retargeted.token_ids[1:] == prompt.token_ids[1:]

    def test_needs_subject_word(self):
        """Prompts without a subject word are rejected"""
        with pytest.raises(ValidationError):
            PromptEmbedding.from_text("on red plain center")


class TestSampling:
    """Deterministic DDIM sampling"""

    def test_initial_latent_depends_on_seed_only(self):
        """Same seed, same latent"""
        assert torch.equal(initial_latent(3, 32), initial_latent(3, 32))
        assert not torch.equal(initial_latent(3, 32), initial_latent(4, 32))
        assert initial_latent(3, 32).shape == (32, 32, 3)

    def test_sample_deterministic(self, host_bundle, prompt):
        """Two runs with one seed are bit-identical"""
        steps = host_bundle.config.schedule.sample_steps
        first = sample(prompt, [], steps, 5, host_bundle.schedule, host_bundle.host)
        second = sample(prompt, [], steps, 5, host_bundle.schedule, host_bundle.host)
        assert torch.equal(first, second)
        assert float(first.abs().max()) <= 1.0

    def test_nested_capture(self, nested_bundle, prompt, reference):
        """One record per layer and step, each rescaled to alpha"""
        subject = bind_reference(nested_bundle, prompt, [reference], value=2.0)
        capture = AttentionCapture()
        handle = nested_bundle.host.register_capture_hook(capture)
        try:
            sample(prompt, [subject], 2, 0, nested_bundle.schedule, nested_bundle.host)
        finally:
            handle.remove()
        assert len(capture) == nested_bundle.config.model.blocks * 2
        assert [r.step for r in capture.records] == [0, 1]
        assert capture.mean_norm_ratio() == pytest.approx(2.0, abs=1e-9)

    def test_subject_changes_output(self, nested_bundle, prompt, reference):
        """A bound subject alters the generation"""
        subject = bind_reference(nested_bundle, prompt, [reference])
        plain = sample(prompt, [], 2, 0, nested_bundle.schedule, nested_bundle.host)
        personalized = sample(prompt, [subject], 2, 0, nested_bundle.schedule, nested_bundle.host)
        assert not torch.equal(plain, personalized)


class TestCheckpoint:
    """Binary checkpoints"""

    def test_host_round_trip(self, tmp_path, host_bundle, prompt):
        """A reloaded host predicts bit-identical noise"""
        path = host_bundle.save(tmp_path / "host.ckpt")
        loaded = load_bundle(path)
        assert loaded.adapter is None and loaded.mechanism is None
        assert loaded.config == host_bundle.config
        x = initial_latent(2, 32)
        with torch.no_grad():
            assert torch.equal(loaded.host(x, 7, prompt), host_bundle.host(x, 7, prompt))

    def test_adapter_round_trip(self, tmp_path, nested_bundle, prompt, reference):
        """A reloaded adapter samples the same image"""
        loaded = load_bundle(nested_bundle.save(tmp_path / "nested.ckpt"))
        assert loaded.mechanism is MechanismKind.NESTED
        assert module_checksum(loaded.adapter) == module_checksum(nested_bundle.adapter)
        images = []
        for bundle in (nested_bundle, loaded):
            subject = bind_reference(bundle, prompt, [reference], value=1.5)
            images.append(sample(prompt, [subject], 2, 1, bundle.schedule, bundle.host))
        assert torch.equal(images[0], images[1])

    def test_bad_magic(self, tmp_path, host_bundle):
        """Files without the magic are rejected"""
        path = host_bundle.save(tmp_path / "host.ckpt")
        data = path.read_bytes()
        path.write_bytes(b"NOTACKPT" + data[8:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, host_bundle):
        """A cut-off payload is rejected"""
        path = host_bundle.save(tmp_path / "host.ckpt")
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, host_bundle):
        """Extra bytes after the last record are rejected"""
        path = host_bundle.save(tmp_path / "host.ckpt")
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing(self, tmp_path):
        """A missing file is a checkpoint error"""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_host_compatibility(self, smoke_config):
        """Stage B must share the host's model section"""
        check_host_compatible(smoke_config, smoke_config.with_overrides(train={"steps": 9}))
        with pytest.raises(CheckpointError) as excinfo:
            check_host_compatible(smoke_config, smoke_config.with_overrides(model={"d_model": 8}))
        assert excinfo.value.details["parameter"] == "model"


class TestAdapter:
    """Subject adapters"""

    @pytest.mark.parametrize("mechanism", [
        MechanismKind.NESTED,
        MechanismKind.DECOUPLED_CA,
        MechanismKind.GLOBAL_V,
        MechanismKind.MULTIPLE_TOKENS,
    ])
    def test_one_module_per_layer(self, smoke_config, mechanism):
        """Layered mechanisms get one module per host cross-attention layer"""
        host = build_host(smoke_config)
        adapter = build_adapter(smoke_config, host, mechanism)
        assert sorted(adapter.layers.keys()) == [str(i) for i in range(smoke_config.model.blocks)]
        assert adapter.token_projection is None

    def test_simple_adapter(self, smoke_config):
        """The simple adapter has a token projection and no layer modules"""
        adapter = build_adapter(smoke_config, build_host(smoke_config), MechanismKind.SIMPLE_ADAPTER)
        assert len(adapter.layers) == 0
        assert adapter.token_projection is not None

    def test_extractor_not_trainable(self, smoke_config):
        """Only Q-Former and mechanism parameters are trained"""
        adapter = build_adapter(smoke_config, build_host(smoke_config), MechanismKind.NESTED)
        trainable = {id(p) for p in adapter.trainable_parameters()}
        assert trainable
        assert all(id(t) not in trainable for t in adapter.encoder.extractor.buffers())

    @pytest.mark.parametrize("mechanism,expected", [
        (MechanismKind.NESTED, {"lam": 2.0}),
        (MechanismKind.GLOBAL_V, {"lam": 2.0}),
        (MechanismKind.MULTIPLE_TOKENS, {"lam": 2.0}),
        (MechanismKind.DECOUPLED_CA, {"scale": 2.0}),
        (MechanismKind.SIMPLE_ADAPTER, {}),
    ])
    def test_knob_arguments(self, mechanism, expected):
        """Each mechanism reads its own inference knob"""
        assert knob_arguments(mechanism, 2.0) == expected

    def test_bind_without_adapter(self, host_bundle, prompt, reference):
        """A host-only bundle cannot bind references"""
        with pytest.raises(ValidationError):
            bind_reference(host_bundle, prompt, [reference])

    def test_binding_fields(self, nested_bundle, prompt, reference):
        """Bindings carry the knob, alpha and one token per learned query"""
        subject = bind_reference(nested_bundle, prompt, [reference, reference], value=3.0)
        assert subject.binding.lam == 3.0
        assert subject.binding.alpha == 2.0
        assert subject.num_tokens == 2 * nested_bundle.config.encoder.num_queries
        assert subject.binding.subject_token_index == prompt.subject_word_index


class TestTraining:
    """Two-stage training"""

    def test_stage_b_needs_adapter(self, smoke_config):
        """Stage B without an adapter is rejected"""
        config = smoke_config.with_overrides(train={"stage": "B"})
        host = build_host(config)
        with pytest.raises(ValidationError):
            Trainer(config, host, DiffusionSchedule.from_config(config.schedule))

    def test_stage_a_rejects_adapter(self, smoke_config):
        """Stage A trains the bare host"""
        host = build_host(smoke_config)
        adapter = build_adapter(smoke_config, host, MechanismKind.NESTED)
        with pytest.raises(ValidationError):
            Trainer(smoke_config, host, DiffusionSchedule.from_config(smoke_config.schedule), adapter)

    def test_non_finite_loss(self, smoke_config, smoke_samples):
        """A NaN loss stops training with the step attached"""
        host = build_host(smoke_config)
        optimizer = torch.optim.SGD(host.parameters(), lr=0.1)
        nan = torch.tensor(float("nan"), dtype=DTYPE, requires_grad=True)
        with patch("nestattn.denoiser.training.sample_loss", return_value=nan):
            with pytest.raises(TrainingError) as excinfo:
                training_step(smoke_samples[:1], host, optimizer, DiffusionSchedule(10), RandomSource(0), step=4)
        assert excinfo.value.details["step"] == 4

    def test_empty_batch(self, smoke_config):
        """A batch needs at least one sample"""
        host = build_host(smoke_config)
        optimizer = torch.optim.SGD(host.parameters(), lr=0.1)
        with pytest.raises(ValidationError):
            training_step([], host, optimizer, DiffusionSchedule(10), RandomSource(0))

    def test_host_training_deterministic(self, smoke_config, smoke_samples, host_bundle):
        """Stage A depends only on the config"""
        bundle, result = train_host(smoke_config, smoke_samples)
        assert result.stage == "A"
        assert len(result.losses) == smoke_config.train.steps
        assert all(math.isfinite(v) for v in result.losses)
        assert module_checksum(bundle.host) == module_checksum(host_bundle.host)

    def test_adapter_training_freezes_host(self, smoke_config, smoke_samples, host_bundle):
        """Stage B updates the adapter and leaves the host untouched"""
        config = smoke_config.with_overrides(personalization={"mechanism": "global_v"})
        before = module_checksum(host_bundle.host)
        fresh = module_checksum(build_adapter(config, build_host(config), MechanismKind.GLOBAL_V))
        bundle, result = train_adapter(config, host_bundle, smoke_samples)
        assert result.stage == "B"
        assert len(result.losses) == smoke_config.train.steps
        assert module_checksum(host_bundle.host) == before
        assert module_checksum(bundle.adapter) != fresh
        assert bundle.mechanism is MechanismKind.GLOBAL_V

    def test_adapter_needs_matching_host(self, smoke_config, smoke_samples, host_bundle):
        """Stage B refuses a host trained with another model section"""
        config = smoke_config.with_overrides(model={"mlp_hidden": 12})
        with pytest.raises(CheckpointError):
            train_adapter(config, host_bundle, smoke_samples)

    def test_loss_gradient(self, smoke_config, prompt):
        """Gradients of the denoising loss w.r.t. encoder tokens match central differences on 20 seeds"""
        for seed in range(20):
            rng = RandomSource(seed, (21,))
            host = ToyDenoiser(smoke_config.model, 16, len(DEFAULT_VOCABULARY), rng.child(0))
            adapter = SubjectAdapter.build(MechanismKind.NESTED, host, smoke_config.encoder)
            x_t, noise = rng.child(1).normal(16, 16, 3), rng.child(2).normal(16, 16, 3)
            t = int(rng.integers(0, 100))

            def f(tokens):
                subject = adapter.bind(prompt, EncoderOutput(tokens), lam=2.0, alpha=2.0)
                return torch.mean((host(x_t, t, prompt, [subject]) - noise) ** 2)

            assert grad_check(f, rng.child(3).normal(4, smoke_config.encoder.d_enc)) < 1e-4

    def test_zero_learning_rate(self, smoke_config, smoke_samples):
        """With a zero learning rate training leaves the host bit-identical"""
        config = smoke_config.with_overrides(train={"learning_rate": 0.0})
        bundle, result = train_host(config, smoke_samples)
        assert len(result.losses) == config.train.steps
        assert module_checksum(bundle.host) == module_checksum(build_host(config))

    def test_untrained_loss_near_one(self, smoke_config, smoke_samples):
        """A fresh host predicts almost no noise, so its loss is close to the noise variance"""
        host = build_host(smoke_config)
        schedule = DiffusionSchedule.from_config(smoke_config.schedule)
        rng = RandomSource(4)
        losses = []
        with torch.no_grad():
            for i, sample in enumerate(smoke_samples):
                t = int(rng.integers(0, schedule.steps))
                noise = rng.child(i).normal(*sample.target_image.shape)
                losses.append(float(sample_loss(sample, host, schedule, t, noise)))
        assert sum(losses) / len(losses) == pytest.approx(1.0, abs=0.1)

    @pytest.mark.slow
    def test_host_loss_falls(self, smoke_config, smoke_samples):
        """A longer stage A lowers the mean loss"""
        config = smoke_config.with_overrides(train={"steps": 200, "batch_size": 4})
        _, result = train_host(config, smoke_samples)
        head, tail = result.losses[:50], result.losses[-50:]
        assert sum(tail) / len(tail) < sum(head) / len(head)

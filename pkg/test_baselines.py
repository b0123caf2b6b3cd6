from unittest.mock import Mock

import pytest
import torch

from nestattn.attention import (
    CrossAttentionLayer,
    SubjectBinding,
    attention_logits,
    cross_attention_forward,
    project_text,
)
from nestattn.baselines import (
    DecoupledCAParams,
    TokenProjection,
    ValueProjection,
    decoupled_ca_forward,
    global_v_forward,
    mechanism_cross_attention,
    multiple_tokens_forward,
    simple_adapter_forward,
)
from nestattn.core.exceptions import ShapeError, ValidationError
from nestattn.core.models import MechanismKind
from nestattn.core.tensor import DTYPE, RandomSource, matmul, softmax_rows

SUBJECT = 2


@pytest.fixture
def rng():
    """Seeded random source"""
    return RandomSource(19)


@pytest.fixture
def layer(rng):
    """Host layer: 6 feature dims, 5 text dims, d = 4"""
    return CrossAttentionLayer(0, feature_dim=6, text_dim=5, d=4, rng=rng.child(0))


@pytest.fixture
def features(rng):
    """12 spatial queries"""
    return rng.child(1).normal(12, 6)


@pytest.fixture
def text(rng):
    """4 prompt tokens"""
    return rng.child(2).normal(4, 5)


@pytest.fixture
def tokens(rng):
    """3 encoder tokens of width 3"""
    return rng.child(3).normal(3, 3)


def _subject(mechanism, binding, **extra):
    subject = Mock()
    subject.mechanism = mechanism
    subject.binding = binding
    subject.scale = extra.pop("scale", 1.0)
    for name, value in extra.items():
        setattr(subject, name, value)
    return subject


class TestDecoupledCA:
    """Parallel image cross-attention"""

    def test_zero_scale_is_text_only(self, rng, features, text, tokens, layer):
        """Scale 0 returns the text branch exactly"""
        params = DecoupledCAParams(0, 3, 4, rng.child(4))
        out = decoupled_ca_forward(features, text, tokens, layer, params, scale=0.0)
        assert torch.equal(out, cross_attention_forward(features, text, layer))

    def test_branch_is_additive(self, rng, features, text, tokens, layer):
        """Doubling the scale doubles the image contribution"""
        params = DecoupledCAParams(0, 3, 4, rng.child(4))
        base = cross_attention_forward(features, text, layer)
        one = decoupled_ca_forward(features, text, tokens, layer, params, scale=1.0) - base
        two = decoupled_ca_forward(features, text, tokens, layer, params, scale=2.0) - base
        assert torch.allclose(two, 2.0 * one, atol=1e-12)

    def test_negative_scale(self, rng, features, text, tokens, layer):
        """Scale must be non-negative"""
        with pytest.raises(ValidationError):
            decoupled_ca_forward(features, text, tokens, layer, DecoupledCAParams(0, 3, 4, rng), scale=-0.1)


class TestSimpleAdapter:
    """Image tokens appended to the prompt"""

    def test_no_tokens_is_plain(self, features, text, layer):
        """Without image tokens the layer is unchanged"""
        assert torch.equal(simple_adapter_forward(features, text, None, layer),
                           cross_attention_forward(features, text, layer))

    def test_appended_tokens(self, rng, features, text, tokens, layer):
        """Projected tokens are attended like extra prompt tokens"""
        projected = TokenProjection(3, 5, rng.child(5))(tokens)
        out = simple_adapter_forward(features, text, projected, layer)
        assert torch.allclose(out, cross_attention_forward(features, torch.cat([text, projected]), layer))

    def test_width_checked(self, features, text, tokens, layer):
        """Projected tokens must match the text width"""
        with pytest.raises(ShapeError):
            simple_adapter_forward(features, text, tokens, layer)


class TestGlobalV:
    """One projected mean value for every query"""

    def test_matches_replaced_value(self, rng, features, text, tokens, layer):
        """The subject value is projection(mean of tokens)"""
        projection = ValueProjection(0, 3, 4, rng.child(6))
        out = global_v_forward(features, text, tokens, layer, projection, SUBJECT)
        q, k, v = project_text(features, text, layer)
        replaced = v.clone()
        replaced[SUBJECT] = matmul(tokens.mean(dim=0, keepdim=True), projection.w_v)[0]
        expected = matmul(softmax_rows(attention_logits(q, k, layer.d)), replaced)
        assert torch.allclose(out, expected, atol=1e-12)

    def test_token_width(self, rng, features, text, layer):
        """Tokens must match the projection"""
        with pytest.raises(ShapeError):
            global_v_forward(features, text, rng.normal(3, 7), layer, ValueProjection(0, 3, 4, rng), SUBJECT)


class TestMultipleTokens:
    """The subject token split into M copies sharing its key"""

    def test_single_copy_of_subject_value(self, features, text, layer):
        """One copy carrying V[s*] reproduces plain cross-attention"""
        _, _, v = project_text(features, text, layer)
        out = multiple_tokens_forward(features, text, v[SUBJECT:SUBJECT + 1], layer, SUBJECT)
        assert torch.allclose(out, cross_attention_forward(features, text, layer), atol=1e-12)

    def test_copies_share_attention(self, rng, features, text, layer):
        """Equal values across copies act like one token with M times the weight"""
        value = rng.child(7).normal(1, 4)
        single = multiple_tokens_forward(features, text, value, layer, SUBJECT)
        triple = multiple_tokens_forward(features, text, value.expand(3, 4), layer, SUBJECT)
        assert not torch.allclose(single, triple)
        assert triple.shape == (12, 4)

    def test_lambda_checked(self, features, text, layer):
        """lambda below one is invalid"""
        with pytest.raises(ValidationError):
            multiple_tokens_forward(features, text, torch.zeros(2, 4, dtype=DTYPE), layer, SUBJECT, lam=0.5)

    def test_value_shape(self, features, text, layer):
        """Values must have the layer width"""
        with pytest.raises(ShapeError):
            multiple_tokens_forward(features, text, torch.zeros(2, 3, dtype=DTYPE), layer, SUBJECT)


class TestDispatch:
    """Per-layer mechanism routing"""

    def test_no_subjects(self, features, text, layer):
        """No subjects means plain cross-attention"""
        assert torch.equal(mechanism_cross_attention(features, text, layer, []),
                           cross_attention_forward(features, text, layer))

    def test_mixed_mechanisms(self, features, text, tokens, layer):
        """All subjects of one generation share a mechanism"""
        subjects = [_subject(MechanismKind.NESTED, SubjectBinding(0, tokens)),
                    _subject(MechanismKind.GLOBAL_V, SubjectBinding(1, tokens))]
        with pytest.raises(ValidationError):
            mechanism_cross_attention(features, text, layer, subjects)

    def test_baselines_take_one_subject(self, features, text, tokens, layer):
        """Only nested attention supports several subjects"""
        subjects = [_subject(MechanismKind.GLOBAL_V, SubjectBinding(0, tokens)),
                    _subject(MechanismKind.GLOBAL_V, SubjectBinding(1, tokens))]
        with pytest.raises(ValidationError):
            mechanism_cross_attention(features, text, layer, subjects)

    def test_routes_decoupled(self, rng, features, text, tokens, layer):
        """Decoupled subjects use their own scale and layer params"""
        params = DecoupledCAParams(0, 3, 4, rng.child(8))
        subject = _subject(MechanismKind.DECOUPLED_CA, SubjectBinding(SUBJECT, tokens), scale=0.5,
                           layer_params=Mock(return_value=params))
        out = mechanism_cross_attention(features, text, layer, [subject])
        assert torch.equal(out, decoupled_ca_forward(features, text, tokens, layer, params, scale=0.5))
        subject.layer_params.assert_called_once_with(0)

    def test_subject_outside_prompt(self, features, text, tokens, layer):
        """Bindings are checked against the prompt length"""
        subject = _subject(MechanismKind.GLOBAL_V, SubjectBinding(7, tokens))
        with pytest.raises(ValidationError):
            mechanism_cross_attention(features, text, layer, [subject])

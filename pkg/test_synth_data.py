from collections import Counter

import numpy as np
import pytest

from nestattn.core.exceptions import FileError, ShapeError, ValidationError
from nestattn.core.models import BackgroundColor, IdentityParams, Position, PromptAttributes, Style
from nestattn.core.tensor import RandomSource
from nestattn.data.dataset import (
    ALL_COMBINATIONS,
    build_dataset,
    dataset_checksum,
    held_out_prompts,
    load_dataset,
    sample_attributes,
    save_dataset,
    training_combinations,
)
from nestattn.data.decode import decode_identity
from nestattn.data.identity import (
    BACKGROUND_COLORS,
    GLYPH_SIZE,
    NUM_GLYPHS,
    PALETTE,
    glyph_cells,
    glyph_hamming,
    make_identities,
    make_identity,
)
from nestattn.data.imageio import heatmap, read_image, read_pgm, to_model_space, to_pixels, write_pgm, write_ppm
from nestattn.data.render import BOX_SIZE, box_slices, frame_mask, render, render_input
from nestattn.data.vocab import (
    DEFAULT_VOCABULARY,
    detokenize,
    parse_attributes,
    prompt_text,
    tokenize,
    word_index,
)


@pytest.fixture
def identity():
    """A fixed subject"""
    return IdentityParams(glyph_id=1234, body=PALETTE["orange"], accent=PALETTE["navy"], trim=PALETTE["teal"])


class TestIdentity:
    """Glyphs and identities"""

    def test_glyph_anchors_and_symmetry(self):
        """Every glyph is mirror-symmetric with fixed anchor cells"""
        for glyph_id in (0, 1, 777, NUM_GLYPHS - 1):
            cells = glyph_cells(glyph_id)
            assert cells.shape == (GLYPH_SIZE, GLYPH_SIZE)
            assert np.array_equal(cells, cells[:, ::-1])
            assert cells[0, 2] and cells[4, 2] and not cells[2, 2]

    def test_glyphs_distinct(self):
        """Different ids give different patterns"""
        assert not np.array_equal(glyph_cells(5), glyph_cells(6))
        assert glyph_hamming(5, 6) == 2
        assert glyph_hamming(9, 9) == 0

    def test_glyph_range(self):
        """Ids outside the table are rejected"""
        with pytest.raises(ValueError):
            glyph_cells(NUM_GLYPHS)

    def test_make_identities_deterministic(self):
        """Identities depend only on the seed"""
        first = make_identities(6, seed=21)
        assert first == make_identities(6, seed=21)
        assert first != make_identities(6, seed=22)
        assert all(i.body != i.accent for i in first)

    def test_draws_spread_over_glyphs(self):
        """1000 draws hit about as many glyphs as uniform sampling predicts"""
        identities = [make_identity(RandomSource(0, (i,))) for i in range(1000)]
        glyphs = {i.glyph_id for i in identities}
        expected = NUM_GLYPHS * (1.0 - (1.0 - 1.0 / NUM_GLYPHS) ** 1000)
        assert abs(len(glyphs) - expected) <= 40
        assert len({(i.glyph_id, i.body, i.accent, i.trim) for i in identities}) >= 900
        backgrounds = set(BACKGROUND_COLORS.values())
        assert all(c not in backgrounds for i in identities for c in (i.body, i.accent, i.trim))

    def test_body_and_accent_differ(self):
        """Identical body and accent colors are invalid"""
        with pytest.raises(ValueError):
            IdentityParams(glyph_id=0, body=PALETTE["lime"], accent=PALETTE["lime"], trim=PALETTE["sky"])


class TestRender:
    """Deterministic renderer"""

    def test_background_fill(self, identity):
        """Pixels away from the box carry the background color"""
        image = render(identity, PromptAttributes(background=BackgroundColor.RED))
        assert image.shape == (32, 32, 3) and image.dtype == np.uint8
        assert tuple(image[0, 0]) == BACKGROUND_COLORS[BackgroundColor.RED]
        assert tuple(image[31, 31]) == BACKGROUND_COLORS[BackgroundColor.RED]

    def test_invert_maps_box_only(self, identity):
        """invert replaces box pixels with 255 - value"""
        plain = render(identity, PromptAttributes(style=Style.PLAIN, position=Position.LEFT))
        inverted = render(identity, PromptAttributes(style=Style.INVERT, position=Position.LEFT))
        rows, cols = box_slices(Position.LEFT)
        assert np.array_equal(inverted[rows, cols], 255 - plain[rows, cols])
        assert np.array_equal(inverted[0], plain[0])

    def test_outline_frame(self, identity):
        """outline draws a black ring just outside the box"""
        image = render(identity, PromptAttributes(style=Style.OUTLINE, position=Position.RIGHT))
        assert (image[frame_mask(Position.RIGHT)] == 0).all()
        assert frame_mask(Position.RIGHT).sum() > 0

    def test_input_is_centered_plain_on_white(self, identity):
        """Reference renders use the fixed input attributes"""
        assert np.array_equal(render_input(identity), render(identity, PromptAttributes()))

    def test_box_size(self):
        """Box slices span the box size at every position"""
        for position in Position:
            rows, cols = box_slices(position)
            assert rows.stop - rows.start == BOX_SIZE
            assert cols.stop - cols.start == BOX_SIZE


class TestDecode:
    """Identity decoder"""

    @pytest.mark.parametrize("attributes", [
        PromptAttributes(),
        PromptAttributes(background=BackgroundColor.GRAY, style=Style.INVERT, position=Position.LEFT),
        PromptAttributes(background=BackgroundColor.YELLOW, style=Style.OUTLINE, position=Position.RIGHT),
    ])
    def test_clean_render_decodes_exactly(self, identity, attributes):
        """A clean render decodes to its identity at full confidence"""
        decoded = decode_identity(render(identity, attributes))
        assert not decoded.absent
        assert decoded.identity == identity
        assert decoded.position is attributes.position
        assert decoded.confidence == pytest.approx(1.0)

    def test_random_identities_round_trip(self):
        """Clean renders of random identities under random prompts decode exactly"""
        rng = RandomSource(31)
        for i in range(100):
            identity = make_identity(rng.child(i))
            attributes = ALL_COMBINATIONS[int(rng.integers(0, len(ALL_COMBINATIONS)))]
            decoded = decode_identity(render(identity, attributes))
            assert decoded.identity == identity
            assert decoded.position is attributes.position

    def test_noisy_render_keeps_glyph(self):
        """Uniform pixel noise of standard deviation 8/255 rarely changes the decoded glyph"""
        rng = RandomSource(32)
        half_width = 8.0 * np.sqrt(3.0)
        hits = 0
        for trial in range(200):
            identity = make_identity(rng.child(trial))
            attributes = ALL_COMBINATIONS[trial % len(ALL_COMBINATIONS)]
            image = render(identity, attributes).astype(np.float64)
            image += rng.numpy.uniform(-half_width, half_width, size=image.shape)
            noisy = np.clip(np.rint(image), 0, 255).astype(np.uint8)
            decoded = decode_identity(noisy, position=attributes.position)
            hits += int(not decoded.absent and decoded.identity.glyph_id == identity.glyph_id)
        assert hits >= 190

    def test_blank_image_is_absent(self):
        """A background-only image has no subject"""
        blank = np.full((32, 32, 3), BACKGROUND_COLORS[BackgroundColor.CYAN], dtype=np.uint8)
        assert decode_identity(blank).absent

    def test_shape_checked(self):
        """Only 32x32 RGB images are decoded"""
        with pytest.raises(ShapeError):
            decode_identity(np.zeros((16, 16, 3), dtype=np.uint8))


class TestVocabulary:
    """Tokenizer and prompt text"""

    def test_tokenize_pads_and_finds_subject(self):
        """Prompts are right-padded; the subject index points at the subject word"""
        tokens = tokenize("a photo of pet on red", max_tokens=8)
        assert len(tokens.token_ids) == 8
        assert tokens.subject_index == 3
        assert tokens.length == 6
        assert tokens.token_ids[-1] == DEFAULT_VOCABULARY.pad_id
        assert detokenize(tokens.token_ids) == ["a", "photo", "of", "pet", "on", "red"]

    def test_unknown_word(self):
        """Words outside the vocabulary are rejected"""
        with pytest.raises(ValidationError):
            tokenize("subj on purple")

    def test_too_long(self):
        """Prompts longer than max_tokens are rejected"""
        with pytest.raises(ValidationError):
            tokenize("subj on red plain center", max_tokens=4)

    def test_no_subject(self):
        """A prompt needs a subject word"""
        with pytest.raises(ValidationError):
            tokenize("on red plain")

    def test_prompt_text_and_parse(self):
        """Prompt text carries the three attributes back"""
        attributes = PromptAttributes(background=BackgroundColor.BLUE, style=Style.OUTLINE, position=Position.LEFT)
        text = prompt_text(attributes)
        assert text == "subj on blue outline left"
        assert parse_attributes(text.split()) == attributes
        assert word_index(tokenize(text).token_ids, "blue") == 2


class TestDataset:
    """Training triplets"""

    def test_held_out_prompts(self):
        """Held-out combinations are distinct and bounded"""
        prompts = held_out_prompts(12, seed=0)
        assert len({p.key for p in prompts}) == 12
        assert {p.style for p in prompts} == set(Style)
        assert {p.position for p in prompts} == set(Position)
        with pytest.raises(ValidationError):
            held_out_prompts(25, seed=0)

    def test_held_out_excluded_from_training(self):
        """Training never sees a held-out combination"""
        held_out = held_out_prompts(12, seed=3)
        samples = build_dataset(60, seed=3, held_out=held_out)
        blocked = {p.key for p in held_out}
        assert all(s.attributes.key not in blocked for s in samples)

    def test_balanced_cycles(self):
        """Attributes cycle through permutations of the allowed combinations"""
        samples = build_dataset(len(ALL_COMBINATIONS), seed=1, held_out=[])
        assert {s.attributes.key for s in samples} == {a.key for a in ALL_COMBINATIONS}

    def test_attribute_marginals(self):
        """Each background, style and position gets its share of 4096 draws within 10%"""
        allowed = training_combinations(held_out_prompts(12, seed=0))
        chosen = sample_attributes(4096, RandomSource(0, (1,)), allowed)
        for field, values in (("background", BackgroundColor), ("style", Style), ("position", Position)):
            counts = Counter(getattr(a, field) for a in chosen)
            share = 4096 / len(values)
            for value in values:
                assert abs(counts[value] - share) <= 0.1 * share

    def test_deterministic(self):
        """Same seed, same pixels"""
        assert dataset_checksum(build_dataset(10, seed=4)) == dataset_checksum(build_dataset(10, seed=4))
        assert dataset_checksum(build_dataset(10, seed=4)) != dataset_checksum(build_dataset(10, seed=5))

    def test_triplet_contents(self):
        """Inputs are reference renders, targets follow the prompt"""
        sample = build_dataset(3, seed=2)[1]
        assert np.array_equal(sample.input_image, render_input(sample.identity))
        assert np.array_equal(sample.target_image, render(sample.identity, sample.attributes))
        assert sample.prompt == prompt_text(sample.attributes)

    def test_save_and_load(self, tmp_path):
        """A saved dataset loads back with the same checksum"""
        samples = build_dataset(5, seed=8)
        manifest = save_dataset(samples, tmp_path / "data")
        assert manifest.name == "manifest.csv"
        loaded = load_dataset(tmp_path / "data")
        assert dataset_checksum(loaded) == dataset_checksum(samples)
        assert [s.token_ids for s in loaded] == [s.token_ids for s in samples]

    def test_missing_manifest(self, tmp_path):
        """Loading needs a manifest"""
        with pytest.raises(FileError):
            load_dataset(tmp_path)


class TestImageIO:
    """PPM/PGM codecs"""

    def test_ppm_round_trip(self, tmp_path, identity):
        """PPM files store pixels exactly"""
        image = render_input(identity)
        write_ppm(tmp_path / "x.ppm", image)
        assert np.array_equal(read_image(tmp_path / "x.ppm"), image)
        assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n32 32\n255\n")

    def test_pgm(self, tmp_path):
        """PGM files hold one channel"""
        gray = np.arange(12, dtype=np.uint8).reshape(3, 4)
        write_pgm(tmp_path / "g.pgm", gray)
        assert np.array_equal(read_pgm(tmp_path / "g.pgm"), gray)
        assert read_image(tmp_path / "g.pgm").shape == (3, 4, 3)

    def test_bad_header(self, tmp_path):
        """Non-PPM bytes are a file error"""
        (tmp_path / "bad.ppm").write_bytes(b"hello")
        with pytest.raises(FileError):
            read_image(tmp_path / "bad.ppm")

    def test_truncated_payload(self, tmp_path):
        """Short payloads are a file error"""
        (tmp_path / "short.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00")
        with pytest.raises(FileError):
            read_image(tmp_path / "short.ppm")

    def test_model_space_conversion(self, identity):
        """uint8 -> [-1, 1] -> uint8 is exact"""
        image = render_input(identity)
        converted = to_model_space(image)
        assert float(converted.min()) >= -1.0 and float(converted.max()) <= 1.0
        assert np.array_equal(to_pixels(converted), image)

    def test_heatmap(self):
        """Heatmaps stretch to [0, 255]; constant maps render black"""
        assert heatmap(np.array([[0.0, 0.5], [1.0, 0.25]])).max() == 255
        assert not heatmap(np.ones((2, 2))).any()

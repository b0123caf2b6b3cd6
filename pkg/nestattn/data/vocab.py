"""
Prompt vocabulary and tokenizer

Prompts are short word sequences such as ``subj on red plain center``. Token
ids come from a fixed word list, so they are stable across runs; sequences
are right-padded with ``<pad>`` to a fixed length. The subject index is the
position of the first subject word.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from ..core.exceptions import ValidationError
from ..core.models import BackgroundColor, Position, PromptAttributes, Style

PAD = "<pad>"
SUBJECT_WORDS = ("subj", "pet", "person")

WORDS: Tuple[str, ...] = (
    PAD,
    *SUBJECT_WORDS,
    "on", "with", "and", "a", "the", "in", "at", "photo", "of", "style", "background",
    *(c.value for c in BackgroundColor),
    *(s.value for s in Style),
    *(p.value for p in Position),
)


class Vocabulary:
    """Word <-> id table over a fixed word list"""

    def __init__(self, words: Sequence[str] = WORDS):
        if len(set(words)) != len(words):
            raise ValidationError("vocabulary words must be unique", field="words")
        self.words: Tuple[str, ...] = tuple(words)
        self._ids: Dict[str, int] = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    def id_of(self, word: str) -> int:
        if word not in self._ids:
            raise ValidationError(f"Unknown word: {word!r}", field="word", value=word)
        return self._ids[word]

    def word_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.words):
            raise ValidationError(f"Unknown token id: {token_id}", field="token_id", value=token_id)
        return self.words[token_id]


DEFAULT_VOCABULARY = Vocabulary()


@dataclass(frozen=True)
class TokenizedPrompt:
    token_ids: Tuple[int, ...]
    subject_index: int
    length: int


def split_prompt(prompt: str) -> List[str]:
    return prompt.split()


def tokenize(words: Sequence[str], max_tokens: int = 8,
             vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> TokenizedPrompt:
    """Fixed-length ids and the index of the first subject word"""
    if isinstance(words, str):
        words = split_prompt(words)
    if len(words) > max_tokens:
        raise ValidationError(f"prompt has {len(words)} words, at most {max_tokens} allowed",
                              field="prompt", value=" ".join(words))
    ids = [vocabulary.id_of(w) for w in words]
    subject_index = next((i for i, w in enumerate(words) if w in SUBJECT_WORDS), None)
    if subject_index is None:
        raise ValidationError("prompt has no subject word", field="prompt", value=" ".join(words))
    ids.extend([vocabulary.pad_id] * (max_tokens - len(ids)))
    return TokenizedPrompt(token_ids=tuple(ids), subject_index=subject_index, length=len(words))


def detokenize(token_ids: Sequence[int], vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> List[str]:
    """Words of a token sequence with padding dropped"""
    return [vocabulary.word_of(t) for t in token_ids if t != vocabulary.pad_id]


def word_index(token_ids: Sequence[int], word: str, vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> int:
    """Position of ``word`` in a token sequence"""
    target = vocabulary.id_of(word)
    for i, t in enumerate(token_ids):
        if t == target:
            return i
    raise ValidationError(f"word {word!r} does not occur in the prompt", field="word", value=word)


def prompt_words(attributes: PromptAttributes, subject_word: str = "subj") -> List[str]:
    return [subject_word, "on", attributes.background.value, attributes.style.value, attributes.position.value]


def prompt_text(attributes: PromptAttributes, subject_word: str = "subj") -> str:
    return " ".join(prompt_words(attributes, subject_word))


def parse_attributes(words: Sequence[str]) -> PromptAttributes:
    """Attribute words found in a prompt; missing ones take their defaults"""
    values = {}
    for word in words:
        if word in BackgroundColor._value2member_map_:
            values["background"] = BackgroundColor(word)
        elif word in Style._value2member_map_:
            values["style"] = Style(word)
        elif word in Position._value2member_map_:
            values["position"] = Position(word)
    return PromptAttributes(**values)

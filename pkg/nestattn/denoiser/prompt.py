"""
Prompt token sequences fed to the host model
"""

from dataclasses import dataclass, replace
from typing import Tuple

from ..core.exceptions import ValidationError
from ..data.vocab import DEFAULT_VOCABULARY, Vocabulary, detokenize, tokenize


@dataclass(frozen=True)
class PromptEmbedding:
    """
    Token ids plus the position of the word a subject binds to.

    The embedding vectors themselves live in the model's token table; the
    model looks them up in ``ToyDenoiser.embed_prompt``.
    """

    token_ids: Tuple[int, ...]
    subject_word_index: int
    vocabulary: Vocabulary = DEFAULT_VOCABULARY

    def __post_init__(self):
        if not 0 <= self.subject_word_index < len(self.token_ids):
            raise ValidationError(
                f"subject word index {self.subject_word_index} outside a prompt of {len(self.token_ids)} tokens",
                field="subject_word_index",
                value=self.subject_word_index,
            )

    @classmethod
    def from_text(cls, text: str, max_tokens: int = 8, vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> "PromptEmbedding":
        tokens = tokenize(text, max_tokens=max_tokens, vocabulary=vocabulary)
        return cls(token_ids=tokens.token_ids, subject_word_index=tokens.subject_index, vocabulary=vocabulary)

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def subject_word(self) -> str:
        return self.vocabulary.word_of(self.token_ids[self.subject_word_index])

    @property
    def words(self):
        return detokenize(self.token_ids, self.vocabulary)


def retarget_subject(prompt: PromptEmbedding, new_word: str) -> PromptEmbedding:
    """Swap the word at the subject position; the position (and any binding to it) is unchanged"""
    new_id = prompt.vocabulary.id_of(new_word)
    ids = list(prompt.token_ids)
    ids[prompt.subject_word_index] = new_id
    return replace(prompt, token_ids=tuple(ids))

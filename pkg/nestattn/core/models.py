"""
Core domain records for nestattn
"""

from typing import Optional, List, Tuple
from enum import Enum

from pydantic import BaseModel as PydanticBaseModel, ConfigDict, Field, field_validator, model_validator


class MechanismKind(str, Enum):
    """Subject-injection mechanisms; values are the names used in configs and CSVs"""
    NESTED = "nested"
    DECOUPLED_CA = "decoupled_ca"
    SIMPLE_ADAPTER = "simple_adapter"
    GLOBAL_V = "global_v"
    MULTIPLE_TOKENS = "multiple_tokens"

    @property
    def has_lambda(self) -> bool:
        """Simple adapter has no inference-time knob; its sweep is a single point"""
        return self is not MechanismKind.SIMPLE_ADAPTER


class BackgroundColor(str, Enum):
    WHITE = "white"
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"
    CYAN = "cyan"
    MAGENTA = "magenta"
    GRAY = "gray"


class Style(str, Enum):
    PLAIN = "plain"
    OUTLINE = "outline"
    INVERT = "invert"


class Position(str, Enum):
    CENTER = "center"
    LEFT = "left"
    RIGHT = "right"


class BaseModel(PydanticBaseModel):
    """Base model with common functionality"""

    model_config = ConfigDict(validate_assignment=True, frozen=True, use_enum_values=False)


RGB = Tuple[int, int, int]


class IdentityParams(BaseModel):
    """Identity of a synthetic subject: glyph shape plus three part colors"""
    glyph_id: int = Field(..., ge=0, le=4095, description="Index of the 5x5 glyph")
    body: RGB = Field(..., description="Color of the glyph's filled cells")
    accent: RGB = Field(..., description="Color of the glyph's empty cells")
    trim: RGB = Field(..., description="Color of the frame around the glyph")

    @field_validator('body', 'accent', 'trim')
    @classmethod
    def validate_channels(cls, v):
        if any(not 0 <= c <= 255 for c in v):
            raise ValueError('color channels must be 8-bit values')
        return tuple(int(c) for c in v)

    @model_validator(mode="after")
    def validate_distinct_parts(self):
        if self.body == self.accent:
            raise ValueError("body and accent colors must differ")
        return self

    @property
    def part_colors(self) -> List[RGB]:
        return [self.body, self.accent, self.trim]


class PromptAttributes(BaseModel):
    """Prompt-controllable context of a render"""
    background: BackgroundColor = BackgroundColor.WHITE
    style: Style = Style.PLAIN
    position: Position = Position.CENTER

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.background.value, self.style.value, self.position.value)


class DecodeResult(BaseModel):
    """Output of the identity decoder"""
    absent: bool = Field(default=False, description="No subject found at any candidate position")
    identity: Optional[IdentityParams] = None
    cells: Optional[Tuple[bool, ...]] = Field(None, description="Decoded 5x5 on/off pattern, row-major")
    position: Optional[Position] = None
    style: Optional[Style] = Field(None, description="Box style the decode assumed (plain or invert)")
    confidence: float = Field(default=0.0, ge=0.0, le=1.0)


class MetricRecord(BaseModel):
    """One point of a tradeoff curve"""
    mechanism: MechanismKind
    lambda_: float = Field(..., alias="lambda", description="Attention factor or decoupled scale")
    seed: int = Field(..., description="Base evaluation seed (first seed of the run)")
    identity_score: float = Field(..., ge=0.0, le=1.0)
    prompt_score: float = Field(..., ge=0.0, le=1.0)
    sample_count: int = Field(..., ge=1)

    model_config = ConfigDict(frozen=True, populate_by_name=True)


class TradeoffCurve(BaseModel):
    """Metric records at ascending lambda for one mechanism"""
    mechanism: MechanismKind
    records: List[MetricRecord] = Field(default_factory=list)

    @field_validator('records')
    @classmethod
    def validate_ascending(cls, v):
        lambdas = [r.lambda_ for r in v]
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError('lambda values must be strictly increasing')
        return v

    @property
    def lambdas(self) -> List[float]:
        return [r.lambda_ for r in self.records]

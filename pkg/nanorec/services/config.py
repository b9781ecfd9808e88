from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

PROBABILITY_RESTRICTED = "restricted"
PROBABILITY_FULL = "full"


class ModelConfig(BaseModel):
    """Shape of the recommender transformer.

    probability selects how P(Yes)/P(No) are normalized: a softmax over the two
    answer logits only, or over the full vocabulary.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    width: int = Field(64, ge=1)
    mlp_width: int = Field(256, ge=1)
    vocab_size: int = Field(..., ge=3)
    max_seq_len: int = Field(32, ge=2)
    seed: int = 7
    yes_id: int = Field(..., ge=0)
    no_id: int = Field(..., ge=0)
    pad_id: int = Field(0, ge=0)
    probability: Literal["restricted", "full"] = PROBABILITY_RESTRICTED

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        for name in ("yes_id", "no_id", "pad_id"):
            if getattr(self, name) >= self.vocab_size:
                raise ValueError(f"{name} {getattr(self, name)} is outside the vocabulary")
        if self.yes_id == self.no_id:
            raise ValueError("yes_id and no_id must differ")
        return self

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(30, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.01, ge=0)

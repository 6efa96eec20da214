from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from src.config import (
    HIDDEN_UNITS,
    ITERATIONS,
    L_MIN,
    LEARNING_RATE,
    LOSS_WEIGHT,
    LR_DECAY_ITERATION,
    LR_DECAYED,
    REFRESH_INTERVAL,
)

ABLATIONS = {
    "SCV": {},
    "SCVnoreg": {"regularizer": "none"},
    "SCVbasereg": {"regularizer": "base"},
    "SCVsoft": {"feature_mode": "soft"},
    "SCVstatic": {"hmm_variant": "static"},
    "SCVgt": {"hmm_variant": "ground_truth"},
}


class TrainConfig(BaseModel):
    iterations: int = Field(ITERATIONS, ge=0)
    learning_rate: float = Field(LEARNING_RATE, gt=0.0)
    lr_decay_iteration: int = Field(LR_DECAY_ITERATION, ge=0)
    lr_decayed: float = Field(LR_DECAYED, gt=0.0)
    loss_weight: float = Field(LOSS_WEIGHT, ge=0.0, le=1.0)
    hmm_variant: Literal["static", "dynamic", "ground_truth"] = "dynamic"
    feature_mode: Literal["hard", "soft"] = "hard"
    regularizer: Literal["none", "base", "npair"] = "npair"
    seed: int = 0
    prune: bool = False
    hidden_units: int = Field(HIDDEN_UNITS, ge=1)
    l_min: int = Field(L_MIN, ge=1)
    refresh_interval: int = Field(REFRESH_INTERVAL, ge=1)
    checkpoint_interval: Optional[int] = Field(None, ge=1)
    # divide the CE term by the pair's frame count
    frame_normalized: bool = False

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.regularizer == "none" and self.loss_weight == 0.0:
            raise ValueError("loss_weight 0 with no regularizer leaves nothing to train")
        return self

    @classmethod
    def ablation(cls, name: str, **overrides) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ValueError(f"Unknown ablation {name}; choose from {sorted(ABLATIONS)}")
        return cls(**{**ABLATIONS[name], **overrides})

    def lr_at(self, iteration: int) -> float:
        return self.learning_rate if iteration < self.lr_decay_iteration else self.lr_decayed

from typing import Dict, List

from pydantic import BaseModel


class EvalReport(BaseModel):
    metric: str
    per_video: Dict[str, float]
    aggregate: float
    video_count: int

    def to_text(self) -> str:
        lines = [
            f"metric={self.metric}",
            f"aggregate={self.aggregate:.6f}",
            f"video_count={self.video_count}",
        ]
        lines += [f"video.{video_id}={value:.6f}" for video_id, value in sorted(self.per_video.items())]
        return "\n".join(lines) + "\n"


class IterationRecord(BaseModel):
    iteration: int
    ce: float
    npair: float
    loss: float
    lr: float
    flips: int
    videos: List[str]

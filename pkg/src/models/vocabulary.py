from typing import Dict, Iterable, List, Optional

from pydantic import BaseModel, model_validator

from src.errors import VocabularyError


class Vocabulary(BaseModel):
    classes: List[str]
    background: Optional[str] = None

    @model_validator(mode="after")
    def _check_names(self):
        if not self.classes:
            raise ValueError("vocabulary must declare at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        if self.background is not None and self.background not in self.classes:
            raise ValueError(f"background class '{self.background}' is not declared")
        return self

    def __len__(self):
        return len(self.classes)

    @property
    def index(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.classes)}

    @property
    def background_id(self) -> Optional[int]:
        return None if self.background is None else self.index[self.background]

    def id_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise VocabularyError(f"Unknown class name: {name}")

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.classes):
            raise VocabularyError(f"Class id {class_id} outside vocabulary of size {len(self.classes)}")
        return self.classes[class_id]

    def ids(self, names: Iterable[str]) -> List[int]:
        return [self.id_of(n) for n in names]

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from src.errors import ContractViolation, DatasetError, VocabularyError
from src.models.segmentation import Segmentation
from src.models.vocabulary import Vocabulary

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"FVC1"
_F32 = np.dtype("<f4")


@dataclass
class Video:
    video_id: str
    features: np.ndarray
    action_set: FrozenSet[int]
    labels: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[0]

    def ground_truth(self) -> Optional[Segmentation]:
        return None if self.labels is None else Segmentation.from_labels(self.labels)


@dataclass
class Dataset:
    vocabulary: Vocabulary
    videos: List[Video] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    @property
    def d(self) -> int:
        return self.videos[0].d if self.videos else 0

    @property
    def n_classes(self) -> int:
        return len(self.vocabulary)

    def by_id(self) -> Dict[str, Video]:
        return {v.video_id: v for v in self.videos}

    def sets(self) -> List[FrozenSet[int]]:
        return [v.action_set for v in self.videos]

    def lengths(self) -> List[int]:
        return [v.T for v in self.videos]

    def validate(self):
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise DatasetError("Duplicate video ids")
        dims = {v.d for v in self.videos}
        if len(dims) > 1:
            raise DatasetError(f"Feature dimension differs across videos: {sorted(dims)}")
        k = len(self.vocabulary)
        for v in self.videos:
            if not v.action_set:
                raise DatasetError(f"Video {v.video_id} has an empty action set")
            if max(v.action_set) >= k or min(v.action_set) < 0:
                raise DatasetError(f"Video {v.video_id} has classes outside the vocabulary")
            if v.labels is not None and v.labels.shape != (v.T,):
                raise DatasetError(f"Video {v.video_id}: {v.labels.shape[0]} labels for {v.T} frames")

    def subset(self, video_ids) -> "Dataset":
        wanted = set(video_ids)
        return Dataset(self.vocabulary, [v for v in self.videos if v.video_id in wanted])


def read_features(path: Path) -> np.ndarray:
    payload = Path(path).read_bytes()
    if len(payload) < 12 or payload[:4] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: missing FVC1 header")
    d, T = struct.unpack("<II", payload[4:12])
    expected = 12 + 4 * d * T
    if len(payload) != expected:
        raise DatasetError(f"{path}: truncated payload, header declares {d}x{T} floats "
                           f"({expected} bytes), file has {len(payload)}")
    frames = np.frombuffer(payload[12:], dtype=_F32).reshape(T, d)
    return frames.T.astype(np.float64)


def write_features(path: Path, features: np.ndarray):
    d, T = features.shape
    body = np.ascontiguousarray(features.T, dtype=_F32).tobytes()
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<II", d, T) + body)


def _read_classes(path: Path) -> Vocabulary:
    names, background = [], None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("background "):
            if names:
                raise DatasetError(f"{path}:{lineno}: background directive must precede class names")
            background = line.split(None, 1)[1].strip()
            continue
        names.append(line)
    try:
        return Vocabulary(classes=names, background=background)
    except ValueError as e:
        raise DatasetError(f"{path}: {e}")


def _read_sets(path: Path, vocabulary: Vocabulary) -> Dict[str, FrozenSet[int]]:
    sets = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'video_id<TAB>classes'")
        video_id, names = parts[0].strip(), [n.strip() for n in parts[1].split(",") if n.strip()]
        try:
            ids = vocabulary.ids(names)
        except ContractViolation as e:
            raise DatasetError(f"{path}:{lineno}: {e}")
        if video_id in sets:
            raise DatasetError(f"{path}:{lineno}: duplicate video id {video_id}")
        sets[video_id] = frozenset(ids)
    return sets


def _read_labels(path: Path, vocabulary: Vocabulary) -> np.ndarray:
    labels = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        name = raw.strip()
        if not name:
            continue
        try:
            labels.append(vocabulary.id_of(name))
        except VocabularyError as e:
            raise DatasetError(f"{path}:{lineno}: {e}")
    return np.asarray(labels, dtype=np.int64)


def load_dataset(root, background_in_sets: bool = True) -> Dataset:
    """Load classes.txt, sets.txt, features/ and optional labels/ from root.

    A declared background class is added to every video's set unless
    ``background_in_sets`` is False.
    """
    root = Path(root)
    for required in ("classes.txt", "sets.txt", "features"):
        if not (root / required).exists():
            raise FileNotFoundError(f"Dataset {root} is missing {required}")
    vocabulary = _read_classes(root / "classes.txt")
    sets = _read_sets(root / "sets.txt", vocabulary)
    background = vocabulary.background_id

    videos = []
    for video_id, action_set in sets.items():
        feature_path = root / "features" / f"{video_id}.fvec"
        if not feature_path.exists():
            raise FileNotFoundError(f"No feature file for video {video_id}: {feature_path}")
        features = read_features(feature_path)
        label_path = root / "labels" / f"{video_id}.txt"
        labels = _read_labels(label_path, vocabulary) if label_path.exists() else None
        if background is not None and background_in_sets:
            action_set = action_set | {background}
        videos.append(Video(video_id=video_id, features=features, action_set=action_set, labels=labels))

    dataset = Dataset(vocabulary, videos)
    logger.info(f"Loaded {len(dataset)} videos, {dataset.n_classes} classes, d={dataset.d} from {root}")
    return dataset


def save_dataset(dataset: Dataset, root) -> Path:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    vocab = dataset.vocabulary
    header = [f"background {vocab.background}"] if vocab.background is not None else []
    (root / "classes.txt").write_text("\n".join(header + vocab.classes) + "\n")
    lines = []
    for video in dataset:
        names = ",".join(vocab.name_of(c) for c in sorted(video.action_set))
        lines.append(f"{video.video_id}\t{names}")
        write_features(root / "features" / f"{video.video_id}.fvec", video.features)
        if video.labels is not None:
            (root / "labels").mkdir(exist_ok=True)
            (root / "labels" / f"{video.video_id}.txt").write_text(
                "\n".join(vocab.name_of(int(c)) for c in video.labels) + "\n"
            )
    (root / "sets.txt").write_text("\n".join(lines) + "\n")
    logger.info(f"Saved {len(dataset)} videos to {root}")
    return root


def write_predictions(path, predictions: Dict[str, Segmentation], vocabulary: Vocabulary):
    lines = []
    for video_id in sorted(predictions):
        body = ",".join(f"{vocabulary.name_of(c)}:{l}" for c, l in predictions[video_id].segments)
        lines.append(f"{video_id}\t{body}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_predictions(path, vocabulary: Vocabulary) -> Dict[str, Segmentation]:
    predictions = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            video_id, body = raw.split("\t")
            segments = []
            for item in body.split(","):
                name, length = item.rsplit(":", 1)
                segments.append((vocabulary.id_of(name.strip()), int(length)))
            seg = Segmentation.canonical(segments)
        except (ValueError, ContractViolation) as e:
            raise DatasetError(f"{path}:{lineno}: malformed prediction ({e})")
        predictions[video_id.strip()] = seg
    return predictions

"""Workspace configuration: the JSON config file plus the directory roots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid


@dataclass
class DatasetConfig:
    """Parsed contents of the JSON config file.

    Fields: class_names (ordered), input_shape (channels, height, width),
    backend_name, backend_params, optional segmentation_plugins mapping
    plugin name to an executable path.
    """

    class_names: list[str]
    input_shape: tuple[int, int, int]
    backend_name: str = "logreg"
    backend_params: dict = field(default_factory=dict)
    segmentation_plugins: dict[str, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "input_shape": list(self.input_shape),
            "backend_name": self.backend_name,
            "backend_params": dict(self.backend_params),
            "segmentation_plugins": dict(self.segmentation_plugins),
        }

    @staticmethod
    def from_dict(data: dict) -> "DatasetConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("config root must be a JSON object")
        for key in ("class_names", "input_shape"):
            if key not in data:
                raise ConfigInvalid(f"config missing required field: {key}")
        class_names = data["class_names"]
        if (
            not isinstance(class_names, list)
            or not class_names
            or not all(isinstance(c, str) for c in class_names)
        ):
            raise ConfigInvalid("class_names must be a non-empty list of strings")
        if len(set(class_names)) != len(class_names):
            raise ConfigInvalid("class_names contains duplicates")
        shape = data["input_shape"]
        if (
            not isinstance(shape, (list, tuple))
            or len(shape) != 3
            or not all(isinstance(v, int) and v > 0 for v in shape)
        ):
            raise ConfigInvalid("input_shape must be [channels, height, width] of positive ints")
        if shape[0] not in (1, 3):
            raise ConfigInvalid("input_shape channels must be 1 or 3")
        backend_name = data.get("backend_name", "logreg")
        if not isinstance(backend_name, str) or not backend_name:
            raise ConfigInvalid("backend_name must be a non-empty string")
        backend_params = data.get("backend_params", {})
        if not isinstance(backend_params, dict):
            raise ConfigInvalid("backend_params must be an object")
        plugins = data.get("segmentation_plugins", {})
        if not isinstance(plugins, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in plugins.items()
        ):
            raise ConfigInvalid("segmentation_plugins must map names to executable paths")
        return DatasetConfig(
            class_names=list(class_names),
            input_shape=(shape[0], shape[1], shape[2]),
            backend_name=backend_name,
            backend_params=dict(backend_params),
            segmentation_plugins=dict(plugins),
        )

    @staticmethod
    def load(path) -> "DatasetConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        return DatasetConfig.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class WorkspaceLayout:
    """The directory roots a session operates on (the CLI's path flags)."""

    data_root: Path
    mask_root: Path
    influence_root: Path
    ckpt_root: Path
    cache_root: Path

    def __post_init__(self):
        self.data_root = Path(self.data_root)
        self.mask_root = Path(self.mask_root)
        self.influence_root = Path(self.influence_root)
        self.ckpt_root = Path(self.ckpt_root)
        self.cache_root = Path(self.cache_root)

    def create_writable_roots(self) -> None:
        """mask/influence/ckpt/cache roots are auto-created; data_root is not."""
        for root in (self.mask_root, self.influence_root, self.ckpt_root, self.cache_root):
            root.mkdir(parents=True, exist_ok=True)

    @property
    def predictions_dir(self) -> Path:
        return self.cache_root / "predictions"

    @property
    def jobs_dir(self) -> Path:
        return self.cache_root / "jobs"

    @property
    def task_log_path(self) -> Path:
        return self.cache_root / "tasks.jsonl"

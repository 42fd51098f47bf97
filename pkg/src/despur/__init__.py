"""despur: find, annotate, and train away spurious pixel features.

A self-hosted workbench: browse a class-per-directory image dataset with
cached predictions, rank the training samples that move a test sample's loss
(influence functions), inspect input-gradient saliency, brush binary
spurious-pixel masks (with range-filter and segmentation proposals), and
continue training on original/noise-augmented pairs with a logit-consistency
penalty so the model stops using the annotated pixels.
"""

__version__ = "0.1.0"

from .config import DatasetConfig, WorkspaceLayout
from .workspace import Workspace, open_workspace

__all__ = ["DatasetConfig", "WorkspaceLayout", "Workspace", "open_workspace", "__version__"]

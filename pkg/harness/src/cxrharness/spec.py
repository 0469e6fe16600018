"""The training protocol, pinned as data.

Every field of TrainSpec is logged verbatim into run metadata and into
the comment header of every prediction CSV, so a reader can always
reconstruct how a score was produced.
"""
from dataclasses import dataclass, fields


@dataclass(frozen=True)
class TrainSpec:
    """Fixed training protocol for the diagnostic model and the head."""
    architecture: str = "densenet121"
    pretrained: bool = True          # ImageNet starting weights
    optimizer: str = "AdamW"
    label_smoothing: float = 0.1
    batch_size: int = 8
    learning_rate: float = 1e-4      # initial
    lr_min: float = 1e-6             # cosine annealing floor
    epochs: int = 30                 # cosine annealing horizon
    patience: int = 5                # early stop on validation AUROC
    rotation_degrees: float = 10.0   # random rotation, +/- this many degrees
    horizontal_flip: bool = True
    vertical_flip: bool = True
    seeds: int = 5                   # runs per method in the full protocol

    def metadata(self):
        """All fields, verbatim, as an ordered name -> string mapping."""
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

from ._mmpkd import (
    Experiment,
    NanLossError,
    PreconditionError,
    StudentViT,
    auroc,
    cli,
    distill_loss,
    extract_boxes,
    generate_dataset,
    iou,
    mann_whitney_u,
    pixel_auroc,
    read_dataset,
    soft_label,
)

__all__ = [
    "Experiment",
    "NanLossError",
    "PreconditionError",
    "StudentViT",
    "auroc",
    "cli",
    "distill_loss",
    "extract_boxes",
    "generate_dataset",
    "iou",
    "mann_whitney_u",
    "pixel_auroc",
    "read_dataset",
    "soft_label",
]

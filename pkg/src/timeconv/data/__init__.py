from .archive import BIGFACEX_COUNTS, BIGFACEX_TOTAL, EMOTIONS, DatasetArchive, SubSequenceStack, table_total
from .pipeline import (
    PROFILES,
    ClipManifestEntry,
    FrameReadError,
    ManifestError,
    WindowSpec,
    bilinear_resize,
    build_archive,
    center_box,
    extend_box,
    extract_windows,
    load_manifest,
    preprocess_frame,
    stack_window,
    window_count,
)
from .synthetic import generate_synthetic, paired_classes

__all__ = [
    "BIGFACEX_COUNTS", "BIGFACEX_TOTAL", "EMOTIONS", "DatasetArchive", "SubSequenceStack", "table_total",
    "PROFILES", "ClipManifestEntry", "FrameReadError", "ManifestError", "WindowSpec", "bilinear_resize",
    "build_archive", "center_box", "extend_box", "extract_windows", "load_manifest", "preprocess_frame",
    "stack_window", "window_count", "generate_synthetic", "paired_classes",
]

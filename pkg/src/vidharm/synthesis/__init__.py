"""Synthetic two-frame harmonization dataset built from masked still images."""
from .color import ColorAdjustment, adjust_foreground_color, reinhard_transfer, sample_adjustment
from .dataset import (DatasetError, SamplePair, SourceItem, SynthConfig, build_dataset,
                      load_corpus, load_manifest, load_sample, make_toy_corpus, sample_dir,
                      save_sample, select_sources, split_entries, synthesize_sample)
from .inpaint import inpaint_background
from .motion import (AffineMotion, AffineRanges, affine_to_flow, sample_affine,
                     simulate_background_motion)

__all__ = [
    "AffineMotion", "AffineRanges", "ColorAdjustment", "DatasetError", "SamplePair",
    "SourceItem", "SynthConfig", "adjust_foreground_color", "affine_to_flow", "build_dataset",
    "inpaint_background", "load_corpus", "load_manifest", "load_sample", "make_toy_corpus",
    "reinhard_transfer", "sample_adjustment", "sample_affine", "sample_dir", "save_sample",
    "select_sources", "simulate_background_motion", "split_entries", "synthesize_sample",
]

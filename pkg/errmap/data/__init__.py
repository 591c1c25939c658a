"""
Synthetic data, volume formats and the dataset organizer.
"""

from .data_organizer import DatasetOrganizer, manifest_records, seg_dsc_histogram
from .phantom import calibrate_severity, degrade_mask, gen_phantom, target_seg_dsc
from .volume_io import VolumeFormatError, read_volume, write_volume
from .volumes import GeneratedMask, VolumeCase, make_error_map, one_hot, preprocess

__all__ = [
    "DatasetOrganizer",
    "manifest_records",
    "seg_dsc_histogram",
    "gen_phantom",
    "degrade_mask",
    "calibrate_severity",
    "target_seg_dsc",
    "read_volume",
    "write_volume",
    "VolumeFormatError",
    "VolumeCase",
    "GeneratedMask",
    "make_error_map",
    "one_hot",
    "preprocess",
]

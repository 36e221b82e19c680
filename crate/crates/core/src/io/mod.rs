//! Volumes, NIfTI-1 files and result serialization.

mod nifti;
mod report;
mod volume;

pub use nifti::{
    decode, encode_mask, encode_volume, parse_header, parse_nifti, read_nifti, write_mask,
    write_nifti, MaskVolume, NiftiHeader, NiftiRead,
};
pub use report::{read_report, write_report, write_slice_csv, EstimateReport, SliceRecord};
pub use volume::{Axis, Fingerprint, SliceData, SliceMask, Volume4D, MAX_VOXELS};

//! Minimal NIfTI-1 reader and writer.
//!
//! Single-file (`n+1`) and header/image pair (`ni1`) layouts are read, with
//! optional gzip compression detected from the magic bytes. Writing always
//! produces a single-file image, gzip-compressed when the path ends in `.gz`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::volume::{checked_voxel_count, Axis, SliceMask, Volume4D};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_INT32 | DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDatatype(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    SingleFile,
    Pair,
}

/// The header fields this crate interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub big_endian: bool,
    pub dims: [usize; 4],
    pub datatype: i16,
    pub bitpix: i16,
    pub spacing: [f64; 3],
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    layout: Layout,
}

/// A decoded image plus bookkeeping about values that had to be repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiRead {
    pub volume: Volume4D,
    /// Voxels that were negative after scaling and were set to zero.
    pub clamped_negative: usize,
    /// NaN or infinite voxels that were set to zero.
    pub non_finite: usize,
}

fn parse_header_with<B: ByteOrder>(raw: &[u8], big_endian: bool) -> Result<NiftiHeader> {
    let layout = match &raw[344..348] {
        b"n+1\0" => Layout::SingleFile,
        b"ni1\0" => Layout::Pair,
        other => {
            return Err(Error::MalformedHeader(format!("bad magic {other:?}")));
        }
    };
    let ndim = B::read_i16(&raw[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!(
            "dim[0] = {ndim} out of range"
        )));
    }
    let mut dims = [1usize; 4];
    for k in 1..=ndim as usize {
        let d = B::read_i16(&raw[40 + 2 * k..42 + 2 * k]);
        if d < 1 {
            return Err(Error::MalformedHeader(format!("dim[{k}] = {d}")));
        }
        if k <= 4 {
            dims[k - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::MalformedHeader(format!(
                "dimension {k} has extent {d}; at most 4 dimensions are supported"
            )));
        }
    }
    checked_voxel_count(dims)?;
    let datatype = B::read_i16(&raw[70..72]);
    let bpv = bytes_per_voxel(datatype)?;
    let bitpix = B::read_i16(&raw[72..74]);
    if bitpix as usize != 8 * bpv {
        return Err(Error::MalformedHeader(format!(
            "bitpix {bitpix} does not match datatype {datatype}"
        )));
    }
    let mut spacing = [1.0; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        // Shortest decimal form, so 1.7f32 comes back as 1.7 rather than 1.7000000476837158.
        let p: f64 = B::read_f32(&raw[80 + 4 * k..84 + 4 * k])
            .abs()
            .to_string()
            .parse()
            .unwrap_or(0.0);
        if p > 0.0 && p.is_finite() {
            *s = p;
        }
    }
    let offset = B::read_f32(&raw[108..112]);
    if !(offset >= 0.0 && offset.is_finite()) || offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset {offset}")));
    }
    let mut vox_offset = offset as usize;
    if layout == Layout::SingleFile {
        if vox_offset == 0 {
            vox_offset = SINGLE_FILE_OFFSET;
        } else if vox_offset < HEADER_SIZE {
            return Err(Error::MalformedHeader(format!(
                "vox_offset {vox_offset} lies inside the header"
            )));
        }
    }
    let slope = B::read_f32(&raw[112..116]) as f64;
    let inter = B::read_f32(&raw[116..120]) as f64;
    Ok(NiftiHeader {
        big_endian,
        dims,
        datatype,
        bitpix,
        spacing,
        vox_offset,
        scl_slope: if slope == 0.0 || !slope.is_finite() {
            1.0
        } else {
            slope
        },
        scl_inter: if inter.is_finite() { inter } else { 0.0 },
        layout,
    })
}

/// Parse the fixed 348-byte header; endianness comes from `sizeof_hdr`.
pub fn parse_header(raw: &[u8]) -> Result<NiftiHeader> {
    if raw.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "truncated header: {} of {HEADER_SIZE} bytes",
            raw.len()
        )));
    }
    if LittleEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        parse_header_with::<LittleEndian>(raw, false)
    } else if BigEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
        parse_header_with::<BigEndian>(raw, true)
    } else {
        Err(Error::MalformedHeader(
            "sizeof_hdr is not 348 in either byte order".into(),
        ))
    }
}

fn decode_with<B: ByteOrder>(header: &NiftiHeader, data: &[u8]) -> Result<NiftiRead> {
    let count = checked_voxel_count(header.dims)? as usize;
    let bpv = bytes_per_voxel(header.datatype)?;
    let end = count
        .checked_mul(bpv)
        .and_then(|n| n.checked_add(header.vox_offset))
        .ok_or_else(|| Error::DimensionOverflow("image size overflows".into()))?;
    if data.len() < end {
        return Err(Error::MalformedHeader(format!(
            "truncated image data: need {end} bytes, have {}",
            data.len()
        )));
    }
    let raw = &data[header.vox_offset..end];
    let read: fn(&[u8]) -> f64 = match header.datatype {
        DT_UINT8 => |b| b[0] as f64,
        DT_INT16 => |b| B::read_i16(b) as f64,
        DT_INT32 => |b| B::read_i32(b) as f64,
        DT_FLOAT32 => |b| B::read_f32(b) as f64,
        DT_FLOAT64 => |b| B::read_f64(b),
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    let mut clamped_negative = 0;
    let mut non_finite = 0;
    let voxels = raw
        .chunks_exact(bpv)
        .map(|b| {
            let v = (read(b) * slope + inter) as f32;
            if !v.is_finite() {
                non_finite += 1;
                0.0
            } else if v < 0.0 {
                clamped_negative += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    let volume = Volume4D::new(header.dims, voxels)?
        .with_spacing(header.spacing)?
        .with_scale(slope, inter);
    Ok(NiftiRead {
        volume,
        clamped_negative,
        non_finite,
    })
}

/// Decode an image whose voxel data starts at `vox_offset` within `data`.
pub fn decode(header: &NiftiHeader, data: &[u8]) -> Result<NiftiRead> {
    if header.big_endian {
        decode_with::<BigEndian>(header, data)
    } else {
        decode_with::<LittleEndian>(header, data)
    }
}

fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedHeader(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Parse an in-memory single-file image, compressed or not.
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiRead> {
    let bytes = maybe_gunzip(bytes.to_vec())?;
    let header = parse_header(&bytes)?;
    if header.layout == Layout::Pair {
        return Err(Error::MalformedHeader(
            "header/image pair cannot be parsed from a single buffer".into(),
        ));
    }
    decode(&header, &bytes)
}

fn image_path_for(header_path: &Path) -> PathBuf {
    let name = header_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let swapped = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        format!("{name}.img")
    };
    header_path.with_file_name(swapped)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiRead> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = maybe_gunzip(bytes)?;
    let header = parse_header(&bytes)?;
    match header.layout {
        Layout::SingleFile => decode(&header, &bytes),
        Layout::Pair => {
            let img = image_path_for(path);
            let data = fs::read(&img).map_err(|e| Error::io(&img, e))?;
            decode(&header, &maybe_gunzip(data)?)
        }
    }
}

fn header_bytes(dims: [usize; 4], spacing: [f64; 3], datatype: i16) -> Result<Vec<u8>> {
    let mut h = vec![0u8; SINGLE_FILE_OFFSET];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    let ndim = if dims[3] > 1 { 4 } else { 3 };
    LittleEndian::write_i16(&mut h[40..42], ndim);
    for (k, &d) in dims.iter().enumerate() {
        let d = i16::try_from(d)
            .map_err(|_| Error::DimensionOverflow(format!("extent {d} does not fit NIfTI-1")))?;
        LittleEndian::write_i16(&mut h[42 + 2 * k..44 + 2 * k], d);
    }
    for k in 4..7 {
        LittleEndian::write_i16(&mut h[42 + 2 * k..44 + 2 * k], 1);
    }
    let bpv = bytes_per_voxel(datatype)?;
    LittleEndian::write_i16(&mut h[70..72], datatype);
    LittleEndian::write_i16(&mut h[72..74], 8 * bpv as i16);
    // pixdim[0] is qfac.
    LittleEndian::write_f32(&mut h[76..80], 1.0);
    for (k, s) in spacing.iter().enumerate() {
        LittleEndian::write_f32(&mut h[80 + 4 * k..84 + 4 * k], *s as f32);
    }
    LittleEndian::write_f32(&mut h[92..96], 1.0);
    LittleEndian::write_f32(&mut h[108..112], SINGLE_FILE_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    LittleEndian::write_f32(&mut h[116..120], 0.0);
    // mm and seconds
    h[123] = 2 | 8;
    let descrip = b"chisigma";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    LittleEndian::write_i16(&mut h[252..254], 1);
    h[344..348].copy_from_slice(b"n+1\0");
    Ok(h)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path
        .file_name()
        .map(|n| n.to_string_lossy().ends_with(".gz"))
        .unwrap_or(false);
    let result = if gz {
        fs::File::create(path).and_then(|f| {
            let mut enc = GzEncoder::new(f, Compression::default());
            enc.write_all(bytes)?;
            enc.finish().map(|_| ())
        })
    } else {
        fs::write(path, bytes)
    };
    result.map_err(|e| Error::io(path, e))
}

/// Encode a volume as an uncompressed float32 single-file image.
pub fn encode_volume(volume: &Volume4D) -> Result<Vec<u8>> {
    let mut bytes = header_bytes(volume.dims(), volume.spacing(), DT_FLOAT32)?;
    bytes.reserve(volume.voxels().len() * 4);
    for v in volume.voxels() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn write_nifti(volume: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_volume(volume)?)
}

/// A 3D boolean volume, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub bits: Vec<bool>,
}

impl MaskVolume {
    /// Stack per-slice masks back into the volume they were taken from.
    pub fn from_slices(
        dims: [usize; 3],
        spacing: [f64; 3],
        axis: Axis,
        masks: &[SliceMask],
    ) -> Result<Self> {
        if masks.len() != dims[axis.index()] {
            return Err(Error::Config(format!(
                "{} masks for {} slices",
                masks.len(),
                dims[axis.index()]
            )));
        }
        let (a, b) = axis.in_plane();
        let mut bits = vec![false; dims[0] * dims[1] * dims[2]];
        for (s, mask) in masks.iter().enumerate() {
            if mask.width != dims[a] || mask.height != dims[b] {
                return Err(Error::Config(format!("mask {s} has the wrong shape")));
            }
            for j in 0..mask.height {
                for i in 0..mask.width {
                    let mut p = [0usize; 3];
                    p[axis.index()] = s;
                    p[a] = i;
                    p[b] = j;
                    bits[p[0] + dims[0] * (p[1] + dims[1] * p[2])] = mask.bits[i + mask.width * j];
                }
            }
        }
        Ok(MaskVolume {
            dims,
            spacing,
            bits,
        })
    }
}

pub fn encode_mask(mask: &MaskVolume) -> Result<Vec<u8>> {
    let [x, y, z] = mask.dims;
    let mut bytes = header_bytes([x, y, z, 1], mask.spacing, DT_UINT8)?;
    bytes.extend(mask.bits.iter().map(|&b| b as u8));
    Ok(bytes)
}

/// Write a mask as uint8 {0, 1}.
pub fn write_mask(mask: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(mask)?)
}

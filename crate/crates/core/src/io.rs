//! The TOMOVOL1 container and image export.
//!
//! A TOMOVOL1 file is a 64-byte header followed by little-endian `f32`
//! samples:
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 8    | magic `TOMOVOL1`                             |
//! | 8      | 1    | layout: 0 frames `[angle][slice][detector]`, 1 slices `[slice][angle][detector]` |
//! | 9      | 12   | three `u32` LE dimensions in layout order    |
//! | 21     | 1    | dtype: 0 = `f32` LE                          |
//! | 22     | 42   | zero                                         |

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::grid::{AngleAxis, DetectorAxis, ImageGrid, Sinogram, StageTag, VolumeBlock};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"TOMOVOL1";
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `[angle][slice][detector]`: one radiograph per angle.
    Frames = 0,
    /// `[slice][angle][detector]`, or `[slice][row][col]` for images.
    Slices = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32 = 0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VolumeHeader {
    pub layout: Layout,
    /// Dimensions in storage order, outermost first.
    pub dims: [u32; 3],
    pub dtype: Dtype,
}

impl VolumeHeader {
    /// Frame-major measurement volume.
    pub fn frames(n_angle: usize, n_slice: usize, n_det: usize) -> Result<Self> {
        Self::new(Layout::Frames, [n_angle, n_slice, n_det])
    }

    /// Slice-major volume, e.g. reconstructed `n x n` images.
    pub fn slices(n_slice: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::new(Layout::Slices, [n_slice, rows, cols])
    }

    pub fn new(layout: Layout, dims: [usize; 3]) -> Result<Self> {
        let mut out = [0u32; 3];
        for (slot, d) in out.iter_mut().zip(dims) {
            *slot = u32::try_from(d)
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::InvalidParameter(format!("volume dimension {d} out of range")))?;
        }
        Ok(Self {
            layout,
            dims: out,
            dtype: Dtype::F32,
        })
    }

    pub fn n_slices(&self) -> usize {
        match self.layout {
            Layout::Frames => self.dims[1] as usize,
            Layout::Slices => self.dims[0] as usize,
        }
    }

    /// Rows per slice plane: angles for sinograms, image rows otherwise.
    pub fn n_angles(&self) -> usize {
        match self.layout {
            Layout::Frames => self.dims[0] as usize,
            Layout::Slices => self.dims[1] as usize,
        }
    }

    pub fn n_det(&self) -> usize {
        self.dims[2] as usize
    }

    pub fn value_count(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.value_count() * 4
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_bytes()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(MAGIC);
        out[8] = self.layout as u8;
        for (k, d) in self.dims.iter().enumerate() {
            out[9 + 4 * k..13 + 4 * k].copy_from_slice(&d.to_le_bytes());
        }
        out[21] = self.dtype as u8;
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let bad = |reason: String| Error::BadHeader {
            path: path.to_path_buf(),
            reason,
        };
        let layout = match bytes[8] {
            0 => Layout::Frames,
            1 => Layout::Slices,
            other => return Err(bad(format!("unknown layout {other}"))),
        };
        let mut dims = [0u32; 3];
        for (k, slot) in dims.iter_mut().enumerate() {
            let raw: [u8; 4] = bytes[9 + 4 * k..13 + 4 * k].try_into().expect("4 bytes");
            *slot = u32::from_le_bytes(raw);
            if *slot == 0 {
                return Err(bad("zero dimension".into()));
            }
        }
        if bytes[21] != Dtype::F32 as u8 {
            return Err(bad(format!("unsupported dtype {}", bytes[21])));
        }
        Ok(Self {
            layout,
            dims,
            dtype: Dtype::F32,
        })
    }
}

fn encode(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

/// Writes header and payload; `data` must hold exactly `product(dims)` values.
pub fn write_volume(path: impl AsRef<Path>, header: &VolumeHeader, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if data.len() as u64 != header.value_count() {
        return Err(Error::shape(
            format!("{} values", header.value_count()),
            format!("{}", data.len()),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&header.to_bytes())
        .and_then(|_| {
            for chunk in data.chunks(1 << 16) {
                out.write_all(&encode(chunk))?;
            }
            out.flush()
        })
        .map_err(|e| Error::io(path, e))
}

/// Reads and validates just the header, checking the file size against it.
pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    open_checked(&mut file, path)
}

fn open_checked(file: &mut File, path: &Path) -> Result<VolumeHeader> {
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut bytes = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match file.read(&mut bytes[filled..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => filled += k,
        }
    }
    if filled < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if filled < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let header = VolumeHeader::from_bytes(&bytes, path)?;
    if actual != header.file_bytes() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header.file_bytes(),
            actual,
        });
    }
    Ok(header)
}

/// Reads a whole container.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(VolumeHeader, Vec<f32>)> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = open_checked(&mut file, path)?;
    let mut bytes = vec![0u8; header.payload_bytes() as usize];
    file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok((header, decode(&bytes)))
}

/// Sequential reader handing out blocks of `Q` slice sinograms.
#[derive(Debug)]
pub struct BlockReader {
    path: PathBuf,
    file: File,
    header: VolumeHeader,
    block_size: usize,
    cursor: usize,
}

impl BlockReader {
    pub fn open(path: impl AsRef<Path>, block_size: usize) -> Result<Self> {
        let path = path.as_ref();
        if block_size == 0 {
            return Err(Error::InvalidParameter("block size must be positive".into()));
        }
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let header = open_checked(&mut file, path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header,
            block_size,
            cursor: 0,
        })
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Index of the next slice to be read.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn n_blocks(&self) -> usize {
        self.header.n_slices().div_ceil(self.block_size)
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let path = &self.path;
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.read_exact(buf))
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    let actual = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
                    Error::Truncated {
                        path: path.clone(),
                        expected: self.header.file_bytes(),
                        actual,
                    }
                } else {
                    Error::io(path, e)
                }
            })
    }

    /// Raw `[angle][detector]` plane of slice `k`.
    pub fn read_plane(&mut self, k: usize) -> Result<Vec<f32>> {
        let n_slices = self.header.n_slices();
        if k >= n_slices {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: n_slices,
            });
        }
        Ok(self.read_planes(k, 1)?.pop().expect("one plane"))
    }

    fn read_planes(&mut self, first: usize, count: usize) -> Result<Vec<Vec<f32>>> {
        let h = self.header;
        let (n_angle, n_det, n_slices) = (h.n_angles(), h.n_det(), h.n_slices());
        let plane = n_angle * n_det;
        let mut planes = vec![Vec::with_capacity(plane); count];
        match h.layout {
            Layout::Slices => {
                let mut bytes = vec![0u8; count * plane * 4];
                let offset = HEADER_LEN as u64 + (first * plane * 4) as u64;
                self.read_at(offset, &mut bytes)?;
                for (dst, src) in planes.iter_mut().zip(bytes.chunks_exact(plane * 4)) {
                    *dst = decode(src);
                }
            }
            Layout::Frames => {
                let mut bytes = vec![0u8; count * n_det * 4];
                for j in 0..n_angle {
                    let offset = HEADER_LEN as u64 + ((j * n_slices + first) * n_det * 4) as u64;
                    self.read_at(offset, &mut bytes)?;
                    for (dst, src) in planes.iter_mut().zip(bytes.chunks_exact(n_det * 4)) {
                        dst.extend(decode(src));
                    }
                }
            }
        }
        Ok(planes)
    }

    /// Next block of up to `Q` sinograms, or `None` once every slice was read.
    pub fn read_block<T: Real>(&mut self) -> Result<Option<VolumeBlock<Sinogram<T>>>> {
        let n_slices = self.header.n_slices();
        if self.cursor >= n_slices {
            return Ok(None);
        }
        let first = self.cursor;
        let count = self.block_size.min(n_slices - first);
        let planes = self.read_planes(first, count)?;
        let detector = DetectorAxis::new(self.header.n_det())?;
        let angles = AngleAxis::new(self.header.n_angles())?;
        let slices = planes
            .into_iter()
            .map(|p| Sinogram::new(detector, angles, p.into_iter().map(|v| T::lit(v as f64)).collect()))
            .collect::<Result<Vec<_>>>()?;
        self.cursor += count;
        Ok(Some(VolumeBlock {
            first_slice: first,
            slices,
            stage: StageTag::Read,
        }))
    }
}

/// Free-function form of [`BlockReader::read_block`].
pub fn read_block<T: Real>(r: &mut BlockReader) -> Result<Option<VolumeBlock<Sinogram<T>>>> {
    r.read_block()
}

/// Slice-major writer that places each block at its own offset, so blocks
/// may arrive in any order and the file bytes stay the same.
#[derive(Debug)]
pub struct VolumeWriter {
    path: PathBuf,
    header: VolumeHeader,
    file: Mutex<File>,
}

impl VolumeWriter {
    pub fn create(path: impl AsRef<Path>, header: VolumeHeader) -> Result<Self> {
        let path = path.as_ref();
        if header.layout != Layout::Slices {
            return Err(Error::InvalidParameter(
                "block writes need a slice-major layout".into(),
            ));
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&header.to_bytes())
            .and_then(|_| file.set_len(header.file_bytes()))
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes consecutive slices starting at `first_slice`.
    pub fn write_slices(&self, first_slice: usize, data: &[f32]) -> Result<()> {
        let plane = self.header.n_angles() * self.header.n_det();
        if data.len() % plane != 0 || first_slice + data.len() / plane > self.header.n_slices() {
            return Err(Error::shape(
                format!("whole planes of {plane} values within {} slices", self.header.n_slices()),
                format!("{} values at slice {first_slice}", data.len()),
            ));
        }
        let offset = HEADER_LEN as u64 + (first_slice * plane * 4) as u64;
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.seek(SeekFrom::Start(offset))
            .and_then(|_| file.write_all(&encode(data)))
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(self) -> Result<()> {
        let file = self.file.into_inner().unwrap_or_else(|p| p.into_inner());
        file.sync_all().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageFormat {
    /// Binary PGM (`P5`), 16-bit big-endian, maxval 65535.
    Pgm16,
    /// Comma-separated rows, full precision, LF line endings.
    Csv,
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm16" => Ok(ImageFormat::Pgm16),
            "csv" => Ok(ImageFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown image format `{other}`"))),
        }
    }
}

/// Min-max scaled 16-bit levels; a constant image maps to all zeros.
pub fn pgm_levels<T: Real>(grid: &ImageGrid<T>) -> Vec<u16> {
    let values: Vec<f64> = grid.data().iter().map(|v| v.to_f64_lossy()).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect()
}

pub fn export_image<T: Real>(grid: &ImageGrid<T>, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let n = grid.n();
    let written = match format {
        ImageFormat::Pgm16 => {
            let mut bytes = format!("P5\n{n} {n}\n65535\n").into_bytes();
            bytes.extend(pgm_levels(grid).iter().flat_map(|v| v.to_be_bytes()));
            out.write_all(&bytes)
        }
        ImageFormat::Csv => (|| {
            for row in grid.data().chunks_exact(n) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.write_all(line.join(",").as_bytes())?;
                out.write_all(b"\n")?;
            }
            Ok(())
        })(),
    };
    written.and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

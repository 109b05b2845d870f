//! Spectral image cube and its on-disk SIC format.
//!
//! SIC layout, all little-endian:
//!
//! | offset | type    | field            |
//! |--------|---------|------------------|
//! | 0      | [u8; 4] | magic `"SIC1"`   |
//! | 4      | u32     | n_x              |
//! | 8      | u32     | n_y              |
//! | 12     | u32     | n_bins           |
//! | 16     | f64     | e_min (keV)      |
//! | 24     | f64     | e_bin_width (keV)|
//! | 32     | f64     | pixel pitch (µm) |
//! | 40     | u64     | seed             |
//! | 48     | u64     | photons          |
//! | 56     | u64 × N | counts           |
//!
//! Counts are indexed `((y · n_x) + x) · n_bins + bin`, so a file holds
//! `56 + 8 · n_x · n_y · n_bins` bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const SIC_MAGIC: &[u8; 4] = b"SIC1";
pub const SIC_HEADER_LEN: usize = 56;

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("bad SIC magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("SIC stream truncated at byte {offset} (expected {expected} bytes)")]
    Truncated { offset: usize, expected: usize },
    #[error("SIC stream has {extra} trailing bytes after byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("invalid cube dimensions: {0}")]
    InvalidDimensions(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Bookkeeping carried alongside the counts. Only `seed` and `photons` are
/// persisted in SIC files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CubeMeta {
    pub seed: u64,
    /// Photons simulated, or events processed for calibrated data.
    pub photons: u64,
    pub scene_digest: u64,
    /// Events discarded while building the cube (dead pixels, out of range).
    pub dropped: u64,
}

/// Pixel × energy-bin count cube.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub n_x: usize,
    pub n_y: usize,
    pub n_bins: usize,
    pub e_min_kev: f64,
    pub e_bin_width_kev: f64,
    pub pixel_pitch_um: f64,
    pub counts: Vec<u64>,
    pub meta: CubeMeta,
}

impl SpectralImage {
    pub fn zeros(
        n_x: usize,
        n_y: usize,
        n_bins: usize,
        e_min_kev: f64,
        e_bin_width_kev: f64,
        pixel_pitch_um: f64,
    ) -> Result<Self, CubeError> {
        if n_x == 0 || n_y == 0 || n_bins == 0 {
            return Err(CubeError::InvalidDimensions(format!(
                "{n_x}×{n_y}×{n_bins} has a zero extent"
            )));
        }
        if n_x > u32::MAX as usize || n_y > u32::MAX as usize || n_bins > u32::MAX as usize {
            return Err(CubeError::InvalidDimensions("extent exceeds u32".into()));
        }
        if !(e_bin_width_kev > 0.0) || !e_min_kev.is_finite() || !(pixel_pitch_um > 0.0) {
            return Err(CubeError::InvalidDimensions(
                "bin width and pixel pitch must be positive".into(),
            ));
        }
        let len = n_x
            .checked_mul(n_y)
            .and_then(|v| v.checked_mul(n_bins))
            .ok_or_else(|| CubeError::InvalidDimensions("cube size overflows".into()))?;
        Ok(Self {
            n_x,
            n_y,
            n_bins,
            e_min_kev,
            e_bin_width_kev,
            pixel_pitch_um,
            counts: vec![0; len],
            meta: CubeMeta::default(),
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, bin: usize) -> usize {
        debug_assert!(x < self.n_x && y < self.n_y && bin < self.n_bins);
        (y * self.n_x + x) * self.n_bins + bin
    }

    pub fn get(&self, x: usize, y: usize, bin: usize) -> u64 {
        self.counts[self.index(x, y, bin)]
    }

    pub fn add(&mut self, x: usize, y: usize, bin: usize, count: u64) {
        let idx = self.index(x, y, bin);
        self.counts[idx] += count;
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.e_min_kev + (bin as f64 + 0.5) * self.e_bin_width_kev
    }

    /// Bin holding `energy`, or `None` outside `[e_min, e_min + n·width)`.
    pub fn bin_for_energy(&self, energy_kev: f64) -> Option<usize> {
        let pos = (energy_kev - self.e_min_kev) / self.e_bin_width_kev;
        if pos >= 0.0 && pos < self.n_bins as f64 {
            Some(pos as usize)
        } else {
            None
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn pixel_spectrum(&self, x: usize, y: usize) -> &[u64] {
        let start = self.index(x, y, 0);
        &self.counts[start..start + self.n_bins]
    }

    /// Counts per energy bin summed over all pixels.
    pub fn total_spectrum(&self) -> Vec<u64> {
        let mut spectrum = vec![0; self.n_bins];
        for pixel in self.counts.chunks_exact(self.n_bins) {
            for (acc, &c) in spectrum.iter_mut().zip(pixel) {
                *acc += c;
            }
        }
        spectrum
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_x == other.n_x && self.n_y == other.n_y && self.n_bins == other.n_bins
    }

    pub fn write_sic<W: Write>(&self, mut out: W) -> Result<(), CubeError> {
        let mut header = Vec::with_capacity(SIC_HEADER_LEN);
        header.extend_from_slice(SIC_MAGIC);
        header.extend_from_slice(&(self.n_x as u32).to_le_bytes());
        header.extend_from_slice(&(self.n_y as u32).to_le_bytes());
        header.extend_from_slice(&(self.n_bins as u32).to_le_bytes());
        header.extend_from_slice(&self.e_min_kev.to_le_bytes());
        header.extend_from_slice(&self.e_bin_width_kev.to_le_bytes());
        header.extend_from_slice(&self.pixel_pitch_um.to_le_bytes());
        header.extend_from_slice(&self.meta.seed.to_le_bytes());
        header.extend_from_slice(&self.meta.photons.to_le_bytes());
        out.write_all(&header)?;
        let mut body = Vec::with_capacity(self.counts.len() * 8);
        for c in &self.counts {
            body.extend_from_slice(&c.to_le_bytes());
        }
        out.write_all(&body)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_sic<R: Read>(mut input: R) -> Result<Self, CubeError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_sic_bytes(&bytes)
    }

    pub fn from_sic_bytes(bytes: &[u8]) -> Result<Self, CubeError> {
        let need = |end: usize| {
            if bytes.len() < end {
                Err(CubeError::Truncated {
                    offset: bytes.len(),
                    expected: end,
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != SIC_MAGIC {
            return Err(CubeError::BadMagic { found: magic });
        }
        need(SIC_HEADER_LEN)?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

        let mut cube = Self::zeros(
            u32_at(4),
            u32_at(8),
            u32_at(12),
            f64_at(16),
            f64_at(24),
            f64_at(32),
        )?;
        cube.meta.seed = u64_at(40);
        cube.meta.photons = u64_at(48);

        let expected = SIC_HEADER_LEN + 8 * cube.counts.len();
        need(expected)?;
        if bytes.len() > expected {
            return Err(CubeError::TrailingBytes {
                offset: expected,
                extra: bytes.len() - expected,
            });
        }
        for (slot, chunk) in cube
            .counts
            .iter_mut()
            .zip(bytes[SIC_HEADER_LEN..].chunks_exact(8))
        {
            *slot = u64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(cube)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CubeError> {
        self.write_sic(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CubeError> {
        Self::read_sic(BufReader::new(File::open(path)?))
    }
}

//! Text exports: profile CSV, image CSV and PGM, spectrum CSV grids.

use std::io::{self, BufRead, Write};

use super::{AnalysisError, Atf, Image2D, PsfProfile};

pub fn write_profile_csv<W: Write>(mut out: W, profile: &PsfProfile) -> io::Result<()> {
    writeln!(out, "position_mm,intensity")?;
    for (p, v) in profile.positions.iter().zip(&profile.intensities) {
        writeln!(out, "{p},{v}")?;
    }
    Ok(())
}

/// One CSV row per image row, preceded by a `# pitch_um=` comment line.
pub fn write_image_csv<W: Write>(mut out: W, image: &Image2D) -> io::Result<()> {
    writeln!(out, "# pitch_um={}", image.pitch_um)?;
    for row in image.data.chunks_exact(image.n_x) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_image_csv<R: BufRead>(input: R) -> Result<Image2D, AnalysisError> {
    let mut pitch_um = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| AnalysisError::Malformed(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("pitch_um=") {
                pitch_um = Some(value.trim().parse::<f64>().map_err(|e| {
                    AnalysisError::Malformed(format!("line {}: pitch: {e}", lineno + 1))
                })?);
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| cell.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AnalysisError::Malformed(format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(AnalysisError::Malformed(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let pitch_um = pitch_um.ok_or_else(|| AnalysisError::Malformed("missing pitch_um".into()))?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err(AnalysisError::Malformed("no pixel data".into()));
    }
    let (n_x, n_y) = (rows[0].len(), rows.len());
    Ok(Image2D::from_data(n_x, n_y, pitch_um, rows.concat()))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// ASCII PGM (P2, maxval 65535), linearly scaled so the 1st percentile
/// maps to 0 and the 99th to full scale.
pub fn write_pgm<W: Write>(mut out: W, image: &Image2D) -> io::Result<()> {
    let mut sorted = image.data.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.01);
    let mut hi = percentile(&sorted, 0.99);
    if hi <= lo {
        hi = sorted[sorted.len() - 1];
    }
    let span = hi - lo;
    writeln!(out, "P2")?;
    writeln!(out, "{} {}", image.n_x, image.n_y)?;
    writeln!(out, "65535")?;
    for row in image.data.chunks_exact(image.n_x) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let scaled = if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                ((scaled * 65535.0).round() as u32).to_string()
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Spectrum grid with ascending frequency axes: the header row lists the
/// x frequencies (lp/mm), each following row starts with its y frequency.
pub fn write_atf_csv<W: Write>(mut out: W, atf: &Atf) -> io::Result<()> {
    let order = |n: usize| -> Vec<usize> { (0..n).map(|i| (i + n.div_ceil(2)) % n).collect() };
    let xs = order(atf.n_x);
    let ys = order(atf.n_y);
    let header: Vec<String> = xs
        .iter()
        .map(|&kx| atf.frequency_x(kx).to_string())
        .collect();
    writeln!(out, "fy\\fx,{}", header.join(","))?;
    for &ky in &ys {
        let cells: Vec<String> = xs.iter().map(|&kx| atf.get(kx, ky).to_string()).collect();
        writeln!(out, "{},{}", atf.frequency_y(ky), cells.join(","))?;
    }
    Ok(())
}

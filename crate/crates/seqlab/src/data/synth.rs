//! Procedural stand-ins for the two benchmark datasets, written in the same
//! on-disk formats the loaders consume.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use crate::data::mnist::{write_idx_images, write_idx_labels, DigitSet};
use crate::error::Result;
use crate::ndcore::RngStream;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const SCALE: usize = 3;
pub const IMAGE_SIDE: usize = 28;

/// 5x7 digit faces, one bitmask row per line, bit 4 leftmost.
const DIGIT_FONT: [[u8; GLYPH_H]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

/// Renders `n` distorted digit images (labels cycle 0..9). Digits sit at a
/// random offset with the top rows always blank, so information about the
/// class accumulates row by row. Each sample gets its own slant, wobble,
/// stroke breaks, and background clutter; the variation is wide enough that
/// small training sets underfit while a few thousand samples suffice.
pub fn synth_digits(rng: &mut RngStream, n: usize) -> DigitSet {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let x_off = 4 + rng.below(6) as isize;
        let y_off = 2 + rng.below(5) as usize;
        let base = 150 + rng.below(100) as u8;
        let slant = 0.6 * rng.next_f64() - 0.3;
        let wobble_amp = 1.6 * rng.next_f64();
        let wobble_phase = rng.next_f64() * std::f64::consts::TAU;
        let thin_side = rng.below(3);

        let mut px = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
        for (gy, mask) in DIGIT_FONT[label as usize].iter().enumerate() {
            let shift = (slant * (gy * SCALE) as f64
                + wobble_amp * (wobble_phase + gy as f64 * 0.9).sin())
            .round() as isize;
            for gx in 0..GLYPH_W {
                if mask & (1 << (GLYPH_W - 1 - gx)) == 0 {
                    continue;
                }
                if rng.next_f64() < 0.10 {
                    continue;
                }
                for sy in 0..SCALE {
                    for sx in 0..SCALE {
                        match thin_side {
                            1 if sx == 0 => continue,
                            2 if sx == SCALE - 1 => continue,
                            _ => {}
                        }
                        let y = y_off + gy * SCALE + sy;
                        let x = x_off + (gx * SCALE + sx) as isize + shift;
                        if !(0..IMAGE_SIDE as isize).contains(&x) {
                            continue;
                        }
                        let dim = rng.below(70) as u8;
                        px[y * IMAGE_SIDE + x as usize] = base.saturating_sub(dim);
                    }
                }
            }
        }

        let strokes = 2 + rng.below(4);
        for _ in 0..strokes {
            let sy = 3 + rng.below((IMAGE_SIDE - 3) as u64) as usize;
            let sx = rng.below(IMAGE_SIDE as u64) as usize;
            let len = 2 + rng.below(5) as usize;
            let horizontal = rng.next_f64() < 0.5;
            let level = 70 + rng.below(110) as u8;
            for k in 0..len {
                let (y, x) = if horizontal { (sy, sx + k) } else { (sy + k, sx) };
                if y < IMAGE_SIDE && x < IMAGE_SIDE {
                    let cell = &mut px[y * IMAGE_SIDE + x];
                    *cell = (*cell).max(level);
                }
            }
        }

        for p in px.iter_mut() {
            if *p == 0 && rng.next_f64() < 0.05 {
                *p = 8 + rng.below(44) as u8;
            }
        }
        images.push(px);
        labels.push(label);
    }
    DigitSet {
        rows: IMAGE_SIDE,
        cols: IMAGE_SIDE,
        images,
        labels,
    }
}

#[derive(Debug, Clone)]
pub struct DigitFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Writes train and test digit sets under `dir` using the conventional
/// IDX file names.
pub fn write_digit_files(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<DigitFiles> {
    std::fs::create_dir_all(dir)?;
    let root = RngStream::new(seed);
    let train = synth_digits(&mut root.derive(0), n_train);
    let test = synth_digits(&mut root.derive(1), n_test);
    let files = DigitFiles {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    write_idx_images(&files.train_images, train.rows, train.cols, &train.images)?;
    write_idx_labels(&files.train_labels, &train.labels)?;
    write_idx_images(&files.test_images, test.rows, test.cols, &test.images)?;
    write_idx_labels(&files.test_labels, &test.labels)?;
    Ok(files)
}

struct ColumnSpec {
    name: &'static str,
    offset: f64,
    scale: f64,
    daily: f64,
    phase: f64,
    decimals: usize,
}

const HOURLY_COLUMNS: [ColumnSpec; 12] = [
    ColumnSpec { name: "CO(GT)", offset: 2.1, scale: 1.0, daily: 0.9, phase: 0.0, decimals: 1 },
    ColumnSpec { name: "PT08.S1(CO)", offset: 1100.0, scale: 210.0, daily: 1.0, phase: 0.3, decimals: 0 },
    ColumnSpec { name: "NMHC(GT)", offset: 150.0, scale: 70.0, daily: 0.8, phase: 0.5, decimals: 0 },
    ColumnSpec { name: "C6H6(GT)", offset: 10.5, scale: 4.5, daily: 1.0, phase: 0.2, decimals: 1 },
    ColumnSpec { name: "PT08.S2(NMHC)", offset: 940.0, scale: 260.0, daily: 1.0, phase: 0.4, decimals: 0 },
    ColumnSpec { name: "NOx(GT)", offset: 240.0, scale: 140.0, daily: 0.9, phase: 0.1, decimals: 0 },
    ColumnSpec { name: "PT08.S3(NOx)", offset: 830.0, scale: 240.0, daily: -0.9, phase: 0.2, decimals: 0 },
    ColumnSpec { name: "NO2(GT)", offset: 110.0, scale: 42.0, daily: 0.8, phase: 0.6, decimals: 0 },
    ColumnSpec { name: "PT08.S4(NO2)", offset: 1560.0, scale: 330.0, daily: 1.0, phase: 0.5, decimals: 0 },
    ColumnSpec { name: "T", offset: 18.0, scale: 7.5, daily: 1.0, phase: -0.8, decimals: 1 },
    ColumnSpec { name: "RH", offset: 49.0, scale: 16.0, daily: -0.8, phase: 0.3, decimals: 1 },
    ColumnSpec { name: "AH", offset: 1.0, scale: 0.35, daily: 0.7, phase: -0.5, decimals: 4 },
];

/// First recorded hour and total row count of the reference sensor file.
pub fn canonical_hourly_range() -> (NaiveDateTime, usize) {
    let start = NaiveDate::from_ymd_opt(2004, 3, 10)
        .unwrap()
        .and_hms_opt(18, 0, 0)
        .unwrap();
    (start, 9357)
}

fn gauss(rng: &mut RngStream) -> f64 {
    let u1 = 1.0 - rng.next_f64();
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn fmt_value(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}").replace('.', ",")
}

/// Writes an hourly sensor CSV whose signal mixes a daily cycle, a weekend
/// dip, a slow seasonal drift, and autoregressive noise shared across
/// columns, plus short sentinel-marked outages and a few runs long enough to
/// poison prediction windows.
pub fn write_hourly_csv(
    path: &Path,
    seed: u64,
    start: NaiveDateTime,
    hours: usize,
) -> Result<()> {
    let root = RngStream::new(seed);
    let mut noise_rng = root.derive(0);
    let mut gap_rng = root.derive(1);
    let n_cols = HOURLY_COLUMNS.len();

    let mut shared = 0.0f64;
    let mut private = vec![0.0f64; n_cols];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(hours);
    for h in 0..hours {
        let t = start + chrono::Duration::hours(h as i64);
        shared = 0.85 * shared + 0.25 * gauss(&mut noise_rng);
        let hod = f64::from(t.hour());
        let weekly = if t.weekday().number_from_monday() >= 6 {
            -0.25
        } else {
            0.08
        };
        let seasonal = 0.2 * (std::f64::consts::TAU * f64::from(t.ordinal()) / 365.0 + 1.0).sin();
        let mut row = Vec::with_capacity(n_cols);
        for (c, spec) in HOURLY_COLUMNS.iter().enumerate() {
            private[c] = 0.7 * private[c] + 0.15 * gauss(&mut noise_rng);
            let daily = (std::f64::consts::TAU * hod / 24.0 + spec.phase).sin() * spec.daily;
            let u = daily + 0.9 * shared + private[c] + weekly + seasonal;
            let v = spec.offset + spec.scale * 0.7 * u;
            row.push(v.max(0.05 * spec.offset.abs()));
        }
        rows.push(row);
    }

    let mut missing = vec![vec![false; n_cols]; hours];
    for c in 0..n_cols {
        let mut h = 0;
        while h < hours {
            if gap_rng.next_f64() < 0.0035 {
                let run = 1 + gap_rng.below(4) as usize;
                for r in missing.iter_mut().skip(h).take(run) {
                    r[c] = true;
                }
                h += run;
            } else {
                h += 1;
            }
        }
    }
    if hours > 400 {
        let long_span = (hours * 6 / 10).max(1);
        for &name in &["PT08.S1(CO)", "T", "AH"] {
            let c = HOURLY_COLUMNS.iter().position(|s| s.name == name).unwrap();
            let at = 200 + gap_rng.below((long_span - 200).max(1) as u64) as usize;
            let run = 8 + gap_rng.below(5) as usize;
            for r in missing.iter_mut().skip(at).take(run) {
                r[c] = true;
            }
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<&str> = HOURLY_COLUMNS.iter().map(|s| s.name).collect();
    writeln!(w, "Date;Time;{};;", names.join(";"))?;
    for (h, row) in rows.iter().enumerate() {
        let t = start + chrono::Duration::hours(h as i64);
        write!(w, "{};{}", t.format("%d/%m/%Y"), t.format("%H.%M.%S"))?;
        for (c, spec) in HOURLY_COLUMNS.iter().enumerate() {
            if missing[h][c] {
                write!(w, ";-200")?;
            } else {
                write!(w, ";{}", fmt_value(row[c], spec.decimals))?;
            }
        }
        writeln!(w, ";;")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the full reference date range (9,357 hourly rows).
pub fn write_canonical_hourly_csv(path: &Path, seed: u64) -> Result<()> {
    let (start, hours) = canonical_hourly_range();
    write_hourly_csv(path, seed, start, hours)
}

//! Luminance quality metrics and per-sequence reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::DecodedFrame;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::sensing::FrameKind;

const PEAK: f64 = 255.0;
const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn mse(reference: &Frame, test: &Frame) -> Result<f64> {
    reference.check_geometry(test)?;
    let n = reference.data().len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10 log10(255^2 / MSE)`; `+inf` for identical frames.
pub fn psnr(reference: &Frame, test: &Frame) -> Result<f64> {
    let e = mse(reference, test)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / e).log10())
}

/// Number of scales usable for a frame: the coarsest scale must still hold
/// one full window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut scales = 0;
    while scales < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        scales += 1;
        side /= 2;
    }
    scales
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering; output is `(w - 10) x (h - 10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = row[c..c + WINDOW].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|i| horiz[(r + i) * ow + c] * k[i]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, k);
    let mu_b = filter_valid(b, w, h, k);
    let aa = filter_valid(&prod(a, a), w, h, k);
    let bb = filter_valid(&prod(b, b), w, h, k);
    let ab = filter_valid(&prod(a, b), w, h, k);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        cs += cs_i;
        ssim += cs_i * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
    (ssim / n, cs / n)
}

fn downsample(data: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out[r * ow + c] = 0.25 * (data[i] + data[i + 1] + data[i + w] + data[i + w + 1]);
        }
    }
    (out, ow, oh)
}

/// Multi-scale SSIM with the standard five-scale weights, an 11-tap Gaussian
/// window (sigma 1.5) and 2x2 averaging between scales. Frames too small for
/// five scales use as many as fit, with the leading weights renormalized.
pub fn ms_ssim(reference: &Frame, test: &Frame) -> Result<f64> {
    reference.check_geometry(test)?;
    let (mut w, mut h) = (reference.width(), reference.height());
    let scales = ms_ssim_scales(w, h);
    if scales == 0 {
        return Err(Error::InvalidArgument(format!(
            "MS-SSIM needs at least {WINDOW}x{WINDOW} pixels, got {w}x{h}"
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let k = gaussian_window();
    let mut a = reference.data().to_vec();
    let mut b = test.data().to_vec();
    let mut score = 1.0;
    for (s, &wt) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b, w, h, &k);
        let term = if s + 1 == scales { ssim } else { cs };
        score *= term.max(0.0).powf(wt / wsum);
        if s + 1 < scales {
            let (na, nw, nh) = downsample(&a, w, h);
            b = downsample(&b, w, h).0;
            a = na;
            w = nw;
            h = nh;
        }
    }
    Ok(score.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub kind: FrameKind,
    pub delta_realized: f64,
}

impl From<&DecodedFrame> for FrameMeta {
    fn from(d: &DecodedFrame) -> Self {
        FrameMeta {
            kind: d.kind,
            delta_realized: d.delta_realized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub frame: usize,
    pub kind: FrameKind,
    pub delta_realized: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub count: usize,
    pub delta_realized: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
}

impl Averages {
    fn of<'a>(rows: impl Iterator<Item = &'a FrameQuality>) -> Averages {
        let mut a = Averages::default();
        for r in rows {
            a.count += 1;
            a.delta_realized += r.delta_realized;
            a.psnr += r.psnr;
            a.ms_ssim += r.ms_ssim;
        }
        if a.count > 0 {
            let n = a.count as f64;
            a.delta_realized /= n;
            a.psnr /= n;
            a.ms_ssim /= n;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frames: Vec<FrameQuality>,
    pub average: Averages,
    pub key: Averages,
    pub nonkey: Averages,
}

impl QualityReport {
    pub fn from_rows(frames: Vec<FrameQuality>) -> Self {
        let average = Averages::of(frames.iter());
        let key = Averages::of(frames.iter().filter(|r| r.kind == FrameKind::Key));
        let nonkey = Averages::of(frames.iter().filter(|r| r.kind == FrameKind::NonKey));
        QualityReport {
            frames,
            average,
            key,
            nonkey,
        }
    }

    /// Per-frame rows followed by one `average` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.frames {
            w.write_record([
                r.frame.to_string(),
                r.kind.as_str().to_string(),
                format!("{:.6}", r.delta_realized),
                format_value(r.psnr),
                format_value(r.ms_ssim),
            ])?;
        }
        w.write_record([
            AVERAGE_LABEL.to_string(),
            "all".to_string(),
            format!("{:.6}", self.average.delta_realized),
            format_value(self.average.psnr),
            format_value(self.average.ms_ssim),
        ])?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Malformed(format!("CSV buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Parses the per-frame rows of a CSV written by [`QualityReport::to_csv`];
    /// averages are recomputed, not read.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Malformed(format!("unexpected CSV header {headers:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if &rec[0] == AVERAGE_LABEL {
                continue;
            }
            let bad = |f: &str| Error::Malformed(format!("bad CSV field {f:?}"));
            let num = |f: &str| f.parse::<f64>().map_err(|_| bad(f));
            rows.push(FrameQuality {
                frame: rec[0].parse().map_err(|_| bad(&rec[0]))?,
                kind: match &rec[1] {
                    "key" => FrameKind::Key,
                    "nonkey" => FrameKind::NonKey,
                    other => return Err(bad(other)),
                },
                delta_realized: num(&rec[2])?,
                psnr: num(&rec[3])?,
                ms_ssim: num(&rec[4])?,
            });
        }
        Ok(QualityReport::from_rows(rows))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

pub const CSV_HEADER: [&str; 5] = ["frame", "kind", "delta_realized", "psnr", "ms_ssim"];
const AVERAGE_LABEL: &str = "average";

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn frame_quality(index: usize, original: &Frame, decoded: &Frame, meta: FrameMeta) -> Result<FrameQuality> {
    Ok(FrameQuality {
        frame: index,
        kind: meta.kind,
        delta_realized: meta.delta_realized,
        psnr: psnr(original, decoded)?,
        ms_ssim: ms_ssim(original, decoded)?,
    })
}

/// Scores every decoded frame against its original, spreading frames over
/// the available cores.
pub fn evaluate_sequence(
    original: &[Frame],
    decoded: &[Frame],
    meta: &[FrameMeta],
) -> Result<QualityReport> {
    if original.len() != decoded.len() || original.len() != meta.len() {
        return Err(Error::dims(
            format!("{} frames", original.len()),
            format!("{} decoded, {} metadata", decoded.len(), meta.len()),
        ));
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(original.len().max(1));
    let chunk = original.len().div_ceil(workers).max(1);
    let rows: Vec<Result<FrameQuality>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..original.len())
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(original.len());
                s.spawn(move || {
                    (start..end)
                        .map(|i| frame_quality(i, &original[i], &decoded[i], meta[i]))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("metric worker panicked"))
            .collect()
    });
    Ok(QualityReport::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

/// [`evaluate_sequence`] on decoder output, scored after 8-bit rounding.
pub fn evaluate_decoded(original: &[Frame], decoded: &[DecodedFrame]) -> Result<QualityReport> {
    let frames: Vec<Frame> = decoded
        .iter()
        .map(|d| {
            Frame::from_u8(d.pixels.width(), d.pixels.height(), &d.pixels.to_u8())
                .expect("same geometry")
        })
        .collect();
    let meta: Vec<FrameMeta> = decoded.iter().map(FrameMeta::from).collect();
    evaluate_sequence(original, &frames, &meta)
}

/// One summary row per sequence plus a mean row, PSNR and MS-SSIM side by
/// side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<(String, Averages)>,
    pub mean: Averages,
}

pub fn summarize(reports: &BTreeMap<String, QualityReport>) -> SummaryTable {
    let rows: Vec<(String, Averages)> = reports
        .iter()
        .map(|(name, r)| (name.clone(), r.average))
        .collect();
    let mut mean = Averages::default();
    for (_, a) in &rows {
        mean.count += a.count;
        mean.delta_realized += a.delta_realized;
        mean.psnr += a.psnr;
        mean.ms_ssim += a.ms_ssim;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        mean.delta_realized /= n;
        mean.psnr /= n;
        mean.ms_ssim /= n;
    }
    SummaryTable { rows, mean }
}

impl SummaryTable {
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|(n, _)| n.len())
            .chain([8])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>9}  {:>8}  {:>6}",
            "sequence", "delta", "PSNR(dB)", "MS-SSIM", "frames"
        );
        let line = |out: &mut String, name: &str, a: &Averages| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4}  {:>9.2}  {:>8.4}  {:>6}",
                name, a.delta_realized, a.psnr, a.ms_ssim, a.count
            );
        };
        for (name, a) in &self.rows {
            line(&mut out, name, a);
        }
        line(&mut out, "Average", &self.mean);
        out
    }
}

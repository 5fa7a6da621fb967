//! Error metrics and report emission.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fringe::{wrap, wrapped_phase, AbsolutePhaseMap, FringeSet, PhaseMap};
use crate::raster::{self, FloatRaster};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub label: String,
    pub width: usize,
    pub height: usize,
    /// `wrap(pred - gt)` per pixel, NaN where either side is invalid.
    pub phase_error_map: Vec<f64>,
    pub mean_abs_phase_error: f64,
    pub max_abs_phase_error: f64,
    /// Mean over phase steps of `|I_pred - I_gt|`, intensities in `[0, 1]`.
    pub grayscale_error_map: Option<Vec<f64>>,
    pub mean_grayscale_error: Option<f64>,
    /// Fraction of valid pixels whose fringe order differs.
    pub order_error_rate: Option<f64>,
    pub valid_pixel_count: usize,
}

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!(
            "{what}: prediction is {}x{}, ground truth is {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

fn phase_metrics(label: &str, pred: &PhaseMap, gt: &PhaseMap) -> Result<Metrics> {
    check_dims("phase maps", (pred.width, pred.height), (gt.width, gt.height))?;
    let mut map = vec![f64::NAN; pred.phase.len()];
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for i in 0..map.len() {
        if pred.valid[i] && gt.valid[i] {
            let d = wrap(pred.phase[i] - gt.phase[i]);
            map[i] = d;
            sum += d.abs();
            max = max.max(d.abs());
            count += 1;
        }
    }
    Ok(Metrics {
        label: label.to_string(),
        width: pred.width,
        height: pred.height,
        phase_error_map: map,
        mean_abs_phase_error: if count > 0 { sum / count as f64 } else { 0.0 },
        max_abs_phase_error: max,
        grayscale_error_map: None,
        mean_grayscale_error: None,
        order_error_rate: None,
        valid_pixel_count: count,
    })
}

pub fn evaluate_phase(label: &str, pred: &PhaseMap, gt: &PhaseMap) -> Result<Metrics> {
    phase_metrics(label, pred, gt)
}

/// Residual phase error after removing whole periods, plus the fraction of
/// pixels whose absolute phases disagree by at least one period.
pub fn evaluate_absolute(label: &str, pred: &AbsolutePhaseMap, gt: &AbsolutePhaseMap) -> Result<Metrics> {
    check_dims("absolute phase maps", (pred.width, pred.height), (gt.width, gt.height))?;
    let mut m = phase_metrics(label, &pred.wrapped(), &gt.wrapped())?;
    let mut wrong = 0usize;
    for i in 0..pred.phase.len() {
        if pred.valid[i] && gt.valid[i] {
            let diff = pred.phase[i] - gt.phase[i];
            let delta_k = (diff / TAU).round();
            if delta_k != 0.0 {
                wrong += 1;
            }
            let residual = wrap(diff);
            m.phase_error_map[i] = residual;
        }
    }
    let errors = m.phase_error_map.iter().filter(|v| v.is_finite()).map(|v| v.abs());
    m.max_abs_phase_error = errors.clone().fold(0.0, f64::max);
    m.mean_abs_phase_error = if m.valid_pixel_count > 0 {
        errors.sum::<f64>() / m.valid_pixel_count as f64
    } else {
        0.0
    };
    m.order_error_rate = Some(if m.valid_pixel_count > 0 {
        wrong as f64 / m.valid_pixel_count as f64
    } else {
        0.0
    });
    Ok(m)
}

/// Demodulates both sets and compares phases and raw intensities.
pub fn evaluate_fringes(label: &str, pred: &FringeSet, gt: &FringeSet, modulation_threshold: f64) -> Result<Metrics> {
    check_dims("fringe sets", (pred.width(), pred.height()), (gt.width(), gt.height()))?;
    if pred.phase_steps() != gt.phase_steps() {
        return Err(Error::shape(format!(
            "fringe sets: prediction has {} steps, ground truth {}",
            pred.phase_steps(),
            gt.phase_steps()
        )));
    }
    let mut m = phase_metrics(
        label,
        &wrapped_phase(pred, modulation_threshold),
        &wrapped_phase(gt, modulation_threshold),
    )?;
    let n = pred.phase_steps() as f64;
    let mut gray = vec![0.0; pred.width() * pred.height()];
    for (p, g) in pred.images().iter().zip(gt.images()) {
        for ((acc, a), b) in gray.iter_mut().zip(p.data()).zip(g.data()) {
            *acc += (a - b).abs() / n;
        }
    }
    m.mean_grayscale_error = Some(gray.iter().sum::<f64>() / gray.len() as f64);
    m.grayscale_error_map = Some(gray);
    Ok(m)
}

/// A raster written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFiles {
    pub raster: String,
    pub visualization: String,
    /// Values mapped to 0 and 255 in the visualization.
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub mean_abs_phase_error: f64,
    pub max_abs_phase_error: f64,
    pub mean_grayscale_error: Option<f64>,
    pub order_error_rate: Option<f64>,
    pub valid_pixel_count: usize,
    pub phase_error: MapFiles,
    pub grayscale_error: Option<MapFiles>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_map(dir: &Path, stem: &str, width: usize, height: usize, data: &[f64]) -> Result<MapFiles> {
    let raster_name = format!("{stem}.f32r");
    let vis_name = format!("{stem}.pgm");
    FloatRaster::from_f64(width, height, data).write(&dir.join(&raster_name))?;
    let (pixels, range) = raster::visualize(data);
    raster::write_bytes(&dir.join(&vis_name), &raster::encode_pgm(width, height, &pixels))?;
    Ok(MapFiles {
        raster: raster_name,
        visualization: vis_name,
        range,
    })
}

/// Writes `report.json` plus float and 8-bit error maps for every entry.
pub fn write_report(metrics: &[Metrics], out_dir: &Path) -> Result<(PathBuf, Report)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut report = Report::default();
    for (i, m) in metrics.iter().enumerate() {
        if !(m.mean_abs_phase_error.is_finite() && m.max_abs_phase_error.is_finite()) {
            return Err(Error::Numeric(format!("metrics '{}' are not finite", m.label)));
        }
        let phase_error = write_map(out_dir, &format!("m{i:03}_phase_error"), m.width, m.height, &m.phase_error_map)?;
        let grayscale_error = m
            .grayscale_error_map
            .as_ref()
            .map(|g| write_map(out_dir, &format!("m{i:03}_grayscale_error"), m.width, m.height, g))
            .transpose()?;
        report.entries.push(ReportEntry {
            label: m.label.clone(),
            width: m.width,
            height: m.height,
            mean_abs_phase_error: m.mean_abs_phase_error,
            max_abs_phase_error: m.max_abs_phase_error,
            mean_grayscale_error: m.mean_grayscale_error,
            order_error_rate: m.order_error_rate,
            valid_pixel_count: m.valid_pixel_count,
            phase_error,
            grayscale_error,
        });
    }
    let path = out_dir.join("report.json");
    raster::write_bytes(&path, &serde_json::to_vec_pretty(&report)?)?;
    Ok((path, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fringe::{order_error, render_set, unwrap_step, RenderParams};
    use crate::surface::Surface;
    use std::f64::consts::PI;

    fn ramp_phase(w: usize, h: usize, offset: f64) -> PhaseMap {
        let phase = (0..w * h)
            .map(|i| wrap(-3.0 + 6.0 * (i % w) as f64 / w as f64 + offset))
            .collect();
        PhaseMap::from_phase(w, h, 1.0, phase).unwrap()
    }

    #[test]
    fn identical_inputs_have_zero_error() {
        let surface = Surface::from_depth(8, 4, (0..32).map(|i| i as f64 * 0.1).collect()).unwrap();
        let set = render_set(&surface, 3.0, 4, &RenderParams::default()).unwrap();
        let m = evaluate_fringes("same", &set, &set, 0.0).unwrap();
        assert_eq!(m.mean_abs_phase_error, 0.0);
        assert_eq!(m.max_abs_phase_error, 0.0);
        assert_eq!(m.mean_grayscale_error, Some(0.0));
        assert_eq!(m.valid_pixel_count, 32);
    }

    #[test]
    fn constant_offset_is_measured() {
        let gt = ramp_phase(16, 4, 0.0);
        let pred = ramp_phase(16, 4, 0.1);
        let m = evaluate_phase("shift", &pred, &gt).unwrap();
        assert!((m.mean_abs_phase_error - 0.1).abs() < 1e-12);
        assert!((m.max_abs_phase_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn errors_across_the_cut_are_wrapped() {
        let gt = PhaseMap::from_phase(1, 1, 1.0, vec![PI - 0.05]).unwrap();
        let pred = PhaseMap::from_phase(1, 1, 1.0, vec![-PI + 0.05]).unwrap();
        let m = evaluate_phase("cut", &pred, &gt).unwrap();
        assert!((m.mean_abs_phase_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_pixels_are_excluded() {
        let gt = PhaseMap::from_phase(2, 1, 1.0, vec![0.0, f64::NAN]).unwrap();
        let pred = PhaseMap::from_phase(2, 1, 1.0, vec![0.5, 3.0]).unwrap();
        let m = evaluate_phase("mask", &pred, &gt).unwrap();
        assert_eq!(m.valid_pixel_count, 1);
        assert!((m.mean_abs_phase_error - 0.5).abs() < 1e-12);
        assert!(m.phase_error_map[1].is_nan());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = ramp_phase(4, 4, 0.0);
        let b = ramp_phase(8, 2, 0.0);
        assert!(matches!(evaluate_phase("x", &a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn order_error_rate_follows_predicate() {
        // One pixel per injected (previous, current) error pair, ratio 2. The current
        // error is a wrapped-phase error, so it stays inside (-pi, pi).
        let steps = 41;
        let pairs: Vec<(f64, f64)> = (0..steps)
            .flat_map(|i| (0..steps).map(move |j| (i, j)))
            .map(|(i, j)| {
                let s = |k: usize| -1.1 * PI + 2.2 * PI * k as f64 / (steps - 1) as f64;
                (s(i) / 2.0, s(j))
            })
            .filter(|(dp, dc)| ((2.0 * dp - dc).abs() - PI).abs() > 1e-6 && dc.abs() < PI)
            .collect();
        let n = pairs.len();
        let truth_prev: Vec<f64> = (0..n).map(|i| 0.3 + (i % 7) as f64 * 0.2).collect();
        let truth_cur: Vec<f64> = truth_prev.iter().map(|p| 2.0 * p).collect();
        let prev_gt = AbsolutePhaseMap::from_wrapped(&PhaseMap::from_phase(n, 1, 1.0, truth_prev.clone()).unwrap());
        let prev_noisy = AbsolutePhaseMap {
            phase: prev_gt.phase.iter().zip(&pairs).map(|(p, e)| p + e.0).collect(),
            ..prev_gt.clone()
        };
        let cur_gt_wrapped = PhaseMap::from_phase(n, 1, 2.0, truth_cur.iter().map(|p| wrap(*p)).collect()).unwrap();
        let cur_noisy = PhaseMap::from_phase(
            n,
            1,
            2.0,
            truth_cur.iter().zip(&pairs).map(|(p, e)| wrap(p + e.1)).collect(),
        )
        .unwrap();
        let gt = unwrap_step(&prev_gt, &cur_gt_wrapped).unwrap();
        let pred = unwrap_step(&prev_noisy, &cur_noisy).unwrap();
        let m = evaluate_absolute("eq7", &pred, &gt).unwrap();
        let unsafe_count = pairs.iter().filter(|(dp, dc)| !order_error(*dp, *dc).safe).count();
        assert!(unsafe_count > 0 && unsafe_count < n);
        assert_eq!(m.order_error_rate, Some(unsafe_count as f64 / n as f64));
    }

    #[test]
    fn report_writes_maps_and_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let map: Vec<f64> = (0..32).map(|i| if i == 5 { f64::NAN } else { -0.4 + 0.03 * i as f64 }).collect();
        let m = Metrics {
            label: "ramp".into(),
            width: 8,
            height: 4,
            phase_error_map: map,
            mean_abs_phase_error: 0.2,
            max_abs_phase_error: 0.53,
            grayscale_error_map: Some(vec![0.25; 32]),
            mean_grayscale_error: Some(0.25),
            order_error_rate: None,
            valid_pixel_count: 31,
        };
        let (path, report) = write_report(&[m], dir.path()).unwrap();
        assert_eq!(Report::read(&path).unwrap(), report);
        let entry = &report.entries[0];
        let (w, h, px) = raster::decode_pgm(
            &std::fs::read(dir.path().join(&entry.phase_error.visualization)).unwrap(),
            &path,
        )
        .unwrap();
        assert_eq!((w, h), (8, 4));
        let stored = FloatRaster::read(&dir.path().join(&entry.phase_error.raster)).unwrap().to_f64();
        assert!(stored[5].is_nan());
        // Scan oracle over the stored raster.
        let (mut lo, mut hi, mut at_lo, mut at_hi) = (f64::INFINITY, f64::NEG_INFINITY, 0, 0);
        for (i, v) in stored.iter().enumerate() {
            if v.is_finite() && *v < lo {
                lo = *v;
                at_lo = i;
            }
            if v.is_finite() && *v > hi {
                hi = *v;
                at_hi = i;
            }
        }
        assert!((entry.phase_error.range.0 - lo).abs() < 1e-6);
        assert!((entry.phase_error.range.1 - hi).abs() < 1e-6);
        assert_eq!(px[at_lo], 0);
        assert_eq!(px[at_hi], 255);
        assert_eq!(entry.grayscale_error.as_ref().unwrap().range, (0.25, 0.25));
    }

    #[test]
    fn empty_report_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        let (path, report) = write_report(&[], dir.path()).unwrap();
        assert!(report.entries.is_empty());
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(v["entries"].as_array().unwrap().len(), 0);
    }
}

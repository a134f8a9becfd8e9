//! F0 contour plots (ground truth against prediction) as SVG.

use std::path::Path;

use plotters::prelude::*;

use super::MetricError;

/// Draws both contours over frame index with a marker at the continuation
/// boundary. Unvoiced frames (0 Hz) break the lines.
pub fn plot_f0(
    path: &Path,
    title: &str,
    gt_hz: &[f64],
    pred_hz: &[f64],
    boundary: usize,
) -> Result<(), MetricError> {
    let err = |e: &dyn std::fmt::Display| MetricError::Io(format!("{}: {e}", path.display()));
    let n = gt_hz.len().max(pred_hz.len()).max(2);
    let top = gt_hz
        .iter()
        .chain(pred_hz)
        .copied()
        .filter(|v| v.is_finite())
        .fold(100.0f64, f64::max)
        * 1.1;
    let root = SVGBackend::new(path, (900, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, 0f64..top)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("frame")
        .y_desc("F0 (Hz)")
        .draw()
        .map_err(|e| err(&e))?;
    for (values, color, label) in [(gt_hz, BLUE, "ground truth"), (pred_hz, RED, "prediction")] {
        let mut first = true;
        for run in voiced_runs(values) {
            let series = chart
                .draw_series(LineSeries::new(
                    run.into_iter().map(|i| (i as f64, values[i])),
                    color.stroke_width(2),
                ))
                .map_err(|e| err(&e))?;
            if first {
                series
                    .label(label)
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                first = false;
            }
        }
    }
    chart
        .draw_series(LineSeries::new(
            [(boundary as f64, 0.0), (boundary as f64, top)],
            BLACK.mix(0.5),
        ))
        .map_err(|e| err(&e))?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))
}

fn voiced_runs(values: &[f64]) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut cur = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            cur.push(i);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

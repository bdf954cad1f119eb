//! SVG line charts rendered from training logs.

use ogstyle::trainer::LogRecord;
use plotters::prelude::*;
use std::path::Path;

const COLORS: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

pub type Series<'a> = (&'a str, Vec<(f64, f64)>);

fn bounds(series: &[Series<'_>]) -> Option<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return None;
    }
    let pad = |a: f64, b: f64| if a == b { (a - 0.5, b + 0.5) } else { (a, b) };
    Some((pad(x0, x1), pad(y0, y1)))
}

/// Draws `series` as lines. Writes nothing when every series is empty.
pub fn line_chart(path: &Path, title: &str, x_label: &str, series: &[Series<'_>]) -> Result<bool, String> {
    let Some(((x0, x1), (y0, y1))) = bounds(series) else {
        return Ok(false);
    };
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color))
            .map_err(|e| err(&e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(true)
}

/// Loss curves, validation scores and accepted-pair counts from a
/// training log, written as `losses.svg`, `validation.svg`, `pairs.svg`.
pub fn plot_training_log(records: &[LogRecord], dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let mut total = Vec::new();
    let mut sup = Vec::new();
    let mut unsup = Vec::new();
    let mut val = Vec::new();
    let mut pairs = Vec::new();
    for r in records {
        let x = r.step as f64;
        if let Some(l) = r.losses {
            total.push((x, l.l_total));
            sup.push((x, l.l_sup));
            unsup.push((x, l.l_unsup));
        }
        if let Some(v) = r.validation {
            val.push((x, v.combined));
        }
        if let Some(ce) = r.val_ce {
            val.push((x, ce));
        }
        if let Some(n) = r.accepted_pairs {
            pairs.push((r.epoch as f64, n as f64));
        }
    }
    line_chart(
        &dir.join("losses.svg"),
        "training loss",
        "update",
        &[("L", total), ("L_sup", sup), ("L_unsup", unsup)],
    )?;
    line_chart(&dir.join("validation.svg"), "validation score", "update", &[("score", val)])?;
    line_chart(&dir.join("pairs.svg"), "accepted pairs", "epoch", &[("pairs", pairs)])?;
    Ok(())
}

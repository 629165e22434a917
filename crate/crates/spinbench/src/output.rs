//! Deterministic serialization: numeric formatting, atomic file writes, CSV
//! tables and small self-contained SVG plots.
//!
//! Numbers are rendered with 9 significant digits, '.' decimal separator and
//! '\n' line endings so identical inputs always produce byte-identical
//! files. Files are written to a temporary name in the destination directory
//! and renamed into place, so failed runs never leave partial outputs.

use std::fs;
use std::path::Path;

use crate::dynamics::TemperatureSweep;
use crate::pulsesim::SignalTrace;
use crate::spectra::{RotationPattern, StickEntry, StickSpectrum};
use crate::Result;

/// Significant digits used for all CSV numeric output.
pub const CSV_SIG_DIGITS: usize = 9;

/// Format with a fixed number of significant digits, using plain decimal
/// notation in the exponent range [-4, digits) and e-notation outside it,
/// with trailing zeros trimmed. Mirrors printf's %g at the given precision.
pub fn format_sig(x: f64, digits: usize) -> String {
    assert!(digits > 0);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mant, exp) = sci.split_once('e').expect("e-notation");
    let exp: i32 = exp.parse().expect("exponent");
    if exp >= -4 && exp < digits as i32 {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mant))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Shorthand for the standard CSV precision.
pub fn fmt(x: f64) -> String {
    format_sig(x, CSV_SIG_DIGITS)
}

/// Write `contents` to `path` atomically (temp file + rename).
pub fn atomic_write(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let stem = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{stem}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_from_rows(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(
        Vec::new(),
    );
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Format {
        what: "csv",
        why: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const SPECTRUM_HEADER: [&str; 8] =
    ["angle_deg", "field_mT", "moment_muB", "subsite", "lower", "upper", "kind", "delta_MI"];

fn stick_row(e: &StickEntry) -> Vec<String> {
    vec![
        e.angle_deg.map(fmt).unwrap_or_default(),
        fmt(e.field_mt),
        fmt(e.transition.dipole_moment),
        e.subsite.clone(),
        e.transition.lower_index.to_string(),
        e.transition.upper_index.to_string(),
        e.transition.kind.to_string(),
        e.transition.delta_mi.to_string(),
    ]
}

/// Stick spectrum as CSV.
pub fn spectrum_csv(spectrum: &StickSpectrum) -> Result<String> {
    csv_from_rows(&SPECTRUM_HEADER, spectrum.entries.iter().map(stick_row))
}

/// Rotation pattern as CSV, angles in grid order.
pub fn rotation_csv(pattern: &RotationPattern) -> Result<String> {
    csv_from_rows(&SPECTRUM_HEADER, pattern.entries().map(stick_row))
}

/// Temperature sweep of a relaxation/decoherence model as CSV.
pub fn sweep_csv(sweep: &TemperatureSweep) -> Result<String> {
    csv_from_rows(
        &["T_K", "rate", "time_us"],
        (0..sweep.temperatures_k.len()).map(|k| {
            vec![fmt(sweep.temperatures_k[k]), fmt(sweep.rates[k]), fmt(sweep.times_us[k])]
        }),
    )
}

/// Simulated signal trace as CSV.
pub fn trace_csv(trace: &SignalTrace) -> Result<String> {
    csv_from_rows(
        &["swept_value", "signal"],
        (0..trace.swept_values.len())
            .map(|k| vec![fmt(trace.swept_values[k]), fmt(trace.signals[k])]),
    )
}

// ---------------------------------------------------------------------------
// SVG plotting: a thin convenience layer over the CSV data. Nothing here is
// load-bearing for analysis; plots carry no more information than the CSV.
// ---------------------------------------------------------------------------

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 24.0;
const MARGIN_B: f64 = 52.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn new(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> Axes {
        let mut ax =
            Axes { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
        for v in x {
            ax.x_min = ax.x_min.min(v);
            ax.x_max = ax.x_max.max(v);
        }
        for v in y {
            ax.y_min = ax.y_min.min(v);
            ax.y_max = ax.y_max.max(v);
        }
        if !ax.x_min.is_finite() || ax.x_min == ax.x_max {
            ax.x_min -= 0.5;
            ax.x_max += 0.5;
        }
        if !ax.y_min.is_finite() || ax.y_min == ax.y_max {
            ax.y_min -= 0.5;
            ax.y_max += 0.5;
        }
        ax
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (PLOT_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        PLOT_H - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (PLOT_H - MARGIN_T - MARGIN_B)
    }

    fn frame(&self, x_label: &str, y_label: &str, out: &mut String) {
        out.push_str(&format!(
            "<rect x='{}' y='{}' width='{}' height='{}' fill='none' stroke='black'/>\n",
            MARGIN_L,
            MARGIN_T,
            PLOT_W - MARGIN_L - MARGIN_R,
            PLOT_H - MARGIN_T - MARGIN_B
        ));
        for k in 0..=4 {
            let fx = self.x_min + (self.x_max - self.x_min) * k as f64 / 4.0;
            let fy = self.y_min + (self.y_max - self.y_min) * k as f64 / 4.0;
            out.push_str(&format!(
                "<text x='{}' y='{}' font-size='11' text-anchor='middle'>{}</text>\n",
                self.px(fx),
                PLOT_H - MARGIN_B + 16.0,
                format_sig(fx, 4)
            ));
            out.push_str(&format!(
                "<text x='{}' y='{}' font-size='11' text-anchor='end'>{}</text>\n",
                MARGIN_L - 6.0,
                self.py(fy) + 4.0,
                format_sig(fy, 4)
            ));
        }
        out.push_str(&format!(
            "<text x='{}' y='{}' font-size='13' text-anchor='middle'>{}</text>\n",
            (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
            PLOT_H - 12.0,
            x_label
        ));
        out.push_str(&format!(
            "<text x='16' y='{}' font-size='13' text-anchor='middle' transform='rotate(-90 16 {})'>{}</text>\n",
            (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
            (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
            y_label
        ));
    }
}

fn svg_open() -> String {
    format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{PLOT_W}' height='{PLOT_H}' \
         viewBox='0 0 {PLOT_W} {PLOT_H}'>\n<rect width='100%' height='100%' fill='white'/>\n"
    )
}

fn moment_color(t: f64) -> String {
    // dark blue for weak lines through red for the strongest
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let g = (64.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    let b = (200.0 * (1.0 - t) + 30.0) as u8;
    format!("rgb({r},{g},{b})")
}

/// Stick plot of a spectrum: resonance field vs dipole moment.
pub fn spectrum_svg(spectrum: &StickSpectrum, title: &str) -> String {
    let ax = Axes::new(
        spectrum.entries.iter().map(|e| e.field_mt),
        spectrum.entries.iter().map(|e| e.transition.dipole_moment).chain([0.0]),
    );
    let mut out = svg_open();
    ax.frame("field (mT)", "moment (muB)", &mut out);
    out.push_str(&format!(
        "<text x='{}' y='16' font-size='13' text-anchor='middle'>{title}</text>\n",
        PLOT_W / 2.0
    ));
    let y0 = ax.py(ax.y_min.max(0.0));
    for e in &spectrum.entries {
        out.push_str(&format!(
            "<line x1='{0}' y1='{1}' x2='{0}' y2='{2}' stroke='steelblue' stroke-width='1.2'/>\n",
            ax.px(e.field_mt),
            y0,
            ax.py(e.transition.dipole_moment)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of a rotation pattern: angle vs resonance field, colored by
/// dipole moment.
pub fn rotation_svg(pattern: &RotationPattern, title: &str) -> String {
    let ax = Axes::new(
        pattern.entries().map(|e| e.angle_deg.unwrap_or(0.0)),
        pattern.entries().map(|e| e.field_mt),
    );
    let max_m = pattern
        .entries()
        .map(|e| e.transition.dipole_moment)
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut out = svg_open();
    ax.frame("angle (deg)", "field (mT)", &mut out);
    out.push_str(&format!(
        "<text x='{}' y='16' font-size='13' text-anchor='middle'>{title}</text>\n",
        PLOT_W / 2.0
    ));
    for e in pattern.entries() {
        out.push_str(&format!(
            "<circle cx='{}' cy='{}' r='2' fill='{}'/>\n",
            ax.px(e.angle_deg.unwrap_or(0.0)),
            ax.py(e.field_mt),
            moment_color(e.transition.dipole_moment / max_m)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Polyline plot of (x, y) samples.
pub fn line_svg(x: &[f64], y: &[f64], x_label: &str, y_label: &str, title: &str) -> String {
    let ax = Axes::new(x.iter().copied(), y.iter().copied());
    let mut out = svg_open();
    ax.frame(x_label, y_label, &mut out);
    out.push_str(&format!(
        "<text x='{}' y='16' font-size='13' text-anchor='middle'>{title}</text>\n",
        PLOT_W / 2.0
    ));
    let pts: Vec<String> =
        x.iter().zip(y).map(|(&a, &b)| format!("{},{}", ax.px(a), ax.py(b))).collect();
    out.push_str(&format!(
        "<polyline points='{}' fill='none' stroke='firebrick' stroke-width='1.5'/>\n",
        pts.join(" ")
    ));
    out.push_str("</svg>\n");
    out
}

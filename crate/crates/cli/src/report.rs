//! Machine-readable outputs: metric reports as `key: value` lines and
//! energy traces as two-column `iteration energy` records.

use std::fmt::Write as _;
use std::path::Path;

use flowinpaint::metrics::{FlowMetrics, ImageMetrics};

use crate::CliError;

pub fn render_image_metrics(m: &ImageMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mse_missing: {:e}", m.mse_missing);
    let _ = writeln!(s, "psnr_missing: {}", m.psnr_missing);
    let _ = writeln!(s, "mse_known: {:e}", m.mse_known);
    let _ = writeln!(s, "psnr_known: {}", m.psnr_known);
    let _ = writeln!(s, "mse_global: {:e}", m.mse_global);
    let _ = writeln!(s, "psnr_global: {}", m.psnr_global);
    let _ = writeln!(s, "max_abs_diff: {:e}", m.max_abs_diff);
    s
}

pub fn render_flow_metrics(m: &FlowMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mean_endpoint_error: {:e}", m.mean_endpoint_error);
    let _ = writeln!(s, "mean_angular_error_deg: {:e}", m.mean_angular_error_deg);
    s
}

pub fn render_trace(trace: &[f64]) -> String {
    let mut s = String::new();
    for (i, e) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i} {e:.12e}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_is_two_columns() {
        let text = render_trace(&[3.5, 2.25, 2.0]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for (i, line) in lines.iter().enumerate() {
            let mut parts = line.split_whitespace();
            assert_eq!(parts.next().unwrap(), i.to_string());
            parts.next().unwrap().parse::<f64>().unwrap();
            assert!(parts.next().is_none());
        }
    }

    #[test]
    fn metrics_render_one_key_per_line() {
        let m = ImageMetrics {
            mse_missing: 0.25,
            psnr_missing: 6.02,
            mse_known: 0.0,
            psnr_known: f64::INFINITY,
            mse_global: 0.125,
            psnr_global: 9.03,
            max_abs_diff: 0.5,
        };
        let text = render_image_metrics(&m);
        assert_eq!(text.lines().count(), 7);
        assert!(text.contains("psnr_known: inf"));
        for line in text.lines() {
            assert!(line.contains(": "));
        }
    }
}

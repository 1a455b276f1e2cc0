//! Report emission: CSV tables, a static SVG ratio plot, and the JSON-lines
//! run log.
//!
//! Everything written here is a pure function of the data it is given — no
//! timestamps, hostnames, or locale-dependent formatting — so rerunning an
//! experiment with the same configuration and seed reproduces every CSV and
//! SVG byte for byte.  The run log is the one exception: it records wall-clock
//! duration, which is why it is a separate file and not part of the
//! determinism contract.

use crate::bpre_infer::{ConfidenceInterval, TrajectoryWindow};
use crate::error::{LabError, Result};
use crate::mc_lab::{
    CoverageReport, EnvelopeFit, KolmogorovDistance, LnZTailCurve, LogRatioCurve, MdpDiagnostic,
    TailCurve, VarianceProbe,
};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Formats a real number with 17 significant digits, enough for exact
/// round-trips through text.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Formats a population size: exact integers print as integers, anything
/// else falls back to full precision.
fn format_population(z: f64) -> String {
    // 2^53 is the largest width at which every integer is representable.
    if z.fract() == 0.0 && z.abs() < 9.007_199_254_740_992e15 {
        format!("{z:.0}")
    } else {
        format_real(z)
    }
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Renders a header plus rows as CSV text ('.' decimal separator comes from
/// the float formatter; fields are quoted only when necessary).
pub fn render_csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let encoded: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&encoded.join(","));
        out.push('\n');
    }
    out
}

/// Writes a CSV file with the given header and rows.
pub fn emit_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    std::fs::write(path, render_csv(header, rows))?;
    Ok(())
}

/// Tail-curve table: one row per retained grid point.
pub fn emit_tail_csv(path: &Path, curve: &TailCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| {
            vec![
                format_real(p.x),
                p.count.to_string(),
                format_real(p.phat),
                format_real(p.wilson_lo),
                format_real(p.wilson_hi),
                format_real(p.ratio),
                p.log_ratio.map(format_real).unwrap_or_default(),
                format_real(p.envelope),
            ]
        })
        .collect();
    emit_csv(
        path,
        "x,count,phat,wilson_lo,wilson_hi,ratio,log_ratio,envelope",
        &rows,
    )
}

pub fn emit_envelope_fit_csv(path: &Path, fit: &EnvelopeFit) -> Result<()> {
    emit_csv(
        path,
        "c_fit,max_violation,usable_points",
        &[vec![
            format_real(fit.c_fit),
            format_real(fit.max_violation),
            fit.usable_points.to_string(),
        ]],
    )
}

pub fn emit_log_ratio_csv(path: &Path, curve: &LogRatioCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![format_real(p.x), format_real(p.quotient)])
        .collect();
    emit_csv(path, "x,quotient", &rows)
}

pub fn emit_mdp_csv(path: &Path, diag: &MdpDiagnostic) -> Result<()> {
    let rows: Vec<Vec<String>> = diag
        .points
        .iter()
        .map(|p| {
            vec![
                format_real(p.a),
                format_real(p.threshold),
                p.count.to_string(),
                format_real(p.phat),
                format_real(p.rate),
            ]
        })
        .collect();
    emit_csv(path, "a,threshold,count,phat,rate", &rows)
}

pub fn emit_ks_csv(path: &Path, ks: &KolmogorovDistance) -> Result<()> {
    emit_csv(
        path,
        "d,at,replications_used,degenerate",
        &[vec![
            format_real(ks.d),
            format_real(ks.at),
            ks.replications_used.to_string(),
            ks.degenerate.to_string(),
        ]],
    )
}

pub fn emit_probe_csv(path: &Path, probe: &VarianceProbe) -> Result<()> {
    let rows: Vec<Vec<String>> = probe
        .points
        .iter()
        .map(|p| vec![format_real(p.x), p.count.to_string(), format_real(p.phat)])
        .collect();
    emit_csv(path, "x,count,phat", &rows)
}

pub fn emit_exceedance_csv(path: &Path, curve: &LnZTailCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![format_real(p.x), p.count.to_string(), format_real(p.phat)])
        .collect();
    emit_csv(path, "x,count,phat", &rows)
}

/// Population trajectory as `generation,population` rows, readable by the
/// confidence-interval subcommand.
pub fn emit_trajectory_csv(path: &Path, populations: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = populations
        .iter()
        .enumerate()
        .map(|(generation, &z)| vec![generation.to_string(), format_population(z)])
        .collect();
    emit_csv(path, "generation,population", &rows)
}

pub fn emit_ci_csv(
    path: &Path,
    window: &TrajectoryWindow,
    mhat: f64,
    sigma_hat: f64,
    ci: &ConfidenceInterval,
) -> Result<()> {
    emit_csv(
        path,
        "n0,n,mhat,sigma_hat,level,lower,upper",
        &[vec![
            window.n0().to_string(),
            window.n().to_string(),
            format_real(mhat),
            format_real(sigma_hat),
            format_real(ci.level),
            format_real(ci.lower),
            format_real(ci.upper),
        ]],
    )
}

pub fn emit_coverage_csv(path: &Path, report: &CoverageReport) -> Result<()> {
    emit_csv(
        path,
        "level,coverage,lo,hi,R",
        &[vec![
            format_real(report.level),
            format_real(report.coverage),
            format_real(report.wilson_lo),
            format_real(report.wilson_hi),
            report.replications_used.to_string(),
        ]],
    )
}

/// SHA-256 of raw bytes as lowercase hex, used to key run-log entries to the
/// exact configuration file that produced them.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Appends one JSON object as a single line to the run log.
pub fn append_run_log(
    path: &Path,
    fields: &serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let line = serde_json::to_string(&serde_json::Value::Object(fields.clone()))
        .map_err(|e| LabError::Config(format!("cannot serialize run log entry: {e}")))?;
    writeln!(file, "{line}")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 45.0;
const MARGIN_BOTTOM: f64 = 55.0;

fn fmt_coord(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_label(v: f64) -> String {
    format!("{v:.3}")
}

struct PlotScale {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl PlotScale {
    fn sx(&self, x: f64) -> f64 {
        let w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * w
    }

    fn sy(&self, y: f64) -> f64 {
        let h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        // Clamp into the plot box so unbounded envelope values clip at the
        // border instead of distorting the scale.
        let y = y.clamp(self.y_lo, self.y_hi);
        MARGIN_TOP + (self.y_hi - y) / (self.y_hi - self.y_lo) * h
    }
}

fn polyline(scale: &PlotScale, series: &[(f64, f64)], class: &str, style: &str) -> String {
    let coords: Vec<String> = series
        .iter()
        .map(|&(x, y)| format!("{},{}", fmt_coord(scale.sx(x)), fmt_coord(scale.sy(y))))
        .collect();
    format!(
        "<polyline class=\"{class}\" fill=\"none\" {style} points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Renders the ratio plot for a tail curve: the empirical ratio to the
/// normal tail, its pointwise 95% Wilson band, and the theoretical envelope
/// `exp(+-bound)` around 1.  Pure function of the curve.
pub fn render_svg(curve: &TailCurve) -> Result<String> {
    if curve.points.is_empty() {
        return Err(LabError::Domain(
            "cannot plot a tail curve with no retained points".into(),
        ));
    }

    let ratio: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.x, p.ratio)).collect();
    let mut band_lo = Vec::with_capacity(curve.points.len());
    let mut band_hi = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        let reference = crate::gauss::phi_tail(p.x)?.value;
        band_lo.push((p.x, p.wilson_lo / reference));
        band_hi.push((p.x, p.wilson_hi / reference));
    }
    let env_hi: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.x, p.envelope.min(700.0).exp()))
        .collect();
    let env_lo: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.x, (-p.envelope).exp()))
        .collect();

    let mut x_lo = curve.points.first().expect("nonempty").x;
    let mut x_hi = curve.points.last().expect("nonempty").x;
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }

    // The vertical scale follows the data band (ratio and Wilson bounds) and
    // the reference level 1; the envelope is drawn clipped to that range.
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for series in [&ratio, &band_lo, &band_hi] {
        for &(_, y) in series.iter() {
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    y_lo = y_lo.min(1.0);
    y_hi = y_hi.max(1.0);
    let pad = 0.05 * (y_hi - y_lo).max(1e-6);
    let scale = PlotScale {
        x_lo,
        x_hi,
        y_lo: y_lo - pad,
        y_hi: y_hi + pad,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" fill=\"#000000\">\
         tail ratio: statistic {} | n = {} | R = {} | {} tail</text>\n",
        MARGIN_LEFT,
        curve.statistic,
        curve.n,
        curve.replications,
        match curve.tail {
            crate::mc_lab::TailSide::Upper => "upper",
            crate::mc_lab::TailSide::Lower => "lower",
        }
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = SVG_WIDTH - MARGIN_RIGHT;
    let y0 = SVG_HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#000000\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#000000\"/>\n"
    ));

    // X ticks at each grid point, y ticks at five even levels.
    for point in &curve.points {
        let sx = scale.sx(point.x);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{y0}\" x2=\"{0}\" y2=\"{1}\" stroke=\"#000000\"/>\n",
            fmt_coord(sx),
            fmt_coord(y0 + 5.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"#000000\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt_coord(sx),
            fmt_coord(y0 + 18.0),
            fmt_label(point.x)
        ));
    }
    for i in 0..=4 {
        let y = scale.y_lo + (scale.y_hi - scale.y_lo) * i as f64 / 4.0;
        let sy = scale.sy(y);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#000000\"/>\n",
            fmt_coord(x0 - 5.0),
            fmt_coord(sy),
            fmt_coord(x0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"#000000\" \
             text-anchor=\"end\">{}</text>\n",
            fmt_coord(x0 - 8.0),
            fmt_coord(sy + 4.0),
            fmt_label(y)
        ));
    }

    // Reference level ratio = 1.
    let ref_y = fmt_coord(scale.sy(1.0));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{ref_y}\" x2=\"{x1}\" y2=\"{ref_y}\" stroke=\"#999999\" \
         stroke-dasharray=\"4 3\"/>\n"
    ));

    svg.push_str(&polyline(
        &scale,
        &band_lo,
        "wilson-lo",
        "stroke=\"#7aa6d9\" stroke-width=\"1\"",
    ));
    svg.push_str(&polyline(
        &scale,
        &band_hi,
        "wilson-hi",
        "stroke=\"#7aa6d9\" stroke-width=\"1\"",
    ));
    svg.push_str(&polyline(
        &scale,
        &env_lo,
        "envelope-lo",
        "stroke=\"#c47f2a\" stroke-width=\"1\" stroke-dasharray=\"6 3\"",
    ));
    svg.push_str(&polyline(
        &scale,
        &env_hi,
        "envelope-hi",
        "stroke=\"#c47f2a\" stroke-width=\"1\" stroke-dasharray=\"6 3\"",
    ));
    svg.push_str(&polyline(
        &scale,
        &ratio,
        "ratio",
        "stroke=\"#1f4e9c\" stroke-width=\"2\"",
    ));

    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#000000\" \
         text-anchor=\"middle\">x</text>\n",
        fmt_coord((x0 + x1) / 2.0),
        fmt_coord(SVG_HEIGHT - 14.0)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"#000000\" \
         transform=\"rotate(-90 18 {0})\" text-anchor=\"middle\">tail ratio</text>\n",
        fmt_coord((y0 + y1) / 2.0)
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the ratio plot to a file.
pub fn emit_svg(curve: &TailCurve, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(curve)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpre_infer::read_trajectory_csv;
    use crate::mc_lab::{estimate_tail_curve, ExperimentConfig, ModelSpec, StatisticKind};
    use crate::models::IidModel;

    fn small_curve() -> TailCurve {
        let mut cfg = ExperimentConfig::new(
            ModelSpec::Iid(IidModel::rademacher()),
            StatisticKind::W,
            5,
            32,
            vec![0.0, 0.5, 1.0, 1.5],
            3,
        );
        cfg.enumerate = true;
        cfg.min_expected_hits = 0.0;
        estimate_tail_curve(&cfg).unwrap()
    }

    #[test]
    fn format_real_round_trips_exactly() {
        for &v in &[
            0.5,
            1.0 / 3.0,
            1e-300,
            12_345.678_9,
            -2.2250738585072014e-308,
            f64::MAX,
        ] {
            let parsed: f64 = format_real(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "value {v}");
        }
    }

    #[test]
    fn csv_fields_are_quoted_when_needed() {
        let text = render_csv(
            "a,b",
            &[vec!["plain".into(), "has,comma".into()]],
        );
        assert_eq!(text, "a,b\nplain,\"has,comma\"\n");
        let text = render_csv("a", &[vec!["say \"hi\"".into()]]);
        assert_eq!(text, "a\n\"say \"\"hi\"\"\"\n");
    }

    #[test]
    fn empty_record_list_yields_header_only() {
        let text = render_csv("x,count", &[]);
        assert_eq!(text, "x,count\n");
    }

    #[test]
    fn tail_csv_has_contracted_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tail.csv");
        let curve = small_curve();
        emit_tail_csv(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x,count,phat,wilson_lo,wilson_hi,ratio,log_ratio,envelope"
        );
        assert_eq!(lines.count(), curve.points.len());

        // Re-emitting produces identical bytes.
        let first = std::fs::read(&path).unwrap();
        emit_tail_csv(&path, &curve).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn coverage_csv_header_matches_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coverage.csv");
        let report = CoverageReport {
            level: 0.95,
            coverage: 0.948,
            hits: 948,
            replications_used: 1000,
            degenerate: 0,
            wilson_lo: 0.93,
            wilson_hi: 0.96,
        };
        emit_coverage_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("level,coverage,lo,hi,R\n"));
        assert!(text.trim_end().ends_with(",1000"));
    }

    #[test]
    fn trajectory_csv_round_trips_through_the_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        emit_trajectory_csv(&path, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("generation,population\n0,1\n1,2\n"));
        let loaded = read_trajectory_csv(&text).unwrap();
        assert_eq!(loaded.first_generation, 0);
        assert_eq!(loaded.populations, vec![1.0, 2.0, 4.0, 8.0]);

        // Very large approximate populations survive the round trip too.
        emit_trajectory_csv(&path, &[1.0, 2.5e60, 5.1e60]).unwrap();
        let loaded = read_trajectory_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(loaded.populations[1], 2.5e60);
    }

    #[test]
    fn svg_is_pure_and_has_one_polyline_per_series() {
        let curve = small_curve();
        let svg = render_svg(&curve).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 5);
        for class in ["ratio", "wilson-lo", "wilson-hi", "envelope-lo", "envelope-hi"] {
            assert!(svg.contains(&format!("class=\"{class}\"")), "missing {class}");
        }
        assert!(!svg.to_lowercase().contains("timestamp"));
        assert_eq!(svg, render_svg(&curve).unwrap());

        let mut empty = curve;
        empty.points.clear();
        assert!(render_svg(&empty).is_err());
    }

    #[test]
    fn run_log_appends_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut fields = serde_json::Map::new();
        fields.insert("subcommand".into(), "tail".into());
        fields.insert("seed".into(), 7u64.into());
        append_run_log(&path, &fields).unwrap();
        append_run_log(&path, &fields).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(value["subcommand"], "tail");
            assert_eq!(value["seed"], 7);
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256 of the empty string, a standard test vector.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}

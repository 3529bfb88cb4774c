//! CSV tables and SVG heatmaps. Output is byte-deterministic: floats use the
//! shortest round-trip representation and nothing depends on time or hashing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::marginal::StateMarginal;
use crate::mdp::Gridworld;
use crate::smm::IterationMetrics;

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Dimension(format!("row with {} fields, header has {}", row.len(), self.header.len())));
        }
        if let Some(bad) = row.iter().find(|f| f.contains([',', '\n', '"'])) {
            return Err(Error::Config(format!("CSV field '{bad}' needs quoting")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const METRIC_COLUMNS: [&str; 7] = [
    "iteration",
    "entropy_ha_nats",
    "kl_to_target_nats",
    "objective_nats",
    "mass_left",
    "mass_right",
    "entropy_iterate_nats",
];

pub fn metric_fields(m: &IterationMetrics) -> Vec<String> {
    vec![
        m.iteration.to_string(),
        fmt_f64(m.entropy_ha),
        fmt_f64(m.kl_to_target),
        fmt_f64(m.objective_value),
        fmt_f64(m.mass_left),
        fmt_f64(m.mass_right),
        fmt_f64(m.entropy_iterate),
    ]
}

pub fn metrics_table(metrics: &[IterationMetrics]) -> CsvTable {
    let mut table = CsvTable::new(&METRIC_COLUMNS);
    for m in metrics {
        table.push(metric_fields(m)).expect("fixed width");
    }
    table
}

/// Lower end of the heatmap's log-probability scale.
pub const LOG_PROB_FLOOR: f64 = -13.815510557964274; // ln(1e-6)

const CELL: i64 = 24;
const MARGIN: i64 = 12;
const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// Color for a position `t` in `[0, 1]` on a dark-to-bright ramp.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn scale_position(p: f64) -> f64 {
    let v = if p > 0.0 { p.ln().max(LOG_PROB_FLOOR) } else { LOG_PROB_FLOOR };
    (v - LOG_PROB_FLOOR) / -LOG_PROB_FLOOR
}

/// One rectangle per cell colored by `log p(s)` on `[ln 1e-6, 0]`, with a legend.
pub fn heatmap_svg(marginal: &StateMarginal, world: &Gridworld, title: &str) -> Result<String> {
    if marginal.num_states() != world.num_states() {
        return Err(Error::Dimension(format!(
            "marginal over {} states, layout has {}",
            marginal.num_states(),
            world.num_states()
        )));
    }
    let cells = world.cells();
    let r0 = cells.iter().map(|c| c.row).min().unwrap_or(0);
    let r1 = cells.iter().map(|c| c.row).max().unwrap_or(0);
    let c0 = cells.iter().map(|c| c.col).min().unwrap_or(0);
    let c1 = cells.iter().map(|c| c.col).max().unwrap_or(0);
    let grid_w = (c1 - c0 + 1) * CELL;
    let grid_h = (r1 - r0 + 1) * CELL;
    let legend_w = 200.max(grid_w);
    let width = legend_w + 2 * MARGIN;
    let top = 2 * MARGIN + 4;
    let legend_y = top + grid_h + MARGIN;
    let height = legend_y + 40;

    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#).unwrap();
    writeln!(out, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##).unwrap();
    writeln!(out, r#"<text x="{MARGIN}" y="{}" font-family="monospace" font-size="12">{}</text>"#, MARGIN + 6, escape(title)).unwrap();
    writeln!(out, r##"<rect x="{MARGIN}" y="{top}" width="{grid_w}" height="{grid_h}" fill="#bdbdbd"/>"##).unwrap();
    for (s, cell) in cells.iter().enumerate() {
        let p = marginal.probs()[s];
        writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>state {s} ({}, {}): {}</title></rect>"#,
            MARGIN + (cell.col - c0) * CELL,
            top + (cell.row - r0) * CELL,
            ramp(scale_position(p)),
            cell.row,
            cell.col,
            fmt_f64(p)
        )
        .unwrap();
    }
    let steps = 20;
    let step_w = legend_w / steps;
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        writeln!(
            out,
            r#"<rect x="{}" y="{legend_y}" width="{step_w}" height="12" fill="{}"/>"#,
            MARGIN + i * step_w,
            ramp(t)
        )
        .unwrap();
    }
    let label_y = legend_y + 26;
    writeln!(out, r#"<text x="{MARGIN}" y="{label_y}" font-family="monospace" font-size="10">p&lt;=1e-6</text>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{label_y}" font-family="monospace" font-size="10" text-anchor="middle">log p</text>"#,
        MARGIN + legend_w / 2
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{label_y}" font-family="monospace" font-size="10" text-anchor="end">p=1</text>"#,
        MARGIN + steps * step_w
    )
    .unwrap();
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_heatmap(marginal: &StateMarginal, world: &Gridworld, title: &str, path: &Path) -> Result<()> {
    write_text(path, &heatmap_svg(marginal, world, title)?)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

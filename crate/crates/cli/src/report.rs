//! Text artifacts: CSV tables and SVG heatmaps. Every writer here returns a
//! `String` so output is a pure function of its inputs.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use compactformer::bench::{AggregateRow, Heatmap, RunResult};
use compactformer::dynsys::Trajectory;
use compactformer::koopman::KoopEpoch;
use compactformer::Tensor;

pub const RESULTS_HEADER: &str = "signal,family,variant,patch,horizon,noise,rmse,mae,epochs,seed,wall_ms";
pub const AGGREGATE_HEADER: &str = "family,variant,patch,horizon,mean_rmse,mean_mae";
pub const BEST_HEADER: &str = "signal,family,variant,patch,horizon,noise,rmse,mae";
pub const LOSS_HEADER: &str = "epoch,mse,lyapunov,total,max_singular_value";

/// Six decimals, never `-0.000000`.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Losses span many decades, so they keep seven significant digits.
fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

pub fn signal_csv(values: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{t},{}", fixed6(*v));
    }
    out
}

pub fn results_csv(rows: &[RunResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.signal.name(),
            r.family,
            r.variant,
            r.patch,
            r.horizon,
            r.noise,
            fixed6(r.rmse),
            fixed6(r.mae),
            r.epochs,
            r.seed,
            r.wall_ms
        );
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<RunResult>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        anyhow::bail!("expected results header `{RESULTS_HEADER}`, found `{}`", header.join(","));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("results row {}", i + 1)))
        .collect()
}

/// One aggregate table per regime; `rows` must share the same noise flag.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let k = r.key;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            k.family,
            k.variant,
            k.patch,
            k.horizon,
            fixed6(r.mean_rmse),
            fixed6(r.mean_mae)
        );
    }
    out
}

pub fn best_csv(rows: &[RunResult]) -> String {
    let mut out = format!("{BEST_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.signal.name(),
            r.family,
            r.variant,
            r.patch,
            r.horizon,
            r.noise,
            fixed6(r.rmse),
            fixed6(r.mae)
        );
    }
    out
}

pub fn loss_csv(log: &[KoopEpoch]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            sci(e.mse),
            sci(e.lyapunov),
            sci(e.total),
            fixed6(e.max_singular_value)
        );
    }
    out
}

/// `epoch,max_singular_value,s1..sn`.
pub fn spectral_csv(log: &[KoopEpoch]) -> String {
    let n = log.first().map_or(0, |e| e.singular_values.len());
    let mut out = String::from("epoch,max_singular_value");
    for i in 1..=n {
        let _ = write!(out, ",s{i}");
    }
    out.push('\n');
    for e in log {
        let _ = write!(out, "{},{}", e.epoch, fixed6(e.max_singular_value));
        for s in &e.singular_values {
            let _ = write!(out, ",{}", fixed6(*s));
        }
        out.push('\n');
    }
    out
}

/// One row per `(window, step)`: forecast then truth for each state.
pub fn forecast_csv(forecast: &Tensor, truth: &Tensor) -> String {
    let &[n, h, d] = forecast.shape() else {
        panic!("forecast must be [N, H, d], got {:?}", forecast.shape());
    };
    assert_eq!(forecast.shape(), truth.shape(), "forecast and truth shapes differ");
    let mut out = String::from("window,step");
    for prefix in ["pred", "true"] {
        for i in 1..=d {
            let _ = write!(out, ",{prefix}_x{i}");
        }
    }
    out.push('\n');
    let (f, t) = (forecast.data(), truth.data());
    for w in 0..n {
        for s in 0..h {
            let base = (w * h + s) * d;
            let _ = write!(out, "{w},{}", s + 1);
            for src in [f, t] {
                for v in &src[base..base + d] {
                    let _ = write!(out, ",{}", fixed6(*v));
                }
            }
            out.push('\n');
        }
    }
    out
}

/// `t,x1,x2[,x3]`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.system.dim();
    let mut out = String::from("t");
    for i in 1..=d {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for i in 0..traj.len() {
        let _ = write!(out, "{}", fixed6(traj.time(i)));
        for v in traj.states.row(i) {
            let _ = write!(out, ",{}", fixed6(*v));
        }
        out.push('\n');
    }
    out
}

/// Color bounds of a set of heatmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub lo: f64,
    pub hi: f64,
}

impl ColorScale {
    pub fn of<'a>(maps: impl IntoIterator<Item = &'a Heatmap>) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in maps.into_iter().flat_map(|m| m.values.iter().flatten().flatten()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if lo > hi {
            Self { lo: 0.0, hi: 0.0 }
        } else {
            Self { lo, hi }
        }
    }

    fn position(&self, v: f64) -> f64 {
        if self.hi > self.lo {
            ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// A heatmap together with the color bounds it is drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapArtifact {
    pub heatmap: Heatmap,
    pub scale: ColorScale,
}

impl HeatmapArtifact {
    /// With `global`, every map shares the bounds of the whole set;
    /// otherwise each map spans its own range.
    pub fn build(maps: Vec<Heatmap>, global: bool) -> Vec<Self> {
        let shared = ColorScale::of(&maps);
        maps.into_iter()
            .map(|heatmap| {
                let scale = if global { shared } else { ColorScale::of([&heatmap]) };
                Self { heatmap, scale }
            })
            .collect()
    }

    pub fn file_stem(&self) -> String {
        let h = &self.heatmap;
        format!("heatmap_{}_{}_{}", regime(h.noise), h.family, h.variant)
    }

    pub fn to_svg(&self) -> String {
        heatmap_svg(&self.heatmap, self.scale)
    }
}

pub fn regime(noise: bool) -> &'static str {
    if noise {
        "noisy"
    } else {
        "clean"
    }
}

const LIGHT: [f64; 3] = [247.0, 251.0, 255.0];
const DARK: [f64; 3] = [8.0, 48.0, 107.0];

fn color(t: f64) -> String {
    let c: Vec<u8> = (0..3).map(|i| (LIGHT[i] + t * (DARK[i] - LIGHT[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

const CELL_W: usize = 72;
const CELL_H: usize = 40;
const LEFT: usize = 80;
const TOP: usize = 60;

/// Rows are patch lengths, columns horizons; each cell is labelled with
/// its mean RMSE.
pub fn heatmap_svg(h: &Heatmap, scale: ColorScale) -> String {
    let (rows, cols) = (h.patches.len(), h.horizons.len());
    let width = LEFT + cols * CELL_W + 20;
    let height = TOP + rows * CELL_H + 70;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="20" font-size="14">{} {} ({}) mean RMSE</text>"#,
        h.family,
        h.variant,
        regime(h.noise)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">horizon H</text>"#,
        LEFT + cols * CELL_W / 2,
        TOP - 22
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">patch P</text>"#,
        TOP + rows * CELL_H / 2,
        TOP + rows * CELL_H / 2
    );
    for (j, hz) in h.horizons.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{hz}</text>"#,
            LEFT + j * CELL_W + CELL_W / 2,
            TOP - 6
        );
    }
    for (i, p) in h.patches.iter().enumerate() {
        let y = TOP + i * CELL_H;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{p}</text>"#,
            LEFT - 8,
            y + CELL_H / 2 + 4
        );
        for (j, hz) in h.horizons.iter().enumerate() {
            let x = LEFT + j * CELL_W;
            let (fill, label, ink) = match h.values[i][j] {
                Some(v) => {
                    let t = scale.position(v);
                    (color(t), format!("{v:.4}"), if t > 0.5 { "#ffffff" } else { "#000000" })
                }
                None => ("#d9d9d9".to_string(), "n/a".to_string(), "#000000"),
            };
            let _ = writeln!(
                s,
                r##"<rect class="cell" data-patch="{p}" data-horizon="{hz}" x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{label}</text>"#,
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    let bar_y = TOP + rows * CELL_H + 20;
    let bar_w = cols * CELL_W;
    let _ = writeln!(s, r#"<defs><linearGradient id="scale"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#, color(0.0), color(1.0));
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{bar_y}" width="{bar_w}" height="12" fill="url(#scale)"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text class="scale-lo" x="{LEFT}" y="{}">{}</text>"#,
        bar_y + 28,
        fixed6(scale.lo)
    );
    let _ = writeln!(
        s,
        r#"<text class="scale-hi" x="{}" y="{}" text-anchor="end">{}</text>"#,
        LEFT + bar_w,
        bar_y + 28,
        fixed6(scale.hi)
    );
    s.push_str("</svg>\n");
    s
}

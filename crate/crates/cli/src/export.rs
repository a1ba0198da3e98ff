//! Sampled-subset export: PCB1 files, an x–y overlay drawing per shape, and
//! the overlap statistic between two samplers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;

use metasampler::geometry::{write_pcb, PointCloud};
use metasampler::models::{load_sampler, sampler_match, SamplerModel};
use serde::Serialize;

use crate::commands::Context;
use crate::{CliError, CliResult, ExportArgs};

const PANEL: f64 = 240.0;
const SCALE: f64 = 100.0;

/// Drawing colour of a sampler trained for `task`.
pub fn task_color(task: &str) -> &'static str {
    match task {
        "classification" => "#d62728",
        "reconstruction" => "#1f77b4",
        "retrieval" => "#2ca02c",
        "pose_regression" => "#ff7f0e",
        _ => "#9467bd",
    }
}

/// Fraction of `a`'s indices that `b` also picked.
pub fn overlap(a: &[usize], b: &[usize]) -> f64 {
    let b: BTreeSet<usize> = b.iter().copied().collect();
    a.iter().filter(|i| b.contains(i)).count() as f64 / a.len() as f64
}

pub struct Panel<'a> {
    pub label: &'a str,
    pub color: &'static str,
    pub picked: &'a [usize],
}

/// Orthographic x–y projection, one panel per sampler. Points are drawn
/// back to front (ascending z); picked points are larger and coloured.
pub fn overlay_svg(cloud: &PointCloud<f64>, panels: &[Panel]) -> String {
    let width = PANEL * panels.len().max(1) as f64;
    let height = PANEL + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| cloud.points()[a][2].total_cmp(&cloud.points()[b][2]).then(a.cmp(&b)));
    for (pi, panel) in panels.iter().enumerate() {
        let (cx, cy) = (PANEL * (pi as f64 + 0.5), 20.0 + PANEL / 2.0);
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="14" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            escape(panel.label)
        );
        let picked: BTreeSet<usize> = panel.picked.iter().copied().collect();
        for &i in &order {
            let p = cloud.points()[i];
            let (x, y) = (cx + p[0] * SCALE, cy - p[1] * SCALE);
            if picked.contains(&i) {
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{x:.2}" cy="{y:.2}" r="4.5" fill="{}" stroke="#222" stroke-width="0.6"/>"##,
                    panel.color
                );
            } else {
                let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="#b8b8b8"/>"##);
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Loaded {
    label: String,
    task: String,
    sampler: SamplerModel,
}

fn label_of(path: &str) -> String {
    let trimmed = path.trim_end_matches('/').trim_end_matches(".ckpt").trim_end_matches("/sampler");
    let trimmed = trimmed.strip_prefix("runs/").unwrap_or(trimmed);
    trimmed.replace('/', "-")
}

#[derive(Serialize)]
struct OverlapReport {
    a: String,
    b: String,
    n: usize,
    shapes: usize,
    mean: f64,
    /// Share of shapes on which the two subsets differ at all.
    fraction_below_one: f64,
    self_overlap: f64,
    per_shape: Vec<f64>,
}

pub fn export(ctx: &Context, a: &ExportArgs) -> CliResult<()> {
    let ds = ctx.load_data(&a.data)?;
    let mut loaded = Vec::new();
    for s in &a.sampler {
        let mut file = ctx.path(s);
        if file.is_dir() {
            file = file.join("sampler.ckpt");
        }
        if !file.is_file() {
            return Err(CliError::Input(format!("missing sampler checkpoint {}", file.display())));
        }
        let (sampler, manifest) = load_sampler(&file)?;
        if sampler.spec.m != ds.spec.m {
            return Err(CliError::Input(format!("{s} expects {} points, dataset has {}", sampler.spec.m, ds.spec.m)));
        }
        let task = manifest.metadata.get("task").and_then(|t| t.as_str()).unwrap_or("unknown").to_string();
        loaded.push(Loaded { label: label_of(s), task, sampler });
    }
    let test = &ds.test;
    let count = a.shapes.min(test.len());
    let out = ctx.path(format!("export/{}", a.name));
    fs::create_dir_all(&out)?;
    for k in 0..count {
        let idx = k * test.len() / count.max(1);
        let cloud = &test[idx].cloud;
        let dir = out.join(format!("shape{idx:04}"));
        fs::create_dir_all(&dir)?;
        let mut buf = Vec::new();
        write_pcb(&mut buf, cloud)?;
        fs::write(dir.join("input.pcb"), buf)?;
        let picks = loaded.iter().map(|l| sampler_match(&l.sampler, cloud)).collect::<Result<Vec<_>, _>>()?;
        for (l, pick) in loaded.iter().zip(&picks) {
            let mut buf = Vec::new();
            write_pcb(&mut buf, &cloud.select(pick)?)?;
            fs::write(dir.join(format!("{}.pcb", l.label)), buf)?;
        }
        let panels: Vec<Panel> = loaded
            .iter()
            .zip(&picks)
            .map(|(l, p)| Panel { label: &l.label, color: task_color(&l.task), picked: p })
            .collect();
        fs::write(dir.join("overlay.svg"), overlay_svg(cloud, &panels))?;
    }
    println!("exported {count} shapes x {} samplers to {}", loaded.len(), out.display());

    let pair = match &a.overlap {
        Some(p) if p.len() == 2 => Some((p[0], p[1])),
        Some(p) => return Err(CliError::Input(format!("--overlap takes two positions, got {}", p.len()))),
        None if loaded.len() >= 2 => Some((0, 1)),
        None => None,
    };
    if let Some((i, j)) = pair {
        if i >= loaded.len() || j >= loaded.len() || loaded[i].sampler.spec.n != loaded[j].sampler.spec.n {
            return Err(CliError::Input(format!("--overlap {i},{j} does not name two samplers of equal size")));
        }
        let mut per_shape = Vec::with_capacity(test.len());
        let mut self_overlap = 1.0f64;
        for s in test {
            let pa = sampler_match(&loaded[i].sampler, &s.cloud)?;
            let pb = sampler_match(&loaded[j].sampler, &s.cloud)?;
            per_shape.push(overlap(&pa, &pb));
            self_overlap = self_overlap.min(overlap(&pa, &pa));
        }
        let report = OverlapReport {
            a: loaded[i].label.clone(),
            b: loaded[j].label.clone(),
            n: loaded[i].sampler.spec.n,
            shapes: per_shape.len(),
            mean: per_shape.iter().sum::<f64>() / per_shape.len() as f64,
            fraction_below_one: per_shape.iter().filter(|&&v| v < 1.0).count() as f64 / per_shape.len() as f64,
            self_overlap,
            per_shape,
        };
        fs::write(out.join("overlap.json"), serde_json::to_string_pretty(&report)?)?;
        println!(
            "overlap {} vs {}: mean {:.3}, subsets differ on {:.1}% of {} test shapes",
            report.a,
            report.b,
            report.mean,
            100.0 * report.fraction_below_one,
            report.shapes
        );
    }
    Ok(())
}

//! Result aggregation and report emission: CSV tables and static SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evalmetrics::{nested_mean, summarize, MetricError};
use crate::geom::{ClassMap, SemanticClass};

/// Raw benchmark output, written alongside the aggregated tables so reports
/// can be regenerated without rerunning the pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawResults {
    pub scenes: Vec<SceneRaw>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRaw {
    pub seed: u64,
    pub scene: String,
    pub chamfer_m: ClassMap<Option<f64>>,
    pub scale_err_pct: ClassMap<Option<f64>>,
    pub loc: Vec<LocSample>,
    pub completion: Vec<CompletionSample>,
}

/// Per-perturbation errors of one (alpha, method, frame) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocSample {
    pub alpha: f64,
    pub method: String,
    pub frame: u64,
    pub trans_errs_m: Vec<f64>,
    pub head_errs_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionSample {
    pub frame: u64,
    pub pose_only_pct: ClassMap<Option<f64>>,
    pub full_pct: ClassMap<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocRow {
    pub alpha: f64,
    pub method: String,
    pub trans_err_m: f64,
    pub head_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapQualityRow {
    pub class: SemanticClass,
    pub n: usize,
    pub chamfer_mean: f64,
    pub chamfer_median: f64,
    pub chamfer_p90: f64,
    pub scale_mean: f64,
    pub scale_median: f64,
    pub scale_p90: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRow {
    pub class: SemanticClass,
    pub pose_only_pct: f64,
    pub full_pct: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Aggregates {
    pub loc_rows: Vec<LocRow>,
    pub map_rows: Vec<MapQualityRow>,
    pub completion_rows: Vec<CompletionRow>,
}

/// Aggregates raw results with the benchmark nesting: per-frame means over
/// perturbations first, then the mean over frames (pooled across scenes).
pub fn aggregate(raw: &RawResults) -> Result<Aggregates, MetricError> {
    // Localization table rows, keyed by (alpha, method) in first-seen order.
    let mut keys: Vec<(f64, String)> = Vec::new();
    for scene in &raw.scenes {
        for s in &scene.loc {
            if !keys.iter().any(|(a, m)| *a == s.alpha && *m == s.method) {
                keys.push((s.alpha, s.method.clone()));
            }
        }
    }
    keys.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut loc_rows = Vec::new();
    for (alpha, method) in keys {
        let mut trans: Vec<Vec<f64>> = Vec::new();
        let mut head: Vec<Vec<f64>> = Vec::new();
        for scene in &raw.scenes {
            for s in &scene.loc {
                if s.alpha == alpha && s.method == method {
                    trans.push(s.trans_errs_m.clone());
                    head.push(s.head_errs_deg.clone());
                }
            }
        }
        loc_rows.push(LocRow {
            alpha,
            method,
            trans_err_m: nested_mean(&trans)?,
            head_err_deg: nested_mean(&head)?,
        });
    }

    // Map-quality rows: one sample per scene per class.
    let mut map_rows = Vec::new();
    for class in SemanticClass::ALL {
        let chamfer: Vec<f64> =
            raw.scenes.iter().filter_map(|s| *s.chamfer_m.get(class)).collect();
        let scale: Vec<f64> =
            raw.scenes.iter().filter_map(|s| *s.scale_err_pct.get(class)).collect();
        if chamfer.is_empty() || scale.is_empty() {
            continue;
        }
        let c = summarize(&chamfer)?;
        let s = summarize(&scale)?;
        map_rows.push(MapQualityRow {
            class,
            n: c.n.min(s.n),
            chamfer_mean: c.mean,
            chamfer_median: c.median,
            chamfer_p90: c.p90,
            scale_mean: s.mean,
            scale_median: s.median,
            scale_p90: s.p90,
        });
    }

    // Completion rows: mean over frames of all scenes.
    let mut completion_rows = Vec::new();
    for class in SemanticClass::ALL {
        let mut pose_only = Vec::new();
        let mut full = Vec::new();
        for scene in &raw.scenes {
            for c in &scene.completion {
                if let (Some(p), Some(f)) = (c.pose_only_pct.get(class), c.full_pct.get(class)) {
                    pose_only.push(*p);
                    full.push(*f);
                }
            }
        }
        if pose_only.is_empty() {
            continue;
        }
        completion_rows.push(CompletionRow {
            class,
            pose_only_pct: pose_only.iter().sum::<f64>() / pose_only.len() as f64,
            full_pct: full.iter().sum::<f64>() / full.len() as f64,
        });
    }

    Ok(Aggregates { loc_rows, map_rows, completion_rows })
}

fn write_file(path: &Path, data: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, data)
}

pub fn write_loc_errors_csv(path: &Path, rows: &[LocRow]) -> std::io::Result<()> {
    let mut out = String::from("alpha,method,trans_err_m,head_err_deg\n");
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.6}", r.alpha, r.method, r.trans_err_m, r.head_err_deg)
            .unwrap();
    }
    write_file(path, &out)
}

pub fn write_map_quality_csv(path: &Path, rows: &[MapQualityRow]) -> std::io::Result<()> {
    let mut out = String::from(
        "class,n,chamfer_mean_m,chamfer_median_m,chamfer_p90_m,scale_mean_pct,scale_median_pct,scale_p90_pct\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.class.name(),
            r.n,
            r.chamfer_mean,
            r.chamfer_median,
            r.chamfer_p90,
            r.scale_mean,
            r.scale_median,
            r.scale_p90
        )
        .unwrap();
    }
    write_file(path, &out)
}

pub fn write_completion_csv(path: &Path, rows: &[CompletionRow]) -> std::io::Result<()> {
    let mut out = String::from("class,pose_only_pct,full_pct,improvement_pct\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.class.name(),
            r.pose_only_pct,
            r.full_pct,
            r.full_pct - r.pose_only_pct
        )
        .unwrap();
    }
    write_file(path, &out)
}

const CHART_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A minimal line chart: one polyline per series over shared x values.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 160.0, 50.0, 60.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;

    let xs: Vec<f64> = series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)).collect();
    let (x0, x1) = bounds(&xs);
    let (_, y1) = bounds(&ys);
    let y0 = 0.0;
    let y1 = if y1 <= y0 { 1.0 } else { y1 * 1.05 };

    let px = |x: f64| ml + (x - x0) / (x1 - x0).max(1e-12) * pw;
    let py = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        w / 2.0
    )
    .unwrap();
    // Axes.
    writeln!(
        s,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        mt + ph,
        ml + pw,
        mt + ph
    )
    .unwrap();
    writeln!(s, "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>", mt + ph)
        .unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        ml + pw / 2.0,
        h - 16.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>",
        mt + ph / 2.0,
        mt + ph / 2.0
    )
    .unwrap();
    // Y ticks.
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let yy = py(y);
        writeln!(s, "<line x1=\"{}\" y1=\"{yy}\" x2=\"{ml}\" y2=\"{yy}\" stroke=\"black\"/>", ml - 5.0)
            .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{y:.2}</text>",
            ml - 8.0,
            yy + 4.0
        )
        .unwrap();
    }
    // Series.
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = CHART_COLORS[i % CHART_COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        )
        .unwrap();
        for (x, y) in pts {
            writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(*x),
                py(*y)
            )
            .unwrap();
            writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{y:.2}</text>",
                px(*x),
                py(*y) - 6.0
            )
            .unwrap();
        }
        // X tick labels from the first series only.
        if i == 0 {
            for (x, _) in pts {
                writeln!(
                    s,
                    "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x}</text>",
                    px(*x),
                    mt + ph + 18.0
                )
                .unwrap();
            }
        }
        let ly = mt + 16.0 * i as f64;
        writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            w - mr + 12.0,
            ly
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>",
            w - mr + 30.0,
            ly + 10.0
        )
        .unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}

/// Grouped bar chart for the completion table.
pub fn svg_completion_bars(rows: &[CompletionRow]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mt, mb) = (70.0, 50.0, 70.0);
    let pw = w - ml - 40.0;
    let ph = h - mt - mb;
    let py = |v: f64| mt + ph - v / 100.0 * ph;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">Completion rate: pose-only vs full pipeline</text>",
        w / 2.0
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        mt + ph,
        ml + pw,
        mt + ph
    )
    .unwrap();
    for k in 0..=5 {
        let v = 20.0 * k as f64;
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.0}%</text>",
            ml - 8.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    let group_w = pw / rows.len().max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        let x0 = ml + group_w * i as f64 + group_w * 0.15;
        let bw = group_w * 0.3;
        for (j, (v, color)) in
            [(r.pose_only_pct, "#9e9e9e"), (r.full_pct, "#2ca02c")].iter().enumerate()
        {
            let x = x0 + bw * j as f64;
            writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                py(*v),
                mt + ph - py(*v)
            )
            .unwrap();
            writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.1}</text>",
                x + bw / 2.0,
                py(*v) - 4.0
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            x0 + bw,
            mt + ph + 20.0,
            r.class.name()
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{ml}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">gray: pose-only, green: full pipeline</text>",
        h - 20.0
    )
    .unwrap();
    writeln!(s, "</svg>").unwrap();
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Writes every table and chart of a report into `out_dir`.
pub fn write_report(out_dir: &Path, agg: &Aggregates) -> std::io::Result<()> {
    write_loc_errors_csv(&out_dir.join("loc_errors.csv"), &agg.loc_rows)?;
    write_map_quality_csv(&out_dir.join("map_quality.csv"), &agg.map_rows)?;
    write_completion_csv(&out_dir.join("completion.csv"), &agg.completion_rows)?;

    let methods: Vec<String> = {
        let mut m: Vec<String> = Vec::new();
        for r in &agg.loc_rows {
            if !m.contains(&r.method) {
                m.push(r.method.clone());
            }
        }
        m
    };
    let series_of = |select: &dyn Fn(&LocRow) -> f64| -> Vec<(String, Vec<(f64, f64)>)> {
        methods
            .iter()
            .map(|m| {
                let pts: Vec<(f64, f64)> = agg
                    .loc_rows
                    .iter()
                    .filter(|r| &r.method == m)
                    .map(|r| (r.alpha, select(r)))
                    .collect();
                (m.clone(), pts)
            })
            .collect()
    };
    write_file(
        &out_dir.join("loc_errors_translation.svg"),
        &svg_line_chart(
            "Translation error vs noise scale",
            "alpha",
            "translation error (m)",
            &series_of(&|r| r.trans_err_m),
        ),
    )?;
    write_file(
        &out_dir.join("loc_errors_heading.svg"),
        &svg_line_chart(
            "Heading error vs noise scale",
            "alpha",
            "heading error (deg)",
            &series_of(&|r| r.head_err_deg),
        ),
    )?;
    write_file(&out_dir.join("completion.svg"), &svg_completion_bars(&agg.completion_rows))?;
    Ok(())
}

pub fn write_raw(out_dir: &Path, raw: &RawResults) -> std::io::Result<()> {
    let mut s = serde_json::to_string_pretty(raw).expect("serializable");
    s.push('\n');
    write_file(&out_dir.join("results_raw.json"), &s)
}

pub fn read_raw(path: &Path) -> Result<RawResults, String> {
    let data = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&data).map_err(|e| format!("{}: {e}", path.display()))
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use fsvar::metrics::{mean_sd, read_records_csv, BenchmarkRecord};
use fsvar::tsdata::format_sig15;

use crate::config::{merge, Common};
use crate::output::Staging;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Records CSV written by `benchmark`.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

/// Mean and sd of one metric in one (N, method) cell.
type Stat = Option<(f64, f64)>;

struct Cell {
    count: usize,
    failed: usize,
    accuracy: Stat,
    skf_accuracy: Stat,
    frob: Vec<Stat>,
}

fn summarize(records: &[&BenchmarkRecord], k: usize) -> Cell {
    let ok: Vec<&&BenchmarkRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let stat = |f: &dyn Fn(&BenchmarkRecord) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        mean_sd(&v)
    };
    Cell {
        count: ok.len(),
        failed: records.len() - ok.len(),
        accuracy: stat(&|r| r.state_accuracy),
        skf_accuracy: stat(&|r| r.skf_accuracy),
        frob: (0..k)
            .map(|j| stat(&|r| r.frob_sq_error.get(j).copied()))
            .collect(),
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>,
}

const COLORS: [&str; 6] = [
    "#1b6ca8", "#d1495b", "#2e8b57", "#edae49", "#6a4c93", "#444444",
];

/// Line chart with error bars (mean +/- sd).
fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, m, sd) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{b}" stroke="black"/>"#,
        b = h - bottom,
        r = w - right
    );
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(y) + 4.0,
            format_tick(y)
        );
    }
    let xs: BTreeSet<i64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0 as i64))
        .collect();
    for x in xs {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            sx(x as f64),
            h - bottom + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">N</text>"#,
        (left + w - right) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, m, _)| format!("{:.1},{:.1}", sx(x), sy(m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, m, sd) in &ser.points {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="{c}"/>"#,
                sy(m - sd),
                sy(m + sd),
                sy(m),
                x = sx(x)
            );
        }
        let ly = top + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            w - right + 12.0,
            w - right + 32.0,
            w - right + 38.0,
            ly + 4.0,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn cell_text(s: Stat) -> [String; 2] {
    match s {
        Some((m, sd)) => [format_sig15(m), format_sig15(sd)],
        None => [String::new(), String::new()],
    }
}

/// Writes `summary.csv`, `accuracy.svg` and one `frob_regime{j}.svg` per
/// regime.
pub fn run(args: ReportArgs) -> CliResult<()> {
    let config = args.common.config.clone();
    let args = merge(args, config.as_ref())?;
    let path = args
        .records
        .clone()
        .ok_or_else(|| CliError::Usage("--records is required".into()))?;
    let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let records = read_records_csv(file)?;
    let k = records
        .iter()
        .map(|r| r.frob_sq_error.len())
        .max()
        .unwrap_or(0);

    let ns: BTreeSet<usize> = records.iter().map(|r| r.n).collect();
    let mut methods: Vec<String> = Vec::new();
    for r in &records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut groups: BTreeMap<(usize, usize), Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in &records {
        let mi = methods
            .iter()
            .position(|m| *m == r.method)
            .expect("method listed");
        groups.entry((r.n, mi)).or_default().push(r);
    }

    let mut table = String::new();
    let mut header = vec!["n", "method", "count", "failed"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for m in ["state_accuracy", "skf_accuracy"] {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    for j in 1..=k {
        header.push(format!("frob_sq_error_{j}_mean"));
        header.push(format!("frob_sq_error_{j}_sd"));
    }
    let _ = writeln!(table, "{}", header.join(","));
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    for &n in &ns {
        for (mi, method) in methods.iter().enumerate() {
            let mut row = vec![n.to_string(), method.clone()];
            match groups.get(&(n, mi)) {
                Some(recs) => {
                    let cell = summarize(recs, k);
                    row.push(cell.count.to_string());
                    row.push(cell.failed.to_string());
                    row.extend(cell_text(cell.accuracy));
                    row.extend(cell_text(cell.skf_accuracy));
                    for s in &cell.frob {
                        row.extend(cell_text(*s));
                    }
                    cells.insert((n, mi), cell);
                }
                None => row.extend(std::iter::repeat_n(String::new(), header.len() - 2)),
            }
            let _ = writeln!(table, "{}", row.join(","));
        }
    }

    let series_of = |mi: usize, label: String, pick: &dyn Fn(&Cell) -> Stat| Series {
        label,
        points: ns
            .iter()
            .filter_map(|&n| {
                let c = cells.get(&(n, mi))?;
                pick(c).map(|(m, sd)| (n as f64, m, sd))
            })
            .collect(),
    };
    let mut acc_series = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let label = if m.starts_with("fsvar") {
            format!("{m} (SKS)")
        } else {
            m.clone()
        };
        acc_series.push(series_of(mi, label, &|c| c.accuracy));
    }
    if let Some(mi) = methods.iter().position(|m| m.starts_with("fsvar")) {
        acc_series.push(series_of(mi, "fsvar (SKF)".into(), &|c| c.skf_accuracy));
    }
    acc_series.retain(|s| !s.points.is_empty());

    let mut out = Staging::new(&args.common.out_dir())?;
    out.write("summary.csv", |w| w.write_all(table.as_bytes()))?;
    let svg = line_chart("State classification accuracy", "accuracy", &acc_series);
    out.write("accuracy.svg", |w| w.write_all(svg.as_bytes()))?;
    for j in 0..k {
        let series: Vec<Series> = methods
            .iter()
            .enumerate()
            .map(|(mi, m)| series_of(mi, m.clone(), &|c| c.frob[j]))
            .filter(|s| !s.points.is_empty())
            .collect();
        let svg = line_chart(
            &format!("Squared Frobenius error, regime {}", j + 1),
            "squared error",
            &series,
        );
        out.write(&format!("frob_regime{}.svg", j + 1), |w| {
            w.write_all(svg.as_bytes())
        })?;
    }
    for path in out.commit()? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

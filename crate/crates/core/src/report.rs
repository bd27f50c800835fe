//! Markdown report and static PNG plots assembled from a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde_json::Value;

use crate::analysis::metrics::REFERENCE_KS_D;
use crate::embedding::{reference_tar_rows, REFERENCE_RANK1, REFERENCE_RANK1_AUGMENTED};
use crate::error::{Error, Result};
use crate::pipeline::{REFERENCE_IDS, REFERENCE_IMPS};

pub const REPORT_FILE: &str = "report.md";
pub const PLOT_DIR: &str = "plots";

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const MARGIN: u32 = 40;
const BLUE: [u8; 3] = [31, 119, 180];
const ORANGE: [u8; 3] = [255, 127, 14];
const GREEN: [u8; 3] = [44, 160, 44];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub path: PathBuf,
    pub sections: Vec<String>,
    pub missing: Vec<String>,
    pub plots: Vec<PathBuf>,
}

/// Parsed comma-separated table with its original cell strings.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::InvalidValue("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::InvalidValue(format!(
                    "CSV row {} has {} fields, header has {}",
                    k + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidValue(format!("CSV lacks column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[k].parse::<f64>()
                    .map_err(|_| Error::InvalidValue(format!("non-numeric {name} value {:?}", r[k])))
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }
}

/// Cells of every table row in a Markdown document, in order.
pub fn markdown_table_rows(markdown: &str) -> Vec<Vec<String>> {
    markdown
        .lines()
        .filter(|l| l.starts_with("| "))
        .map(|l| {
            l.trim_start_matches("| ")
                .trim_end_matches(" |")
                .split(" | ")
                .map(str::to_string)
                .collect()
        })
        .collect()
}

struct Canvas {
    img: RgbImage,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
        let grey = Rgb([220, 220, 220]);
        for k in 0..=4 {
            let gx = MARGIN + k * (PLOT_W - 2 * MARGIN) / 4;
            let gy = MARGIN + k * (PLOT_H - 2 * MARGIN) / 4;
            for t in MARGIN..=PLOT_H - MARGIN {
                img.put_pixel(gx, t, grey);
            }
            for t in MARGIN..=PLOT_W - MARGIN {
                img.put_pixel(t, gy, grey);
            }
        }
        for t in MARGIN..=PLOT_W - MARGIN {
            img.put_pixel(t, PLOT_H - MARGIN, Rgb([0, 0, 0]));
        }
        for t in MARGIN..=PLOT_H - MARGIN {
            img.put_pixel(MARGIN, t, Rgb([0, 0, 0]));
        }
        let span = |r: (f64, f64)| if r.1 > r.0 { r } else { (r.0 - 0.5, r.0 + 0.5) };
        Self {
            img,
            x: span(x),
            y: span(y),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = (PLOT_W - 2 * MARGIN) as f64;
        let h = (PLOT_H - 2 * MARGIN) as f64;
        (
            MARGIN as f64 + (x - self.x.0) / (self.x.1 - self.x.0) * w,
            (PLOT_H - MARGIN) as f64 - (y - self.y.0) / (self.y.1 - self.y.0) * h,
        )
    }

    fn dot(&mut self, x: f64, y: f64, c: [u8; 3]) {
        if x >= 0.0 && y >= 0.0 && (x as u32) < PLOT_W && (y as u32) < PLOT_H {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
        let (p, q) = (self.px(a.0, a.1), self.px(b.0, b.1));
        let n = ((q.0 - p.0).abs().max((q.1 - p.1).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let (x, y) = (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1));
            self.dot(x, y, c);
            self.dot(x, y + 1.0, c);
        }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], c: [u8; 3]) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c);
        }
        if let [p] = pts {
            let q = self.px(p.0, p.1);
            self.dot(q.0, q.1, c);
        }
    }

    fn bar(&mut self, x0: f64, x1: f64, y: f64, c: [u8; 3], solid: bool) {
        let (a, top) = self.px(x0, y);
        let (b, base) = self.px(x1, self.y.0);
        let (a, b) = (a.round() as i64, (b.round() as i64 - 1).max(a.round() as i64));
        for xi in a..=b {
            for yi in top.round() as i64..=base.round() as i64 {
                let edge = xi == a || xi == b || yi == top.round() as i64;
                if solid || edge {
                    self.dot(xi as f64, yi as f64, c);
                }
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path)?;
        Ok(())
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Bar plot of one or more histograms sharing bin edges (`lo,hi,count` CSVs).
/// Counts are normalised to frequencies so differently sized sets overlay.
pub fn plot_histograms(tables: &[&CsvTable], path: &Path) -> Result<()> {
    let colours = [BLUE, ORANGE, GREEN];
    let mut series = Vec::new();
    for t in tables {
        let (lo, hi, count) = (t.column("lo")?, t.column("hi")?, t.column("count")?);
        let total: f64 = count.iter().sum::<f64>().max(1.0);
        series.push((lo, hi, count.iter().map(|c| c / total).collect::<Vec<_>>()));
    }
    let x = range(series.iter().flat_map(|(lo, hi, _)| lo.iter().chain(hi).copied()));
    let y_hi = range(series.iter().flat_map(|(_, _, f)| f.iter().copied())).1.max(1e-9);
    let mut c = Canvas::new(x, (0.0, y_hi * 1.05));
    for (k, (lo, hi, f)) in series.iter().enumerate() {
        for i in 0..f.len() {
            c.bar(lo[i], hi[i], f[i], colours[k % 3], tables.len() == 1);
        }
    }
    c.save(path)
}

/// Step plots of one or more ECDFs (`score,cdf` CSVs).
pub fn plot_ecdfs(tables: &[&CsvTable], path: &Path) -> Result<()> {
    let colours = [BLUE, ORANGE, GREEN];
    let mut series = Vec::new();
    for t in tables {
        let (x, f) = (t.column("score")?, t.column("cdf")?);
        let mut pts = Vec::with_capacity(2 * x.len());
        let mut prev = 0.0;
        for (xi, fi) in x.iter().zip(&f) {
            pts.push((*xi, prev));
            pts.push((*xi, *fi));
            prev = *fi;
        }
        series.push(pts);
    }
    let x = range(series.iter().flatten().map(|p| p.0));
    let mut c = Canvas::new(x, (0.0, 1.0));
    for (k, pts) in series.iter().enumerate() {
        c.polyline(pts, colours[k % 3]);
    }
    c.save(path)
}

/// Identification rate (%) against rank (`rank,rate` CSV).
pub fn plot_cmc(table: &CsvTable, path: &Path) -> Result<()> {
    let (r, v) = (table.column("rank")?, table.column("rate")?);
    let pts: Vec<(f64, f64)> = r.into_iter().zip(v).collect();
    let x = range(pts.iter().map(|p| p.0));
    let mut c = Canvas::new(x, (0.0, 100.0));
    c.polyline(&pts, BLUE);
    for p in &pts {
        let q = c.px(p.0, p.1);
        for dx in -2..=2 {
            for dy in -2..=2 {
                c.dot(q.0 + dx as f64, q.1 + dy as f64, BLUE);
            }
        }
    }
    c.save(path)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn json_field(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(x) => x.to_string(),
        None => "n/a".into(),
    }
}

fn sorted_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for e in entries {
        let e = e.map_err(|err| Error::io(dir, err))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix(prefix).and_then(|n| n.strip_suffix(suffix)) {
            out.push((stem.to_string(), e.path()));
        }
    }
    out.sort();
    Ok(out)
}

struct Builder {
    md: String,
    sections: Vec<String>,
    missing: Vec<String>,
    plots: Vec<PathBuf>,
    plot_dir: PathBuf,
}

impl Builder {
    fn section(&mut self, title: &str) {
        self.sections.push(title.to_string());
        let _ = write!(self.md, "\n## {title}\n\n");
    }

    fn plot(&mut self, name: &str, caption: &str, draw: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        std::fs::create_dir_all(&self.plot_dir).map_err(|e| Error::io(&self.plot_dir, e))?;
        let path = self.plot_dir.join(format!("{name}.png"));
        draw(&path)?;
        let _ = writeln!(self.md, "![{caption}]({PLOT_DIR}/{name}.png)\n");
        self.plots.push(path);
        Ok(())
    }
}

/// Writes `report.md` and `plots/*.png` for the outputs found in `run_dir`.
pub fn emit_report(run_dir: &Path) -> Result<ReportSummary> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut b = Builder {
        md: String::from("# fplab run report\n"),
        sections: Vec::new(),
        missing: Vec::new(),
        plots: Vec::new(),
        plot_dir: run_dir.join(PLOT_DIR),
    };
    let _ = writeln!(
        b.md,
        "\nRows labelled `reference` restate published values for context. They were not measured in this run."
    );

    let metrics = run_dir.join("metrics.csv");
    if metrics.is_file() {
        let t = CsvTable::read(&metrics)?;
        b.section("Dataset metrics");
        b.md.push_str(&t.to_markdown());
    } else {
        b.missing.push("metrics.csv".into());
    }

    let dists: Vec<(String, PathBuf)> = sorted_files(run_dir, "dist_", ".csv")?;
    if dists.is_empty() {
        b.missing.push("dist_*.csv".into());
    } else {
        b.section("Score distributions");
        let mut hists = Vec::new();
        let mut ecdfs = Vec::new();
        for (label, path) in &dists {
            let hist = CsvTable::read(path)?;
            let _ = writeln!(b.md, "### {label}\n");
            let meta = run_dir.join(format!("dist_{label}.json"));
            if meta.is_file() {
                let v = read_json(&meta)?;
                let _ = writeln!(
                    b.md,
                    "| field | value |\n|---|---|\n| mode | {} |\n| pairs | {} |\n| candidate_pairs | {} |\n| median | {} |\n| seed | {} |\n",
                    json_field(&v, "mode"),
                    json_field(&v, "pairs"),
                    json_field(&v, "candidate_pairs"),
                    json_field(&v, "median"),
                    json_field(&v, "seed"),
                );
            }
            b.plot(&format!("dist_{label}_hist"), &format!("{label} histogram"), |p| {
                plot_histograms(&[&hist], p)
            })?;
            let ecdf_path = run_dir.join(format!("ecdf_{label}.csv"));
            if ecdf_path.is_file() {
                let ecdf = CsvTable::read(&ecdf_path)?;
                b.plot(&format!("dist_{label}_ecdf"), &format!("{label} ECDF"), |p| {
                    plot_ecdfs(&[&ecdf], p)
                })?;
                ecdfs.push((label.clone(), ecdf));
            } else {
                b.missing.push(format!("ecdf_{label}.csv"));
            }
            hists.push((label.clone(), hist));
        }
        let find = |v: &[(String, CsvTable)], l: &str| v.iter().find(|(k, _)| k == l).map(|(_, t)| t.clone());
        if let (Some(g), Some(i)) = (find(&hists, "genuine"), find(&hists, "imposter")) {
            let _ = writeln!(b.md, "### genuine and imposter\n\nBlue: genuine. Orange: imposter.\n");
            b.plot("genuine_imposter_hist", "genuine and imposter histograms", |p| {
                plot_histograms(&[&g, &i], p)
            })?;
            if let (Some(ge), Some(ie)) = (find(&ecdfs, "genuine"), find(&ecdfs, "imposter")) {
                b.plot("genuine_imposter_ecdf", "genuine and imposter ECDFs", |p| {
                    plot_ecdfs(&[&ge, &ie], p)
                })?;
            }
        }
    }

    let ks = run_dir.join("ks.json");
    if ks.is_file() {
        let v = read_json(&ks)?;
        b.section("Kolmogorov-Smirnov test");
        let _ = writeln!(
            b.md,
            "| source | d | p | n_a | n_b |\n|---|---|---|---|---|\n| measured | {} | {} | {} | {} |\n| reference | {REFERENCE_KS_D} | n/a | n/a | n/a |",
            json_field(&v, "d"),
            json_field(&v, "p"),
            json_field(&v, "n_a"),
            json_field(&v, "n_b"),
        );
    } else {
        b.missing.push("ks.json".into());
    }

    let leak = run_dir.join("leakage.json");
    if leak.is_file() {
        let v = read_json(&leak)?;
        b.section("Identity leakage");
        let _ = writeln!(b.md, "| field | value |\n|---|---|");
        for key in [
            "stage1_threshold",
            "stage2_threshold",
            "pairs_total",
            "stage1_passed",
            "flagged_pairs",
            "flagged_identities",
            "released_identities",
            "max_stage2_score",
        ] {
            let _ = writeln!(b.md, "| {key} | {} |", json_field(&v, key));
        }
    } else {
        b.missing.push("leakage.json".into());
    }

    let tar = run_dir.join("tar.csv");
    let cmc = run_dir.join("cmc.csv");
    if tar.is_file() || cmc.is_file() {
        b.section("Embedding evaluation");
        if tar.is_file() {
            let t = CsvTable::read(&tar)?;
            if !t.rows.is_empty() {
                let _ = writeln!(b.md, "Measured verification:\n");
                b.md.push_str(&t.to_markdown());
            }
        } else {
            b.missing.push("tar.csv".into());
        }
        if cmc.is_file() {
            let t = CsvTable::read(&cmc)?;
            if !t.rows.is_empty() {
                let _ = writeln!(b.md, "\nMeasured closed-set identification:\n");
                b.md.push_str(&t.to_markdown());
                b.md.push('\n');
                b.plot("cmc", "CMC curve", |p| plot_cmc(&t, p))?;
            }
        } else {
            b.missing.push("cmc.csv".into());
        }
        let _ = writeln!(
            b.md,
            "\nReference TAR (%) at 0.01% FAR, mean and sd:\n\n| source | training | sd4 | fvc2002_db1a | fvc2004_db1a |\n|---|---|---|---|---|"
        );
        for r in reference_tar_rows() {
            let f = |m: (f64, f64)| format!("{:.2} ± {:.2}", m.0, m.1);
            let _ = writeln!(
                b.md,
                "| reference | {} | {} | {} | {} |",
                r.training,
                f(r.sd4),
                f(r.fvc2002_db1a),
                f(r.fvc2004_db1a)
            );
        }
        let _ = writeln!(
            b.md,
            "\nReference rank-1 (%):\n\n| source | gallery | real only | pretrained and finetuned |\n|---|---|---|---|\n| reference | plain | {:.2} | {:.2} |\n| reference | augmented with 100k real fingers | {:.2} | {:.2} |",
            REFERENCE_RANK1.0, REFERENCE_RANK1.1, REFERENCE_RANK1_AUGMENTED.0, REFERENCE_RANK1_AUGMENTED.1
        );
    } else {
        b.missing.push("tar.csv".into());
        b.missing.push("cmc.csv".into());
    }

    let timings = run_dir.join("timings.csv");
    if timings.is_file() {
        let t = CsvTable::read(&timings)?;
        b.section("Generation timings");
        b.md.push_str(&t.to_markdown());
        let meta = run_dir.join("timings.json");
        if meta.is_file() {
            let v = read_json(&meta)?;
            let _ = writeln!(
                b.md,
                "\n| source | prints | hours | gb |\n|---|---|---|---|\n| measured projection | {} | {} | {} |\n| reference | {} | 14.47 | 134.4 |",
                REFERENCE_IDS * REFERENCE_IMPS,
                json_field(&v, "projected_hours"),
                json_field(&v, "projected_gb"),
                REFERENCE_IDS * REFERENCE_IMPS,
            );
        }
    } else {
        b.missing.push("timings.csv".into());
    }

    if b.sections.is_empty() {
        let _ = writeln!(
            b.md,
            "\nThis report has no sections: the run directory holds none of the recognised outputs."
        );
    }
    if !b.missing.is_empty() {
        let _ = writeln!(b.md, "\n## Missing inputs\n");
        for m in &b.missing {
            let _ = writeln!(b.md, "- `{m}`");
        }
    }
    let path = run_dir.join(REPORT_FILE);
    std::fs::write(&path, &b.md).map_err(|e| Error::io(&path, e))?;
    Ok(ReportSummary {
        path,
        sections: b.sections,
        missing: b.missing,
        plots: b.plots,
    })
}

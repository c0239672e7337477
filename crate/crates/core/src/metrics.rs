//! Lesion-level agreement metrics and their group summaries.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::ClassLabel;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// `2·TP / (2·TP + FP + FN)`; 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        match (x, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { (2 * tp) as f64 / denom as f64 })
}

/// Centroid distance as a percentage of the image diagonal. `None` when
/// either mask is empty.
pub fn center_error(a: &Mask, b: &Mask) -> Result<Option<f64>> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    Ok(match (a.centroid(), b.centroid()) {
        (Some((ra, ca)), Some((rb, cb))) => {
            let diag = ((h * h + w * w) as f64).sqrt();
            Some((ra - rb).hypot(ca - cb) / diag * 100.0)
        }
        _ => None,
    })
}

/// Absolute area difference as a percentage of the image area.
pub fn area_index(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    Ok(a.area().abs_diff(b.area()) as f64 / (h * w) as f64 * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Hand-traced mask shipped with the dataset.
    Manual,
    /// Active-contour segmentation of the source image.
    Reseg,
}

impl ReferenceKind {
    pub const ALL: [ReferenceKind; 2] = [ReferenceKind::Manual, ReferenceKind::Reseg];

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceKind::Manual => "manual",
            ReferenceKind::Reseg => "reseg",
        }
    }
}

impl FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(ReferenceKind::Manual),
            "reseg" => Ok(ReferenceKind::Reseg),
            other => Err(Error::param(format!("unknown reference kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionMetrics {
    pub id: String,
    pub class_label: ClassLabel,
    pub reference_kind: ReferenceKind,
    pub dice: f64,
    /// `None` when a mask is empty.
    pub center_error_pct: Option<f64>,
    pub area_index_pct: f64,
    pub degenerate: bool,
}

impl LesionMetrics {
    /// Compares a segmentation against a reference; with `largest_only`
    /// both masks are first reduced to their largest 8-connected component.
    pub fn compute(
        id: &str,
        class_label: ClassLabel,
        reference_kind: ReferenceKind,
        segmented: &Mask,
        reference: &Mask,
        largest_only: bool,
    ) -> Result<Self> {
        let (a, b) = if largest_only {
            (segmented.largest_component(), reference.largest_component())
        } else {
            (segmented.clone(), reference.clone())
        };
        let center = center_error(&a, &b)?;
        Ok(LesionMetrics {
            id: id.to_string(),
            class_label,
            reference_kind,
            dice: dice(&a, &b)?,
            center_error_pct: center,
            area_index_pct: area_index(&a, &b)?,
            degenerate: center.is_none(),
        })
    }
}

pub const CSV_HEADER: &str = "id,class,reference_kind,dice,center_error_pct,area_index_pct,degenerate";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match (ch, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

pub fn records_to_csv(records: &[LesionMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let center = r.center_error_pct.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            csv_field(&r.id),
            r.class_label.as_str(),
            r.reference_kind.as_str(),
            r.dice,
            center,
            r.area_index_pct,
            r.degenerate
        );
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<LesionMetrics>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::param("metrics CSV header missing"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::param(format!("bad number `{s}`")));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f = split_csv_line(line);
            if f.len() != 7 {
                return Err(Error::param(format!("metrics row needs 7 fields: `{line}`")));
            }
            Ok(LesionMetrics {
                id: f[0].clone(),
                class_label: f[1].parse()?,
                reference_kind: f[2].parse()?,
                dice: num(&f[3])?,
                center_error_pct: if f[4].is_empty() { None } else { Some(num(&f[4])?) },
                area_index_pct: num(&f[5])?,
                degenerate: f[6] == "true",
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    CenterError,
    AreaIndex,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::CenterError, Metric::AreaIndex];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Dice => "Dice",
            Metric::CenterError => "Center error (%)",
            Metric::AreaIndex => "Area index (%)",
        }
    }

    fn value(self, r: &LesionMetrics) -> Option<f64> {
        match self {
            Metric::Dice => Some(r.dice),
            Metric::CenterError => r.center_error_pct,
            Metric::AreaIndex => Some(r.area_index_pct),
        }
    }
}

/// Summary row group. `All` pools benign and malignant only; normal images
/// carry no reference lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Benign,
    Malignant,
    All,
    Normal,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Benign => "Benign",
            Group::Malignant => "Malignant",
            Group::All => "all",
            Group::Normal => "Normal",
        }
    }

    fn contains(self, class: ClassLabel) -> bool {
        match self {
            Group::Benign => class == ClassLabel::Benign,
            Group::Malignant => class == ClassLabel::Malignant,
            Group::All => class != ClassLabel::Normal,
            Group::Normal => class == ClassLabel::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

/// Median (mean of the middle two for even `n`), mean and standard deviation.
pub fn describe(values: &[f64], std_kind: StdKind) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    let mean = v.iter().sum::<f64>() / n as f64;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    let dof = match std_kind {
        StdKind::Population => n as f64,
        StdKind::Sample if n > 1 => (n - 1) as f64,
        StdKind::Sample => 1.0,
    };
    Some(Stats {
        median,
        mean,
        std: (ss / dof).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub metric: Metric,
    pub group: Group,
    pub reference_kind: ReferenceKind,
    /// Records contributing a value.
    pub n: usize,
    /// Records without a value (center error on an empty mask).
    pub degenerate: usize,
    pub stats: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub std_kind: StdKind,
    pub rows: Vec<GroupStats>,
}

pub fn summarize(records: &[LesionMetrics], std_kind: StdKind) -> Result<GroupSummary> {
    if records.is_empty() {
        return Err(Error::param("cannot summarise zero records"));
    }
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for group in [Group::Benign, Group::Malignant, Group::All, Group::Normal] {
            for kind in ReferenceKind::ALL {
                let selected: Vec<&LesionMetrics> = records
                    .iter()
                    .filter(|r| r.reference_kind == kind && group.contains(r.class_label))
                    .collect();
                if selected.is_empty() && group == Group::Normal {
                    continue;
                }
                let values: Vec<f64> = selected.iter().filter_map(|r| metric.value(r)).collect();
                rows.push(GroupStats {
                    metric,
                    group,
                    reference_kind: kind,
                    n: values.len(),
                    degenerate: selected.len() - values.len(),
                    stats: describe(&values, std_kind),
                });
            }
        }
    }
    Ok(GroupSummary { std_kind, rows })
}

impl GroupSummary {
    pub fn get(&self, metric: Metric, group: Group, kind: ReferenceKind) -> Option<&GroupStats> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.group == group && r.reference_kind == kind)
    }

    /// Rows are metric × {Benign, Malignant, all}; columns give median and
    /// mean ± std against each reference kind.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Metric | Class | Median (manual) | Mean ± std (manual) | Median (reseg) | Mean ± std (reseg) |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        let cell = |g: Option<&GroupStats>| match g.and_then(|g| g.stats.map(|st| (st, g.n))) {
            Some((st, _)) => (format!("{:.3}", st.median), format!("{:.3} ± {:.3}", st.mean, st.std)),
            None => ("n/a".to_string(), "n/a".to_string()),
        };
        for metric in Metric::ALL {
            for group in [Group::Benign, Group::Malignant, Group::All] {
                let (m1, s1) = cell(self.get(metric, group, ReferenceKind::Manual));
                let (m2, s2) = cell(self.get(metric, group, ReferenceKind::Reseg));
                let _ = writeln!(s, "| {} | {} | {m1} | {s1} | {m2} | {s2} |", metric.label(), group.label());
            }
        }
        let degenerate: usize = self
            .rows
            .iter()
            .filter(|r| r.metric == Metric::CenterError && r.group != Group::All)
            .map(|r| r.degenerate)
            .sum();
        if degenerate > 0 {
            let _ = writeln!(s, "\n{degenerate} record(s) with an empty mask are excluded from center error.");
        }
        s
    }
}

/// Strip plot of each metric's per-record values, one column per
/// group × reference kind.
pub fn distribution_svg(records: &[LesionMetrics]) -> String {
    let groups = [Group::Benign, Group::Malignant];
    let (panel_w, panel_h, pad) = (360.0, 220.0, 40.0);
    let width = pad + Metric::ALL.len() as f64 * (panel_w + pad);
    let height = panel_h + 2.0 * pad + 20.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (mi, metric) in Metric::ALL.iter().enumerate() {
        let x0 = pad + mi as f64 * (panel_w + pad);
        let y0 = pad;
        let values: Vec<f64> = records.iter().filter_map(|r| metric.value(r)).collect();
        let hi = values.iter().copied().fold(f64::MIN_POSITIVE, f64::max).max(if *metric == Metric::Dice { 1.0 } else { 0.0 });
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" fill=\"none\" stroke=\"#888\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.2}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>",
            x0 + panel_w / 2.0,
            y0 - 10.0,
            metric.label(),
            x0 - 4.0,
            y0 + 4.0,
            x0 - 4.0,
            y0 + panel_h
        );
        let columns: Vec<(Group, ReferenceKind)> = groups
            .iter()
            .flat_map(|g| ReferenceKind::ALL.iter().map(move |k| (*g, *k)))
            .collect();
        let col_w = panel_w / columns.len() as f64;
        for (ci, (group, kind)) in columns.iter().enumerate() {
            let cx = x0 + col_w * (ci as f64 + 0.5);
            let color = if *kind == ReferenceKind::Manual { "#1f77b4" } else { "#d62728" };
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.reference_kind == *kind && group.contains(r.class_label))
                .filter_map(|r| metric.value(r))
                .collect();
            for (i, v) in vals.iter().enumerate() {
                let jitter = ((i * 37) % 17) as f64 / 17.0 - 0.5;
                let y = y0 + panel_h * (1.0 - v / hi);
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                    cx + jitter * col_w * 0.5
                );
            }
            if let Some(st) = describe(&vals, StdKind::Population) {
                let y = y0 + panel_h * (1.0 - st.median / hi);
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
                    cx - col_w * 0.35,
                    cx + col_w * 0.35
                );
            }
            let _ = writeln!(
                s,
                "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"middle\">{} {}</text>",
                y0 + panel_h + 16.0,
                group.label(),
                kind.as_str()
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

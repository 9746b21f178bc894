//! Segmentation metrics over the actor, action and joint actor-action
//! settings: global pixel accuracy, mean class accuracy and mean class IoU,
//! optionally restricted to pixels away from ground-truth label boundaries.
//!
//! Counts are accumulated over the whole dataset first and the metrics are
//! computed once per setting.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frame::{FrameSample, LabelMap};
use crate::taxonomy::Taxonomy;

/// Default boundary band radius: a band 15 pixels wide is 7 pixels on each
/// side of the label change plus the boundary pixel itself.
pub const DEFAULT_BAND_RADIUS: usize = 7;

/// `counts[g][p]` = number of evaluated pixels with ground truth `g`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "confusion matrix must be square");
        Self { k, counts: rows.concat() }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.k + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, gt: usize) -> u64 {
        self.counts[gt * self.k..(gt + 1) * self.k].iter().sum()
    }

    pub fn col_total(&self, pred: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.k != self.k {
            return Err(Error::ShapeMismatch(format!("merging {}x{} into {}x{}", other.k, other.k, self.k, self.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class recall, `None` for classes absent from the ground truth.
    pub fn class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let row = self.row_total(c);
                (row > 0).then(|| self.get(c, c) as f64 / row as f64)
            })
            .collect()
    }

    /// Per-class IoU, `None` for classes with an empty union.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let union = self.row_total(c) + self.col_total(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Counts `pred` against `gt`, skipping pixels ignored by `gt` or by `extra`.
pub fn confusion_counts_masked(
    pred: &LabelMap,
    gt: &LabelMap,
    k: usize,
    extra: Option<&Array2<bool>>,
) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() || extra.is_some_and(|e| e.dim() != gt.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = ConfusionCounts::new(k);
    for ((y, x), &g) in gt.labels.indexed_iter() {
        if gt.is_ignored(y, x) || extra.is_some_and(|e| e[[y, x]]) {
            continue;
        }
        let p = pred.labels[[y, x]];
        if usize::from(g) >= k || usize::from(p) >= k {
            return Err(Error::OutOfRange(format!("label pair (gt {g}, pred {p}) at [{y}, {x}] with {k} classes")));
        }
        c.add(g.into(), p.into());
    }
    Ok(c)
}

pub fn confusion_counts(pred: &LabelMap, gt: &LabelMap, k: usize) -> Result<ConfusionCounts> {
    confusion_counts_masked(pred, gt, k, None)
}

/// `trace / total`; `None` when nothing was evaluated.
pub fn global_accuracy(c: &ConfusionCounts) -> Option<f64> {
    let total = c.total();
    (total > 0).then(|| c.trace() as f64 / total as f64)
}

fn mean_defined(values: Vec<Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean recall over classes present in the ground truth.
pub fn mean_class_accuracy(c: &ConfusionCounts) -> Option<f64> {
    mean_defined(c.class_accuracy())
}

/// Mean IoU over classes with a nonempty union.
pub fn mean_class_iou(c: &ConfusionCounts) -> Option<f64> {
    mean_defined(c.class_iou())
}

/// Pixels within Chebyshev distance `radius` of a ground-truth label
/// change. A pixel is a boundary pixel when any 4-neighbour has a
/// different label.
pub fn boundary_band(gt: &LabelMap, radius: usize) -> Array2<bool> {
    let (h, w) = gt.dim();
    let l = &gt.labels;
    let boundary = Array2::from_shape_fn((h, w), |(y, x)| {
        let v = l[[y, x]];
        (y > 0 && l[[y - 1, x]] != v)
            || (y + 1 < h && l[[y + 1, x]] != v)
            || (x > 0 && l[[y, x - 1]] != v)
            || (x + 1 < w && l[[y, x + 1]] != v)
    });
    // Square dilation, separable into a row pass and a column pass.
    let rows = Array2::from_shape_fn((h, w), |(y, x)| {
        let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        (lo..=hi).any(|xx| boundary[[y, xx]])
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        (lo..=hi).any(|yy| rows[[yy, x]])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    Actor,
    Action,
    ActorAction,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Actor, Setting::Action, Setting::ActorAction];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Actor => "actor",
            Setting::Action => "action",
            Setting::ActorAction => "actor_action",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SettingMetrics {
    pub global_accuracy: Option<f64>,
    pub mean_class_accuracy: Option<f64>,
    pub mean_class_iou: Option<f64>,
}

impl SettingMetrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            global_accuracy: global_accuracy(c),
            mean_class_accuracy: mean_class_accuracy(c),
            mean_class_iou: mean_class_iou(c),
        }
    }

    const NAMES: [&'static str; 3] = ["global_accuracy", "mean_class_accuracy", "mean_class_iou"];

    fn values(&self) -> [Option<f64>; 3] {
        [self.global_accuracy, self.mean_class_accuracy, self.mean_class_iou]
    }

    fn set(&mut self, metric: &str, v: Option<f64>) -> bool {
        match metric {
            "global_accuracy" => self.global_accuracy = v,
            "mean_class_accuracy" => self.mean_class_accuracy = v,
            "mean_class_iou" => self.mean_class_iou = v,
            _ => return false,
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub non_boundary: bool,
    pub radius: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { non_boundary: false, radius: DEFAULT_BAND_RADIUS }
    }
}

/// Actor, action and joint labels of one frame. Joint labels are dense
/// valid-pair indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub actor: LabelMap,
    pub action: LabelMap,
    pub joint: LabelMap,
}

impl FrameLabels {
    /// Ground-truth labels of a frame; the joint map ignores any pixel
    /// ignored by either task.
    pub fn ground_truth(frame: &FrameSample, taxonomy: &Taxonomy) -> Result<Self> {
        Self::from_pair_maps(frame.gt_actor.clone(), frame.gt_action.clone(), taxonomy)
    }

    /// Derives joint labels from actor and action maps; every evaluated
    /// pixel must carry a valid pair.
    pub fn from_pair_maps(actor: LabelMap, action: LabelMap, taxonomy: &Taxonomy) -> Result<Self> {
        if actor.dim() != action.dim() {
            return Err(Error::ShapeMismatch(format!("actor {:?} vs action {:?}", actor.dim(), action.dim())));
        }
        let (h, w) = actor.dim();
        let ignore = Array2::from_shape_fn((h, w), |(y, x)| actor.is_ignored(y, x) || action.is_ignored(y, x));
        let mut joint = Array2::zeros((h, w));
        for ((y, x), j) in joint.indexed_iter_mut() {
            if ignore[[y, x]] {
                continue;
            }
            let (a, c) = (actor.labels[[y, x]], action.labels[[y, x]]);
            *j = taxonomy
                .pair_index(a.into(), c.into())?
                .ok_or_else(|| Error::OutOfRange(format!("invalid pair ({a}, {c}) at [{y}, {x}]")))? as u16;
        }
        let joint = LabelMap { labels: joint, ignore: ignore.iter().any(|&v| v).then_some(ignore) };
        Ok(Self { actor, action, joint })
    }

    fn map(&self, s: Setting) -> &LabelMap {
        match s {
            Setting::Actor => &self.actor,
            Setting::Action => &self.action,
            Setting::ActorAction => &self.joint,
        }
    }
}

fn classes(t: &Taxonomy, s: Setting) -> usize {
    match s {
        Setting::Actor => t.num_actors(),
        Setting::Action => t.num_actions(),
        Setting::ActorAction => t.num_pairs(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Indexed like [`Setting::ALL`].
    pub all: [SettingMetrics; 3],
    pub non_boundary: Option<[SettingMetrics; 3]>,
    /// Joint class names (`"BG"`, `"adult-climbing"`, ...).
    pub categories: Vec<String>,
    /// Per joint class accuracy (diagonal over ground-truth row total).
    pub per_category: Vec<Option<f64>>,
    pub per_category_non_boundary: Option<Vec<Option<f64>>>,
}

/// Dataset-level counts per setting, optionally over non-boundary pixels.
pub fn accumulate_counts(
    predictions: &[FrameLabels],
    ground_truths: &[FrameLabels],
    taxonomy: &Taxonomy,
    band_radius: Option<usize>,
) -> Result<[ConfusionCounts; 3]> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::FrameCountMismatch {
            predictions: predictions.len(),
            ground_truths: ground_truths.len(),
        });
    }
    let mut out = Setting::ALL.map(|s| ConfusionCounts::new(classes(taxonomy, s)));
    for (pred, gt) in predictions.iter().zip(ground_truths) {
        for (i, s) in Setting::ALL.into_iter().enumerate() {
            let gmap = gt.map(s);
            let band = band_radius.map(|r| boundary_band(gmap, r));
            let c = confusion_counts_masked(pred.map(s), gmap, classes(taxonomy, s), band.as_ref())?;
            out[i].merge(&c)?;
        }
    }
    Ok(out)
}

pub fn evaluate_all(
    predictions: &[FrameLabels],
    ground_truths: &[FrameLabels],
    taxonomy: &Taxonomy,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let counts = accumulate_counts(predictions, ground_truths, taxonomy, None)?;
    let categories = (0..taxonomy.num_pairs()).map(|i| taxonomy.pair_name(i).expect("in range")).collect();
    let (non_boundary, per_category_non_boundary) = if options.non_boundary {
        let nb = accumulate_counts(predictions, ground_truths, taxonomy, Some(options.radius))?;
        (Some(nb.each_ref().map(SettingMetrics::from_counts)), Some(nb[2].class_accuracy()))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        all: counts.each_ref().map(SettingMetrics::from_counts),
        non_boundary,
        categories,
        per_category: counts[2].class_accuracy(),
        per_category_non_boundary,
    })
}

const UNDEFINED: &str = "undefined";

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

fn parse_value(s: &str) -> Result<Option<f64>> {
    if s == UNDEFINED {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("bad metric value {s:?}")))
}

impl MetricsReport {
    pub fn setting(&self, s: Setting) -> &SettingMetrics {
        &self.all[s as usize]
    }

    /// `setting,metric,variant,value` rows; undefined values are written
    /// as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,metric,variant,value\n");
        let mut variants = vec![("all", &self.all)];
        if let Some(nb) = &self.non_boundary {
            variants.push(("non_boundary", nb));
        }
        for (variant, sets) in variants {
            for (setting, m) in Setting::ALL.iter().zip(sets.iter()) {
                for (name, v) in SettingMetrics::NAMES.iter().zip(m.values()) {
                    writeln!(s, "{},{name},{variant},{}", setting.name(), fmt_value(v)).unwrap();
                }
            }
        }
        s
    }

    /// One column per joint category, one row per evaluation variant.
    pub fn per_category_csv(&self, method: &str) -> String {
        let mut s = String::from("method,variant");
        for c in &self.categories {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        let mut rows = vec![("all", &self.per_category)];
        if let Some(nb) = &self.per_category_non_boundary {
            rows.push(("non_boundary", nb));
        }
        for (variant, values) in rows {
            write!(s, "{method},{variant}").unwrap();
            for &v in values {
                write!(s, ",{}", fmt_value(v)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parses the two CSVs back into a report.
    pub fn from_csv(metrics: &str, per_category: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(msg);
        let mut all = [SettingMetrics::default(); 3];
        let mut nb = [SettingMetrics::default(); 3];
        let mut has_nb = false;
        for line in metrics.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let [setting, metric, variant, value] = f[..] else {
                return Err(bad(format!("bad metrics row {line:?}")));
            };
            let idx = Setting::ALL
                .iter()
                .position(|s| s.name() == setting)
                .ok_or_else(|| bad(format!("unknown setting {setting:?}")))?;
            let target = match variant {
                "all" => &mut all,
                "non_boundary" => {
                    has_nb = true;
                    &mut nb
                }
                _ => return Err(bad(format!("unknown variant {variant:?}"))),
            };
            if !target[idx].set(metric, parse_value(value)?) {
                return Err(bad(format!("unknown metric {metric:?}")));
            }
        }
        let mut lines = per_category.lines().filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty per-category csv".into()))?;
        let categories: Vec<String> = header.split(',').skip(2).map(str::to_string).collect();
        let mut per_category = None;
        let mut per_category_nb = None;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != categories.len() + 2 {
                return Err(bad(format!("per-category row has {} fields", f.len())));
            }
            let values = f[2..].iter().map(|v| parse_value(v)).collect::<Result<Vec<_>>>()?;
            match f[1] {
                "all" => per_category = Some(values),
                "non_boundary" => per_category_nb = Some(values),
                v => return Err(bad(format!("unknown variant {v:?}"))),
            }
        }
        Ok(Self {
            all,
            non_boundary: has_nb.then_some(nb),
            categories,
            per_category: per_category.ok_or_else(|| bad("missing per-category row".into()))?,
            per_category_non_boundary: per_category_nb,
        })
    }

    /// Human-readable summary: rows are settings, columns the three metrics
    /// (in percent).
    pub fn render_table(&self, method: &str) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let mut s = String::new();
        let mut variants = vec![("", &self.all)];
        if let Some(nb) = &self.non_boundary {
            variants.push((" (non-boundary)", nb));
        }
        for (suffix, sets) in variants {
            writeln!(s, "{method}{suffix}").unwrap();
            writeln!(s, "{:<14}{:>8}{:>8}{:>8}", "setting", "glo", "cls", "iou").unwrap();
            for (setting, m) in Setting::ALL.iter().zip(sets.iter()) {
                let [g, c, i] = m.values();
                writeln!(s, "{:<14}{:>8}{:>8}{:>8}", setting.name(), pct(g), pct(c), pct(i)).unwrap();
            }
        }
        writeln!(s, "per-category accuracy").unwrap();
        for (name, v) in self.categories.iter().zip(&self.per_category) {
            writeln!(s, "  {name:<24}{:>8}", pct(*v)).unwrap();
        }
        s
    }
}

//! Plausibility matrices.
//!
//! Entry `(c, t)` of `Q` says that an instance labeled `t` may truly belong
//! to class `c`. The plausible set for label `t` is column `t`, with the
//! target forced in at consumption time.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::loss::PlausibleSet;
use crate::noise::TransitionMatrix;
use crate::textmat::{format_rows, parse_square};

/// Dense boolean `C x C` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlausibilityMatrix {
    class_count: usize,
    entries: Vec<bool>,
}

impl PlausibilityMatrix {
    /// All-false matrix.
    pub fn empty(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return arg_err("plausibility matrix needs at least one class");
        }
        Ok(Self {
            class_count,
            entries: vec![false; class_count * class_count],
        })
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let n = rows.len();
        let mut q = Self::empty(n)?;
        for (c, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return arg_err(format!("row {c} has {} entries, expected {n}", row.len()));
            }
            q.entries[c * n..(c + 1) * n].copy_from_slice(&row);
        }
        Ok(q)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `Q[class][label]`.
    pub fn get(&self, class: usize, label: usize) -> bool {
        self.entries[class * self.class_count + label]
    }

    pub fn set(&mut self, class: usize, label: usize, value: bool) {
        self.entries[class * self.class_count + label] = value;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.entries.chunks(self.class_count)
    }

    /// Column `label` with the diagonal forced true.
    pub fn plausible_mask(&self, label: usize) -> Vec<bool> {
        let mut mask: Vec<bool> = (0..self.class_count).map(|c| self.get(c, label)).collect();
        mask[label] = true;
        mask
    }

    pub fn plausible_set(&self, label: usize) -> Result<PlausibleSet> {
        if label >= self.class_count {
            return arg_err(format!(
                "label {label} out of range for {} classes",
                self.class_count
            ));
        }
        PlausibleSet::new(self.plausible_mask(label), label)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.class_count)
            .all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// `C` lines of `C` space-separated `0`/`1` tokens.
    pub fn to_text(&self) -> String {
        format_rows(
            self.rows().map(|r| r.to_vec()),
            |&b| if b { "1".into() } else { "0".into() },
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows = parse_square(text, |t| match t {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("expected 0 or 1, found {other:?}")),
        })?;
        Self::from_rows(rows)
    }

    pub fn to_document(&self) -> QDocument {
        QDocument {
            class_count: self.class_count,
            rows: self
                .rows()
                .map(|r| r.iter().map(|&b| u8::from(b)).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &QDocument) -> Result<Self> {
        if doc.rows.len() != doc.class_count {
            return Err(Error::Parse {
                row: doc.rows.len(),
                message: format!(
                    "class_count is {} but {} rows given",
                    doc.class_count,
                    doc.rows.len()
                ),
            });
        }
        let mut rows = Vec::with_capacity(doc.class_count);
        for (i, r) in doc.rows.iter().enumerate() {
            if r.len() != doc.class_count {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("expected {} entries, found {}", doc.class_count, r.len()),
                });
            }
            let mut row = Vec::with_capacity(r.len());
            for &v in r {
                match v {
                    0 => row.push(false),
                    1 => row.push(true),
                    other => {
                        return Err(Error::Parse {
                            row: i + 1,
                            message: format!("expected 0 or 1, found {other}"),
                        })
                    }
                }
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// Structured form of a plausibility matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QDocument {
    pub class_count: usize,
    pub rows: Vec<Vec<u8>>,
}

/// How an ordinal window treats the ends of the label range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Linear scale; the window is cut at 0 and C - 1.
    Clamp,
    /// Cyclic scale; distance is taken modulo C.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalWindowSpec {
    /// Half-width in class steps.
    pub window: usize,
    pub boundary: Boundary,
}

/// Group index per class, e.g. genus per species.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyMap {
    pub group_of: Vec<usize>,
}

/// Per-sample annotation standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleWindow {
    pub sigma: Vec<f64>,
}

/// Diagonal-only `Q`: every plausible set is `{t}`.
pub fn q_identity(class_count: usize) -> Result<PlausibilityMatrix> {
    let mut q = PlausibilityMatrix::empty(class_count)?;
    for c in 0..class_count {
        q.set(c, c, true);
    }
    Ok(q)
}

/// `Q[c][t] = 1` iff `c` lies within `window` steps of `t`.
pub fn q_ordinal(class_count: usize, spec: OrdinalWindowSpec) -> Result<PlausibilityMatrix> {
    if spec.window >= class_count {
        return arg_err(format!(
            "ordinal window {} must be smaller than the class count {class_count}",
            spec.window
        ));
    }
    let mut q = PlausibilityMatrix::empty(class_count)?;
    for c in 0..class_count {
        for t in 0..class_count {
            let d = c.abs_diff(t);
            let dist = match spec.boundary {
                Boundary::Clamp => d,
                Boundary::Wrap => d.min(class_count - d),
            };
            q.set(c, t, dist <= spec.window);
        }
    }
    Ok(q)
}

/// `Q[c][t] = 1` iff `c` and `t` share a group.
pub fn q_hierarchy(map: &HierarchyMap) -> Result<PlausibilityMatrix> {
    let g = &map.group_of;
    let mut q = PlausibilityMatrix::empty(g.len())?;
    for c in 0..g.len() {
        for t in 0..g.len() {
            q.set(c, t, g[c] == g[t]);
        }
    }
    Ok(q)
}

/// Negative (class 0) instance-level label.
pub const MIL_NEGATIVE: usize = 0;
/// Positive (class 1) instance-level label.
pub const MIL_POSITIVE: usize = 1;

/// Multiple-instance asymmetry: a positive label may hide a negative
/// instance, a negative label never hides a positive one.
pub fn q_mil() -> PlausibilityMatrix {
    let mut q = q_identity(2).expect("two classes");
    q.set(MIL_NEGATIVE, MIL_POSITIVE, true);
    q
}

/// Support of the transition matrix: `Q[c][t] = 1` iff `T[c][t] > 0`.
pub fn q_from_transition(t: &TransitionMatrix) -> PlausibilityMatrix {
    let n = t.class_count();
    let mut q = PlausibilityMatrix::empty(n).expect("transition matrices are nonempty");
    for c in 0..n {
        for l in 0..n {
            q.set(c, l, t.get(c, l) > 0.0);
        }
    }
    q
}

/// Per-sample windows `t ± ceil(sigma)`, clamped to `[0, C)`.
pub fn per_sample_sets(
    targets: &[usize],
    windows: &PerSampleWindow,
    class_count: usize,
) -> Result<Vec<PlausibleSet>> {
    if targets.len() != windows.sigma.len() {
        return arg_err(format!(
            "{} targets but {} window widths",
            targets.len(),
            windows.sigma.len()
        ));
    }
    targets
        .iter()
        .zip(&windows.sigma)
        .map(|(&t, &sigma)| {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return arg_err(format!("sigma must be finite and non-negative, got {sigma}"));
            }
            if t >= class_count {
                return arg_err(format!("target {t} out of range for {class_count} classes"));
            }
            let half = sigma.ceil() as usize;
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(class_count - 1);
            let mask = (0..class_count).map(|c| (lo..=hi).contains(&c)).collect();
            PlausibleSet::new(mask, t)
        })
        .collect()
}

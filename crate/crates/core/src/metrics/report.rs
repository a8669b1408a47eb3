use serde::{Deserialize, Serialize};

use super::{chamfer_matrix, MetricError, PointSet, SetMetrics};

/// Everything `arch metrics` emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub generated: usize,
    pub reference: usize,
    #[serde(flatten)]
    pub set: SetMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uhd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tmd: Option<f64>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "generated,reference,cov,mmd,one_nna,uhd,tmd\n{},{},{},{},{},{},{}\n",
            self.generated,
            self.reference,
            self.set.cov,
            self.set.mmd,
            self.set.one_nna,
            opt(self.uhd),
            opt(self.tmd)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyRow {
    pub generated: usize,
    /// `(training index, Chamfer)` of the nearest training shapes, closest first.
    pub nearest: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub rows: Vec<NoveltyRow>,
    /// `(lower edge, upper edge, count)` over nearest-neighbour distances.
    pub histogram: Vec<(f64, f64, usize)>,
}

impl NoveltyReport {
    /// One row per generated shape: index, then distance/index pairs.
    pub fn rows_csv(&self) -> String {
        let k = self.rows.first().map_or(0, |r| r.nearest.len());
        let mut out = String::from("generated");
        for i in 0..k {
            out += &format!(",train_{i},cd_{i}");
        }
        out.push('\n');
        for r in &self.rows {
            out += &r.generated.to_string();
            for (t, d) in &r.nearest {
                out += &format!(",{t},{d}");
            }
            out.push('\n');
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("lo,hi,count\n");
        for (lo, hi, c) in &self.histogram {
            out += &format!("{lo},{hi},{c}\n");
        }
        out
    }
}

/// Top-`top_n` nearest training shapes for every generated shape, plus a
/// histogram of the nearest distances over `bins` equal-width bins.
pub fn novelty_histogram(generated: &[PointSet], training: &[PointSet], top_n: usize, bins: usize) -> Result<NoveltyReport, MetricError> {
    let top = if top_n > training.len() {
        log::warn!("top_n {top_n} exceeds training size {}; clamping", training.len());
        training.len()
    } else {
        top_n
    };
    let d = chamfer_matrix(generated, training)?;
    let rows: Vec<NoveltyRow> = d
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            NoveltyRow { generated: g, nearest: order.into_iter().take(top).map(|t| (t, row[t])).collect() }
        })
        .collect();
    let nearest: Vec<f64> = rows.iter().filter_map(|r| r.nearest.first().map(|x| x.1)).collect();
    let bins = bins.max(1);
    let max = nearest.iter().cloned().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut histogram: Vec<(f64, f64, usize)> = (0..bins).map(|b| (b as f64 * width, (b + 1) as f64 * width, 0)).collect();
    for v in nearest {
        let b = ((v / width) as usize).min(bins - 1);
        histogram[b].2 += 1;
    }
    Ok(NoveltyReport { rows, histogram })
}

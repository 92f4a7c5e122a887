//! Partial least squares regression and leave-one-out probing.
//!
//! Components are extracted one at a time with NIPALS-style power iterations
//! on the predictor/target cross-product, followed by deflation of both
//! blocks. Predictors are centered and (by default) scaled to unit variance;
//! targets are centered only.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{AnnotationTable, DomainMap, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numfmt;

/// Component cap used when the count is not configured.
pub const DEFAULT_MAX_COMPONENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlsrOptions {
    /// `None` picks [`default_components`].
    pub n_components: Option<usize>,
    /// Scale predictors to unit (sample) variance.
    pub scale: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PlsrOptions {
    fn default() -> Self {
        Self {
            n_components: None,
            scale: true,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

/// `min(20, n_predictors, n_train − 1)`.
pub fn default_components(n_predictors: usize, n_train: usize) -> usize {
    DEFAULT_MAX_COMPONENTS.min(n_predictors).min(n_train.saturating_sub(1))
}

/// A fitted PLS regression.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsrModel {
    pub n_components: usize,
    pub x_mean: Array1<f64>,
    /// Ones when scaling is off.
    pub x_std: Array1<f64>,
    pub y_mean: Array1<f64>,
    /// `p × k` weights.
    pub x_weights: Array2<f64>,
    /// `p × k` loadings.
    pub x_loadings: Array2<f64>,
    /// `q × k` target loadings.
    pub y_loadings: Array2<f64>,
    /// `n × k` training scores.
    pub x_scores: Array2<f64>,
    /// `p × q` coefficients acting on standardized predictors.
    pub coefficients: Array2<f64>,
}

fn normalize(v: &mut Array1<f64>) -> f64 {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        v.mapv_inplace(|x| x / n);
    }
    n
}

/// Dominant left singular vector of `c`, started from the column of `c`
/// with the largest norm.
///
/// Power iteration runs on the smaller of `c cᵀ` and `cᵀ c`; the iterated
/// matrix is squared after every step so that close leading singular values
/// still converge in a few dozen steps.
fn dominant_direction(c: &Array2<f64>, tol: f64, max_iter: usize) -> Option<Array1<f64>> {
    let start = (0..c.ncols()).max_by(|&a, &b| {
        let na = c.column(a).dot(&c.column(a));
        let nb = c.column(b).dot(&c.column(b));
        na.total_cmp(&nb).then(b.cmp(&a))
    })?;
    let mut w = c.column(start).to_owned();
    if normalize(&mut w) == 0.0 {
        return None;
    }
    let left = c.nrows() <= c.ncols();
    let (mut m, mut v) = if left {
        (c.dot(&c.t()), w)
    } else {
        let mut v = c.t().dot(&w);
        if normalize(&mut v) == 0.0 {
            return None;
        }
        (c.t().dot(c), v)
    };
    let scale = m.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    m.mapv_inplace(|x| x / scale);
    for it in 0..max_iter {
        let mut next = m.dot(&v);
        if normalize(&mut next) == 0.0 {
            return None;
        }
        let delta = (&next - &v).mapv(|x| x * x).sum().sqrt();
        v = next;
        if delta < tol {
            break;
        }
        if it + 1 == max_iter {
            log::warn!("PLSR weight iteration stopped at {max_iter} iterations (change {delta:e})");
        }
        let sq = m.dot(&m);
        let s = sq.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if s > 0.0 && s.is_finite() {
            m = sq / s;
        }
    }
    if left {
        Some(v)
    } else {
        let mut w = c.dot(&v);
        (normalize(&mut w) > 0.0).then_some(w)
    }
}

/// Solves `a · z = b` for square `a` by Gaussian elimination with partial
/// pivoting.
fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut a = a.clone();
    let mut b = b.clone();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            for k in 0..b.ncols() {
                b.swap([piv, k], [col, k]);
            }
        }
        for row in (col + 1)..n {
            let f = a[[row, col]] / a[[col, col]];
            if f != 0.0 {
                for k in col..n {
                    a[[row, k]] -= f * a[[col, k]];
                }
                for k in 0..b.ncols() {
                    b[[row, k]] -= f * b[[col, k]];
                }
            }
        }
    }
    let mut z = Array2::zeros(b.dim());
    for row in (0..n).rev() {
        for k in 0..b.ncols() {
            let mut acc = b[[row, k]];
            for j in (row + 1)..n {
                acc -= a[[row, j]] * z[[j, k]];
            }
            z[[row, k]] = acc / a[[row, row]];
        }
    }
    Some(z)
}

/// Fits a PLS regression of `y` on `x` with `n_components` latent components.
pub fn plsr_fit(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    n_components: usize,
    opts: &PlsrOptions,
) -> Result<PlsrModel> {
    let (n, p) = x.dim();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(Error::LengthMismatch { left: n, right: y.nrows() });
    }
    if n < 3 {
        return Err(Error::Domain(format!("PLSR needs at least 3 rows, got {n}")));
    }
    if p == 0 || q == 0 {
        return Err(Error::Domain("PLSR needs at least one predictor and one target".into()));
    }
    let limit = (n - 1).min(p);
    if n_components == 0 || n_components > limit {
        return Err(Error::Rank { requested: n_components, limit });
    }
    for (j, col) in x.columns().into_iter().enumerate() {
        if col.iter().all(|v| *v == col[0]) {
            return Err(Error::DegeneratePredictor(j));
        }
    }

    let x_mean = x.mean_axis(Axis(0)).expect("n > 0");
    let y_mean = y.mean_axis(Axis(0)).expect("n > 0");
    let x_std = if opts.scale {
        x.std_axis(Axis(0), 1.0)
    } else {
        Array1::ones(p)
    };
    let mut xk = (&x - &x_mean) / &x_std;
    let mut yk = &y - &y_mean;
    let x_energy = xk.mapv(|v| v * v).sum();

    let mut weights = Array2::zeros((p, n_components));
    let mut loadings = Array2::zeros((p, n_components));
    let mut y_loadings = Array2::zeros((q, n_components));
    let mut scores = Array2::zeros((n, n_components));

    for k in 0..n_components {
        let cross = xk.t().dot(&yk);
        let w = dominant_direction(&cross, opts.tolerance, opts.max_iterations)
            .or_else(|| {
                // Targets already explained: continue along the residual
                // predictor variance.
                let gram = xk.t().dot(&xk);
                dominant_direction(&gram, opts.tolerance, opts.max_iterations)
            })
            .ok_or(Error::Rank { requested: n_components, limit: k })?;
        let t = xk.dot(&w);
        let tt = t.dot(&t);
        if tt <= 1e-24 * x_energy.max(f64::MIN_POSITIVE) {
            return Err(Error::Rank { requested: n_components, limit: k });
        }
        let pk = xk.t().dot(&t) / tt;
        let qk = yk.t().dot(&t) / tt;
        let t2 = t.view().insert_axis(Axis(1));
        xk -= &t2.dot(&pk.view().insert_axis(Axis(0)));
        yk -= &t2.dot(&qk.view().insert_axis(Axis(0)));
        weights.column_mut(k).assign(&w);
        loadings.column_mut(k).assign(&pk);
        y_loadings.column_mut(k).assign(&qk);
        scores.column_mut(k).assign(&t);
    }

    let ptw = loadings.t().dot(&weights);
    let z = solve(&ptw, &y_loadings.t().to_owned())
        .ok_or(Error::Rank { requested: n_components, limit: n_components - 1 })?;
    let coefficients = weights.dot(&z);

    Ok(PlsrModel {
        n_components,
        x_mean,
        x_std,
        y_mean,
        x_weights: weights,
        x_loadings: loadings,
        y_loadings,
        x_scores: scores,
        coefficients,
    })
}

impl PlsrModel {
    pub fn n_predictors(&self) -> usize {
        self.x_mean.len()
    }

    /// Predicts targets for each row of `x_new`.
    pub fn predict(&self, x_new: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x_new.ncols() != self.n_predictors() {
            return Err(Error::Shape {
                expected: self.n_predictors(),
                found: x_new.ncols(),
            });
        }
        let z = (&x_new - &self.x_mean) / &self.x_std;
        Ok(z.dot(&self.coefficients) + &self.y_mean)
    }

    pub fn predict_row(&self, x_new: ArrayView1<f64>) -> Result<Array1<f64>> {
        let m = x_new.insert_axis(Axis(0));
        Ok(self.predict(m)?.row(0).to_owned())
    }

    /// Coefficients on the original predictor scale (`p × q`) and intercept.
    pub fn raw_coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let b = &self.coefficients / &self.x_std.view().insert_axis(Axis(1));
        let intercept = &self.y_mean - &self.x_mean.dot(&b);
        (b, intercept)
    }
}

/// Leave-one-out predictions (`values`) next to the annotated ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub words: Vec<String>,
    pub dims: Vec<String>,
    pub values: Array2<f64>,
    pub ground_truth: Array2<f64>,
}

fn write_table<W: Write>(words: &[String], dims: &[String], m: &Array2<f64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "word,{}", dims.join(","))?;
    for (w, row) in words.iter().zip(m.rows()) {
        let cells: Vec<String> = row.iter().map(|v| numfmt::full(Some(*v))).collect();
        writeln!(out, "{w},{}", cells.join(","))?;
    }
    Ok(())
}

type Table = (Vec<String>, Vec<String>, Array2<f64>);

fn read_table<R: Read>(source: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format { line: 1, message: e.to_string() })?
        .clone();
    let dims: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut words = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format { line, message: e.to_string() })?;
        if rec.len() != dims.len() + 1 {
            return Err(Error::Format { line, message: "row width differs from header".into() });
        }
        words.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            data.push(cell.parse::<f64>().map_err(|_| Error::Format {
                line,
                message: format!("`{cell}` is not a number"),
            })?);
        }
    }
    let m = Array2::from_shape_vec((words.len(), dims.len()), data).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((words, dims, m))
}

impl PredictionMatrix {
    pub fn write_values<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(&self.words, &self.dims, &self.values, out)
    }

    pub fn write_truth<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_table(&self.words, &self.dims, &self.ground_truth, out)
    }

    /// Reads the prediction table and its ground-truth sibling.
    pub fn read<R: Read, T: Read>(values: R, truth: T) -> Result<Self> {
        let (words, dims, values) = read_table(values)?;
        let (twords, tdims, ground_truth) = read_table(truth)?;
        if words != twords || dims != tdims {
            return Err(Error::Domain("prediction and ground-truth tables have different axes".into()));
        }
        Ok(Self { words, dims, values, ground_truth })
    }
}

/// Probing design matrix: annotation words × retained embedding features.
pub fn design_matrix(emb: &EmbeddingTable, words: &[String], features: &[usize]) -> Result<Array2<f64>> {
    let rows = emb.select_words(words)?;
    if let Some(&f) = features.iter().find(|&&f| f >= emb.dims()) {
        return Err(Error::Domain(format!("feature {f} out of range")));
    }
    Ok(rows.values().select(Axis(1), features))
}

/// Leave-one-out stacked predictions: row `w` comes from a model fit on every
/// annotation word except `w`.
pub fn loocv_stack(
    emb: &EmbeddingTable,
    retained: &[usize],
    ann: &AnnotationTable,
    opts: &PlsrOptions,
) -> Result<PredictionMatrix> {
    if retained.is_empty() {
        return Err(Error::Domain("retained feature set is empty".into()));
    }
    let x = design_matrix(emb, &ann.words, retained)?;
    let y = &ann.values;
    let n = x.nrows();
    if n < 4 {
        return Err(Error::Domain(format!("leave-one-out probing needs at least 4 words, got {n}")));
    }
    let k = opts.n_components.unwrap_or_else(|| default_components(retained.len(), n - 1));
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let xt = x.select(Axis(0), &keep);
            let yt = y.select(Axis(0), &keep);
            plsr_fit(xt.view(), yt.view(), k, opts)
                .and_then(|m| m.predict_row(x.row(i)))
                .map_err(|e| Error::Fold { word: ann.words[i].clone(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Array2::zeros(y.dim());
    for (i, r) in rows.into_iter().enumerate() {
        values.row_mut(i).assign(&r);
    }
    Ok(PredictionMatrix {
        words: ann.words.clone(),
        dims: ann.dim_names.clone(),
        values,
        ground_truth: y.clone(),
    })
}

/// Averages member-dimension columns into one column per domain, for both
/// predictions and ground truth. Domains keep the map's order.
pub fn condense_domains(pm: &PredictionMatrix, map: &DomainMap) -> Result<PredictionMatrix> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); map.domains.len()];
    let mut unmapped = Vec::new();
    for (j, dim) in pm.dims.iter().enumerate() {
        match map.domain_of(dim) {
            Some(d) => members[d].push(j),
            None => unmapped.push(dim.as_str()),
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::Mapping(format!("dimensions without a domain: {}", unmapped.join(", "))));
    }
    if let Some(d) = members.iter().position(Vec::is_empty) {
        return Err(Error::Mapping(format!("domain `{}` has no dimensions", map.domains[d])));
    }
    let condense = |m: &Array2<f64>| {
        let mut out = Array2::zeros((m.nrows(), members.len()));
        for (d, cols) in members.iter().enumerate() {
            let mean = m.select(Axis(1), cols).mean_axis(Axis(1)).expect("non-empty");
            out.column_mut(d).assign(&mean);
        }
        out
    };
    Ok(PredictionMatrix {
        words: pm.words.clone(),
        dims: map.domains.clone(),
        values: condense(&pm.values),
        ground_truth: condense(&pm.ground_truth),
    })
}

/// Domain map recovered from an annotation table.
pub fn domain_map_of(ann: &AnnotationTable) -> DomainMap {
    DomainMap {
        domains: ann.domains.clone(),
        assignment: ann
            .dim_names
            .iter()
            .cloned()
            .zip(ann.dim_domain.iter().copied())
            .collect(),
    }
}

/// Training-score Gram matrix off-diagonal maximum, for orthogonality checks.
pub fn score_orthogonality(model: &PlsrModel) -> f64 {
    let g = model.x_scores.t().dot(&model.x_scores);
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                let scale = (g[[i, i]] * g[[j, j]]).sqrt();
                worst = worst.max((g[[i, j]] / scale).abs());
            }
        }
    }
    worst
}

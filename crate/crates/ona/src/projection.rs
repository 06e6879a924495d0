//! Means rotation: x along the difference of the two group means, y along
//! the leading singular direction of what x leaves over.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::network::OnaNetwork;
use crate::OnaError;

/// Below this the two group means count as identical.
const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Point {
    pub unit_id: String,
    pub group: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Projection {
    pub groups: [String; 2],
    pub points: Vec<Point>,
    /// Mean of all projected units; coordinates are taken relative to it.
    pub center: Vec<f64>,
    pub dim1: Vec<f64>,
    pub dim2: Vec<f64>,
    /// Mean (x, y) per group.
    pub group_means: BTreeMap<String, (f64, f64)>,
    /// Set when the group means coincide and x fell back to the leading
    /// singular direction.
    pub degenerate: bool,
    pub skipped: Vec<String>,
}

impl Projection {
    pub fn xs(&self, group: &str) -> Vec<f64> {
        self.points.iter().filter(|p| p.group == group).map(|p| p.x).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading right singular vector of `m`, taken from the top eigenvector of
/// the row Gram matrix and pinned so its largest-magnitude entry is positive.
fn leading_direction(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.ncols();
    if m.nrows() == 0 || m.iter().all(|v| *v == 0.0) {
        return vec![0.0; d];
    }
    // Work through the (units x units) Gram matrix and map back with m^T, so
    // the result stays inside the row space of `m`.
    let eig = (m * m.transpose()).symmetric_eigen();
    let best = (0..eig.eigenvalues.len())
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .expect("non-empty matrix");
    let back = m.transpose() * eig.eigenvectors.column(best);
    let norm = back.norm();
    if norm < DEGENERATE_EPS {
        return vec![0.0; d];
    }
    let mut v: Vec<f64> = back.iter().map(|x| x / norm).collect();
    let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n as f64).collect()
}

/// Projects `nets` labelled by `labels` (parallel slices). Every label must
/// be one of `groups`; each group needs at least two usable units. Units
/// flagged as excluded are skipped.
pub fn project(nets: &[OnaNetwork], labels: &[String], groups: [&str; 2]) -> Result<Projection, OnaError> {
    if nets.len() != labels.len() {
        return Err(OnaError::Groups(format!("{} networks but {} labels", nets.len(), labels.len())));
    }
    if groups[0] == groups[1] {
        return Err(OnaError::Groups("the two groups must differ".into()));
    }
    let d = nets.first().map(|n| n.adjacency.len()).unwrap_or(0);
    let mut rows: Vec<(&OnaNetwork, &str)> = Vec::new();
    let mut skipped = Vec::new();
    for (net, label) in nets.iter().zip(labels) {
        if !groups.contains(&label.as_str()) {
            return Err(OnaError::Groups(format!("unit {} has label {label:?}", net.unit_id)));
        }
        if net.adjacency.len() != d {
            return Err(OnaError::Groups(format!("unit {} has a different code layout", net.unit_id)));
        }
        if net.excluded {
            skipped.push(net.unit_id.clone());
        } else {
            rows.push((net, label.as_str()));
        }
    }
    for g in groups {
        let n = rows.iter().filter(|(_, l)| *l == g).count();
        if n < 2 {
            return Err(OnaError::Groups(format!("group {g} has {n} usable units, need 2")));
        }
    }

    let center = mean_of(rows.iter().map(|(n, _)| n.adjacency.as_slice()), d);
    let group_mean = |g: &str| mean_of(rows.iter().filter(|(_, l)| *l == g).map(|(n, _)| n.adjacency.as_slice()), d);
    let diff: Vec<f64> = group_mean(groups[0]).iter().zip(group_mean(groups[1])).map(|(a, b)| a - b).collect();
    let diff_norm = dot(&diff, &diff).sqrt();

    let centered = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].0.adjacency[j] - center[j]);
    let degenerate = diff_norm < DEGENERATE_EPS;
    let dim1 = if degenerate { leading_direction(&centered) } else { diff.iter().map(|v| v / diff_norm).collect() };

    let axis = DVector::from_column_slice(&dim1);
    let along = &centered * &axis;
    let residual = &centered - &along * axis.transpose();
    let dim2 = leading_direction(&residual);

    let mut points = Vec::with_capacity(rows.len());
    for (i, (net, label)) in rows.iter().enumerate() {
        let c: Vec<f64> = centered.row(i).iter().copied().collect();
        points.push(Point { unit_id: net.unit_id.clone(), group: label.to_string(), x: dot(&c, &dim1), y: dot(&c, &dim2) });
    }
    let mut group_means = BTreeMap::new();
    for g in groups {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.group == g).map(|p| (p.x, p.y)).unzip();
        let n = xs.len() as f64;
        group_means.insert(g.to_string(), (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n));
    }
    Ok(Projection {
        groups: [groups[0].to_string(), groups[1].to_string()],
        points,
        center,
        dim1,
        dim2,
        group_means,
        degenerate,
        skipped,
    })
}

//! Stationary distributions of finite discrete-time Markov chains.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;

use crate::error::{Error, Result};

/// Row-sparse square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        SparseMatrix { rows }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        SparseMatrix { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .filter(|&&(c, _)| c == j)
            .map(|&(_, p)| p)
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                out[i][j] += p;
            }
        }
        out
    }

    /// `v * self`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += vi * p;
            }
        }
        out
    }

    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&(j, p)| !(p >= 0.0) || j >= self.dim()) {
                return Err(Error::NotStochastic { row: i, sum: f64::NAN });
            }
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(())
    }
}

pub(crate) fn reachable_from(m: &SparseMatrix, start: usize) -> Vec<bool> {
    let mut seen = vec![false; m.dim()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for &(j, p) in m.row(i) {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Closed communicating classes of the chain restricted to `mask`.
fn closed_classes(m: &SparseMatrix, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut graph = DiGraphMap::<usize, ()>::new();
    for i in (0..m.dim()).filter(|&i| mask[i]) {
        graph.add_node(i);
        for &(j, p) in m.row(i) {
            if p > 0.0 {
                graph.add_edge(i, j, ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut class_of = vec![usize::MAX; m.dim()];
    for (c, scc) in sccs.iter().enumerate() {
        for &i in scc {
            class_of[i] = c;
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter().all(|&i| {
                m.row(i)
                    .iter()
                    .all(|&(j, p)| p == 0.0 || class_of[j] == *c)
            })
        })
        .map(|(_, mut scc)| {
            scc.sort_unstable();
            scc
        })
        .collect()
}

/// Grassmann-Taksar-Heyman elimination for an irreducible stochastic matrix.
/// Works on a dense copy and never subtracts, so tiny transition
/// probabilities survive.
pub fn gth(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = a.len();
    if n == 0 {
        return Err(Error::Degenerate("empty chain".into()));
    }
    for k in (1..n).rev() {
        let s: f64 = a[k][..k].iter().sum();
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!(
                "state {k} cannot reach lower-numbered states; chain is reducible"
            )));
        }
        for i in 0..k {
            a[i][k] /= s;
        }
        for i in 0..k {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            let (head, tail) = a.split_at_mut(k);
            let row_k = &tail[0];
            for (x, &y) in head[i][..k].iter_mut().zip(&row_k[..k]) {
                *x += aik * y;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[i][k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

fn stationary_on(m: &SparseMatrix, class: &[usize]) -> Result<Vec<f64>> {
    let mut index = vec![usize::MAX; m.dim()];
    for (k, &i) in class.iter().enumerate() {
        index[i] = k;
    }
    let mut dense = vec![vec![0.0; class.len()]; class.len()];
    for (k, &i) in class.iter().enumerate() {
        for &(j, p) in m.row(i) {
            dense[k][index[j]] += p;
        }
    }
    let local = gth(dense)?;
    let mut pi = vec![0.0; m.dim()];
    for (k, &i) in class.iter().enumerate() {
        pi[i] = local[k];
    }
    Ok(pi)
}

/// Stationary vector of the closed class reached from `start`; every state
/// outside that class gets probability zero.
pub fn stationary_from(m: &SparseMatrix, start: usize) -> Result<Vec<f64>> {
    m.check_stochastic(1e-9)?;
    let mask = reachable_from(m, start);
    let classes = closed_classes(m, &mask);
    match classes.as_slice() {
        [class] => stationary_on(m, class),
        [] => Err(Error::Degenerate("no closed class reachable".into())),
        _ => Err(Error::Degenerate(format!(
            "{} closed classes reachable from state {start}",
            classes.len()
        ))),
    }
}

/// Long-run average of `init * P^t`. Mass starting in transient states is
/// split across the closed classes by absorption probability, and each class
/// contributes its own stationary vector. Periodic classes are handled since
/// this is the time average, not the pointwise limit.
pub fn limit_distribution(m: &SparseMatrix, init: &[f64]) -> Result<Vec<f64>> {
    m.check_stochastic(1e-9)?;
    let n = m.dim();
    let all = vec![true; n];
    let classes = closed_classes(m, &all);
    if classes.is_empty() {
        return Err(Error::Degenerate("no closed class".into()));
    }
    let mut class_of = vec![usize::MAX; n];
    for (c, class) in classes.iter().enumerate() {
        for &i in class {
            class_of[i] = c;
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&i| class_of[i] == usize::MAX).collect();
    let mut mass = vec![0.0; classes.len()];
    for i in 0..n {
        if class_of[i] != usize::MAX {
            mass[class_of[i]] += init[i];
        }
    }
    if !transient.is_empty() {
        let mut t_index = vec![usize::MAX; n];
        for (k, &i) in transient.iter().enumerate() {
            t_index[i] = k;
        }
        let nt = transient.len();
        // Row vector x = init_T (I - Q)^-1 gives expected visits to each
        // transient state; absorption mass is then x R.
        let mut a = DMatrix::<f64>::identity(nt, nt);
        for (k, &i) in transient.iter().enumerate() {
            for &(j, p) in m.row(i) {
                if t_index[j] != usize::MAX {
                    a[(k, t_index[j])] -= p;
                }
            }
        }
        let b = DVector::from_iterator(nt, transient.iter().map(|&i| init[i]));
        let visits = a
            .transpose()
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("transient block is singular".into()))?;
        for (k, &i) in transient.iter().enumerate() {
            for &(j, p) in m.row(i) {
                if class_of[j] != usize::MAX {
                    mass[class_of[j]] += visits[k] * p;
                }
            }
        }
    }
    let mut out = vec![0.0; n];
    for (c, class) in classes.iter().enumerate() {
        if mass[c] == 0.0 {
            continue;
        }
        let local = stationary_on(m, class)?;
        for &i in class {
            out[i] += mass[c] * local[i];
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

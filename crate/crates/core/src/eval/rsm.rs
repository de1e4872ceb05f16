use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::softmax_rows;
use crate::simworld::TaskTag;

/// Class-by-class similarity of latent decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rsm {
    pub classes: Vec<TaskTag>,
    /// Average-linkage cosine similarity, `K × K`.
    pub raw: Vec<Vec<f64>>,
    /// Row-softmax of `raw`.
    pub normalized: Vec<Vec<f64>>,
    /// Trace of `normalized`.
    pub similarity_score: f64,
    pub counts: Vec<usize>,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// RSM over the classes present in `decisions`, in canonical tag order.
pub fn compute_rsm(decisions: &[(Vec<f64>, TaskTag)]) -> Result<Rsm> {
    let mut classes: Vec<TaskTag> = decisions.iter().map(|d| d.1).collect();
    classes.sort();
    classes.dedup();
    compute_rsm_with_classes(decisions, &classes)
}

/// RSM with an explicit class order. Decisions whose class is not listed
/// are ignored. Within-class averages exclude self-pairs, except for a
/// singleton class whose only pair is itself.
pub fn compute_rsm_with_classes(decisions: &[(Vec<f64>, TaskTag)], classes: &[TaskTag]) -> Result<Rsm> {
    if classes.len() < 2 {
        return Err(Error::InvalidInput("RSM needs at least two classes".into()));
    }
    let groups: Vec<Vec<Vec<f64>>> = classes
        .iter()
        .map(|c| decisions.iter().filter(|d| d.1 == *c).map(|d| unit(&d.0)).collect())
        .collect();
    let empty: Vec<String> = classes
        .iter()
        .zip(&groups)
        .filter(|(_, g)| g.is_empty())
        .map(|(c, _)| c.to_string())
        .collect();
    if !empty.is_empty() {
        return Err(Error::MissingClasses(empty));
    }
    let dim = groups[0][0].len();
    if groups.iter().flatten().any(|v| v.len() != dim) {
        return Err(Error::Shape("decision vectors differ in length".into()));
    }
    // Pair sums reduce to dot products of class sums.
    let sums: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| (0..dim).map(|k| g.iter().map(|v| v[k]).sum()).collect())
        .collect();
    let self_dots: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum())
        .collect();
    let k = classes.len();
    let mut raw = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let cross: f64 = sums[a].iter().zip(&sums[b]).map(|(x, y)| x * y).sum();
            let (na, nb) = (groups[a].len() as f64, groups[b].len() as f64);
            raw[a][b] = if a != b {
                cross / (na * nb)
            } else if groups[a].len() == 1 {
                self_dots[a]
            } else {
                (cross - self_dots[a]) / (na * (na - 1.0))
            };
        }
    }
    let mut flat: Vec<f64> = raw.iter().flatten().copied().collect();
    softmax_rows(&mut flat, k);
    let normalized: Vec<Vec<f64>> = flat.chunks(k).map(|r| r.to_vec()).collect();
    let similarity_score = (0..k).map(|i| normalized[i][i]).sum();
    Ok(Rsm {
        classes: classes.to_vec(),
        raw,
        normalized,
        similarity_score,
        counts: groups.iter().map(|g| g.len()).collect(),
    })
}

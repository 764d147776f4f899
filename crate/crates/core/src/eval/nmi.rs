use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nmi {
    pub value: f64,
    /// Set when a labeling has a single class and the formula is 0/0.
    pub degenerate: bool,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2·I(A;B) / (H(A) + H(B))` from empirical frequencies.
pub fn nmi<A, B>(a: &[A], b: &[B]) -> Result<Nmi>
where
    A: Ord,
    B: Ord,
{
    if a.len() != b.len() {
        return Err(FcrError::dim("nmi labelings", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(FcrError::Precondition("nmi needs at least one label".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&B, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ca.len() == 1 || cb.len() == 1 {
        // Both single-class means identical partitions; otherwise no shared information.
        let same = ca.len() == 1 && cb.len() == 1;
        return Ok(Nmi {
            value: if same { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[x] as f64 / n;
            let py = cb[y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok(Nmi {
        value: (2.0 * mi / (ha + hb)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

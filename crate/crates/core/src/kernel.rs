//! Fast weighted sums of the normal pair kernel
//!
//! ```text
//! S = Σ_i Σ_j wa_i · wb_j · Φ((a_i − b_j) / s)
//! ```
//!
//! over every `(i, j)` pair. Small problems use the direct double sum. Large
//! ones sort `b` into clusters of half-width `h·s` around centres `c` and
//! expand `Φ(z₀ − u)` in `u = (b_j − c)/s` about `z₀ = (a_i − c)/s`:
//!
//! ```text
//! Φ(z₀ − u) = Σ_t Φ⁽ᵗ⁾(z₀) (−u)ᵗ / t!,   Φ⁽ᵗ⁾(z) = (−1)ᵗ⁻¹ He_{t−1}(z) φ(z)
//! ```
//!
//! so each cluster contributes through a handful of weighted moments of
//! `u`. With `|u| ≤ 0.1` and 14 terms the truncation error is far below
//! double-precision rounding. Rows of `a` are processed in fixed blocks
//! whose compensated partial sums are combined in block order, so the result
//! does not depend on how many threads run.

use rayon::prelude::*;

use crate::outcome::{std_normal_cdf, std_normal_pdf};
use crate::sum::Neumaier;

const BLOCK: usize = 256;
const HALF_WIDTH: f64 = 0.1;
const TERMS: usize = 14;

struct Cluster {
    centre: f64,
    /// `moments[t] = Σ wb_j (−u_j)ᵗ / t!`
    moments: [f64; TERMS],
}

fn clusters(b: &[f64], wb: &[f64], s: f64) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let width = 2.0 * HALF_WIDTH * s;
    let mut out = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let start = b[order[k]];
        let centre = start + HALF_WIDTH * s;
        let mut acc = [Neumaier::new(); TERMS];
        while k < order.len() && b[order[k]] <= start + width {
            let j = order[k];
            let neg_u = -(b[j] - centre) / s;
            let mut term = wb[j];
            for (t, a) in acc.iter_mut().enumerate() {
                a.add(term);
                term *= neg_u / (t + 1) as f64;
            }
            k += 1;
        }
        let mut moments = [0.0; TERMS];
        for (m, a) in moments.iter_mut().zip(&acc) {
            *m = a.total();
        }
        out.push(Cluster { centre, moments });
    }
    out
}

/// `Σ_t Φ⁽ᵗ⁾(z) m_t` via the probabilists' Hermite recurrence.
#[inline]
fn expand(z: f64, m: &[f64; TERMS]) -> f64 {
    let pdf = std_normal_pdf(z);
    let mut total = std_normal_cdf(z) * m[0];
    if pdf == 0.0 {
        return total;
    }
    // Φ⁽ᵗ⁾ = (−1)ᵗ⁻¹ He_{t−1} φ
    let (mut he_prev, mut he) = (0.0, 1.0);
    let mut tail = 0.0;
    let mut sign = 1.0;
    for (t, &mt) in m.iter().enumerate().skip(1) {
        tail += sign * he * mt;
        let k = (t - 1) as f64;
        let next = z * he - k * he_prev;
        he_prev = he;
        he = next;
        sign = -sign;
    }
    total += tail * pdf;
    total
}

fn direct_block(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], s: f64) -> Neumaier {
    let mut acc = Neumaier::new();
    for (&ai, &wi) in a.iter().zip(wa) {
        if wi == 0.0 {
            continue;
        }
        let mut row = Neumaier::new();
        for (&bj, &wj) in b.iter().zip(wb) {
            row.add(wj * std_normal_cdf((ai - bj) / s));
        }
        acc.add(wi * row.total());
    }
    acc
}

fn expanded_block(a: &[f64], wa: &[f64], cl: &[Cluster], s: f64) -> Neumaier {
    let mut acc = Neumaier::new();
    for (&ai, &wi) in a.iter().zip(wa) {
        if wi == 0.0 {
            continue;
        }
        let mut row = Neumaier::new();
        for c in cl {
            row.add(expand((ai - c.centre) / s, &c.moments));
        }
        acc.add(wi * row.total());
    }
    acc
}

/// `Σ_i Σ_j wa_i wb_j Φ((a_i − b_j)/s)` for `s > 0`.
pub fn normal_pair_sum(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], s: f64) -> f64 {
    assert_eq!(a.len(), wa.len());
    assert_eq!(b.len(), wb.len());
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let cl = clusters(b, wb, s);
    // an expansion costs a few direct evaluations per cluster
    let use_expansion = cl.len() * 4 < b.len();
    let parts: Vec<Neumaier> = a
        .par_chunks(BLOCK)
        .zip(wa.par_chunks(BLOCK))
        .map(|(ab, wab)| {
            if use_expansion {
                expanded_block(ab, wab, &cl, s)
            } else {
                direct_block(ab, wab, b, wb, s)
            }
        })
        .collect();
    let mut total = Neumaier::new();
    for p in &parts {
        total.add(p.total());
    }
    total.total()
}

/// The plain double sum, for reference.
pub fn normal_pair_sum_direct(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], s: f64) -> f64 {
    direct_block(a, wa, b, wb, s).total()
}

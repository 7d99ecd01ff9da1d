//! Location tests against zero: Wilcoxon signed-rank, one-sample t, and the
//! Shapiro-Wilk normality gate that picks between them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-).
    pub statistic: f64,
    /// Sum of ranks of the positive values.
    pub w_plus: f64,
    pub p_value: f64,
    /// Number of nonzero values.
    pub n: usize,
    pub exact: bool,
}

const EXACT_LIMIT: usize = 20;
const MIN_WILCOXON: usize = 6;

/// Mid-ranks of `values` (1-based), ties sharing the mean rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

/// Two-sided Wilcoxon signed-rank test of zero median. Zeros are dropped;
/// tied magnitudes get mid-ranks. Exact null distribution for up to 20
/// nonzero values, normal approximation with tie and continuity correction
/// above.
pub fn wilcoxon_signed_rank(values: &[f64]) -> Result<WilcoxonResult> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite value".into()));
    }
    let nonzero: Vec<f64> = values.iter().copied().filter(|v| *v != 0.0).collect();
    let n = nonzero.len();
    if n < MIN_WILCOXON {
        return Err(Error::Statistics(format!(
            "Wilcoxon test needs at least {MIN_WILCOXON} nonzero values, got {n}"
        )));
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|v| v.abs()).collect();
    let ranks = mid_ranks(&magnitudes);
    let w_plus: f64 = ranks.iter().zip(&nonzero).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= EXACT_LIMIT {
        // Doubled ranks are integers even with mid-ranks.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &d in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + d] += counts[s];
                }
            }
            reach += d;
        }
        let w2 = (2.0 * w_plus).round() as usize;
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let p_value = (2.0 * lower.min(upper)).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            w_plus,
            p_value,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let d = w_plus - mean;
    let corrected = d.signum() * (d.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt();
    let p_value = (2.0 * (1.0 - standard_normal().cdf(z.abs()))).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_value,
        n,
        exact: false,
    })
}

/// Two-sided one-sample t-test against zero mean.
pub fn t_test(values: &[f64]) -> Result<TestResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Statistics("t-test needs at least 2 values".into()));
    }
    let (mean, sd) = mean_sd(values);
    if !(sd > 0.0) {
        return Err(Error::Statistics("t-test on zero-variance sample".into()));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Statistics(e.to_string()))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0);
    Ok(TestResult { statistic: t, p_value })
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Normal quantile, AS 111 (used by the Shapiro-Wilk coefficient approximation).
fn ppnd(p: f64) -> f64 {
    const A: [f64; 4] = [2.506_628_238_84, -18.615_000_625_29, 41.391_197_735_34, -25.441_060_496_37];
    const B: [f64; 4] = [-8.473_510_930_90, 23.083_367_437_43, -21.062_241_018_26, 3.130_829_098_33];
    const C: [f64; 4] = [-2.787_189_311_38, -2.297_964_791_34, 4.850_141_271_35, 2.321_212_768_58];
    const D: [f64; 2] = [3.543_889_247_62, 1.637_067_818_97];
    let q = p - 0.5;
    if q.abs() <= 0.42 {
        let r = q * q;
        return q * (((A[3] * r + A[2]) * r + A[1]) * r + A[0])
            / ((((B[3] * r + B[2]) * r + B[1]) * r + B[0]) * r + 1.0);
    }
    let r = if q > 0.0 { 1.0 - p } else { p };
    if r <= 0.0 {
        return 0.0;
    }
    let r = (-r.ln()).sqrt();
    let v = (((C[3] * r + C[2]) * r + C[1]) * r + C[0]) / ((D[1] * r + D[0]) * r + 1.0);
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// Shapiro-Wilk W and p-value by Royston's approximation (AS R94).
pub fn shapiro_wilk(values: &[f64]) -> Result<TestResult> {
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Statistics(format!("Shapiro-Wilk needs 3 <= n <= 5000, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite value".into()));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < 1e-19 {
        return Err(Error::Statistics("Shapiro-Wilk on zero-variance sample".into()));
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let an25 = an + 0.25;
        let mut summ2 = 0.0;
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = ppnd((i as f64 + 1.0 - 0.375) / an25);
            summ2 += *ai * *ai;
        }
        summ2 *= 2.0;
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - a[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -a[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for ai in &mut a[first..] {
            *ai = -*ai / fac;
        }
    }

    // Coefficient for sorted position i: -a[i] in the lower half, +a[n-1-i] in the upper.
    let coef = |i: usize| {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sx = xs.iter().sum::<f64>() / an;
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in xs.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = xi - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let w = w.max(0.75);
        let p = (1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos()).max(0.0);
        return Ok(TestResult { statistic: w, p_value: p });
    }
    let sf = |z: f64| 1.0 - standard_normal().cdf(z);
    let y = w1.ln();
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            1e-19
        } else {
            let yt = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            sf((yt - m) / s)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        sf((y - m) / s)
    };
    Ok(TestResult { statistic: w, p_value: p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationTest {
    Wilcoxon,
    TTest,
}

/// Outcome of the normality gate and the location test it selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedTest {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub shapiro: TestResult,
    pub alpha: f64,
    pub selected: LocationTest,
    pub statistic: f64,
    pub p_value: f64,
}

/// Shapiro-Wilk at `alpha` decides: normal → t-test, otherwise Wilcoxon.
pub fn gated_location_test(values: &[f64], alpha: f64) -> Result<GatedTest> {
    let shapiro = shapiro_wilk(values)?;
    let (mean, sd) = mean_sd(values);
    let (selected, statistic, p_value) = if shapiro.p_value < alpha {
        let w = wilcoxon_signed_rank(values)?;
        (LocationTest::Wilcoxon, w.statistic, w.p_value)
    } else {
        let t = t_test(values)?;
        (LocationTest::TTest, t.statistic, t.p_value)
    };
    Ok(GatedTest {
        n: values.len(),
        mean,
        sd,
        shapiro,
        alpha,
        selected,
        statistic,
        p_value,
    })
}

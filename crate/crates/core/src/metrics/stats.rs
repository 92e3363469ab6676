use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips. Ties should be dropped by the caller.
pub fn sign_test_p(wins: usize, trials: usize) -> Result<f64> {
    if wins > trials || trials == 0 {
        return Err(Error::Parameter("sign test needs 0 <= wins <= trials, trials > 0".into()));
    }
    let b = Binomial::new(0.5, trials as u64).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(if wins == 0 { 1.0 } else { 1.0 - b.cdf(wins as u64 - 1) })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Two-sided Welch t-test p-value for equal means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter("Welch test needs two samples of size >= 2".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se = (sa + sb).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Ordinal and nominal logit links: the map between a node's `c - 1`
//! logits and its `c` category probabilities, its inverse, and its Jacobian.
//!
//! Orientation conventions:
//! - adjacent: `lam[h-1] = log P(Z=h) / P(Z=h-1)`
//! - global: `lam[h-1] = logit P(Z >= h)`, strictly decreasing in `h`
//! - continuation: `lam[h-1] = log P(Z >= h) / P(Z = h-1)`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Adjacent,
    Global,
    Continuation,
}

impl Link {
    /// One-letter code used in model summaries.
    pub fn code(self) -> char {
        match self {
            Link::Adjacent => 'a',
            Link::Global => 'g',
            Link::Continuation => 'c',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Adjacent => "adjacent",
            Link::Global => "global",
            Link::Continuation => "continuation",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adjacent" | "a" => Ok(Link::Adjacent),
            "global" | "cumulative" | "g" => Ok(Link::Global),
            "continuation" | "c" => Ok(Link::Continuation),
            other => Err(format!("unknown link keyword `{other}`")),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn expit<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Global logits must be strictly decreasing.
pub fn check_logits<T: Scalar>(link: Link, lam: &[T]) -> Result<()> {
    if lam.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logit".into()));
    }
    if link == Link::Global && lam.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidCumulativeLogits);
    }
    Ok(())
}

pub fn logits_to_probs<T: Scalar>(link: Link, lam: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); lam.len() + 1];
    logits_to_probs_into(link, lam, &mut out)?;
    Ok(out)
}

/// Writes the `lam.len() + 1` category probabilities into `out`.
pub fn logits_to_probs_into<T: Scalar>(link: Link, lam: &[T], out: &mut [T]) -> Result<()> {
    check_logits(link, lam)?;
    let c = lam.len() + 1;
    if out.len() != c {
        return Err(Error::Dimension(format!(
            "{} logits need {c} probability slots, got {}",
            lam.len(),
            out.len()
        )));
    }
    match link {
        Link::Adjacent => {
            // cumulative sums of logits are log P(h)/P(0)
            out[0] = T::zero();
            let mut acc = T::zero();
            let mut max = T::zero();
            for h in 1..c {
                acc = acc + lam[h - 1];
                out[h] = acc;
                if acc > max {
                    max = acc;
                }
            }
            let mut total = T::zero();
            for v in out.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in out.iter_mut() {
                *v = *v / total;
            }
        }
        Link::Global => {
            // P(h) = S_h - S_{h+1}; lower tail used where it is smaller
            let mut prev_upper = T::one();
            let mut prev_lower = T::zero();
            for h in 1..c {
                let upper = expit(lam[h - 1]);
                let lower = expit(-lam[h - 1]);
                out[h - 1] = if upper > T::from_f64(0.5).unwrap() {
                    prev_upper - upper
                } else {
                    lower - prev_lower
                };
                prev_upper = upper;
                prev_lower = lower;
            }
            out[c - 1] = prev_upper;
        }
        Link::Continuation => {
            let mut surv = T::one();
            for h in 1..c {
                out[h - 1] = surv * expit(-lam[h - 1]);
                surv = surv * expit(lam[h - 1]);
            }
            out[c - 1] = surv;
        }
    }
    Ok(())
}

pub fn probs_to_logits<T: Scalar>(link: Link, p: &[T]) -> Result<Vec<T>> {
    if p.len() < 2 {
        return Err(Error::Dimension("need at least two categories".into()));
    }
    if p.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::NonPositiveProbability);
    }
    let c = p.len();
    let lam = match link {
        Link::Adjacent => (1..c).map(|h| (p[h] / p[h - 1]).ln()).collect(),
        Link::Global => (1..c)
            .map(|h| {
                let upper: T = p[h..].iter().fold(T::zero(), |a, &b| a + b);
                let lower: T = p[..h].iter().fold(T::zero(), |a, &b| a + b);
                (upper / lower).ln()
            })
            .collect(),
        Link::Continuation => (1..c)
            .map(|h| {
                let upper: T = p[h..].iter().fold(T::zero(), |a, &b| a + b);
                (upper / p[h - 1]).ln()
            })
            .collect(),
    };
    Ok(lam)
}

/// Jacobian of the probabilities with respect to the logits, row-major
/// `c x (c-1)`: entry `(h, k)` is `dP(Z=h) / d lam[k]`.
pub fn dprobs_dlogits<T: Scalar>(link: Link, lam: &[T]) -> Result<Vec<T>> {
    let c = lam.len() + 1;
    let mut p = vec![T::zero(); c];
    let mut jac = vec![T::zero(); c * (c - 1)];
    dprobs_dlogits_into(link, lam, &mut p, &mut jac)?;
    Ok(jac)
}

/// Fills both the probabilities and their Jacobian.
pub fn dprobs_dlogits_into<T: Scalar>(link: Link, lam: &[T], probs: &mut [T], jac: &mut [T]) -> Result<()> {
    logits_to_probs_into(link, lam, probs)?;
    let c = probs.len();
    let m = c - 1;
    if jac.len() != c * m {
        return Err(Error::Dimension("jacobian buffer has wrong size".into()));
    }
    match link {
        Link::Adjacent => {
            // dP_h/dlam_k = P_h (I(h >= k) - S_k), S_k = sum_{m >= k} P_m
            let mut surv = vec![T::zero(); c + 1];
            for h in (0..c).rev() {
                surv[h] = surv[h + 1] + probs[h];
            }
            for h in 0..c {
                for k in 1..c {
                    let ind = if h >= k { T::one() } else { T::zero() };
                    jac[h * m + k - 1] = probs[h] * (ind - surv[k]);
                }
            }
        }
        Link::Global => {
            for v in jac.iter_mut() {
                *v = T::zero();
            }
            for k in 1..c {
                let d = expit(lam[k - 1]) * expit(-lam[k - 1]);
                jac[k * m + k - 1] = d;
                jac[(k - 1) * m + k - 1] = -d;
            }
        }
        Link::Continuation => {
            for h in 0..c {
                for k in 1..c {
                    let q = expit(lam[k - 1]);
                    let one_minus_q = expit(-lam[k - 1]);
                    let mut d = T::zero();
                    if k <= h {
                        d = d + one_minus_q;
                    }
                    if h + 1 < c && k == h + 1 {
                        d = d - q;
                    }
                    jac[h * m + k - 1] = probs[h] * d;
                }
            }
        }
    }
    Ok(())
}

/// Logits of the uniform distribution over `c` categories.
pub fn uniform_logits(link: Link, c: usize) -> Vec<f64> {
    let p = vec![1.0 / c as f64; c];
    probs_to_logits(link, &p).expect("uniform probabilities are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINKS: [Link; 3] = [Link::Adjacent, Link::Global, Link::Continuation];

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn adjacent_examples() {
        let p = logits_to_probs(Link::Adjacent, &[0.0, 0.0]).unwrap();
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-15));
        let ln2 = 2f64.ln();
        let p = logits_to_probs(Link::Adjacent, &[ln2, ln2]).unwrap();
        assert!(close(&p, &[1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0], 1e-15));
        let lam = probs_to_logits(Link::Adjacent, &[1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]).unwrap();
        assert!(close(&lam, &[ln2, ln2], 1e-14));
    }

    #[test]
    fn global_examples() {
        let lam = [logit(0.9), logit(0.4)];
        let p = logits_to_probs(Link::Global, &lam).unwrap();
        assert!(close(&p, &[0.1, 0.5, 0.4], 1e-15));
        let back = probs_to_logits(Link::Global, &[0.1, 0.5, 0.4]).unwrap();
        assert!(close(&back, &lam, 1e-14));
        assert!(matches!(
            logits_to_probs(Link::Global, &[0.0, 0.5]),
            Err(Error::InvalidCumulativeLogits)
        ));
        assert!(matches!(
            logits_to_probs(Link::Global, &[0.3, 0.3]),
            Err(Error::InvalidCumulativeLogits)
        ));
    }

    #[test]
    fn uniform_binary_has_zero_logit() {
        for link in LINKS {
            assert_eq!(probs_to_logits(link, &[0.5, 0.5]).unwrap(), vec![0.0]);
        }
        assert!(matches!(
            probs_to_logits(Link::Adjacent, &[0.0, 1.0]),
            Err(Error::NonPositiveProbability)
        ));
    }

    #[test]
    fn binary_derivative_at_zero() {
        for link in LINKS {
            let j = dprobs_dlogits(link, &[0.0]).unwrap();
            assert!(close(&j, &[-0.25, 0.25], 1e-15), "{link}: {j:?}");
        }
    }

    #[test]
    fn global_jacobian_matches_finite_differences() {
        let lam = [logit(0.9f64), logit(0.4)];
        let jac = dprobs_dlogits(Link::Global, &lam).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut up = lam;
            let mut dn = lam;
            up[k] += h;
            dn[k] -= h;
            let pu = logits_to_probs(Link::Global, &up).unwrap();
            let pd = logits_to_probs(Link::Global, &dn).unwrap();
            for r in 0..3 {
                let fd = (pu[r] - pd[r]) / (2.0 * h);
                assert!((fd - jac[r * 2 + k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn binary_adjacent_equals_global() {
        for x in [-3.0, -0.2, 0.0, 1.7] {
            let a = logits_to_probs(Link::Adjacent, &[x]).unwrap();
            let g = logits_to_probs(Link::Global, &[x]).unwrap();
            assert!(close(&a, &g, 1e-15));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let lam = [0.7f32, -0.4, -1.2];
        for link in LINKS {
            let p = logits_to_probs(link, &lam).unwrap();
            let back = probs_to_logits(link, &p).unwrap();
            for (a, b) in back.iter().zip(&lam) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn link_keywords() {
        assert_eq!("g".parse::<Link>().unwrap(), Link::Global);
        assert_eq!("Adjacent".parse::<Link>().unwrap(), Link::Adjacent);
        assert!("probit".parse::<Link>().is_err());
    }

    fn simplex() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.02f64..1.0, 2..=6).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    fn logits_for(link: Link) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..=5).prop_map(move |mut v| {
            if link == Link::Global {
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                for k in 1..v.len() {
                    if v[k] > v[k - 1] - 1e-3 {
                        v[k] = v[k - 1] - 1e-3;
                    }
                }
            }
            v
        })
    }

    proptest! {
        #[test]
        fn round_trip(p in simplex()) {
            for link in LINKS {
                let lam = probs_to_logits(link, &p).unwrap();
                let q = logits_to_probs(link, &lam).unwrap();
                prop_assert!(close(&p, &q, 1e-12), "{link}: {p:?} vs {q:?}");
            }
        }

        #[test]
        fn jacobian_columns_sum_to_zero(lam in logits_for(Link::Global), which in 0usize..3) {
            let link = LINKS[which];
            let j = dprobs_dlogits(link, &lam).unwrap();
            let m = lam.len();
            for k in 0..m {
                let s: f64 = (0..=m).map(|h| j[h * m + k]).sum();
                prop_assert!(s.abs() < 1e-14);
            }
        }

        #[test]
        fn probabilities_are_valid(lam in logits_for(Link::Global), which in 0usize..3) {
            let p = logits_to_probs(LINKS[which], &lam).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}

use crate::error::{Error, Result};

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine distance",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>();
    let nv = v.iter().map(|a| a * a).sum::<f64>();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine distance of a zero vector"));
    }
    // sqrt(x·x) == x, so identical vectors give exactly 0
    Ok((1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0))
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("distribution has negative or NaN entries"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("distribution sums to {s}")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, at most `ln 2`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            op: "jsd",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (2.0 * x / (x + y)).ln())
            .sum()
    };
    Ok((0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn cosine_cases() {
        let u = [1.0, 2.0, -3.0];
        assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 2.0], &[-2.0, -4.0]).unwrap(), 2.0);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_distance(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn jsd_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.3, 0.7]).unwrap() - LN_2).abs() < 1e-12);
        assert!(jsd(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        // scalar oracle with explicit mixture
        let q = [0.6, 0.1, 0.3];
        let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
        let kl = |a: &[f64]| a.iter().zip(&m).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
        assert!((jsd(&p, &q).unwrap() - 0.5 * (kl(&p) + kl(&q))).abs() < 1e-15);
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-3).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn jsd_bounded_and_symmetric((p, q) in (dist(5), dist(5))) {
            let a = jsd(&p, &q).unwrap();
            prop_assert!(a <= LN_2 + 1e-12);
            prop_assert!((a - jsd(&q, &p).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn cosine_in_range(u in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() < 1e-15);
        }
    }
}

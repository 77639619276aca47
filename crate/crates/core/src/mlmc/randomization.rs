use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Distributions of the level `l` and the iteration index `p` of one
/// estimator term, with `T_p = 2^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationScheme {
    l_min: u32,
    l_max: u32,
    epsilon: f64,
    pmf_l: Vec<f64>,
    pmf_p: Vec<f64>,
}

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// `ℙ_L(l) ∝ 2^(−lε/2)` on `{l_min..L}` and
/// `ℙ_P(p) ∝ 2^(−p)(p+1)log₂(p+2)²` on `{0..P_max}`.
pub fn build_randomization(l_min: u32, l_max: u32, epsilon: f64, p_max: u32) -> Result<RandomizationScheme> {
    if l_min < 1 {
        return Err(Error::config("mlmc.l_min", format!("must be at least 1, got {l_min}")));
    }
    if l_max < l_min {
        return Err(Error::config(
            "mlmc.L",
            format!("mlmc.L = {l_max} is below mlmc.l_min = {l_min}"),
        ));
    }
    if l_max > 20 {
        return Err(Error::config("mlmc.L", format!("at most 20 levels are supported, got {l_max}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config("mlmc.epsilon", format!("must lie in (0, 1), got {epsilon}")));
    }
    if p_max > 30 {
        return Err(Error::config("mlmc.P_max", format!("at most 30, got {p_max}")));
    }
    let pmf_l = normalized((l_min..=l_max).map(|l| (-(l as f64) * epsilon / 2.0).exp2()).collect());
    let pmf_p = normalized(
        (0..=p_max)
            .map(|p| {
                let p = p as f64;
                (-p).exp2() * (p + 1.0) * (p + 2.0).log2().powi(2)
            })
            .collect(),
    );
    Ok(RandomizationScheme {
        l_min,
        l_max,
        epsilon,
        pmf_l,
        pmf_p,
    })
}

impl RandomizationScheme {
    /// Replaces `ℙ_P` by an explicit table over `{0..len−1}`. Entries must be
    /// positive; they are normalized.
    pub fn with_pmf_p(mut self, table: &[f64]) -> Result<Self> {
        if table.is_empty() || table.len() > 31 || !table.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::config(
                "mlmc.pmf_p",
                "needs 1 to 31 positive finite entries",
            ));
        }
        self.pmf_p = normalized(table.to_vec());
        Ok(self)
    }

    pub fn l_min(&self) -> u32 {
        self.l_min
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn p_max(&self) -> u32 {
        self.pmf_p.len() as u32 - 1
    }

    pub fn levels(&self) -> impl Iterator<Item = u32> + '_ {
        self.l_min..=self.l_max
    }

    pub fn pmf_l(&self) -> &[f64] {
        &self.pmf_l
    }

    pub fn pmf_p(&self) -> &[f64] {
        &self.pmf_p
    }

    pub fn prob_l(&self, l: u32) -> f64 {
        self.pmf_l[(l - self.l_min) as usize]
    }

    pub fn prob_p(&self, p: u32) -> f64 {
        self.pmf_p[p as usize]
    }

    /// `T_p = 2^p`.
    pub fn t_p(p: u32) -> usize {
        1usize << p
    }

    /// `1 / (ℙ_L(l) ℙ_P(p))`.
    pub fn weight(&self, l: u32, p: u32) -> f64 {
        1.0 / (self.prob_l(l) * self.prob_p(p))
    }

    /// Draws `(l, p)` independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        let l = WeightedIndex::new(&self.pmf_l).expect("positive pmf").sample(rng) as u32 + self.l_min;
        let p = WeightedIndex::new(&self.pmf_p).expect("positive pmf").sample(rng) as u32;
        (l, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn level_pmf_closed_form() {
        let s = build_randomization(2, 4, 0.9, 10).unwrap();
        let w = [(-0.9f64).exp2(), (-1.35f64).exp2(), (-1.8f64).exp2()];
        let z: f64 = w.iter().sum();
        for (a, b) in s.pmf_l().iter().zip(&w) {
            assert!((a - b / z).abs() < 1e-15);
        }
        assert!((s.pmf_l().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((s.pmf_p().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn point_masses() {
        let s = build_randomization(3, 3, 0.5, 0).unwrap();
        assert_eq!(s.pmf_l(), &[1.0]);
        assert_eq!(s.pmf_p(), &[1.0]);
        assert_eq!(s.weight(3, 0), 1.0);
        let mut rng = StreamKey::new(1).rng();
        for _ in 0..20 {
            assert_eq!(s.sample(&mut rng), (3, 0));
        }
        assert_eq!(RandomizationScheme::t_p(0), 1);
        assert_eq!(RandomizationScheme::t_p(10), 1024);
    }

    #[test]
    fn rejects_bad_ranges() {
        for (a, b, e, key) in [(0, 3, 0.5, "mlmc.l_min"), (4, 3, 0.5, "mlmc.L"), (2, 4, 1.0, "mlmc.epsilon"), (2, 4, 0.0, "mlmc.epsilon")] {
            match build_randomization(a, b, e, 4) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{other:?}"),
            }
        }
        let s = build_randomization(2, 4, 0.5, 4).unwrap();
        assert!(s.clone().with_pmf_p(&[1.0, 0.0]).is_err());
        let t = s.with_pmf_p(&[1.0, 3.0]).unwrap();
        assert_eq!(t.pmf_p(), &[0.25, 0.75]);
        assert_eq!(t.p_max(), 1);
    }

    #[test]
    fn weights_are_inverse_probabilities() {
        let s = build_randomization(2, 6, 0.7, 6).unwrap();
        for l in s.levels() {
            for p in 0..=6 {
                assert_eq!(s.weight(l, p), 1.0 / (s.prob_l(l) * s.prob_p(p)));
            }
        }
    }

    #[test]
    fn sampling_frequencies() {
        let s = build_randomization(2, 4, 0.9, 3).unwrap();
        let mut rng = StreamKey::new(2).rng();
        let mut cl = [0usize; 3];
        let mut cp = [0usize; 4];
        let n = 200_000;
        for _ in 0..n {
            let (l, p) = s.sample(&mut rng);
            cl[(l - 2) as usize] += 1;
            cp[p as usize] += 1;
        }
        for (c, q) in cl.iter().zip(s.pmf_l()) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.005);
        }
        for (c, q) in cp.iter().zip(s.pmf_p()) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.005);
        }
    }
}

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::SpectralField;
use crate::noise::RngStream;
use crate::stats::{quantile_sorted, sorted};

/// Number of low modes whose real and imaginary parts enter the observable vector.
pub const OBSERVABLE_COEFFS: usize = 8;
/// `2 * OBSERVABLE_COEFFS` coefficients plus `||u||`, `||u||_1`, `|u|_inf`.
pub const OBSERVABLE_LEN: usize = 2 * OBSERVABLE_COEFFS + 3;

/// Observable vector of a state: real and imaginary parts of the
/// [`OBSERVABLE_COEFFS`] lowest modes (by eigenvalue, then index), then
/// `||u||`, `||u||_1` and `|u|_inf`. Missing modes contribute zeros.
pub fn observables(u: &SpectralField, sup: f64) -> Vec<f64> {
    let lattice = u.lattice();
    let mut idx: Vec<usize> = (0..lattice.len()).collect();
    idx.sort_by_key(|&i| (lattice.mode_norm_sq(i), i));
    let mut out = Vec::with_capacity(OBSERVABLE_LEN);
    for k in 0..OBSERVABLE_COEFFS {
        let c = idx.get(k).map_or(Default::default(), |&i| u.coeffs()[i]);
        out.push(c.re);
        out.push(c.im);
    }
    out.push(u.l2_norm());
    out.push(u.sobolev_norm(1.0));
    out.push(sup);
    out
}

/// Bounded Lipschitz functional on the observable space (Euclidean metric).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `weight * clip(o_coord, -1, 1)`.
    Clip { coord: usize, weight: f64 },
    /// `weight * min(|o - anchor|, 1)`.
    Radial { anchor: Vec<f64>, weight: f64 },
    /// `weight * tanh(o_coord / scale)`.
    Tanh {
        coord: usize,
        scale: f64,
        weight: f64,
    },
}

impl Functional {
    pub fn eval(&self, o: &[f64]) -> f64 {
        match self {
            Functional::Clip { coord, weight } => weight * o[*coord].clamp(-1.0, 1.0),
            Functional::Radial { anchor, weight } => {
                let d = o
                    .iter()
                    .zip(anchor)
                    .map(|(x, a)| (x - a).powi(2))
                    .sum::<f64>()
                    .sqrt();
                weight * d.min(1.0)
            }
            Functional::Tanh {
                coord,
                scale,
                weight,
            } => weight * (o[*coord] / scale).tanh(),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            Functional::Clip { weight, .. }
            | Functional::Radial { weight, .. }
            | Functional::Tanh { weight, .. } => weight.abs(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Functional::Clip { weight, .. } | Functional::Radial { weight, .. } => weight.abs(),
            Functional::Tanh { scale, weight, .. } => weight.abs() / scale,
        }
    }

    fn max_coord(&self) -> usize {
        match self {
            Functional::Clip { coord, .. } | Functional::Tanh { coord, .. } => *coord,
            Functional::Radial { anchor, .. } => anchor.len().saturating_sub(1),
        }
    }
}

/// Finite family of functionals with `|f|_inf + Lip(f) <= 1`, certified on
/// construction by random pair checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestDictionary {
    id: String,
    dim: usize,
    members: Vec<Functional>,
}

const CERTIFY_PAIRS: usize = 256;

impl TestDictionary {
    pub fn new(id: impl Into<String>, dim: usize, members: Vec<Functional>) -> Result<Self> {
        let id = id.into();
        let mut rng = RngStream::new(0x5eed, 0);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..CERTIFY_PAIRS)
            .map(|k| {
                let scale = [0.1, 1.0, 4.0][k % 3];
                let x: Vec<f64> = (0..dim).map(|_| scale * rng.normal()).collect();
                let y: Vec<f64> = x.iter().map(|v| v + 0.3 * scale * rng.normal()).collect();
                (x, y)
            })
            .collect();
        for (j, f) in members.iter().enumerate() {
            let bad = |reason: String| Error::param("dictionary", format!("member {j}: {reason}"));
            if let Functional::Radial { anchor, .. } = f {
                if anchor.len() != dim {
                    return Err(bad(format!("anchor has {} coordinates", anchor.len())));
                }
            }
            if f.max_coord() >= dim {
                return Err(bad("coordinate out of range".into()));
            }
            if f.sup_bound() + f.lipschitz() > 1.0 + 1e-12 {
                return Err(bad("|f|_inf + Lip(f) exceeds 1".into()));
            }
            for (x, y) in &pairs {
                let (fx, fy) = (f.eval(x), f.eval(y));
                let d = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if fx.abs() > f.sup_bound() * (1.0 + 1e-12)
                    || (fx - fy).abs() > f.lipschitz() * d * (1.0 + 1e-12) + 1e-15
                {
                    return Err(bad("failed the numerical Lipschitz check".into()));
                }
            }
        }
        Ok(Self { id, dim, members })
    }

    /// Clipped coordinates, radial functionals around the origin and the unit
    /// coordinate vectors, and `tanh` profiles at scales 1, 2 and 4.
    pub fn default_for(dim: usize) -> Self {
        let mut members: Vec<Functional> = (0..dim)
            .map(|coord| Functional::Clip { coord, weight: 0.5 })
            .collect();
        members.push(Functional::Radial {
            anchor: vec![0.0; dim],
            weight: 0.5,
        });
        for j in 0..dim {
            let mut anchor = vec![0.0; dim];
            anchor[j] = 1.0;
            members.push(Functional::Radial {
                anchor,
                weight: 0.5,
            });
        }
        for scale in [1.0, 2.0, 4.0] {
            members.extend((0..dim).map(|coord| Functional::Tanh {
                coord,
                scale,
                weight: 0.5,
            }));
        }
        Self::new("default", dim, members).expect("default dictionary is certified")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[Functional] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Dictionary with `extra` appended, under a new id.
    pub fn extended(&self, id: impl Into<String>, extra: Vec<Functional>) -> Result<Self> {
        let mut members = self.members.clone();
        members.extend(extra);
        Self::new(id, self.dim, members)
    }

    pub fn eval_all(&self, o: &[f64]) -> Vec<f64> {
        self.members.iter().map(|f| f.eval(o)).collect()
    }
}

/// Dictionary evaluations of a sample of observable vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub dictionary_id: String,
    pub samples: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn from_observables(dict: &TestDictionary, observables: &[Vec<f64>]) -> Result<Self> {
        if let Some(o) = observables.iter().find(|o| o.len() != dict.dim()) {
            return Err(Error::DimensionMismatch {
                expected: dict.dim(),
                got: o.len(),
            });
        }
        Ok(Self {
            dictionary_id: dict.id().to_string(),
            samples: observables.iter().map(|o| dict.eval_all(o)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn means(&self) -> Vec<f64> {
        mean_of(&self.samples, None)
    }
}

fn mean_of(samples: &[Vec<f64>], idx: Option<&[usize]>) -> Vec<f64> {
    let k = samples.first().map_or(0, |s| s.len());
    let mut acc = vec![0.0; k];
    let mut count = 0usize;
    let mut add = |s: &Vec<f64>| {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
        count += 1;
    };
    match idx {
        Some(ix) => ix.iter().for_each(|&i| add(&samples[i])),
        None => samples.iter().for_each(add),
    }
    acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    acc
}

fn max_gap(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold(
            (0.0, 0),
            |best, (j, d)| if d > best.0 { (d, j) } else { best },
        )
}

/// Lower bound on the dual-Lipschitz distance with a percentile bootstrap
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub estimate: f64,
    /// Index of the maximizing dictionary member.
    pub argmax: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
}

impl DistanceEstimate {
    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// `estimate + halfwidth`, the quantity compared with mixing thresholds.
    pub fn upper(&self) -> f64 {
        self.estimate + self.halfwidth()
    }
}

pub const DEFAULT_BOOTSTRAP: usize = 200;

pub fn dual_lipschitz_estimate(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    dict: &TestDictionary,
) -> Result<DistanceEstimate> {
    dual_lipschitz_bootstrap(a, b, dict, DEFAULT_BOOTSTRAP, 0)
}

/// `max_f |mean_a f - mean_b f|` over the dictionary. Replicate `r` resamples
/// both sides using stream `r` of `seed`, so the interval is reproducible.
pub fn dual_lipschitz_bootstrap(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    dict: &TestDictionary,
    replicates: usize,
    seed: u64,
) -> Result<DistanceEstimate> {
    for m in [a, b] {
        if m.dictionary_id != dict.id() {
            return Err(Error::DictionaryMismatch(
                m.dictionary_id.clone(),
                dict.id().into(),
            ));
        }
        if m.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if m.samples.iter().any(|s| s.len() != dict.len()) {
            return Err(Error::DimensionMismatch {
                expected: dict.len(),
                got: m.samples[0].len(),
            });
        }
    }
    let (estimate, argmax) = max_gap(&a.means(), &b.means());
    let reps: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r);
            let ia: Vec<usize> = (0..a.len()).map(|_| rng.gen_range(0..a.len())).collect();
            let ib: Vec<usize> = (0..b.len()).map(|_| rng.gen_range(0..b.len())).collect();
            max_gap(
                &mean_of(&a.samples, Some(&ia)),
                &mean_of(&b.samples, Some(&ib)),
            )
            .0
        })
        .collect();
    let (ci_low, ci_high) = if reps.is_empty() {
        (estimate, estimate)
    } else {
        let s = sorted(&reps);
        (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
    };
    Ok(DistanceEstimate {
        estimate,
        argmax,
        ci_low,
        ci_high,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measure(dict: &TestDictionary, pts: &[Vec<f64>]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_observables(dict, pts).unwrap()
    }

    fn cloud(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| (0..4).map(|_| shift + rng.normal()).collect())
            .collect()
    }

    #[test]
    fn identical_samples_give_zero() {
        let d = TestDictionary::default_for(4);
        let a = measure(&d, &cloud(1, 50, 0.0));
        let est = dual_lipschitz_estimate(&a, &a, &d).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.ci_low >= 0.0);
    }

    #[test]
    fn point_masses_match_exhaustive_max() {
        let d = TestDictionary::default_for(4);
        let u = vec![0.3, -2.0, 0.0, 1.5];
        let v = vec![-0.4, 0.5, 0.2, 0.0];
        let est =
            dual_lipschitz_estimate(&measure(&d, &[u.clone()]), &measure(&d, &[v.clone()]), &d)
                .unwrap();
        let brute = d
            .members()
            .iter()
            .map(|f| (f.eval(&u) - f.eval(&v)).abs())
            .fold(0.0, f64::max);
        assert_eq!(est.estimate, brute);
        assert!(est.estimate <= 2.0);
        assert_eq!(est.ci_low, est.ci_high);
    }

    #[test]
    fn mismatched_dictionary_rejected() {
        let d = TestDictionary::default_for(4);
        let e = d
            .extended(
                "bigger",
                vec![Functional::Clip {
                    coord: 0,
                    weight: 0.1,
                }],
            )
            .unwrap();
        let a = measure(&d, &cloud(1, 5, 0.0));
        let b = measure(&e, &cloud(2, 5, 0.0));
        assert!(matches!(
            dual_lipschitz_estimate(&a, &b, &d),
            Err(Error::DictionaryMismatch(..))
        ));
    }

    #[test]
    fn uncertified_member_rejected() {
        let too_steep = Functional::Tanh {
            coord: 0,
            scale: 0.5,
            weight: 0.5,
        };
        assert!(TestDictionary::new("x", 2, vec![too_steep]).is_err());
        let bad_anchor = Functional::Radial {
            anchor: vec![0.0],
            weight: 0.5,
        };
        assert!(TestDictionary::new("x", 2, vec![bad_anchor]).is_err());
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let d = TestDictionary::default_for(4);
        let a = measure(&d, &cloud(1, 80, 0.0));
        let b = measure(&d, &cloud(2, 80, 0.5));
        let x = dual_lipschitz_bootstrap(&a, &b, &d, 100, 7).unwrap();
        let y = dual_lipschitz_bootstrap(&a, &b, &d, 100, 7).unwrap();
        assert_eq!(x, y);
        assert!(x.ci_low <= x.estimate + 1e-12 || x.ci_high >= x.estimate);
    }

    #[test]
    fn observable_layout() {
        use crate::lattice::ModeLattice;
        let l = ModeLattice::new(1, 4, 4).unwrap();
        let u = &SpectralField::eigenmode(l, &[2]).unwrap() * 3.0;
        let o = observables(&u, 1.25);
        assert_eq!(o.len(), OBSERVABLE_LEN);
        assert_eq!(o[2], 3.0);
        assert_eq!(&o[8..16], &[0.0; 8]);
        assert_eq!(o[16], 3.0);
        assert!((o[17] - 6.0).abs() < 1e-12);
        assert_eq!(o[18], 1.25);
    }

    proptest! {
        #[test]
        fn pseudometric_properties(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
            let d = TestDictionary::default_for(4);
            let a = measure(&d, &cloud(s1, 12, 0.0));
            let b = measure(&d, &cloud(s2, 12, 0.7));
            let c = measure(&d, &cloud(s3, 12, -0.3));
            let ab = dual_lipschitz_bootstrap(&a, &b, &d, 0, 0).unwrap().estimate;
            let ba = dual_lipschitz_bootstrap(&b, &a, &d, 0, 0).unwrap().estimate;
            let bc = dual_lipschitz_bootstrap(&b, &c, &d, 0, 0).unwrap().estimate;
            let ac = dual_lipschitz_bootstrap(&a, &c, &d, 0, 0).unwrap().estimate;
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab <= 2.0);
        }

        #[test]
        fn enlarging_dictionary_never_decreases(s1 in 0u64..1000, s2 in 0u64..1000) {
            let d = TestDictionary::default_for(4);
            let e = d
                .extended("enlarged", vec![Functional::Radial { anchor: vec![1.0, 1.0, 0.0, 0.0], weight: 0.5 }])
                .unwrap();
            let (pa, pb) = (cloud(s1, 10, 0.0), cloud(s2, 10, 0.4));
            let small = dual_lipschitz_bootstrap(&measure(&d, &pa), &measure(&d, &pb), &d, 0, 0).unwrap();
            let big = dual_lipschitz_bootstrap(&measure(&e, &pa), &measure(&e, &pb), &e, 0, 0).unwrap();
            prop_assert!(big.estimate >= small.estimate);
        }
    }
}

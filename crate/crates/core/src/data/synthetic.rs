use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DomainSequence, GroundTruthMap, LabeledDataset, SequenceMetadata};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Shared parameters of the two circle generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleParams {
    pub n_domains: usize,
    pub n_per_domain: usize,
    pub radius: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self {
            n_domains: 30,
            n_per_domain: 1000,
            radius: 1.0,
            noise_sigma: 0.2,
            seed: 0,
        }
    }
}

impl CircleParams {
    fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::param(format!("need at least 2 domains, got {}", self.n_domains)));
        }
        if self.n_per_domain < 2 {
            return Err(Error::param(format!("need at least 2 points per domain, got {}", self.n_per_domain)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::param(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Isotropic blobs whose centers walk along a circle of radius `r`; the label
/// is 1 when the squared distance to the origin is at most `r`.
fn circle_family(p: &CircleParams, generator: &str, angles: &[f64], maps: Vec<GroundTruthMap>) -> Result<DomainSequence> {
    p.validate()?;
    let mut domains = Vec::with_capacity(angles.len());
    for (i, &theta) in angles.iter().enumerate() {
        let t = i + 1;
        let mut rng = rng::seeded(p.seed.wrapping_add(t as u64));
        let (s, c) = theta.sin_cos();
        let center = [p.radius * c, p.radius * s];
        let mut data = Vec::with_capacity(p.n_per_domain * 2);
        let mut labels = Vec::with_capacity(p.n_per_domain);
        for _ in 0..p.n_per_domain {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let (x1, x2) = (center[0] + p.noise_sigma * e1, center[1] + p.noise_sigma * e2);
            data.push(x1);
            data.push(x2);
            labels.push(circle_label(x1, x2, p.radius));
        }
        domains.push(LabeledDataset::new(Tensor::new(vec![p.n_per_domain, 2], data)?, labels, 2, t)?);
    }
    let metadata = SequenceMetadata {
        generator: generator.to_string(),
        seed: p.seed,
        params: json!({
            "n_domains": p.n_domains,
            "n_per_domain": p.n_per_domain,
            "radius": p.radius,
            "noise_sigma": p.noise_sigma,
        }),
    };
    DomainSequence::new(domains, p.n_domains / 2, Some(maps), metadata)
}

/// 1 when the squared distance from the origin is at most `radius`.
pub fn circle_label(x1: f64, x2: f64, radius: f64) -> usize {
    usize::from(x1 * x1 + x2 * x2 <= radius)
}

/// Circle: domain `t` is centered at angle `pi (t-1) / T`; each step rotates by `pi / T`.
pub fn gen_circle(p: &CircleParams) -> Result<DomainSequence> {
    p.validate()?;
    let n = p.n_domains as f64;
    let angles: Vec<f64> = (0..p.n_domains).map(|i| PI * i as f64 / n).collect();
    let maps = vec![GroundTruthMap::rotation(PI / n); p.n_domains - 1];
    circle_family(p, "circle", &angles, maps)
}

/// Center angle of Circle-Hard domain `t` (1-based): `theta_1 = 0`,
/// `theta_t = theta_{t-1} + pi (t-1) / 180`.
pub fn circle_hard_angle(t: usize) -> f64 {
    let steps: usize = (1..t).sum();
    PI * steps as f64 / 180.0
}

/// Circle-Hard: accelerating rotation; map `m_t` turns by `pi t / 180`.
pub fn gen_circle_hard(p: &CircleParams) -> Result<DomainSequence> {
    p.validate()?;
    let angles: Vec<f64> = (1..=p.n_domains).map(circle_hard_angle).collect();
    let maps = (1..p.n_domains)
        .map(|t| GroundTruthMap::rotation(PI * t as f64 / 180.0))
        .collect();
    circle_family(p, "circle_hard", &angles, maps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianClass {
    pub prob: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Class-conditional 2-D Gaussians rotated about the origin from one domain to
/// the next by `step_angle(t)` radians (`t` = 1 for the first transition).
pub struct RotatingGaussianSpec<'a> {
    pub classes: Vec<GaussianClass>,
    pub step_angle: &'a dyn Fn(usize) -> f64,
    pub n_domains: usize,
    pub n_per_domain: usize,
    pub seed: u64,
}

fn cholesky2(c: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    if (c[0][1] - c[1][0]).abs() > 1e-12 * (1.0 + c[0][1].abs()) || !(c[0][0] > 0.0) {
        return None;
    }
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let rest = c[1][1] - l10 * l10;
    if !(rest > 1e-14 * c[1][1].abs().max(1.0)) {
        return None;
    }
    Some([[l00, 0.0], [l10, rest.sqrt()]])
}

pub fn gen_rotating_gaussian(spec: &RotatingGaussianSpec<'_>) -> Result<DomainSequence> {
    if spec.classes.is_empty() {
        return Err(Error::param("at least one class is required"));
    }
    if spec.n_domains == 0 || spec.n_per_domain == 0 {
        return Err(Error::param("n_domains and n_per_domain must be positive"));
    }
    let total: f64 = spec.classes.iter().map(|c| c.prob).sum();
    if spec.classes.iter().any(|c| !(c.prob >= 0.0)) || !(total > 0.0) {
        return Err(Error::param("class probabilities must be nonnegative with positive sum"));
    }
    let chol = spec
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| cholesky2(&c.cov).ok_or_else(|| Error::param(format!("class {k} covariance is singular or not symmetric positive definite"))))
        .collect::<Result<Vec<_>>>()?;

    let maps: Vec<GroundTruthMap> = (1..spec.n_domains)
        .map(|t| GroundTruthMap::rotation((spec.step_angle)(t)))
        .collect();
    let mut theta = 0.0;
    let mut domains = Vec::with_capacity(spec.n_domains);
    for t in 1..=spec.n_domains {
        if t > 1 {
            theta += (spec.step_angle)(t - 1);
        }
        let rot = GroundTruthMap::rotation(theta);
        let mut rng = rng::seeded(spec.seed.wrapping_add(t as u64));
        let mut data = Vec::with_capacity(spec.n_per_domain * 2);
        let mut labels = Vec::with_capacity(spec.n_per_domain);
        for _ in 0..spec.n_per_domain {
            let mut u = rng.random::<f64>() * total;
            let mut y = spec.classes.len() - 1;
            for (k, c) in spec.classes.iter().enumerate() {
                if u < c.prob {
                    y = k;
                    break;
                }
                u -= c.prob;
            }
            let l = &chol[y];
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            let m = spec.classes[y].mean;
            let local = [m[0] + l[0][0] * e0, m[1] + l[1][0] * e0 + l[1][1] * e1];
            data.extend_from_slice(&rot.apply(local));
            labels.push(y);
        }
        domains.push(LabeledDataset::new(
            Tensor::new(vec![spec.n_per_domain, 2], data)?,
            labels,
            spec.classes.len(),
            t,
        )?);
    }
    let metadata = SequenceMetadata {
        generator: "rotating_gaussian".into(),
        seed: spec.seed,
        params: json!({
            "n_domains": spec.n_domains,
            "n_per_domain": spec.n_per_domain,
            "classes": spec.classes,
            "step_angles": maps.iter().map(|m| m.matrix[1][0].atan2(m.matrix[0][0])).collect::<Vec<_>>(),
        }),
    };
    let t_source = if spec.n_domains > 1 { (spec.n_domains / 2).max(1) } else { 1 };
    DomainSequence::new(domains, t_source, Some(maps), metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_domains: usize) -> CircleParams {
        CircleParams {
            n_domains,
            n_per_domain: 200,
            ..CircleParams::default()
        }
    }

    #[test]
    fn circle_defaults_give_thirty_thousand_rows() {
        let seq = gen_circle(&CircleParams::default()).unwrap();
        assert_eq!(seq.len(), 30);
        assert_eq!(seq.total_instances(), 30_000);
        assert_eq!(seq.mappings().unwrap().len(), 29);
    }

    #[test]
    fn circle_map_is_rotation_by_pi_over_30() {
        let seq = gen_circle(&small(30)).unwrap();
        let (s, c) = (PI / 30.0).sin_cos();
        assert_eq!(seq.mappings().unwrap()[0].matrix, [[c, -s], [s, c]]);
    }

    #[test]
    fn circle_hard_angles_follow_recurrence() {
        assert_eq!(circle_hard_angle(1), 0.0);
        assert!((circle_hard_angle(2) - PI / 180.0).abs() < 1e-15);
        assert!((circle_hard_angle(4) - PI / 30.0).abs() < 1e-15);
        let seq = gen_circle_hard(&small(5)).unwrap();
        let m3 = seq.mappings().unwrap()[2];
        let (s, c) = (PI * 3.0 / 180.0).sin_cos();
        assert_eq!(m3.matrix, [[c, -s], [s, c]]);
    }

    #[test]
    fn origin_is_inside() {
        assert_eq!(circle_label(0.0, 0.0, 1.0), 1);
        assert_eq!(circle_label(1.0, 0.0, 1.0), 1);
        assert_eq!(circle_label(1.0, 0.1, 1.0), 0);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        for p in [
            CircleParams { radius: 0.0, ..small(3) },
            CircleParams { noise_sigma: -1.0, ..small(3) },
            CircleParams { n_domains: 1, ..small(3) },
            CircleParams { n_per_domain: 1, ..small(3) },
        ] {
            assert!(matches!(gen_circle(&p), Err(Error::Parameter(_))));
            assert!(matches!(gen_circle_hard(&p), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(gen_circle(&small(4)).unwrap(), gen_circle(&small(4)).unwrap());
        let other = CircleParams { seed: 1, ..small(4) };
        assert_ne!(gen_circle(&small(4)).unwrap(), gen_circle(&other).unwrap());
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let step = |_t: usize| 0.1;
        let spec = RotatingGaussianSpec {
            classes: vec![GaussianClass {
                prob: 1.0,
                mean: [0.0, 0.0],
                cov: [[1.0, 1.0], [1.0, 1.0]],
            }],
            step_angle: &step,
            n_domains: 3,
            n_per_domain: 10,
            seed: 0,
        };
        assert!(matches!(gen_rotating_gaussian(&spec), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_domain_has_no_mappings() {
        let step = |_t: usize| 0.3;
        let spec = RotatingGaussianSpec {
            classes: vec![GaussianClass {
                prob: 1.0,
                mean: [1.0, 0.0],
                cov: [[0.04, 0.0], [0.0, 0.04]],
            }],
            step_angle: &step,
            n_domains: 1,
            n_per_domain: 10,
            seed: 0,
        };
        let seq = gen_rotating_gaussian(&spec).unwrap();
        assert!(seq.mappings().unwrap().is_empty());
    }
}

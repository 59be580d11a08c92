//! Adaptive-moment optimizer over the flat Gaussian parameter table.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::render::GaussianGrad;
use crate::scene::{Gaussian3D, PARAM_COUNT};

/// Base learning rates per parameter group. The position rate is multiplied by
/// the scene extent and decays exponentially to `position_final`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { position: 1.6e-4, position_final: 1.6e-6, rotation: 1e-3, scale: 5e-3, opacity: 5e-2, color: 2.5e-3 }
    }
}

impl LearningRates {
    /// Per-scalar rates at `progress ∈ [0, 1]` of the stage.
    pub fn at(&self, progress: f64, extent: f64) -> [f64; PARAM_COUNT] {
        let t = progress.clamp(0.0, 1.0);
        let pos = if self.position > 0.0 && self.position_final > 0.0 {
            math::exp(math::ln(self.position) * (1.0 - t) + math::ln(self.position_final) * t)
        } else {
            self.position
        } * extent;
        let mut lr = [0.0; PARAM_COUNT];
        lr[0..3].fill(pos);
        lr[3..7].fill(self.rotation);
        lr[7..10].fill(self.scale);
        lr[10] = self.opacity;
        lr[11..14].fill(self.color);
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<[f64; PARAM_COUNT]>,
    pub v: Vec<[f64; PARAM_COUNT]>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-15, step: 0, m: vec![[0.0; PARAM_COUNT]; n], v: vec![[0.0; PARAM_COUNT]; n] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update. Rotations are renormalized and colors clamped to `[0, 1]`.
    pub fn update(&mut self, params: &mut [Gaussian3D], grads: &[GaussianGrad], lr: &[f64; PARAM_COUNT]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(self.beta2, self.step as i32);
        for ((g, p), (m, v)) in grads.iter().zip(params.iter_mut()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let ga = g.as_array();
            let mut a = p.to_params();
            for k in 0..PARAM_COUNT {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * ga[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * ga[k] * ga[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                a[k] -= lr[k] * mh / (math::sqrt(vh) + self.eps);
            }
            *p = Gaussian3D::from_params(&a);
            p.normalize_rotation();
            for c in p.color.0.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
    }

    /// Keeps moments of the listed source rows, in order; new rows start at zero.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let pick = |src: &Vec<[f64; PARAM_COUNT]>| sources.iter().map(|s| s.map_or([0.0; PARAM_COUNT], |i| src[i])).collect();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut g = [Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vec3::new(0.5, 0.5, 0.5))];
        let mut adam = Adam::new(1);
        let grad = GaussianGrad { position: Vec3::new(3.0, -0.01, 0.0), color: Vec3::new(1.0, 0.0, 0.0), ..Default::default() };
        let lr = LearningRates::default().at(0.0, 2.0);
        adam.update(&mut g, &[grad], &lr);
        assert!((g[0].position[0] + 3.2e-4).abs() < 1e-12);
        assert!((g[0].position[1] - 3.2e-4).abs() < 1e-12);
        assert_eq!(g[0].position[2], 2.0);
        assert!((g[0].color[0] - (0.5 - 2.5e-3)).abs() < 1e-12);
    }

    #[test]
    fn position_rate_decays_geometrically() {
        let lr = LearningRates::default();
        assert!((lr.at(0.0, 1.0)[0] - 1.6e-4).abs() < 1e-18);
        assert!((lr.at(0.5, 1.0)[0] - 1.6e-5).abs() < 1e-15);
        assert!((lr.at(1.0, 1.0)[0] - 1.6e-6).abs() < 1e-18);
        assert_eq!(lr.at(0.7, 1.0)[10], 5e-2);
    }

    #[test]
    fn remap_zeroes_new_rows() {
        let mut adam = Adam::new(2);
        adam.m[1][0] = 4.0;
        adam.remap(&[Some(1), None, Some(1)]);
        assert_eq!(adam.m.len(), 3);
        assert_eq!(adam.m[0][0], 4.0);
        assert_eq!(adam.m[1][0], 0.0);
        assert_eq!(adam.m[2][0], 4.0);
    }
}

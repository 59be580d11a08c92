//! Poisson blending: inside a region, solve `Δu = Δsource` per channel with
//! `u = target` on the region's outer boundary (5-point Laplacian), by
//! Jacobi-preconditioned conjugate gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dims, Error, Result};
use crate::math;
use crate::scene::{ImageBuffer, MaskImage};

#[derive(Clone, Debug)]
pub struct PoissonResult {
    pub image: ImageBuffer,
    pub iterations: usize,
    /// Max-norm of `Δu - Δsource` over region pixels.
    pub residual: f64,
    pub components: usize,
}

/// 4-connected components of `region`, each as a list of linear indices.
pub fn connected_components(region: &MaskImage) -> Vec<Vec<usize>> {
    let (w, h) = region.dims();
    let mut label = vec![usize::MAX; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !region.bits[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if region.bits[j] && label[j] == usize::MAX {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Iteration cap for a component of `n` pixels.
pub fn iteration_cap(n: usize) -> usize {
    10 * math::sqrt(n as f64) as usize + 1000
}

const TOLERANCE: f64 = 1e-10;

pub fn poisson_blend(target: &ImageBuffer, source: &ImageBuffer, region: &MaskImage) -> Result<PoissonResult> {
    check_dims("poisson source", target.dims(), source.dims())?;
    check_dims("poisson region", target.dims(), region.dims())?;
    let (w, h) = target.dims();
    for i in region.inside() {
        let (x, y) = (i % w, i / w);
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            return Err(Error::RegionTouchesBorder { x, y });
        }
    }
    let mut out = target.clone();
    let comps = connected_components(region);
    let mut max_iter = 0;
    let mut max_res: f64 = 0.0;
    let mut local = vec![usize::MAX; w * h];
    for comp in &comps {
        for (k, &i) in comp.iter().enumerate() {
            local[i] = k;
        }
        for ch in 0..3 {
            let (sol, iters) = solve_component(target, source, comp, &local, w, ch)?;
            max_iter = max_iter.max(iters);
            for (k, &i) in comp.iter().enumerate() {
                out.pixels[i][ch] = sol[k];
            }
        }
        for &i in comp {
            local[i] = usize::MAX;
        }
    }
    for i in region.inside() {
        for ch in 0..3 {
            max_res = max_res.max(laplacian_residual(&out, source, i, w, ch).abs());
        }
    }
    Ok(PoissonResult { image: out, iterations: max_iter, residual: max_res, components: comps.len() })
}

#[inline]
fn neighbors(i: usize, w: usize) -> [usize; 4] {
    [i - 1, i + 1, i - w, i + w]
}

/// `Δu(i) - Δs(i)` with the 5-point stencil.
pub fn laplacian_residual(u: &ImageBuffer, s: &ImageBuffer, i: usize, w: usize, ch: usize) -> f64 {
    let lap = |img: &ImageBuffer| neighbors(i, w).iter().map(|&j| img.pixels[j][ch]).sum::<f64>() - 4.0 * img.pixels[i][ch];
    lap(u) - lap(s)
}

fn solve_component(target: &ImageBuffer, source: &ImageBuffer, comp: &[usize], local: &[usize], w: usize, ch: usize) -> Result<(Vec<f64>, usize)> {
    let n = comp.len();
    // A u = b with A = 4I - adjacency (SPD)
    let mut b = vec![0.0; n];
    for (k, &i) in comp.iter().enumerate() {
        let s = &source.pixels;
        let mut v = 4.0 * s[i][ch];
        for j in neighbors(i, w) {
            v -= s[j][ch];
            if local[j] == usize::MAX {
                v += target.pixels[j][ch];
            }
        }
        b[k] = v;
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for (k, &i) in comp.iter().enumerate() {
            let mut v = 4.0 * x[k];
            for j in neighbors(i, w) {
                let l = local[j];
                if l != usize::MAX {
                    v -= x[l];
                }
            }
            y[k] = v;
        }
    };
    // warm start from the target values
    let mut x: Vec<f64> = comp.iter().map(|&i| target.pixels[i][ch]).collect();
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if inf(&r) <= TOLERANCE {
        return Ok((x, 0));
    }
    let inv_diag = 0.25;
    let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let cap = iteration_cap(n);
    for it in 1..=cap {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if inf(&r) <= TOLERANCE {
            // recompute the true residual to guard against drift
            let mut tr = vec![0.0; n];
            apply(&x, &mut tr);
            let true_res = (0..n).map(|k| (b[k] - tr[k]).abs()).fold(0.0f64, f64::max);
            if true_res <= TOLERANCE * 10.0 {
                return Ok((x, it));
            }
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag;
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence { iterations: cap, residual: inf(&r) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_fields_give_the_boundary_value() {
        let t = ImageBuffer::new(12, 12, [0.7, 0.2, 0.1]);
        let s = ImageBuffer::new(12, 12, [0.1, 0.9, 0.3]);
        let region = MaskImage::from_fn(12, 12, |x, y| (2..10).contains(&x) && (3..9).contains(&y));
        let r = poisson_blend(&t, &s, &region).unwrap();
        for p in &r.image.pixels {
            for k in 0..3 {
                assert!((p[k] - t.pixels[0][k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn consistent_guidance_returns_target() {
        let t = ImageBuffer::from_fn(10, 10, |x, y| [x as f64 * 0.1, y as f64 * 0.05, 0.3]);
        let region = MaskImage::from_fn(10, 10, |x, y| (1..9).contains(&x) && (1..9).contains(&y));
        let r = poisson_blend(&t, &t, &region).unwrap();
        assert_eq!(r.image, t);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn border_region_is_rejected() {
        let t = ImageBuffer::new(6, 6, [0.0; 3]);
        let region = MaskImage::from_fn(6, 6, |x, y| x == 0 && y == 3);
        assert!(matches!(poisson_blend(&t, &t, &region), Err(Error::RegionTouchesBorder { x: 0, y: 3 })));
    }

    #[test]
    fn separate_components_are_counted() {
        let t = ImageBuffer::new(12, 8, [0.5; 3]);
        let s = ImageBuffer::from_fn(12, 8, |x, _| [x as f64 * 0.05; 3]);
        let region = MaskImage::from_fn(12, 8, |x, y| (1..4).contains(&x) && (1..7).contains(&y) || (6..11).contains(&x) && (2..5).contains(&y));
        let r = poisson_blend(&t, &s, &region).unwrap();
        assert_eq!(r.components, 2);
        assert!(r.residual <= 1e-6);
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    fn smooth(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut s = seed;
        let c: Vec<f64> = (0..9).map(|_| lcg(&mut s)).collect();
        ImageBuffer::from_fn(w, h, |x, y| {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            [
                0.5 + 0.3 * libm::sin(6.0 * u * c[0] + c[1]) * libm::cos(5.0 * v * c[2]),
                c[3] * u + c[4] * v * v,
                0.5 * libm::sin(3.0 * (u + v) + c[5]) + c[6] * u * v,
            ]
        })
    }

    /// Dense Gaussian elimination on the same 5-point system.
    fn dense_oracle(t: &ImageBuffer, s: &ImageBuffer, region: &MaskImage, ch: usize) -> Vec<f64> {
        let w = t.width;
        let idx: Vec<usize> = region.inside().collect();
        let n = idx.len();
        let pos = |i: usize| idx.iter().position(|&j| j == i);
        let mut a = vec![vec![0.0; n + 1]; n];
        for (r, &i) in idx.iter().enumerate() {
            a[r][r] = 4.0;
            let mut rhs = 4.0 * s.pixels[i][ch];
            for j in [i - 1, i + 1, i - w, i + w] {
                rhs -= s.pixels[j][ch];
                match pos(j) {
                    Some(c) => a[r][c] -= 1.0,
                    None => rhs += t.pixels[j][ch],
                }
            }
            a[r][n] = rhs;
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap()).unwrap();
            a.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut v = a[r][n];
            for c in r + 1..n {
                v -= a[r][c] * x[c];
            }
            x[r] = v / a[r][r];
        }
        x
    }

    #[test]
    fn matches_dense_direct_solve() {
        let (w, h) = (20, 20);
        let t = smooth(w, h, 1);
        let s = smooth(w, h, 2);
        let region = MaskImage::from_fn(w, h, |x, y| (2..18).contains(&x) && (2..18).contains(&y));
        let r = poisson_blend(&t, &s, &region).unwrap();
        assert!(r.residual <= 1e-6);
        for ch in 0..3 {
            let x = dense_oracle(&t, &s, &region, ch);
            for (k, i) in region.inside().enumerate() {
                assert!((r.image.pixels[i][ch] - x[k]).abs() < 1e-5);
            }
        }
        for i in region.complement().inside() {
            assert_eq!(r.image.pixels[i], t.pixels[i]);
        }
    }

    #[test]
    fn zero_guidance_obeys_maximum_principle() {
        let (w, h) = (18, 14);
        let t = smooth(w, h, 7);
        let s = ImageBuffer::new(w, h, [0.3; 3]);
        let region = MaskImage::from_fn(w, h, |x, y| (3..15).contains(&x) && (2..12).contains(&y) && !(x > 9 && y > 8));
        let r = poisson_blend(&t, &s, &region).unwrap();
        let boundary: Vec<usize> = region.dilate(1).intersect(&region.complement()).inside().collect();
        for ch in 0..3 {
            let lo = boundary.iter().map(|&i| t.pixels[i][ch]).fold(f64::INFINITY, f64::min);
            let hi = boundary.iter().map(|&i| t.pixels[i][ch]).fold(f64::NEG_INFINITY, f64::max);
            for i in region.inside() {
                let v = r.image.pixels[i][ch];
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}

//! Residual temporal fusion of two consecutive pyramids.
//!
//! Each level `i` owns a two-layer conv `f_i` that reads the channel
//! concatenation of the previous and current maps and predicts a correction
//! added to the current map: `out_i = f_i(prev_i, curr_i) + curr_i`.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Init, ParamStore};
use crate::perception::PyramidFeatures;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct LevelFuser {
    level: usize,
    conv1: Conv2d,
    conv2: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ResFuser {
    levels: Vec<LevelFuser>,
}

impl ResFuser {
    /// Final layers start at zero, so a fresh fuser is the identity on `curr`.
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        levels: &[usize],
        channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let levels = levels
            .iter()
            .map(|&level| LevelFuser {
                level,
                conv1: Conv2d::new(
                    ps,
                    &format!("resfuser/level{level}/conv1"),
                    ConvSpec::new(2 * channels, channels, kernel),
                    rng,
                ),
                conv2: Conv2d::new(
                    ps,
                    &format!("resfuser/level{level}/conv2"),
                    ConvSpec::new(channels, channels, kernel).init(Init::Zeros),
                    rng,
                ),
            })
            .collect();
        Self { levels }
    }

    pub fn fuse<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        prev: &PyramidFeatures<T>,
        curr: &PyramidFeatures<T>,
    ) -> Result<PyramidFeatures<T>> {
        if curr.levels.len() != self.levels.len() || prev.levels.len() != self.levels.len() {
            return Err(Error::Shape(format!(
                "fuser has {} levels, inputs have {} and {}",
                self.levels.len(),
                prev.levels.len(),
                curr.levels.len()
            )));
        }
        let mut maps = Vec::with_capacity(self.levels.len());
        for (i, f) in self.levels.iter().enumerate() {
            if prev.levels[i] != f.level || curr.levels[i] != f.level || prev.maps[i].shape() != curr.maps[i].shape() {
                return Err(Error::Shape(format!(
                    "level {}: previous {:?} vs current {:?}",
                    f.level,
                    prev.maps[i].shape(),
                    curr.maps[i].shape()
                )));
            }
            let x = Var::concat(&[prev.maps[i].clone(), curr.maps[i].clone()], 0);
            let residual = f.conv2.forward(ps, &f.conv1.forward(ps, &x).silu());
            maps.push(residual.add(&curr.maps[i]));
        }
        Ok(PyramidFeatures {
            levels: curr.levels.clone(),
            maps,
        })
    }

    /// Clip start: the previous frame is the current one.
    pub fn fuse_first_frame<T: Scalar>(&self, ps: &ParamStore<T>, curr: &PyramidFeatures<T>) -> Result<PyramidFeatures<T>> {
        self.fuse(ps, curr, curr)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::tensor::Tensor;
    use crate::testutil::{param_grad_check, random_tensor};

    fn pyramid(c: usize, seed: u64) -> PyramidFeatures<f64> {
        PyramidFeatures {
            levels: vec![3, 4, 5],
            maps: [8usize, 4, 2]
                .iter()
                .enumerate()
                .map(|(i, &s)| Var::constant(random_tensor(&[c, s, s], 1.0, seed * 10 + i as u64)))
                .collect(),
        }
    }

    fn fuser(c: usize, k: usize) -> (ParamStore<f64>, ResFuser) {
        let mut ps = ParamStore::new();
        let f = ResFuser::new(&mut ps, &[3, 4, 5], c, k, &mut ChaCha8Rng::seed_from_u64(1));
        (ps, f)
    }

    #[test]
    fn zero_final_layer_is_identity() {
        let (ps, f) = fuser(4, 3);
        let (prev, curr) = (pyramid(4, 1), pyramid(4, 2));
        let out = f.fuse(&ps, &prev, &curr).unwrap();
        assert_eq!(out.levels, curr.levels);
        for (a, b) in out.maps.iter().zip(&curr.maps) {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn first_frame_is_fuse_with_itself() {
        let (mut ps, f) = fuser(4, 3);
        for (id, _, v) in ps.clone().iter() {
            let shape = v.shape().to_vec();
            ps.set(id, random_tensor(&shape, 0.5, id_seed(&shape)));
        }
        let curr = pyramid(4, 3);
        let a = f.fuse_first_frame(&ps, &curr).unwrap();
        let b = f.fuse(&ps, &curr, &curr).unwrap();
        for (x, y) in a.maps.iter().zip(&b.maps) {
            assert_eq!(x.value(), y.value());
        }
        let c = f.fuse_first_frame(&ps, &curr).unwrap();
        assert_eq!(a.maps[0].value(), c.maps[0].value());
    }

    fn id_seed(shape: &[usize]) -> u64 {
        shape.iter().fold(7, |a, &s| a * 31 + s as u64)
    }

    #[test]
    fn pointwise_fuser_matches_per_pixel_oracle() {
        let c = 3;
        let (mut ps, f) = fuser(c, 1);
        let w1 = random_tensor(&[c, 2 * c, 1, 1], 1.0, 11);
        let b1 = random_tensor(&[c], 1.0, 12);
        let w2 = random_tensor(&[c, c, 1, 1], 1.0, 13);
        let b2 = random_tensor(&[c], 1.0, 14);
        for l in [3, 4, 5] {
            for (name, t) in [("conv1/weight", &w1), ("conv1/bias", &b1), ("conv2/weight", &w2), ("conv2/bias", &b2)] {
                let id = ps.id_of(&format!("resfuser/level{l}/{name}")).unwrap();
                ps.set(id, t.clone());
            }
        }
        let (prev, curr) = (pyramid(c, 4), pyramid(c, 5));
        let out = f.fuse(&ps, &prev, &curr).unwrap();
        let silu = |x: f64| x / (1.0 + (-x).exp());
        let mut worst = 0.0f64;
        for lvl in 0..3 {
            let (_, h, w) = curr.maps[lvl].value().chw();
            let hw = h * w;
            let (p, q, o) = (prev.maps[lvl].value().data(), curr.maps[lvl].value().data(), out.maps[lvl].value().data());
            for px in 0..hw {
                let input: Vec<f64> = (0..c).map(|k| p[k * hw + px]).chain((0..c).map(|k| q[k * hw + px])).collect();
                let hidden: Vec<f64> = (0..c)
                    .map(|r| silu(b1.data()[r] + (0..2 * c).map(|k| w1.data()[r * 2 * c + k] * input[k]).sum::<f64>()))
                    .collect();
                for r in 0..c {
                    let res = b2.data()[r] + (0..c).map(|k| w2.data()[r * c + k] * hidden[k]).sum::<f64>();
                    worst = worst.max((res + q[r * hw + px] - o[r * hw + px]).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn geometry_mismatch_names_the_level() {
        let (ps, f) = fuser(4, 3);
        let prev = pyramid(4, 1);
        let mut curr = pyramid(4, 2);
        curr.maps[1] = Var::constant(Tensor::zeros(&[4, 3, 4]));
        let err = f.fuse(&ps, &prev, &curr).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(err.to_string().contains("level 4"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut ps, f) = fuser(3, 3);
        // Non-zero final layers so every parameter receives gradient.
        for (id, _, v) in ps.clone().iter() {
            let shape = v.shape().to_vec();
            ps.set(id, random_tensor(&shape, 0.4, id_seed(&shape) + shape.len() as u64));
        }
        let (prev, curr) = (pyramid(3, 6), pyramid(3, 7));
        let probe = random_tensor(&[3, 8, 8], 1.0, 99);
        let err = param_grad_check(&ps, "resfuser", 24, 5, |ps| {
            let out = f.fuse(ps, &prev, &curr).unwrap();
            let weighted = out.maps[0].mul(&Var::constant(probe.clone())).sum();
            Var::add_all(&[weighted, out.maps[1].square().sum(), out.maps[2].sum()])
        });
        assert!(err < 1e-4, "{err}");
    }
}

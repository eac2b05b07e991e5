//! Detector network: four stride-2 convolution stages to a stride-16
//! grid, one trunk convolution, and parallel classification/regression
//! heads. Roughly 100k parameters, sized for CPU training.

use ndarray::Array2;
use rand::Rng;

use crate::nn::{Conv2d, LeakyRelu, Param, T4};

const ACT_SLOPE: f32 = 0.1;

#[derive(Debug, Clone)]
pub struct DetectorNet {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    c4: Conv2d,
    trunk: Conv2d,
    cls: Conv2d,
    reg: Conv2d,
    act: LeakyRelu,
    pub per_cell: usize,
    pub num_categories: usize,
}

/// Forward activations needed by backward.
pub struct DetectorCache {
    x: T4,
    p1: T4,
    y1: T4,
    p2: T4,
    y2: T4,
    p3: T4,
    y3: T4,
    p4: T4,
    y4: T4,
    p5: T4,
    y5: T4,
}

impl DetectorNet {
    pub fn new(
        rng: &mut impl Rng,
        num_categories: usize,
        per_cell: usize,
    ) -> Self {
        let c1 = Conv2d::new(rng, "det.c1", 3, 16, 3, 2);
        let c2 = Conv2d::new(rng, "det.c2", 16, 32, 3, 2);
        let c3 = Conv2d::new(rng, "det.c3", 32, 48, 3, 2);
        let c4 = Conv2d::new(rng, "det.c4", 48, 64, 3, 2);
        let trunk = Conv2d::new(rng, "det.trunk", 64, 64, 3, 1);
        let mut cls = Conv2d::new(rng, "det.cls", 64, per_cell * (num_categories + 1), 3, 1);
        // Background-prior bias: start near p(background) ~ 0.9 so early
        // steps are not spent suppressing foreground everywhere.
        let c1n = num_categories + 1;
        for a in 0..per_cell {
            cls.b.value[[a * c1n]] = 2.0;
        }
        let reg = Conv2d::new(rng, "det.reg", 64, per_cell * 4, 3, 1);
        DetectorNet {
            c1,
            c2,
            c3,
            c4,
            trunk,
            cls,
            reg,
            act: LeakyRelu::new(ACT_SLOPE),
            per_cell,
            num_categories,
        }
    }

    /// Returns (classification map [N, A*(C+1), gh, gw], regression map
    /// [N, A*4, gh, gw], cache).
    pub fn forward(&self, x: &T4) -> (T4, T4, DetectorCache) {
        let x = x.mapv(|v| 2.0 * (v - 0.5));
        let p1 = self.c1.forward(&x);
        let y1 = self.act.forward(&p1);
        let p2 = self.c2.forward(&y1);
        let y2 = self.act.forward(&p2);
        let p3 = self.c3.forward(&y2);
        let y3 = self.act.forward(&p3);
        let p4 = self.c4.forward(&y3);
        let y4 = self.act.forward(&p4);
        let p5 = self.trunk.forward(&y4);
        let y5 = self.act.forward(&p5);
        let cls_map = self.cls.forward(&y5);
        let reg_map = self.reg.forward(&y5);
        let cache = DetectorCache {
            x: x.clone(),
            p1,
            y1,
            p2,
            y2,
            p3,
            y3,
            p4,
            y4,
            p5,
            y5,
        };
        (cls_map, reg_map, cache)
    }

    pub fn backward(&mut self, cache: &DetectorCache, d_cls_map: &T4, d_reg_map: &T4) {
        let mut dy5 = self.cls.backward(&cache.y5, d_cls_map);
        dy5 += &self.reg.backward(&cache.y5, d_reg_map);
        let dp5 = self.act.backward(&cache.p5, &dy5);
        let dy4 = self.trunk.backward(&cache.y4, &dp5);
        let dp4 = self.act.backward(&cache.p4, &dy4);
        let dy3 = self.c4.backward(&cache.y3, &dp4);
        let dp3 = self.act.backward(&cache.p3, &dy3);
        let dy2 = self.c3.backward(&cache.y2, &dp3);
        let dp2 = self.act.backward(&cache.p2, &dy2);
        let dy1 = self.c2.backward(&cache.y1, &dp2);
        let dp1 = self.act.backward(&cache.p1, &dy1);
        let _ = self.c1.backward(&cache.x, &dp1);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.extend(self.c1.params_mut());
        out.extend(self.c2.params_mut());
        out.extend(self.c3.params_mut());
        out.extend(self.c4.params_mut());
        out.extend(self.trunk.params_mut());
        out.extend(self.cls.params_mut());
        out.extend(self.reg.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        out.extend(self.c1.params());
        out.extend(self.c2.params());
        out.extend(self.c3.params());
        out.extend(self.c4.params());
        out.extend(self.trunk.params());
        out.extend(self.cls.params());
        out.extend(self.reg.params());
        out
    }
}

/// Reorder head maps into per-anchor rows, one pair of matrices per image:
/// logits [gh*gw*A, C+1] and offsets [gh*gw*A, 4], anchor index
/// `(gy*gw + gx) * A + ai` matching `generate_anchors` order.
pub fn flatten_maps(
    cls_map: &T4,
    reg_map: &T4,
    per_cell: usize,
    num_categories: usize,
) -> Vec<(Array2<f32>, Array2<f32>)> {
    let (n, _, gh, gw) = cls_map.dim();
    let c1 = num_categories + 1;
    let rows = gh * gw * per_cell;
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut cls_rows = Array2::zeros((rows, c1));
        let mut reg_rows = Array2::zeros((rows, 4));
        for gy in 0..gh {
            for gx in 0..gw {
                for ai in 0..per_cell {
                    let row = (gy * gw + gx) * per_cell + ai;
                    for c in 0..c1 {
                        cls_rows[[row, c]] = cls_map[[ni, ai * c1 + c, gy, gx]];
                    }
                    for j in 0..4 {
                        reg_rows[[row, j]] = reg_map[[ni, ai * 4 + j, gy, gx]];
                    }
                }
            }
        }
        out.push((cls_rows, reg_rows));
    }
    out
}

/// Inverse of [`flatten_maps`] for gradients: per-image row gradients back
/// into map layout.
pub fn unflatten_grads(
    d_rows: &[(Vec<f32>, Vec<f32>)],
    gh: usize,
    gw: usize,
    per_cell: usize,
    num_categories: usize,
) -> (T4, T4) {
    let n = d_rows.len();
    let c1 = num_categories + 1;
    let mut d_cls = T4::zeros((n, per_cell * c1, gh, gw));
    let mut d_reg = T4::zeros((n, per_cell * 4, gh, gw));
    for (ni, (dc, dr)) in d_rows.iter().enumerate() {
        for gy in 0..gh {
            for gx in 0..gw {
                for ai in 0..per_cell {
                    let row = (gy * gw + gx) * per_cell + ai;
                    for c in 0..c1 {
                        d_cls[[ni, ai * c1 + c, gy, gx]] = dc[row * c1 + c];
                    }
                    for j in 0..4 {
                        d_reg[[ni, ai * 4 + j, gy, gx]] = dr[row * 4 + j];
                    }
                }
            }
        }
    }
    (d_cls, d_reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shapes_and_param_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DetectorNet::new(&mut rng, 3, 3);
        let x = T4::zeros((2, 3, 128, 128));
        let (cls, reg, _) = net.forward(&x);
        assert_eq!(cls.dim(), (2, 3 * 4, 8, 8));
        assert_eq!(reg.dim(), (2, 3 * 4, 8, 8));
        let count = crate::nn::param_count(&net.params());
        assert!(
            (50_000..200_000).contains(&count),
            "parameter count {count} out of the desk-scale envelope"
        );
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cls = T4::from_shape_fn((1, 8, 2, 2), |_| rng.gen_range(-1.0..1.0f32));
        let reg = T4::from_shape_fn((1, 8, 2, 2), |_| rng.gen_range(-1.0..1.0f32));
        let rows = flatten_maps(&cls, &reg, 2, 3);
        let d_rows: Vec<(Vec<f32>, Vec<f32>)> = rows
            .iter()
            .map(|(c, r)| (
                c.as_slice().unwrap().to_vec(),
                r.as_slice().unwrap().to_vec(),
            ))
            .collect();
        let (cls2, reg2) = unflatten_grads(&d_rows, 2, 2, 2, 3);
        assert_eq!(cls, cls2);
        assert_eq!(reg, reg2);
    }
}

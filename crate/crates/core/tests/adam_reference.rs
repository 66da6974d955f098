use std::collections::BTreeMap;

use voxelgate_core::adam::{adam_step, AdamState};
use voxelgate_core::unet::ModelParams;
use voxelgate_core::Tensor;

/// Textbook scalar Adam.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, w: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t));
        w - lr * mh / (vh.sqrt() + 1e-8)
    }
}

fn single(w: f64) -> ModelParams<f64> {
    let mut p = ModelParams::new();
    p.insert("w", Tensor::scalar(w));
    p
}

#[test]
fn matches_scalar_reference_for_1000_steps() {
    // f(w) = (w - 3)^4 / 4 + sin(w): non-quadratic, gradient changes sign
    let grad = |w: f64| (w - 3.0).powi(3) + w.cos();
    let mut p = single(-1.5);
    let mut state = AdamState::new(&p);
    let mut reference = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
    let mut w_ref = -1.5;
    for _ in 0..1000 {
        let w = p.get("w").unwrap().values()[0];
        let g = BTreeMap::from([("w".to_string(), vec![grad(w)])]);
        adam_step(&mut p, &g, &mut state, 1e-2).unwrap();
        w_ref = reference.step(w_ref, grad(w_ref), 1e-2);
        assert!((p.get("w").unwrap().values()[0] - w_ref).abs() < 1e-12);
    }
    assert_eq!(state.t, 1000);
    assert!(state.v["w"][0] >= 0.0);
}

#[test]
fn descends_a_parabola() {
    let mut p = single(1.0);
    let mut state = AdamState::new(&p);
    let mut prev = 1.0f64;
    for step in 0..100 {
        let w = p.get("w").unwrap().values()[0];
        let g = BTreeMap::from([("w".to_string(), vec![2.0 * w])]);
        adam_step(&mut p, &g, &mut state, 5e-3).unwrap();
        let now = p.get("w").unwrap().values()[0].abs();
        if step > 5 {
            assert!(now < prev);
        }
        prev = now;
    }
    assert!(prev < 0.9);
}

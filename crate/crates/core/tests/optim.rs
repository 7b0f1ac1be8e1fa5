use leancnn_core::{Adam, AdamConfig, Rng, Tensor};

fn first_update(grad: &[f64], eps: f64) -> Vec<f64> {
    let mut adam = Adam::new(AdamConfig {
        eps,
        ..AdamConfig::with_lr(0.01)
    });
    let mut p = Tensor::<f64>::zeros(&[grad.len()]).unwrap();
    let g = Tensor::from_vec(&[grad.len()], grad.to_vec()).unwrap();
    adam.step([(&mut p, &g)]).unwrap();
    p.into_vec()
}

#[test]
fn first_update_is_scale_equivariant_without_eps() {
    let mut rng = Rng::new(17);
    for _ in 0..100 {
        let g: Vec<f64> = (0..8).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let c = rng.uniform(0.01, 100.0);
        let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
        let a = first_update(&g, 0.0);
        let b = first_update(&scaled, 0.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3), "{x} vs {y}");
        }
    }
}

#[test]
fn step_counter_and_moment_signs() {
    let mut adam = Adam::new(AdamConfig::default());
    let mut p = Tensor::<f32>::ones(&[4]).unwrap();
    let mut rng = Rng::new(1);
    for t in 1..=10 {
        let g = Tensor::uniform(&[4], &mut rng, -1.0, 1.0).unwrap();
        adam.step([(&mut p, &g)]).unwrap();
        assert_eq!(adam.steps(), t);
        assert!(adam.second_moments()[0].iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn parameter_list_must_not_change() {
    let mut adam = Adam::new(AdamConfig::default());
    let mut a = Tensor::<f32>::zeros(&[2]).unwrap();
    let mut b = Tensor::<f32>::zeros(&[3]).unwrap();
    let ga = Tensor::ones(&[2]).unwrap();
    let gb = Tensor::ones(&[3]).unwrap();
    adam.step([(&mut a, &ga), (&mut b, &gb)]).unwrap();
    assert!(adam.step([(&mut a, &ga)]).is_err());
}

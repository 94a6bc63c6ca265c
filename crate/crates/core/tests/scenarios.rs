use smcf_lab::ensemble::{area_inequality_test, least_squares_slope, mean_var_se, run_ensemble};
use smcf_lab::noise::NoisePath;
use smcf_lab::stepper::{simulate_with_noise, RunSpec};
use smcf_lab::{parse_config, ScalarField, SchemeKind};

// In one dimension the two dissipation integrands coincide, so the area
// inequality is an equality in the limit and the excess is pure O(dt) error.
#[test]
fn area_inequality_excess_without_noise_is_first_order_in_dt() {
    let stat = |dt: f64| {
        let c = parse_config(&format!(
            r#"{{"dim":1,"res":128,"dt":{dt},"T":1,"initial":{{"family":"fourier","sin":[0.2]}},"M":1,"baseSeed":1,"noise":false}}"#
        ))
        .unwrap();
        let v = area_inequality_test(&run_ensemble(&c).unwrap()).unwrap();
        assert!(v.pass, "{}", v.summary());
        v.statistic
    };
    let (a, b) = (stat(1e-3), stat(5e-4));
    assert!(b > 0.0 && (a / b - 2.0).abs() < 0.3, "{a} {b}");
}

fn final_state(u0: &ScalarField, noise: &NoisePath, scheme: SchemeKind) -> ScalarField {
    let spec = RunSpec { scheme, epsilon: 0.0, stride: noise.steps(), with_correction: true };
    simulate_with_noise(u0.clone(), noise, &spec, 0).unwrap().final_state.u
}

#[test]
fn semi_implicit_and_explicit_converge_on_shared_noise() {
    let c = parse_config(
        r#"{"dim":1,"res":32,"dt":0.0001,"T":0.1,"initial":{"family":"fourier","sin":[0.3]},"M":8,"baseSeed":3,"maxRefineLevel":3}"#,
    )
    .unwrap();
    let u0 = c.initial.build(c.grid().unwrap(), c.base_seed, 0).unwrap();
    let mut dts = Vec::new();
    let mut means = Vec::new();
    for level in 0..4u32 {
        let d: Vec<f64> = (0..c.ensemble_size as u64)
            .map(|id| {
                let coarse = NoisePath::sample(c.base_seed, id, c.steps().unwrap(), c.dt, c.max_refine_level).unwrap();
                let noise = if level == 0 { coarse } else { coarse.refine(1 << level).unwrap() };
                let a = final_state(&u0, &noise, SchemeKind::SemiImplicitSpectral);
                let b = final_state(&u0, &noise, SchemeKind::ExplicitEM);
                (&a - &b).linf()
            })
            .collect();
        dts.push((c.dt / f64::from(1 << level)).ln());
        means.push(mean_var_se(&d).0.ln());
    }
    let order = least_squares_slope(&dts, &means);
    assert!(order >= 0.4, "order {order}, log distances {means:?}");
}

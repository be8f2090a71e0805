use rand::Rng;
use rand_distr::StandardNormal;
use roisurv::cohort::{DesignMatrix, SurvivalResponse};
use roisurv::evaluation::c_index;
use roisurv::survival::coxnet::{lambda_path, CoxnetProblem};
use roisurv::survival::{fit_model, predict_risk, rsf_fit, stepwise_aic, FitOptions, ForestParams, ModelSpec};
use roisurv::SeedHandle;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn noise_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
    let mut rng = SeedHandle(seed).rng();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let ys = (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.1..10.0);
            SurvivalResponse::new(t, rng.random_bool(0.75)).unwrap()
        })
        .collect();
    DesignMatrix::from_columns((0..p).map(|j| format!("x{j}")).collect(), rows, ys).unwrap()
}

fn signal_design(n: usize, beta: &[f64], seed: u64) -> DesignMatrix {
    let mut rng = SeedHandle(seed).rng();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = beta.iter().map(|_| rng.sample(StandardNormal)).collect();
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let u: f64 = 1.0 - rng.random::<f64>();
        let t = -u.ln() * (-eta).exp();
        let c: f64 = rng.random_range(0.2..4.0);
        ys.push(SurvivalResponse::new(t.min(c), t <= c).unwrap());
        rows.push(x);
    }
    DesignMatrix::from_columns((0..beta.len()).map(|j| format!("x{j}")).collect(), rows, ys).unwrap()
}

#[test]
fn stepwise_on_pure_noise_matches_the_aic_null_rate() {
    // Each noise column lowers AIC iff its LR statistic exceeds 2, so the
    // chance of an empty model with 10 independent columns is about
    // P(chi2_1 <= 2)^10.
    let p_keep = ChiSquared::new(1.0).unwrap().cdf(2.0);
    let expected = p_keep.powi(10);
    let empty = (0..100u64)
        .filter(|&s| {
            stepwise_aic(&noise_design(60, 10, 10_000 + s))
                .unwrap()
                .selected
                .is_empty()
        })
        .count() as f64
        / 100.0;
    println!("empty-selection rate {empty:.2}, AIC null rate {expected:.3}");
    // 99% binomial band around the null rate
    let sd = (expected * (1.0 - expected) / 100.0).sqrt();
    assert!((empty - expected).abs() <= 2.6 * sd + 0.02, "{empty} vs {expected}");
}

#[test]
fn forest_oob_on_noise_is_near_half() {
    let params = ForestParams {
        n_trees: 200,
        ..Default::default()
    };
    let inside = (0..50u64)
        .filter(|&s| {
            let d = noise_design(150, 5, 20_000 + s);
            let f = rsf_fit(&d, &params, SeedHandle(s)).unwrap();
            let (risk, resp): (Vec<f64>, Vec<SurvivalResponse>) = f
                .oob_mortality
                .iter()
                .zip(d.responses())
                .filter_map(|(m, r)| m.map(|m| (m, *r)))
                .unzip();
            let c = c_index(&risk, &resp).unwrap();
            (0.4..=0.6).contains(&c)
        })
        .count();
    assert!(inside >= 48, "{inside}/50 runs inside [0.4, 0.6]");
}

#[test]
fn forest_model_reproduces_stored_mortality() {
    let d = signal_design(120, &[0.8, -0.4, 0.0], 3);
    let spec = ModelSpec::RandomForest {
        params: ForestParams {
            n_trees: 100,
            ..Default::default()
        },
    };
    let m = fit_model(&d, &spec, &FitOptions::default()).unwrap();
    assert!(m.standardizer.is_none());
    assert_eq!(predict_risk(&m, &d).unwrap(), m.training_mortality().unwrap());
}

#[test]
fn coxnet_path_sparsity_endpoints() {
    let d = signal_design(200, &[0.7, -0.5, 0.3, 0.0, 0.4], 5);
    let prob = CoxnetProblem::new(&d).unwrap();
    let lambdas = lambda_path(prob.lambda_max(1.0), 100, 1e-4);
    let path = prob.path(&lambdas, 1.0);
    let nz: Vec<usize> = path.iter().map(|b| b.iter().filter(|v| **v != 0.0).count()).collect();
    assert_eq!(nz[0], 0);
    assert_eq!(*nz.last().unwrap(), *nz.iter().max().unwrap());
    let flips = nz.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(flips <= 2, "{nz:?}");
}

#[test]
fn every_model_is_deterministic_and_risk_oriented() {
    let d = signal_design(150, &[1.0, -0.6, 0.0, 0.5], 8);
    let mut specs = ModelSpec::benchmark_set();
    specs.push(ModelSpec::Cox);
    for spec in specs {
        let spec = match spec {
            ModelSpec::RandomForest { mut params } => {
                params.n_trees = 150;
                ModelSpec::RandomForest { params }
            }
            s => s,
        };
        let opts = FitOptions {
            seed: SeedHandle(11),
            ..Default::default()
        };
        let a = fit_model(&d, &spec, &opts).unwrap();
        let b = fit_model(&d, &spec, &opts).unwrap();
        assert_eq!(a, b, "{spec}");
        let risk = predict_risk(&a, &d).unwrap();
        let c = c_index(&risk, d.responses()).unwrap();
        assert!(c > 0.65, "{spec}: in-sample c-index {c}");
    }
}

#[test]
fn metahistogram_filter_is_replayed() {
    // duplicate column must be filtered and the replay must accept test rows
    let base = signal_design(100, &[0.6, 0.3], 9);
    let rows: Vec<Vec<f64>> = base
        .rows()
        .iter()
        .map(|r| vec![r.features[0], r.features[1], 2.0 * r.features[0] + 1.0])
        .collect();
    let d = DesignMatrix::from_columns(
        vec!["a".into(), "b".into(), "a2".into()],
        rows,
        base.responses().to_vec(),
    )
    .unwrap();
    let opts = FitOptions {
        filter_threshold: Some(0.9),
        ..Default::default()
    };
    let m = fit_model(&d, &ModelSpec::Cox, &opts).unwrap();
    assert_eq!(m.active_features().len(), 2);
    assert_eq!(predict_risk(&m, &d).unwrap().len(), 100);
}

use gcfcp::datagen::{
    calibration_records, draw_response, fit_linear, read_classification_csv, read_regression_csv, substream,
    synth_classification, test_records, training_set, truncated_normal, write_classification_csv,
    write_regression_csv, DataError, Purpose, SynthConfig,
};
use gcfcp::{membership_vector, Covariate, GroupFamily};

/// Abramowitz & Stegun 7.1.26; absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    y.copysign(x)
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

#[test]
fn truncated_normal_mean_matches_closed_form() {
    let (lo, hi) = (0.0, 5.0);
    for (mu, sigma) in [(0.5, 0.5), (1.8333, 0.6), (4.5, 0.8), (2.5, 3.0)] {
        let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
        let want = mu + sigma * (phi(a) - phi(b)) / (big_phi(b) - big_phi(a));
        let mut rng = substream(99, 0, 0, Purpose::Covariates);
        let n = 100_000;
        let got = (0..n).map(|_| truncated_normal(&mut rng, mu, sigma, lo, hi)).sum::<f64>() / n as f64;
        assert!((got - want).abs() <= 0.02, "mu={mu} sigma={sigma}: {got} vs {want}");
    }
}

#[test]
fn response_mean_and_outlier_rate() {
    let x = std::f64::consts::FRAC_PI_2;
    let mut rng = substream(7, 0, 0, Purpose::Responses);
    let n = 100_000;
    let draws: Vec<_> = (0..n).map(|_| draw_response(x, 0, &mut rng)).collect();
    let mean = draws.iter().map(|d| d.y).sum::<f64>() / n as f64;
    // E[Poisson(sin^2 x + 0.1)] with zero-mean noise.
    assert!((mean - 1.1).abs() <= 0.03, "mean {mean}");
    let rate = draws.iter().filter(|d| d.outlier).count() as f64 / n as f64;
    assert!((rate - 0.01).abs() <= 0.003, "outlier rate {rate}");
}

#[test]
fn client_noise_grows_with_index() {
    // Away from outliers the residual spread grows with the client index.
    let spread = |client: usize| {
        let mut rng = substream(3, 0, client as u64, Purpose::Responses);
        let ys: Vec<f64> = (0..20_000)
            .map(|_| draw_response(0.0, client, &mut rng))
            .filter(|d| !d.outlier)
            .map(|d| d.y)
            .collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64).sqrt()
    };
    let s: Vec<f64> = (0..4).map(spread).collect();
    assert!(s.windows(2).all(|w| w[0] < w[1]), "{s:?}");
}

#[test]
fn clients_differ_in_covariate_location() {
    let config = SynthConfig::standard(12);
    let model = fit_linear(&training_set(&config)).unwrap();
    let recs = calibration_records(&config, &model, 0);
    let means: Vec<f64> = recs
        .iter()
        .map(|r| r.iter().map(|x| x.x).sum::<f64>() / r.len() as f64)
        .collect();
    assert!(means.windows(2).all(|w| w[1] - w[0] > 0.5), "{means:?}");
    assert_eq!(recs.iter().map(Vec::len).collect::<Vec<_>>(), config.n);
}

#[test]
fn least_squares_solves_normal_equations() {
    let config = SynthConfig::standard(4);
    let train = training_set(&config);
    let m = fit_linear(&train).unwrap();
    let n = train.len() as f64;
    let (sx, sy) = train.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = train.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    assert!((m.slope - slope).abs() <= 1e-9);
    assert!((m.intercept - intercept).abs() <= 1e-9);
    let resid: Vec<f64> = train.iter().map(|&(x, y)| y - m.predict(x)).collect();
    let r1: f64 = resid.iter().sum();
    let rx: f64 = resid.iter().zip(&train).map(|(r, p)| r * p.0).sum();
    assert!(r1.abs() <= 1e-8 && rx.abs() <= 1e-8, "{r1} {rx}");
    assert!(matches!(fit_linear(&[(1.0, 2.0), (1.0, 3.0)]), Err(DataError::SingularDesign)));
}

#[test]
fn generation_is_deterministic_per_seed_and_trial() {
    let config = SynthConfig::standard(21);
    let model = fit_linear(&training_set(&config)).unwrap();
    let a = calibration_records(&config, &model, 3);
    assert_eq!(a, calibration_records(&config, &model, 3));
    assert_ne!(a, calibration_records(&config, &model, 4));
    let pi = [0.25; 4];
    let t = test_records(&config, &model, &pi, 3, 50).unwrap();
    assert_eq!(t, test_records(&config, &model, &pi, 3, 50).unwrap());
    assert!(test_records(&config, &model, &[0.5, 0.5], 3, 50).is_err());
}

#[test]
fn regression_csv_round_trip() {
    let config = SynthConfig::with_sizes(vec![40, 30], 8).unwrap();
    let model = fit_linear(&training_set(&config)).unwrap();
    let recs: Vec<_> = calibration_records(&config, &model, 0).concat();
    let mut buf = Vec::new();
    write_regression_csv(&mut buf, &recs).unwrap();
    assert_eq!(read_regression_csv(buf.as_slice()).unwrap(), recs);
}

#[test]
fn classification_csv_round_trip_and_errors() {
    let recs = synth_classification(&[30, 20], 4, 5, 0).concat();
    let mut buf = Vec::new();
    write_classification_csv(&mut buf, &recs).unwrap();
    assert_eq!(read_classification_csv(buf.as_slice()).unwrap(), recs);

    let header = "client_id,predicted_label,true_label,score_0,score_1\n";
    let row = |r: &str| format!("{header}1,0,0,0.1,0.9\n{r}\n");
    for (bad, reason) in [
        (row("1,0,2,0.1,0.9"), "true_label"),
        (row("1,0,1,0.1,1.5"), "outside"),
        (row("1,x,1,0.1,0.2"), "predicted_label"),
        (row("1,0,1,0.1"), ""),
    ] {
        match read_classification_csv(bad.as_bytes()) {
            Err(DataError::Ingest { row, reason: why }) => {
                assert_eq!(row, 3);
                assert!(why.contains(reason), "{why}");
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }
    assert!(matches!(
        read_classification_csv("client,predicted_label,true_label,score_0\n".as_bytes()),
        Err(DataError::Ingest { row: 1, .. })
    ));
    // Tiny rounding outside [0, 1] is tolerated.
    assert!(read_classification_csv(format!("{header}1,0,1,-0.0000001,1.0000001\n").as_bytes()).is_ok());
}

#[test]
fn label_groups_follow_predicted_label() {
    let fam: GroupFamily<f64> = GroupFamily::label_sets(&[&[0, 1, 2, 3], &[3, 4, 5], &[5, 6], &[6, 0]]).unwrap();
    let phi = |l| membership_vector(&Covariate::<f64>::label(l), &fam).unwrap().to_string();
    assert_eq!(phi(3), "1100");
    assert_eq!(phi(0), "1001");
    assert_eq!(phi(5), "0110");
    assert!(membership_vector(&Covariate::<f64>::label(9), &fam).is_err());
}

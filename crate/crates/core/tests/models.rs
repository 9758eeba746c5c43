use clsvae::autodiff::gradcheck::check_gradients;
use clsvae::autodiff::{Bound, Matrix, Tape, Var};
use clsvae::data::PixelKind;
use clsvae::dcor;
use clsvae::distributions::graph;
use clsvae::model::baselines::{append_label, Cvae, Vaegmm, VaeL2};
use clsvae::model::clsvae::{Clsvae, Latents, Noise};
use clsvae::model::{
    imbalance_weight, normal_matrix, Batch, ClsvaeConfig, CvaeConfig, LossContext, Model,
    ModelSpec, NetShape, VaeL2Config, VaegmmConfig, DEFAULT_GAMMA,
};
use clsvae::rng;
use ndarray::Array2;
use rand::Rng;

const PIXELS: usize = 6;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn toy_shape(kind: PixelKind) -> NetShape {
    NetShape {
        input_dim: PIXELS,
        pixel_kind: kind,
        hidden: vec![4],
    }
}

fn toy_clsvae_config(kind: PixelKind) -> ClsvaeConfig {
    let mut c = ClsvaeConfig::new(toy_shape(kind));
    c.clean_dim = 2;
    c.dirty_dim = 2;
    c.classifier_hidden = vec![3];
    c.beta = 5.0;
    c
}

fn toy_pixels(kind: PixelKind, n: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 99);
    Array2::from_shape_fn((n, PIXELS), |_| match kind {
        PixelKind::Binary => f64::from(u8::from(r.random_bool(0.5))),
        PixelKind::Continuous => r.random_range(0.0..1.0),
    })
}

fn toy_batch(kind: PixelKind, seed: u64) -> Batch {
    Batch {
        unlabelled: toy_pixels(kind, 2, seed),
        labelled: toy_pixels(kind, 2, seed + 1),
        labels: vec![1.0, 0.0],
        weight_u: 0.8,
        weight_l: 0.2,
    }
}

fn ctx() -> LossContext {
    LossContext {
        kl_weight: 0.7,
        lambda_t: 3.0,
        omega: 2.0,
        dataset_size: 10.0,
    }
}

fn assert_fd(model: &dyn Model, batch: &Batch, ctx: &LossContext) {
    let noise = rng::stream(7, 0);
    let report = check_gradients(model.params(), FD_STEP, |tape: &mut Tape, bound: &Bound| {
        let mut r = noise.clone();
        Ok(model.loss(tape, bound, batch, ctx, &mut r)?.total)
    })
    .unwrap();
    assert!(
        model.params().num_scalars() <= 200,
        "toy model too large: {}",
        model.params().num_scalars()
    );
    assert!(
        report.max_relative_error < FD_TOL,
        "{}: {:?}",
        model.kind(),
        report
    );
}

fn clsvae(kind: PixelKind, stop_gradient: bool) -> Clsvae {
    let mut c = toy_clsvae_config(kind);
    c.use_stop_gradient = stop_gradient;
    Clsvae::new(c, &mut rng::stream(3, 0))
}

#[test]
fn clsvae_total_loss_matches_finite_differences() {
    // Finite differences see through a stop-gradient, so only the plain
    // variant is comparable.
    for kind in [PixelKind::Binary, PixelKind::Continuous] {
        for beta in [0.0, 5.0] {
            let mut cfg = toy_clsvae_config(kind);
            cfg.beta = beta;
            let m = Clsvae::new(cfg, &mut rng::stream(3, 0));
            for lambda_t in [0.0, 3.0] {
                assert_fd(&m, &toy_batch(kind, 11), &LossContext { lambda_t, ..ctx() });
            }
        }
    }
}

#[test]
fn clsvae_partial_batches_match_finite_differences() {
    let m = clsvae(PixelKind::Binary, false);
    let mut b = toy_batch(PixelKind::Binary, 5);
    b.labelled = Matrix::zeros((0, PIXELS));
    b.labels.clear();
    b.weight_l = 0.0;
    let mut c = ctx();
    assert_fd(&m, &b, &c);

    let mut b = toy_batch(PixelKind::Binary, 5);
    b.unlabelled = Matrix::zeros((0, PIXELS));
    c.lambda_t = 0.0;
    assert_fd(&m, &b, &c);
}

#[test]
fn baseline_losses_match_finite_differences() {
    for kind in [PixelKind::Binary, PixelKind::Continuous] {
        let mut c = VaeL2Config::new(toy_shape(kind));
        c.latent_dim = 3;
        c.l2 = 0.5;
        let m = VaeL2::new(c, &mut rng::stream(4, 0));
        assert_fd(&m, &toy_batch(kind, 21), &ctx());

        let mut c = CvaeConfig::new(toy_shape(kind));
        c.latent_dim = 3;
        let m = Cvae::new(c, &mut rng::stream(4, 1));
        let b = Batch {
            unlabelled: Matrix::zeros((0, PIXELS)),
            labelled: toy_pixels(kind, 4, 31),
            labels: vec![1.0, 0.0, 1.0, 1.0],
            weight_u: 0.0,
            weight_l: 1.0,
        };
        assert_fd(&m, &b, &ctx());

        let mut c = VaegmmConfig::new(toy_shape(kind));
        c.latent_dim = 3;
        c.beta = 4.0;
        let v = Vaegmm::new(c, &mut rng::stream(4, 2));
        assert_fd(&v, &toy_batch(kind, 41), &ctx());
    }
}

#[test]
fn cvae_rejects_unlabelled_rows() {
    let m = Cvae::new(CvaeConfig::new(toy_shape(PixelKind::Binary)), &mut rng::stream(1, 0));
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let err = m
        .loss(&mut tape, &bound, &toy_batch(PixelKind::Binary, 1), &ctx(), &mut rng::stream(1, 1))
        .unwrap_err();
    assert!(err.to_string().contains("label"), "{err}");
}

/// Gradient of the classifier output with respect to every `enc_c` tensor.
fn classifier_grads_to_enc_c(m: &Clsvae) -> Vec<Matrix> {
    let x = toy_pixels(PixelKind::Binary, 4, 8);
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let xv = tape.constant(x);
    let noise = m.draw_noise(&mut rng::stream(2, 2), 4);
    let lat = m.latents(&mut tape, &bound, xv, &noise).unwrap();
    let logits = m.classify_logits(&mut tape, &bound, lat.z_c, lat.z_d).unwrap();
    let pi = tape.sigmoid(logits);
    let out = tape.sum(pi);
    let grads = tape.backward(out).unwrap();
    m.params()
        .ids()
        .filter(|&id| m.params().name(id).starts_with("enc_c"))
        .map(|id| grads.get_or_zeros(&tape, bound.var(id)))
        .collect()
}

#[test]
fn stop_gradient_blocks_classifier_to_clean_encoder() {
    let blocked = classifier_grads_to_enc_c(&clsvae(PixelKind::Binary, true));
    assert!(!blocked.is_empty());
    assert!(blocked.iter().all(|g| g.iter().all(|&v| v == 0.0)));

    let open = classifier_grads_to_enc_c(&clsvae(PixelKind::Binary, false));
    assert!(open.iter().any(|g| g.iter().any(|&v| v != 0.0)));
}

#[test]
fn unlabelled_elbo_with_certain_inlier_reduces_to_plain_vae() {
    let m = clsvae(PixelKind::Binary, false);
    let alpha = m.config().alpha;
    let x = toy_pixels(PixelKind::Binary, 3, 4);
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let xv = tape.constant(x);
    let noise = m.draw_noise(&mut rng::stream(5, 5), 3);
    let lat = m.latents(&mut tape, &bound, xv, &noise).unwrap();
    let logits = tape.constant(Matrix::from_elem((3, 1), 60.0));
    let (elbo, _, kly) = m
        .unlabelled_elbo(&mut tape, &bound, xv, &lat, lat.z_d, logits, 1.0)
        .unwrap();

    let out = m.decode(&mut tape, &bound, lat.z_c, lat.z_d).unwrap();
    let ll = graph::bernoulli_log_lik_logits(&mut tape, xv, out.0).unwrap();
    for i in 0..3 {
        let kl_ber = tape.value(kly)[[i, 0]];
        assert!((kl_ber - (1.0 / alpha).ln()).abs() < 1e-12);
        let plain = tape.value(ll)[[i, 0]] - tape.value(lat.kl_c)[[i, 0]] - tape.value(lat.kl_d)[[i, 0]];
        let got = tape.value(elbo)[[i, 0]];
        assert!((got - (plain - kl_ber)).abs() < 1e-12, "{got} vs {plain}");
    }

    // z_eps prior and proposal coincide, so adding both log terms is a no-op.
    let z_eps = tape.constant(noise.z_eps.clone());
    let sigma = m.config().sigma_eps;
    let lp = graph::isotropic_log_density(&mut tape, z_eps, sigma);
    let lq = graph::isotropic_log_density(&mut tape, z_eps, sigma);
    let with = {
        let cancel = tape.sub(lp, lq).unwrap();
        tape.add(elbo, cancel).unwrap()
    };
    assert_eq!(tape.value(with), tape.value(elbo));
}

/// Gradients of `Σ recon` with respect to every `enc_d` tensor.
fn dirty_encoder_grads(
    m: &Clsvae,
    x: &Matrix,
    build: impl Fn(&mut Tape, &Bound, Var, &Latents, Var) -> Var,
) -> Vec<Matrix> {
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let xv = tape.constant(x.clone());
    let noise = m.draw_noise(&mut rng::stream(6, 6), x.nrows());
    let lat = m.latents(&mut tape, &bound, xv, &noise).unwrap();
    let z_eps = tape.constant(noise.z_eps);
    let recon = build(&mut tape, &bound, xv, &lat, z_eps);
    let total = tape.sum(recon);
    let grads = tape.backward(total).unwrap();
    m.params()
        .ids()
        .filter(|&id| m.params().name(id).starts_with("enc_d"))
        .map(|id| grads.get_or_zeros(&tape, bound.var(id)))
        .collect()
}

fn all_zero(gs: &[Matrix]) -> bool {
    gs.iter().all(|g| g.iter().all(|&v| v == 0.0))
}

#[test]
fn inlier_paths_never_consume_dirty_code() {
    let m = clsvae(PixelKind::Binary, false);
    let x = toy_pixels(PixelKind::Binary, 4, 12);
    let labelled = |labels: [f64; 4]| {
        dirty_encoder_grads(&m, &x, |tape, bound, xv, lat, z_eps| {
            m.labelled_elbo(tape, bound, xv, &labels, lat, z_eps, 1.0).unwrap().1
        })
    };
    assert!(all_zero(&labelled([1.0; 4])));
    assert!(!all_zero(&labelled([0.0; 4])));

    let unlabelled = |logit: f64| {
        dirty_encoder_grads(&m, &x, |tape, bound, xv, lat, z_eps| {
            let logits = tape.constant(Matrix::from_elem((4, 1), logit));
            m.unlabelled_elbo(tape, bound, xv, lat, z_eps, logits, 1.0).unwrap().1
        })
    };
    assert!(all_zero(&unlabelled(60.0)));
    assert!(!all_zero(&unlabelled(0.0)));

    // A different dirty-code sample leaves y = 1 rows untouched.
    let labels = [1.0, 1.0, 0.0, 1.0];
    let noise = m.draw_noise(&mut rng::stream(6, 6), 4);
    let mut other = noise.clone();
    other.eps_d = normal_matrix(&mut rng::stream(6, 7), 4, 2, 1.0);
    let recon_with = |n: &Noise| {
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let xv = tape.constant(x.clone());
        let lat = m.latents(&mut tape, &bound, xv, n).unwrap();
        let z_eps = tape.constant(n.z_eps.clone());
        let (_, recon) = m.labelled_elbo(&mut tape, &bound, xv, &labels, &lat, z_eps, 1.0).unwrap();
        tape.value(recon).clone()
    };
    let (a, b) = (recon_with(&noise), recon_with(&other));
    for (i, y) in labels.iter().enumerate() {
        assert_eq!(a[[i, 0]] == b[[i, 0]], *y == 1.0, "row {i}");
    }
}

#[test]
fn labelled_elbo_label_switch_changes_prior_term() {
    let m = clsvae(PixelKind::Binary, false);
    let alpha = m.config().alpha;
    let x = toy_pixels(PixelKind::Binary, 1, 14);
    let noise = m.draw_noise(&mut rng::stream(8, 8), 1);
    let eval = |y: f64| {
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let xv = tape.constant(x.clone());
        let lat = m.latents(&mut tape, &bound, xv, &noise).unwrap();
        let z_eps = tape.constant(noise.z_eps.clone());
        let (elbo, recon) = m
            .labelled_elbo(&mut tape, &bound, xv, &[y], &lat, z_eps, 1.0)
            .unwrap();
        (tape.scalar(elbo), tape.scalar(recon))
    };
    let (e1, r1) = eval(1.0);
    let (e0, r0) = eval(0.0);
    let diff = (e1 - r1) - (e0 - r0);
    assert!((diff - (alpha.ln() - (1.0 - alpha).ln())).abs() < 1e-12);
    assert_ne!(r1, r0);
}

#[test]
fn wce_bound_edge_values() {
    let m = clsvae(PixelKind::Binary, false);
    let mut tape = Tape::new();
    let sure = tape.constant(Matrix::from_elem((1, 1), 40.0));
    let w = m.wce_bound(&mut tape, sure, &[1.0], 1.0).unwrap();
    assert!(tape.scalar(w) < 1e-15);
    let half = tape.constant(Matrix::zeros((1, 1)));
    let w = m.wce_bound(&mut tape, half, &[0.0], 1.0).unwrap();
    assert!((tape.scalar(w) - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn wce_bound_dominates_cross_entropy_of_mean_probability() {
    let m = clsvae(PixelKind::Binary, false);
    let x = toy_pixels(PixelKind::Binary, 1, 15);
    let xs = Matrix::from_shape_fn((10_000, PIXELS), |(_, j)| x[[0, j]]);
    let noise = m.draw_noise(&mut rng::stream(9, 9), 10_000);
    let mut tape = Tape::new();
    let bound = m.params().bind_frozen(&mut tape);
    let xv = tape.constant(xs);
    let lat = m.latents(&mut tape, &bound, xv, &noise).unwrap();
    let logits = m.classify_logits(&mut tape, &bound, lat.z_c, lat.z_d).unwrap();
    let pis: Vec<f64> = tape.value(logits).iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
    let mean_pi = pis.iter().sum::<f64>() / pis.len() as f64;
    for (y, omega) in [(1.0, 1.0), (0.0, 3.0)] {
        let labels = vec![y; 10_000];
        let w = m.wce_bound(&mut tape, logits, &labels, omega).unwrap();
        let bound_est = tape.value(w).mean().unwrap();
        let exact = -y * mean_pi.ln() - omega * (1.0 - y) * (1.0 - mean_pi).ln();
        assert!(exact <= bound_est + 1e-12, "{exact} > {bound_est}");
    }
}

#[test]
fn imbalance_weight_cases() {
    let mk = |n1: usize, n0: usize| {
        let mut v = vec![1.0; n1];
        v.extend(vec![0.0; n0]);
        v
    };
    assert_eq!(imbalance_weight(&mk(8, 2)), 4.0);
    assert_eq!(imbalance_weight(&mk(5, 5)), 1.0);
    assert_eq!(imbalance_weight(&mk(2, 8)), 1.0);
    assert_eq!(imbalance_weight(&mk(3, 0)), 1.0);
}

#[test]
fn term_switches_and_identical_codes() {
    let mut c = toy_clsvae_config(PixelKind::Binary);
    c.beta = 0.0;
    let m = Clsvae::new(c, &mut rng::stream(3, 0));
    let b = toy_batch(PixelKind::Binary, 2);
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let ctx0 = LossContext {
        lambda_t: 0.0,
        ..ctx()
    };
    let terms = m.loss(&mut tape, &bound, &b, &ctx0, &mut rng::stream(1, 1)).unwrap();

    // Recompute the pure semi-supervised ELBO with the same noise stream.
    let mut t2 = Tape::new();
    let b2 = m.params().bind(&mut t2);
    let mut r = rng::stream(1, 1);
    let nu = m.draw_noise(&mut r, 2);
    let xu = t2.constant(b.unlabelled.clone());
    let lu = m.latents(&mut t2, &b2, xu, &nu).unwrap();
    let zeu = t2.constant(nu.z_eps.clone());
    let lg = m.classify_logits(&mut t2, &b2, lu.z_c, lu.z_d).unwrap();
    let (eu, _, _) = m.unlabelled_elbo(&mut t2, &b2, xu, &lu, zeu, lg, ctx0.kl_weight).unwrap();
    let nl = m.draw_noise(&mut r, 2);
    let xl = t2.constant(b.labelled.clone());
    let ll = m.latents(&mut t2, &b2, xl, &nl).unwrap();
    let zel = t2.constant(nl.z_eps.clone());
    let (el, _) = m.labelled_elbo(&mut t2, &b2, xl, &b.labels, &ll, zel, ctx0.kl_weight).unwrap();
    let want = -(b.weight_u * t2.value(eu).mean().unwrap() + b.weight_l * t2.value(el).mean().unwrap());
    assert!((tape.scalar(terms.total) - want).abs() < 1e-10);

    // dCor of a batch with itself is 1, so the penalty equals λ.
    let z = normal_matrix(&mut rng::stream(2, 0), 8, 3, 1.0);
    let lambda_max = 100.0;
    let penalty = lambda_max * dcor::distance_correlation(&z, &z).unwrap();
    assert!((penalty - lambda_max).abs() < 1e-9);
}

#[test]
fn single_row_batch_skips_dc_penalty() {
    let m = clsvae(PixelKind::Binary, false);
    // A one-row batch has no pairwise distances to correlate.
    let b = Batch {
        unlabelled: toy_pixels(PixelKind::Binary, 1, 3),
        labelled: Matrix::zeros((0, PIXELS)),
        labels: vec![],
        weight_u: 1.0,
        weight_l: 0.0,
    };
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let t = m.loss(&mut tape, &bound, &b, &ctx(), &mut rng::stream(0, 0)).unwrap();
    assert_eq!(t.dc, 0.0);
    assert!(tape.scalar(t.total).is_finite());
}

#[test]
fn score_and_repair_contracts() {
    let m = clsvae(PixelKind::Binary, false);
    let x = toy_pixels(PixelKind::Binary, 16, 16);
    let s1 = m.score(&x).unwrap();
    let s2 = m.score(&x).unwrap();
    assert_eq!(s1, s2);
    assert!(s1.iter().all(|&v| v >= 0.0 && v.is_finite()));
    let r1 = m.repair(&x).unwrap();
    assert_eq!(r1, m.repair(&x).unwrap());
    assert!(r1.iter().all(|&v| v > 0.0 && v < 1.0));

    // Repair only sees μ_c: decoding with any μ_d gives the same answer.
    let (mc, md) = m.encode_means(&x).unwrap();
    assert_eq!(mc.ncols(), 2);
    assert_eq!(md.ncols(), 2);
    let zero = Matrix::zeros((16, 2));
    assert_eq!(m.decode_mean(&mc, &zero).unwrap(), r1);

    // Score is −log π at the posterior means.
    let pi = m.classify(&mc, &md).unwrap();
    for (s, p) in s1.iter().zip(&pi) {
        assert!((s + p.ln()).abs() < 1e-6);
        assert!(*p > 0.0 && *p < 1.0);
    }
}

#[test]
fn score_equals_default_gamma_at_even_odds() {
    let mut c = toy_clsvae_config(PixelKind::Binary);
    c.classifier_hidden = vec![];
    let mut m = Clsvae::new(c, &mut rng::stream(1, 1));
    let ids: Vec<_> = m
        .params()
        .ids()
        .filter(|&id| m.params().name(id).starts_with("clf"))
        .collect();
    for id in ids {
        m.params_mut().get_mut(id).fill(0.0);
    }
    let s = m.score(&toy_pixels(PixelKind::Binary, 3, 2)).unwrap();
    for v in s {
        assert!((v - DEFAULT_GAMMA).abs() < 1e-12);
    }
}

#[test]
fn default_architecture_widths() {
    let c = ClsvaeConfig::new(NetShape::new(28 * 28, PixelKind::Binary));
    let m = Clsvae::new(c, &mut rng::stream(0, 0));
    let x = Matrix::zeros((2, 784));
    let (mc, md) = m.encode_means(&x).unwrap();
    assert_eq!((mc.ncols(), md.ncols()), (10, 5));
    let names: Vec<_> = m.params().iter().map(|(n, v)| (n.to_string(), v.dim())).collect();
    let dec_in = names.iter().find(|(n, _)| n.starts_with("dec")).unwrap();
    assert_eq!(dec_in.1, (50, 15));
    let clf: Vec<_> = names.iter().filter(|(n, _)| n.starts_with("clf")).map(|(_, d)| *d).collect();
    assert_eq!(clf, vec![(7, 15), (1, 7), (5, 7), (1, 5), (1, 5), (1, 1)]);
}

#[test]
fn encoder_std_positive_and_deterministic() {
    let m = clsvae(PixelKind::Continuous, false);
    let x = toy_pixels(PixelKind::Continuous, 5, 77) * 40.0 - 20.0;
    let mut tape = Tape::new();
    let bound = m.params().bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let ((_, sc), (_, sd)) = m.encode(&mut tape, &bound, xv).unwrap();
    assert!(tape.value(sc).iter().chain(tape.value(sd).iter()).all(|&v| v > 0.0));
    assert_eq!(m.encode_means(&x).unwrap(), m.encode_means(&x).unwrap());
}

#[test]
fn vae_l2_reductions() {
    let x = toy_pixels(PixelKind::Binary, 4, 1);
    let mut c = VaeL2Config::new(toy_shape(PixelKind::Binary));
    c.l2 = 0.0;
    c.latent_dim = 3;
    let mut m = VaeL2::new(c.clone(), &mut rng::stream(2, 2));
    let b = Batch {
        unlabelled: x.clone(),
        labelled: Matrix::zeros((0, PIXELS)),
        labels: vec![],
        weight_u: 1.0,
        weight_l: 0.0,
    };
    let loss_of = |m: &VaeL2| {
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let t = m.loss(&mut tape, &bound, &b, &LossContext::default(), &mut rng::stream(5, 0)).unwrap();
        tape.scalar(t.total)
    };
    // λ = 0: plain negative ELBO.
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let xv = tape.constant(x.clone());
    let eps = normal_matrix(&mut rng::stream(5, 0), 4, 3, 1.0);
    let elbo = m.elbo(&mut tape, &bound, xv, eps, 1.0).unwrap();
    let plain = -tape.value(elbo).mean().unwrap();
    assert!((loss_of(&m) - plain).abs() < 1e-12);

    // Zero weights: the penalty vanishes whatever λ is.
    c.l2 = 50.0;
    let mut reg = VaeL2::new(c, &mut rng::stream(2, 2));
    let ids: Vec<_> = reg.params().ids().collect();
    for id in ids {
        if reg.params().role(id) == clsvae::autodiff::ParamRole::Weight {
            reg.params_mut().get_mut(id).fill(0.0);
            let name = reg.params().name(id).to_string();
            m.params_mut().set(&name, Matrix::zeros(reg.params().get(id).dim())).unwrap();
        }
    }
    assert!((loss_of(&reg) - loss_of(&m)).abs() < 1e-12);
}

#[test]
fn vae_l2_score_at_even_odds_and_hand_value() {
    let mut c = VaeL2Config::new(toy_shape(PixelKind::Binary));
    c.l2 = 0.0;
    let mut m = VaeL2::new(c, &mut rng::stream(1, 0));
    let ids: Vec<_> = m.params().ids().filter(|&id| m.params().name(id).starts_with("dec")).collect();
    let last = *ids.last().unwrap();
    for id in &ids {
        m.params_mut().get_mut(*id).fill(0.0);
    }
    let x = toy_pixels(PixelKind::Binary, 3, 3);
    for s in m.score(&x).unwrap() {
        assert!((s - PIXELS as f64 * std::f64::consts::LN_2).abs() < 1e-12);
    }
    // Output bias b gives p = sigmoid(b); NLL by hand.
    let bias: Vec<f64> = (0..PIXELS).map(|j| 0.3 * j as f64 - 0.7).collect();
    m.params_mut().get_mut(last).assign(&Array2::from_shape_vec((1, PIXELS), bias.clone()).unwrap());
    let s = m.score(&x).unwrap();
    for i in 0..3 {
        let mut want = 0.0;
        for j in 0..PIXELS {
            let p = 1.0 / (1.0 + (-bias[j]).exp());
            want -= if x[[i, j]] == 1.0 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!((s[i] - want).abs() < 1e-12, "{} vs {want}", s[i]);
    }
    assert_eq!(m.repair(&x).unwrap(), m.repair(&x).unwrap());
}

#[test]
fn cvae_kl_grows_as_prior_narrows() {
    let x = toy_pixels(PixelKind::Binary, 4, 9);
    let mut kls = Vec::new();
    for sigma in [1.0, 0.5, 0.2] {
        let mut c = CvaeConfig::new(toy_shape(PixelKind::Binary));
        c.sigma = sigma;
        c.latent_dim = 3;
        let m = Cvae::new(c, &mut rng::stream(6, 0));
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let eps = normal_matrix(&mut rng::stream(1, 0), 4, 3, 1.0);
        let (_, _, kl) = m.elbo(&mut tape, &bound, &x, &[1.0, 0.0, 1.0, 0.0], eps, 1.0).unwrap();
        kls.push(tape.value(kl).sum());
    }
    assert!(kls[0] < kls[1] && kls[1] < kls[2], "{kls:?}");
}

#[test]
fn cvae_repair_uses_outlier_encoding() {
    let mut c = CvaeConfig::new(toy_shape(PixelKind::Binary));
    c.latent_dim = 3;
    let mut m = Cvae::new(c, &mut rng::stream(6, 1));
    let mut adam = clsvae::autodiff::AdamState::new(m.params(), Default::default());
    let x = toy_pixels(PixelKind::Binary, 8, 2);
    let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let b = Batch {
        unlabelled: Matrix::zeros((0, PIXELS)),
        labelled: x.clone(),
        labels,
        weight_u: 0.0,
        weight_l: 1.0,
    };
    let mut r = rng::stream(6, 2);
    for _ in 0..50 {
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let t = m.loss(&mut tape, &bound, &b, &LossContext::default(), &mut r).unwrap();
        let g = tape.backward(t.total).unwrap();
        let grads: Vec<_> = bound.vars().iter().map(|&v| g.get(v).cloned()).collect();
        adam.step(m.params_mut(), &grads).unwrap();
    }
    let repaired = m.repair(&x).unwrap();
    assert_eq!(repaired, m.repair(&x).unwrap());
    let (via_y0, _) = m.reconstruct_with(&x, 0.0, 0.0).unwrap();
    let (via_y1, _) = m.reconstruct_with(&x, 0.0, 1.0).unwrap();
    assert_eq!(repaired, via_y1);
    assert_ne!(repaired, via_y0);
}

#[test]
fn vaegmm_reductions_and_score() {
    let mut c = VaegmmConfig::new(toy_shape(PixelKind::Binary));
    c.latent_dim = 3;
    let alpha = c.alpha;
    let m = Vaegmm::new(c.clone(), &mut rng::stream(7, 0));
    let x = toy_pixels(PixelKind::Binary, 3, 1);
    let eps = normal_matrix(&mut rng::stream(7, 1), 3, 3, 1.0);

    // π = 1: single-component ELBO minus the Bernoulli KL at 1.
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let (g1, _, _) = m.branch(&mut tape, &bound, &x, &[1.0; 3], eps.clone(), 1.0).unwrap();
    let (g0, _, _) = m.branch(&mut tape, &bound, &x, &[0.0; 3], eps.clone(), 1.0).unwrap();
    let logits = tape.constant(Matrix::from_elem((3, 1), 60.0));
    let (elbo, _) = m.unlabelled_elbo(&mut tape, g1, g0, logits).unwrap();
    for i in 0..3 {
        let want = tape.value(g1)[[i, 0]] + alpha.ln();
        assert!((tape.value(elbo)[[i, 0]] - want).abs() < 1e-12);
    }

    // y = 1 uses only the σ_y1 prior: changing σ_y0 leaves it unchanged.
    let mut c2 = c.clone();
    c2.sigma_y0 = 9.0;
    let m2 = Vaegmm::new(c2, &mut rng::stream(7, 0));
    let mut t2 = Tape::new();
    let b2 = m2.params().bind(&mut t2);
    let (g1b, _, _) = m2.branch(&mut t2, &b2, &x, &[1.0; 3], eps.clone(), 1.0).unwrap();
    let (g0b, _, _) = m2.branch(&mut t2, &b2, &x, &[0.0; 3], eps.clone(), 1.0).unwrap();
    assert_eq!(tape.value(g1), t2.value(g1b));
    assert_ne!(tape.value(g0), t2.value(g0b));

    let s = m.score(&x).unwrap();
    assert!(s.iter().all(|&v| v >= 0.0));
    assert_eq!(m.repair(&x).unwrap(), m.repair(&x).unwrap());
}

#[test]
fn vaegmm_score_log2_at_even_odds() {
    let mut c = VaegmmConfig::new(toy_shape(PixelKind::Binary));
    c.latent_dim = 3;
    let mut m = Vaegmm::new(c, &mut rng::stream(7, 0));
    let ids: Vec<_> = m.params().ids().filter(|&id| m.params().name(id).starts_with("clf")).collect();
    let last = *ids.iter().rev().find(|&&id| m.params().get(id).dim() == (1, 1)).unwrap();
    m.params_mut().get_mut(last).fill(0.0);
    let w_last = ids[ids.len() - 2];
    m.params_mut().get_mut(w_last).fill(0.0);
    for v in m.score(&toy_pixels(PixelKind::Binary, 2, 0)).unwrap() {
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn vaegmm_repair_ignores_outlier_branch() {
    let mut c = VaegmmConfig::new(toy_shape(PixelKind::Binary));
    c.latent_dim = 3;
    let m = Vaegmm::new(c, &mut rng::stream(7, 3));
    let x = toy_pixels(PixelKind::Binary, 4, 4);
    // The repair encodes [x; 1]; any change to the label column changes it.
    let with_one = append_label(&x, 1.0);
    assert_eq!(with_one.column(PIXELS).iter().copied().collect::<Vec<_>>(), vec![1.0; 4]);
    assert_eq!(m.repair(&x).unwrap(), m.repair(&x).unwrap());
}

#[test]
fn specs_round_trip_and_validate() {
    let shape = NetShape::new(784, PixelKind::Binary);
    let specs = vec![
        ModelSpec::Clsvae(ClsvaeConfig::new(shape.clone())),
        ModelSpec::VaeL2(VaeL2Config::new(shape.clone())),
        ModelSpec::Cvae(CvaeConfig::new(shape.clone())),
        ModelSpec::Vaegmm(VaegmmConfig::new(shape.clone())),
    ];
    for s in specs {
        let json = serde_json::to_string(&s).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(json.contains(&format!("\"model\":\"{}\"", s.kind().as_str())));
        s.validate().unwrap();
    }
    let mut bad = ClsvaeConfig::new(shape.clone());
    bad.sigma_c = 5.0;
    assert!(ModelSpec::Clsvae(bad).validate().is_err());
    let mut bad = VaegmmConfig::new(shape);
    bad.sigma_y1 = 6.0;
    assert!(ModelSpec::Vaegmm(bad).validate().is_err());
}

#[test]
fn build_is_seed_deterministic() {
    let spec = ModelSpec::Clsvae(toy_clsvae_config(PixelKind::Binary));
    let a = spec.build(&mut rng::stream(4, 0)).unwrap();
    let b = spec.build(&mut rng::stream(4, 0)).unwrap();
    let va: Vec<_> = a.params().iter().map(|(_, v)| v.clone()).collect();
    let vb: Vec<_> = b.params().iter().map(|(_, v)| v.clone()).collect();
    assert_eq!(va, vb);
}

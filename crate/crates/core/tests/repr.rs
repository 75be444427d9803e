//! Templates, thresholds and classification against direct evaluations.

use codir::envmask::{sample_environments, EnvironmentSpec};
use codir::fisher::{self, TrainConfig};
use codir::metrics::best_threshold;
use codir::net::{Architecture, HeadKind, Layer, Model};
use codir::numerics::{Matrix, Rng};
use codir::repr::{
    class_cosines, classify, critic_outputs, fit_templates, fit_thresholds_from_reps, instance_reps,
    split_for_templates, templates_from_outputs, TemplateSet, Weighting,
};
use codir::synthdata::{generate, Dataset, DatasetSpec, Split};
use rand::Rng as _;

fn tiny_dataset(seed: u64) -> Dataset {
    generate(&DatasetSpec {
        n_c: 3,
        n_l: 14,
        height: 8,
        width: 8,
        channels: 1,
        n_train: 96,
        n_val: 16,
        n_test: 16,
        seed,
    })
    .unwrap()
}

fn tiny_arch() -> Architecture {
    Architecture {
        in_h: 8,
        in_w: 8,
        in_c: 1,
        widths: [4, 4, 4],
    }
}

#[test]
fn templates_match_loop_oracle() {
    let ds = tiny_dataset(1);
    let spec = sample_environments(14, 5, 4, &mut Rng::new(2)).unwrap();
    let model = Model::<f64>::new(tiny_arch(), HeadKind::Critic { n_c: 3, n_e: 5 }, &mut Rng::new(3)).unwrap();
    let ids: Vec<usize> = ds.indices(Split::Train).into_iter().take(16).collect();
    let ts = fit_templates(&model, &ds, &ids, &spec).unwrap();
    let out = critic_outputs(&model, &ds, &ids).unwrap();
    for i in 0..3 {
        for j in 0..5 {
            let (mut es, mut ew, mut cs, mut cw) = (0.0, 0.0, 0.0, 0.0);
            for (n, &k) in ids.iter().enumerate() {
                let w: f64 = spec.labels(j).iter().filter(|&&l| ds.context(k)[l]).count() as f64;
                es += w * out[n][i * 5 + j];
                ew += w;
                if ds.classes(k)[i] {
                    cs += out[n][i * 5 + j];
                    cw += 1.0;
                }
            }
            let ebar = es / ew;
            assert!((ts.ebar[(i, j)] - ebar).abs() < 1e-10);
            assert!((ts.templates[(i, j)] - (ebar - cs / cw)).abs() < 1e-10);
        }
    }
}

#[test]
fn constant_critic_gives_bias_expectations_and_zero_templates() {
    let ds = tiny_dataset(4);
    let spec = sample_environments(14, 4, 5, &mut Rng::new(5)).unwrap();
    let mut model = Model::<f64>::zeros(tiny_arch(), HeadKind::Critic { n_c: 3, n_e: 4 }).unwrap();
    let hb = model.block(Layer::HeadB).range();
    for (n, p) in model.params_mut()[hb].iter_mut().enumerate() {
        *p = 0.25 * n as f64;
    }
    let ids = ds.indices(Split::Train);
    let ts = fit_templates(&model, &ds, &ids, &spec).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            assert!((ts.ebar[(i, j)] - 0.25 * (i * 4 + j) as f64).abs() < 1e-12);
            assert!(ts.templates[(i, j)].abs() < 1e-12);
        }
    }
    // and every representation is zero
    for d in instance_reps(&model, &ds, &ids[..5], &ts.ebar).unwrap() {
        assert!(d.data().iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn identical_member_sets_give_zero_template_cell() {
    // class 0 members = {0, 2}; environment 0 = {label 1}, carried by 0 and 2
    let spec = EnvironmentSpec::from_labels(2, 1, vec![vec![1], vec![0]]).unwrap();
    let outputs = vec![vec![1.0, 5.0], vec![7.0, -1.0], vec![3.0, 2.0]];
    let classes: Vec<&[bool]> = vec![&[true], &[false], &[true]];
    let contexts: Vec<&[bool]> = vec![&[false, true], &[true, false], &[false, true]];
    let (ebar, t) = templates_from_outputs(&outputs, &classes, &contexts, 1, &spec, Weighting::Conditional).unwrap();
    assert!((ebar[(0, 0)] - 2.0).abs() < 1e-15);
    assert!(t[(0, 0)].abs() < 1e-15);
    assert!((t[(0, 1)] - (-1.0 - 3.5)).abs() < 1e-15);
}

#[test]
fn empty_class_or_environment_is_named() {
    let spec = EnvironmentSpec::from_labels(2, 1, vec![vec![1]]).unwrap();
    let outputs = vec![vec![1.0, 2.0]];
    let err = templates_from_outputs(&outputs, &[&[true, false]], &[&[false, true]], 2, &spec, Weighting::Conditional)
        .unwrap_err();
    assert!(err.to_string().contains("class 1"), "{err}");
    let err = templates_from_outputs(&outputs, &[&[true, true]], &[&[true, false]], 2, &spec, Weighting::Conditional)
        .unwrap_err();
    assert!(err.to_string().contains("environment 0"), "{err}");
}

/// `D = Ebar - f` averaged over class-i template samples is `Ebar - E_c f`,
/// i.e. the template row.
#[test]
fn mean_class_representation_equals_template_after_training() {
    let ds = tiny_dataset(6);
    let spec = sample_environments(14, 5, 4, &mut Rng::new(7)).unwrap();
    let mut model = Model::<f32>::new(tiny_arch(), HeadKind::Critic { n_c: 3, n_e: 5 }, &mut Rng::new(8)).unwrap();
    let train = ds.indices(Split::Train);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    fisher::train(&mut model, &ds, &train, &spec, &cfg).unwrap();
    let (tmpl, _) = split_for_templates(&train, 10);
    let ts = fit_templates(&model, &ds, &tmpl, &spec).unwrap();
    let reps = instance_reps(&model, &ds, &tmpl, &ts.ebar).unwrap();
    for i in 0..3 {
        let members: Vec<&Matrix> = tmpl.iter().zip(&reps).filter(|(&k, _)| ds.classes(k)[i]).map(|(_, d)| d).collect();
        for j in 0..5 {
            let mean = members.iter().map(|d| d[(i, j)]).sum::<f64>() / members.len() as f64;
            assert!((mean - ts.templates[(i, j)]).abs() < 1e-8);
        }
    }
}

#[test]
fn template_split_is_two_thirds_and_seeded() {
    let ids: Vec<usize> = (10..40).collect();
    let (a, b) = split_for_templates(&ids, 3);
    assert_eq!((a.len(), b.len()), (20, 10));
    assert!(a.windows(2).all(|w| w[0] < w[1]) && b.windows(2).all(|w| w[0] < w[1]));
    let mut all = [a.clone(), b.clone()].concat();
    all.sort_unstable();
    assert_eq!(all, ids);
    assert_eq!(split_for_templates(&ids, 3), (a.clone(), b));
    assert_ne!(split_for_templates(&ids, 4).0, a);
}

#[test]
fn separable_threshold_is_the_midpoint() {
    let scores = [0.9, 0.1, 0.9, 0.1, 0.1];
    let labels = [true, false, true, false, false];
    let c = best_threshold(&scores, &labels).unwrap();
    assert_eq!((c.threshold, c.f1), (0.5, 1.0));
}

#[test]
fn all_members_pick_negative_infinity() {
    let c = best_threshold(&[0.3, 0.2, 0.9], &[true; 3]).unwrap();
    assert_eq!((c.threshold, c.f1), (f64::NEG_INFINITY, 1.0));
}

#[test]
fn threshold_search_matches_exhaustive_scan() {
    let mut rng = Rng::new(11);
    for _ in 0..50 {
        let n = 50;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(-1.0f64..1.0) * 8.0).round() / 8.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut candidates = vec![f64::NEG_INFINITY];
        candidates.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
        candidates.push(f64::INFINITY);
        let eval = |t: f64| {
            let tp = scores.iter().zip(&labels).filter(|(&s, &l)| s > t && l).count() as f64;
            let predicted = scores.iter().filter(|&&s| s > t).count() as f64;
            let actual = labels.iter().filter(|&&l| l).count() as f64;
            if predicted + actual == 0.0 {
                1.0
            } else {
                2.0 * tp / (predicted + actual)
            }
        };
        let best = candidates.iter().map(|&t| eval(t)).fold(f64::NEG_INFINITY, f64::max);
        let smallest = candidates.iter().copied().find(|&t| eval(t) == best).unwrap();
        let c = best_threshold(&scores, &labels).unwrap();
        assert_eq!(c.f1, best);
        assert_eq!(c.threshold, smallest);
    }
}

#[test]
fn thresholds_lie_in_observed_range_or_are_sentinels() {
    let mut rng = Rng::new(12);
    let t = Matrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.1, 0.3, 0.9]]).unwrap();
    let reps: Vec<Matrix> = (0..40)
        .map(|_| Matrix::from_vec(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let labels: Vec<Vec<bool>> = (0..40).map(|_| vec![rng.gen_bool(0.5), rng.gen_bool(0.5)]).collect();
    let classes: Vec<&[bool]> = labels.iter().map(Vec::as_slice).collect();
    let fit = fit_thresholds_from_reps(&reps, &classes, &t).unwrap();
    for i in 0..2 {
        let cos: Vec<f64> = reps.iter().map(|d| class_cosines(d, &t)[i]).collect();
        let (lo, hi) = cos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
        let th = fit.thresholds[i];
        assert!(th.is_infinite() || (lo..=hi).contains(&th));
    }
}

#[test]
fn absent_class_gets_positive_infinity() {
    let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let reps = vec![t.clone(), t.clone()];
    let fit = fit_thresholds_from_reps(&reps, &[&[true, false], &[true, false]], &t).unwrap();
    assert_eq!(fit.thresholds[1], f64::INFINITY);
    assert_eq!(fit.absent_classes, vec![1]);
}

fn template_set(t: Matrix, thresholds: Vec<f64>) -> TemplateSet {
    TemplateSet {
        ebar: Matrix::zeros(t.rows(), t.cols()),
        templates: t,
        thresholds,
        template_ids: Vec::new(),
        threshold_ids: Vec::new(),
    }
}

#[test]
fn classify_matches_direct_rule() {
    let mut rng = Rng::new(13);
    for _ in 0..100 {
        let (n_c, n_e) = (rng.gen_range(1..6), rng.gen_range(1..8));
        let rand_m = |rng: &mut Rng| Matrix::from_vec(n_c, n_e, (0..n_c * n_e).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (d, t) = (rand_m(&mut rng), rand_m(&mut rng));
        let thr: Vec<f64> = (0..n_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ts = template_set(t.clone(), thr.clone());
        let pred = classify(&d, &ts).unwrap();
        for i in 0..n_c {
            let (a, b) = (d.row(i), t.row(i));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_eq!(pred[i], dot / (na * nb) > thr[i]);
        }
        // positive row rescaling leaves the prediction unchanged
        let mut scaled = d.clone();
        for i in 0..n_c {
            let s = rng.gen_range(0.1..10.0);
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        assert_eq!(classify(&scaled, &ts).unwrap(), pred);
    }
}

#[test]
fn copy_of_templates_is_in_every_class() {
    let t = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
    let ts = template_set(t.clone(), vec![0.99, 0.5, -0.2]);
    assert_eq!(classify(&t, &ts).unwrap(), vec![true; 3]);
    let d = Matrix::from_rows(&[vec![-2.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert!(!classify(&d, &ts).unwrap()[0]);
}

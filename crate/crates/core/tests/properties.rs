use std::sync::Arc;

use pipgan::checkpoint::{decode_archive, encode_archive, NamedTensor};
use pipgan::config::{ModelConfig, PipelineOrder};
use pipgan::data::{pair_for_stage, split_subjects, AttributeSchema, ManifestRow, StageFilter, StageKind};
use pipgan::evaluation::{image_metrics, MetricsReport, PairMetrics};
use pipgan::image::Image;
use pipgan::losses::{adversarial_d_loss, classification_loss, l1_loss};
use pipgan::pipeline::compose;
use pipgan::training::{StageModel, StageSpec};
use pipgan_autograd::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image_strategy(side: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, 3 * side * side).prop_map(move |d| Image::new(side, side, d).unwrap())
}

fn schema(name: &str, k: usize, neutral: usize) -> AttributeSchema {
    AttributeSchema::new(name, (0..k).map(|i| format!("{name}{i}")).collect(), neutral).unwrap()
}

fn grid(n_subjects: usize, kp: usize, ke: usize) -> Vec<ManifestRow> {
    let mut rows = Vec::new();
    for s in 0..n_subjects {
        for p in 0..kp {
            for e in 0..ke {
                rows.push(ManifestRow { subject_id: format!("s{s}"), pose: p, expression: e, path: format!("{s}_{p}_{e}.png").into() });
            }
        }
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric_and_consistent(a in image_strategy(4), b in image_strategy(4)) {
        let m = image_metrics(&a, &b).unwrap();
        let n = image_metrics(&b, &a).unwrap();
        prop_assert_eq!(m, n);
        prop_assert_eq!(m.rmse, m.mse.sqrt());
        if m.mse > 0.0 {
            prop_assert!((m.psnr_db + 10.0 * m.mse.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_respects_jensen(mses in prop::collection::vec(1e-6f64..1.0, 1..40)) {
        let per = mses
            .iter()
            .enumerate()
            .map(|(i, &mse)| {
                let m = pipgan::evaluation::metrics_from_mse(mse);
                PairMetrics { pair_id: i.to_string(), psnr_db: m.psnr_db, mse: m.mse, rmse: m.rmse }
            })
            .collect();
        let r = MetricsReport::from_pairs(per).unwrap();
        prop_assert_eq!(r.n_pairs, mses.len());
        prop_assert!(r.aggregate.rmse <= r.aggregate.mse.sqrt() + 1e-15);
    }

    #[test]
    fn larger_noise_means_larger_error(t in image_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir: Vec<f64> = (0..t.data().len()).map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 }).collect();
        let noisy = |amp: f64| Image::new(4, 4, t.data().iter().zip(&dir).map(|(v, d)| v + amp * d).collect()).unwrap();
        let (a, b) = (image_metrics(&noisy(0.05), &t).unwrap(), image_metrics(&noisy(0.1), &t).unwrap());
        prop_assert!(b.mse > a.mse);
        prop_assert!(b.psnr_db < a.psnr_db);
    }

    #[test]
    fn archive_roundtrip(values in prop::collection::vec(any::<f64>(), 0..50), rows in 1usize..5) {
        let cols = values.len() / rows;
        let t: Vec<NamedTensor> = vec![("w".into(), vec![rows, cols], values[..rows * cols].to_vec()), ("s".into(), vec![], vec![1.5])];
        let back = decode_archive(&encode_archive(&t), std::path::Path::new("x")).unwrap();
        let bits = |v: &[NamedTensor]| v.iter().map(|(n, s, d)| (n.clone(), s.clone(), d.iter().map(|x| x.to_bits()).collect::<Vec<_>>())).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn split_is_subject_disjoint(n in 2usize..30, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let rows = grid(n, 2, 2);
        match split_subjects(&rows, ratio, seed) {
            Ok((a, b)) => {
                prop_assert_eq!(a.len() + b.len(), rows.len());
                let sa: std::collections::HashSet<_> = a.iter().map(|r| &r.subject_id).collect();
                prop_assert!(b.iter().all(|r| !sa.contains(&r.subject_id)));
                prop_assert_eq!(sa.len(), (ratio * n as f64).round() as usize);
            }
            Err(_) => {
                let k = (ratio * n as f64).round() as usize;
                prop_assert!(k == 0 || k == n);
            }
        }
    }

    #[test]
    fn stage_pair_counts(n in 1usize..5, kp in 2usize..8, ke in 2usize..8) {
        let (ps, es) = (schema("p", kp, 0), schema("e", ke, ke - 1));
        let rows = grid(n, kp, ke);
        let f = StageFilter::default();
        prop_assert_eq!(pair_for_stage(&rows, &ps, &es, StageKind::Pose, f, false).unwrap().len(), n * (kp - 1));
        prop_assert_eq!(pair_for_stage(&rows, &ps, &es, StageKind::Expression, f, false).unwrap().len(), n * kp * (ke - 1));
        prop_assert_eq!(pair_for_stage(&rows, &ps, &es, StageKind::Joint, f, true).unwrap().len(), n * kp * ke);
        for p in pair_for_stage(&rows, &ps, &es, StageKind::Pose, f, false).unwrap() {
            prop_assert_eq!(p.condition.encoding().iter().sum::<f64>(), 1.0);
            prop_assert_eq!(rows[p.target].pose, p.condition.index());
        }
    }

    #[test]
    fn losses_are_finite_and_nonnegative(
        real in prop::collection::vec(-50.0f64..50.0, 4),
        fake in prop::collection::vec(-50.0f64..50.0, 4),
        logits in prop::collection::vec(-30.0f64..30.0, 6),
        labels in prop::collection::vec(0usize..3, 2),
    ) {
        let d = adversarial_d_loss(&Tensor::from_vec(real, &[4]), &Tensor::from_vec(fake, &[4])).item();
        prop_assert!(d.is_finite() && d >= 0.0);
        let ce = classification_loss(&Tensor::from_vec(logits, &[2, 3]), &labels).unwrap().item();
        prop_assert!(ce.is_finite() && ce >= 0.0);
    }

    #[test]
    fn l1_is_a_metric(a in image_strategy(2), b in image_strategy(2)) {
        let t = |i: &Image| Tensor::from_vec(i.data().to_vec(), &[1, 3, 2, 2]);
        let ab = l1_loss(&t(&a), &t(&b)).unwrap().item();
        prop_assert_eq!(ab, l1_loss(&t(&b), &t(&a)).unwrap().item());
        prop_assert_eq!(l1_loss(&t(&a), &t(&a)).unwrap().item(), 0.0);
    }
}

fn stage(kind: StageKind, k: usize, seed: u64) -> StageModel {
    let model = ModelConfig { width_divisor: 16, ..ModelConfig::default() };
    StageModel::new(StageSpec::new(kind, schema(kind.name(), k, 0), 16, &model, seed).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pipeline_output_count_is_product(np in 1usize..5, ne in 1usize..7, ep in any::<bool>()) {
        let order = if ep { PipelineOrder::EP } else { PipelineOrder::PE };
        let m = compose(order, stage(StageKind::Pose, 5, 1), stage(StageKind::Expression, 7, 2), true).unwrap();
        let x = Arc::new(Image::filled(16, 16, 0.4));
        let pose_set: Vec<usize> = (0..np).collect();
        let expr_set: Vec<usize> = (0..ne).collect();
        let out = m.expand(&x, &pose_set, &expr_set, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(out.outputs.len(), np * ne);
        for (i, c) in out.outputs.iter().enumerate() {
            prop_assert_eq!((c.pose, c.expression), (pose_set[i / ne], expr_set[i % ne]));
        }
    }
}

mod common;

use std::sync::Arc;

use common::{gaussian, orthonormal_dict, rng};
use moralgeo_core::saelab::sae_encode;
use moralgeo_core::steering::*;
use moralgeo_core::store::{SweepMode, SweepResult};
use moralgeo_core::{Error, Foundation, Intervention, LikertItem, LogitProvider, McqItem, Steer, Subscale};
use proptest::prelude::*;

/// Five option logits whose expected rating is exactly `s`: all mass on
/// options 1 and 5, the others underflow to zero probability.
fn logits_for_score(s: f64) -> Vec<f64> {
    let q = (s - 1.0) / 4.0;
    vec![(1.0 - q).ln(), -800.0, -800.0, -800.0, q.ln()]
}

/// Scores each item as `3 + w . h` where `h` is a fixed residual, edited
/// by the intervention when one is given.
struct AffineProvider {
    h0: Vec<f64>,
    w: Vec<f64>,
}

impl LogitProvider for AffineProvider {
    fn option_logits(&self, _prompt: &str, _options: &[String], iv: Option<&Intervention>) -> moralgeo_core::Result<Vec<f64>> {
        let h = match iv {
            Some(iv) => apply_intervention(&self.h0, iv)?,
            None => self.h0.clone(),
        };
        let s = 3.0 + self.w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        Ok(logits_for_score(s))
    }
}

/// Returns fixed logits per prompt, looked up by prompt text.
struct TableProvider(Vec<(String, Vec<f64>)>);

impl LogitProvider for TableProvider {
    fn option_logits(&self, prompt: &str, _options: &[String], _iv: Option<&Intervention>) -> moralgeo_core::Result<Vec<f64>> {
        self.0
            .iter()
            .find(|(p, _)| p == prompt)
            .map(|(_, l)| l.clone())
            .ok_or_else(|| Error::validation(format!("no logits for {prompt}")))
    }
}

fn items_all_subscales(per: usize) -> Vec<LikertItem> {
    let mut out = Vec::new();
    for s in Subscale::ALL {
        for i in 0..per {
            out.push(LikertItem {
                item_id: format!("{s}-{i}"),
                subscale: s,
                prompt: format!("{s}-{i}"),
                options: (1..=5).map(|k| k.to_string()).collect(),
            });
        }
    }
    out
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn likert_in_range_and_shift_invariant(l in prop::array::uniform5(-50.0f64..50.0), c in -100.0f64..100.0) {
        let s = expected_likert(&l).unwrap();
        prop_assert!((1.0..=5.0).contains(&s));
        let shifted = l.map(|x| x + c);
        prop_assert!((expected_likert(&shifted).unwrap() - s).abs() < 1e-9);
    }

    #[test]
    fn slope_matches_normal_equations(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        prop_assume!(det.abs() > 1e-6);
        let beta = (n * sxy - sx * sy) / det;
        let intercept = (sy * sxx - sx * sxy) / det;
        let fit = fit_slope(&xs, &ys).unwrap();
        prop_assert!((fit.beta - beta).abs() < 1e-8 * (1.0 + beta.abs()));
        prop_assert!((fit.intercept - intercept).abs() < 1e-8 * (1.0 + intercept.abs()));
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - beta * x).powi(2)).sum();
        let tot: f64 = ys.iter().map(|y| (y - sy / n).powi(2)).sum();
        if tot > 1e-9 {
            prop_assert!((fit.r_squared - (1.0 - resid / tot)).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_readout_slope_is_projection(seed in any::<u64>(), d in 2usize..12) {
        let mut r = rng(seed);
        let w: Vec<f64> = gaussian(&mut r, d, 0.0).iter().map(|x| x * 0.05).collect();
        let v = unit(gaussian(&mut r, d, 0.0));
        let provider = AffineProvider { h0: gaussian(&mut r, d, 0.0).iter().map(|x| x * 0.05).collect(), w: w.clone() };
        let spec = SweepSpec {
            foundation: Foundation::Care,
            mode: SweepMode::Macro,
            alphas: parse_grid("default").unwrap(),
            layers: vec![0, 3],
        };
        let results = run_sweep(&provider, &items_all_subscales(1), &spec, &|_| Ok(Steer::Direction(v.clone()))).unwrap();
        let fits = fit_sweeps(&results, Foundation::Care).unwrap();
        let want: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        for fit in fits.values() {
            prop_assert!((fit.beta - want).abs() < 1e-9);
        }
        for r in &results {
            let zero = r.alphas().iter().position(|&a| a == 0.0).unwrap();
            prop_assert_eq!(r.delta_series(Foundation::Care)[zero], 0.0);
        }
    }
}

#[test]
fn likert_examples() {
    assert_eq!(expected_likert(&[0.0; 5]).unwrap(), 3.0);
    assert!((expected_likert(&[-1e3, -1e3, -1e3, -1e3, 0.0]).unwrap() - 5.0).abs() < 1e-12);
    assert!((expected_likert(&[0.0, -1e3, -1e3, -1e3, -1e3]).unwrap() - 1.0).abs() < 1e-12);
    assert!(expected_likert(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
    assert!((expected_likert(&[1e300, 0.0, 0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn slope_edge_cases() {
    let fit = fit_slope(&[-1.0, 0.0, 1.0], &[2.0, 2.0, 2.0]).unwrap();
    assert_eq!((fit.beta, fit.intercept, fit.r_squared), (0.0, 2.0, 0.0));
    assert!(fit_slope(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(fit_slope(&[0.0], &[1.0]).is_err());
    let fit = fit_slope(&[-2.0, 0.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((fit.beta, fit.intercept, fit.r_squared), (0.5, 2.0, 1.0));
}

#[test]
fn best_layer_ties_go_low() {
    let f = |beta| SlopeFit { beta, intercept: 0.0, r_squared: 1.0 };
    let fits = [(2, f(0.3)), (5, f(0.7)), (9, f(0.7)), (11, f(-1.0))].into_iter().collect();
    assert_eq!(select_best_layer(&fits).unwrap(), 5);
    assert!(select_best_layer(&Default::default()).is_err());
}

#[test]
fn clamp_semantics() {
    let mut r = rng(3);
    let dict = Arc::new(orthonormal_dict(&mut r, 8, 8));
    let mut h = vec![0.0; 8];
    for (i, c) in [(1usize, 0.5), (4, 2.0)] {
        for (x, dv) in h.iter_mut().zip(dict.decoder_direction(i)) {
            *x += c * dv;
        }
    }
    let feat = |index| ClampFeature { index, f_max: 2.0 };

    assert_eq!(clamp_features(&h, &dict, &[], 1.5).unwrap(), h);

    let up = clamp_features(&h, &dict, &[feat(1)], 1.5).unwrap();
    let f = sae_encode(&up, &dict).unwrap();
    let v1 = f.iter().find(|a| a.feature_index == 1).unwrap().value;
    let v4 = f.iter().find(|a| a.feature_index == 4).unwrap().value;
    assert!((v1 - 3.0).abs() < 1e-12);
    assert!((v4 - 2.0).abs() < 1e-12);

    let off = clamp_features(&h, &dict, &[feat(4)], 0.0).unwrap();
    assert!(sae_encode(&off, &dict).unwrap().iter().all(|a| a.feature_index != 4));

    // An inactive feature is raised from zero.
    let on = clamp_features(&h, &dict, &[feat(6)], 1.0).unwrap();
    let v6 = sae_encode(&on, &dict).unwrap().iter().find(|a| a.feature_index == 6).unwrap().value;
    assert!((v6 - 2.0).abs() < 1e-12);

    let iv = Intervention::clamp(vec![0], dict.clone(), vec![feat(1)], 1.5, 0.0).unwrap();
    assert_eq!(apply_intervention(&h, &iv).unwrap(), h);
    let iv = Intervention::clamp(vec![0], dict.clone(), vec![feat(1)], 1.5, 1.0).unwrap();
    assert_eq!(apply_intervention(&h, &iv).unwrap(), up);

    assert!(Intervention::clamp(vec![0], dict.clone(), vec![feat(8)], 1.0, 1.0).is_err());
    assert!(Intervention::clamp(vec![0], dict.clone(), vec![ClampFeature { index: 0, f_max: 0.0 }], 1.0, 1.0).is_err());
    assert!(Intervention::clamp(vec![0], dict, vec![feat(0)], -1.0, 1.0).is_err());
}

#[test]
fn add_requires_unit_direction() {
    assert!(Intervention::add(vec![0], vec![1.0, 1.0], 1.0).is_err());
    let iv = Intervention::add(vec![2, 0, 2], vec![0.6, 0.8], 2.0).unwrap();
    assert_eq!(iv.layers, vec![0, 2]);
    assert_eq!(apply_intervention(&[1.0, 1.0], &iv).unwrap(), vec![2.2, 2.6]);
    assert!(matches!(apply_intervention(&[1.0], &iv), Err(Error::Dimension { .. })));
    assert!(Intervention::add(vec![0], vec![1.0, 0.0], f64::INFINITY).is_err());
}

#[test]
fn questionnaire_aggregation() {
    let items = items_all_subscales(2);
    let uniform = TableProvider(items.iter().map(|i| (i.prompt.clone(), vec![0.0; 5])).collect());
    let card = score_questionnaire(&uniform, &items, None).unwrap();
    for f in Foundation::ALL {
        assert_eq!(card.get(f), 3.0);
    }

    // Equality items score 2, proportionality items score 4.
    let table = items
        .iter()
        .map(|i| {
            let s = match i.subscale {
                Subscale::Equality => 2.0,
                Subscale::Proportionality => 4.0,
                _ => 3.0,
            };
            (i.prompt.clone(), logits_for_score(s))
        })
        .collect();
    let card = score_questionnaire(&TableProvider(table), &items, None).unwrap();
    assert!((card.equality - 2.0).abs() < 1e-12);
    assert!((card.proportionality - 4.0).abs() < 1e-12);
    assert!((card.fairness - 3.0).abs() < 1e-12);

    let no_loyalty: Vec<LikertItem> = items.iter().filter(|i| i.subscale != Subscale::Loyalty).cloned().collect();
    let err = score_questionnaire(&uniform, &no_loyalty, None).unwrap_err();
    assert!(err.to_string().contains("loyalty"));

    let mut dup = items.clone();
    dup[1].item_id = dup[0].item_id.clone();
    assert!(score_questionnaire(&uniform, &dup, None).is_err());

    let short = TableProvider(items.iter().map(|i| (i.prompt.clone(), vec![0.0; 4])).collect());
    assert!(matches!(score_questionnaire(&short, &items, None), Err(Error::Provider { .. })));
}

fn mcq_items(n: usize) -> Vec<McqItem> {
    (0..n)
        .map(|i| McqItem {
            item_id: format!("q{i}"),
            prompt: format!("q{i}"),
            options: ["a", "b", "c", "d"].map(String::from).to_vec(),
            answer: [McqAnswer::A, McqAnswer::B, McqAnswer::C, McqAnswer::D][i % 4],
        })
        .collect()
}

#[test]
fn mcq_scoring() {
    let items = mcq_items(100);
    let perfect = TableProvider(
        items
            .iter()
            .map(|i| {
                let mut l = vec![0.0; 4];
                l[i.answer.index()] = 1.0;
                (i.prompt.clone(), l)
            })
            .collect(),
    );
    let s = score_mcq(&perfect, &items, None, 40, 42).unwrap();
    assert_eq!((s.accuracy, s.n), (1.0, 40));

    // All-equal logits pick A; accuracy is the fraction of sampled items keyed A.
    let flat = TableProvider(items.iter().map(|i| (i.prompt.clone(), vec![0.5; 4])).collect());
    let s = score_mcq(&flat, &items, None, 40, 7).unwrap();
    let keyed_a = s.item_ids.iter().filter(|id| id[1..].parse::<usize>().unwrap() % 4 == 0).count();
    assert_eq!(s.accuracy, keyed_a as f64 / 40.0);

    let full = score_mcq(&flat, &items, None, 100, 7).unwrap();
    assert_eq!(full.accuracy, 0.25);
    assert!(score_mcq(&flat, &items, None, 101, 7).is_err());
}

#[test]
fn mcq_sample_is_seeded() {
    let a = sample_indices(1000, 50, MCQ_DEFAULT_SEED).unwrap();
    assert_eq!(a, sample_indices(1000, 50, MCQ_DEFAULT_SEED).unwrap());
    assert_ne!(a, sample_indices(1000, 50, 43).unwrap());
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(sample_indices(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
}

#[test]
fn grids() {
    let g = parse_grid("default").unwrap();
    assert_eq!(g.len(), 9);
    assert_eq!((g[0], g[8]), (-2.0, 2.0));
    let q = parse_grid("qwen").unwrap();
    assert_eq!((q[0], q[8]), (-100.0, 100.0));
    assert_eq!(parse_grid("csv:-1,0,0.5").unwrap(), vec![-1.0, 0.0, 0.5]);
    assert!(parse_grid("csv:1,2").is_err());
    assert!(parse_grid("csv:0,-1").is_err());
    assert!(parse_grid("csv:0,x").is_err());
    assert!(parse_grid("other").is_err());
}

#[test]
fn sweep_rejects_bad_layer_steer() {
    let provider = AffineProvider { h0: vec![0.0; 2], w: vec![0.0; 2] };
    let spec = SweepSpec {
        foundation: Foundation::Loyalty,
        mode: SweepMode::MicroAdd,
        alphas: vec![-1.0, 0.0, 1.0],
        layers: vec![],
    };
    let items = items_all_subscales(1);
    assert!(run_sweep(&provider, &items, &spec, &|_| Ok(Steer::Direction(vec![1.0, 0.0]))).is_err());
    let spec = SweepSpec { layers: vec![1], ..spec };
    assert!(run_sweep(&provider, &items, &spec, &|_| Ok(Steer::Direction(vec![2.0, 0.0]))).is_err());
    let r: Vec<SweepResult> = run_sweep(&provider, &items, &spec, &|_| Ok(Steer::Direction(vec![1.0, 0.0]))).unwrap();
    assert_eq!(r[0].series(Foundation::Loyalty), vec![3.0; 3]);
    assert_eq!(fit_sweeps(&r, Foundation::Loyalty).unwrap()[&1].r_squared, 0.0);
    assert!(fit_sweeps(&r, Foundation::Care).unwrap().is_empty());
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ifa_core::data::gen::impression_probabilities;
use ifa_core::data::{auc, GenConfig, Generator};

/// Scores every candidate by `P(impression) · P(click | impression)` using
/// the generator's own latents.
#[test]
fn latent_oracle_reaches_the_ceiling() {
    let cfg = GenConfig::default();
    let mut g = Generator::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut clicks, mut impressions, mut propensity) = (0.0, 0.0, 0.0);
    for _ in 0..400 {
        let (req, lat) = g.next_labeled();
        let p_imp = impression_probabilities(&lat.logits, cfg.impression_budget, cfg.exploration, 400, &mut rng);
        for (i, c) in req.candidates.iter().enumerate() {
            scores.push(p_imp[i] * lat.propensity[i]);
            labels.push(c.label_cli);
            if c.label_imp == 1 {
                impressions += 1.0;
                clicks += c.label_cli as f64;
                propensity += lat.propensity[i];
            }
        }
    }
    let oracle = auc(&scores, &labels).unwrap();
    assert!(oracle >= 0.95, "oracle click AUC {oracle}");
    // Calibration over the impressed items.
    let (rate, mean) = (clicks / impressions, propensity / impressions);
    assert!(impressions >= 1e3);
    assert!((rate - mean).abs() <= 0.1 * mean, "click rate {rate} vs propensity {mean}");
}

#[test]
fn category_match_count_exceeds_k() {
    let cfg = GenConfig {
        num_requests: 20,
        ..GenConfig::default()
    };
    for req in Generator::generate(&cfg).unwrap() {
        let c = &req.candidates;
        let best = c
            .iter()
            .map(|cand| req.sequence.iter().filter(|s| s.category == cand.category).count())
            .max()
            .unwrap();
        assert!(best > 16, "{best}");
    }
}

#[test]
fn category_only_signal_is_a_function_of_category_match() {
    let cfg = GenConfig {
        num_requests: 30,
        w_topic: 0.0,
        w_profile: 0.0,
        logit_noise: 0.0,
        ..GenConfig::default()
    };
    let mut g = Generator::new(cfg.clone()).unwrap();
    for _ in 0..cfg.num_requests {
        let (req, lat) = g.next_labeled();
        let prefs = &g.users()[lat.user].pref_categories;
        for (c, z) in req.candidates.iter().zip(&lat.logits) {
            let want = cfg.w_cat * prefs.contains(&c.category) as u8 as f64 + cfg.bias;
            assert_eq!(*z, want / cfg.temperature);
        }
    }
}

#[test]
fn topic_only_signal_ignores_category() {
    let cfg = GenConfig {
        num_requests: 30,
        w_cat: 0.0,
        w_profile: 0.0,
        logit_noise: 0.0,
        ..GenConfig::default()
    };
    let mut g = Generator::new(cfg.clone()).unwrap();
    let mut cross_category_hits = 0;
    for _ in 0..cfg.num_requests {
        let (req, lat) = g.next_labeled();
        let user = &g.users()[lat.user];
        for (c, z) in req.candidates.iter().zip(&lat.logits) {
            let item = g.items()[c.item_feats[0] as usize - 1];
            let on_topic = user.pref_topics.contains(&item.topic);
            assert_eq!(*z, (cfg.w_topic * on_topic as u8 as f64 + cfg.bias) / cfg.temperature);
            if on_topic && !user.pref_categories.contains(&c.category) {
                cross_category_hits += 1;
            }
        }
    }
    // Topic matches outside the preferred categories exist, and hard search cannot see them.
    assert!(cross_category_hits > 0);
}

use abac_transfer::dataio::{generate_scenario, policies_to_json, split_log, ScenarioConfig};
use abac_transfer::model::{Decision, Side};

fn golden_config() -> ScenarioConfig {
    ScenarioConfig { seed: 42, rules: 5, examples: 200, ..Default::default() }
}

#[test]
fn seed_42_matches_golden_files() {
    let s = generate_scenario(&golden_config()).unwrap();
    assert_eq!(policies_to_json(&s.ground_truth), include_str!("golden/ground_truth_seed42.json"));
    let summary: serde_json::Value = serde_json::from_str(include_str!("golden/log_summary_seed42.json")).unwrap();
    let permits = s.examples.iter().filter(|e| e.decision == Decision::Permit).count() as u64;
    assert_eq!(summary["examples"], s.examples.len() as u64);
    assert_eq!(summary["permit"], permits);
    assert_eq!(summary["deny"], s.examples.len() as u64 - permits);
}

/// Noiseless labels follow deny-overrides over the ground truth, with
/// uncovered requests denied. Checked from raw entity assignments.
#[test]
fn labels_follow_the_ground_truth() {
    let s = generate_scenario(&ScenarioConfig { seed: 9, ..golden_config() }).unwrap();
    for ex in &s.examples {
        let u = s.ctx.users().assignment(&ex.user).unwrap();
        let r = s.ctx.resources().assignment(&ex.resource).unwrap();
        let holds = |side: Side, rule: &abac_transfer::model::Rule| {
            let asg = if side == Side::User { u } else { r };
            rule.expr(side).constraints().iter().all(|(a, vs)| asg.get(a).is_some_and(|v| vs.contains(v)))
        };
        let applicable: Vec<Decision> = s
            .ground_truth
            .iter()
            .filter(|rule| rule.ops.contains(&ex.op) && holds(Side::User, rule) && holds(Side::Resource, rule))
            .map(|rule| rule.decision)
            .collect();
        let expected = if !applicable.is_empty() && !applicable.contains(&Decision::Deny) {
            Decision::Permit
        } else {
            Decision::Deny
        };
        assert_eq!(ex.decision, expected, "{ex:?}");
    }
}

#[test]
fn noise_flips_the_stated_share_of_labels() {
    let clean = generate_scenario(&golden_config()).unwrap();
    let noisy = generate_scenario(&ScenarioConfig { noise: 0.1, ..golden_config() }).unwrap();
    let flipped = clean.examples.iter().zip(&noisy.examples).filter(|(a, b)| a.decision != b.decision).count();
    assert_eq!(flipped, 20);
}

#[test]
fn generation_is_seeded() {
    let a = generate_scenario(&golden_config()).unwrap();
    let b = generate_scenario(&golden_config()).unwrap();
    assert_eq!(a, b);
    let c = generate_scenario(&ScenarioConfig { seed: 43, ..golden_config() }).unwrap();
    assert_ne!(a.examples, c.examples);
}

#[test]
fn split_sizes_and_rejections() {
    let s = generate_scenario(&golden_config()).unwrap();
    let (a, b) = split_log(&s.examples, 0.7, 1).unwrap();
    assert_eq!((a.len(), b.len()), (140, 60));
    assert!(split_log(&s.examples, 0.0, 1).is_err());
    assert!(split_log(&s.examples, 1.0, 1).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate_scenario(&ScenarioConfig { examples: 0, ..Default::default() }).is_err());
    assert!(generate_scenario(&ScenarioConfig { noise: 1.5, ..Default::default() }).is_err());
}

mod source_policies {
    use abac_transfer::dataio::{derive_source_policies, generate_scenario, Perturbation, ScenarioConfig};
    use abac_transfer::evaluation::{evaluate, EvalOptions};
    use abac_transfer::learner::LearnerPipeline;
    use abac_transfer::model::{Origin, Side};

    fn scenario() -> abac_transfer::dataio::Scenario {
        generate_scenario(&ScenarioConfig { seed: 8, rules: 5, examples: 300, ..Default::default() }).unwrap()
    }

    #[test]
    fn unperturbed_sources_replay_their_share() {
        let s = scenario();
        let rules = derive_source_policies(&s.examples, &LearnerPipeline::default(), &s.ctx, Perturbation::default(), 1)
            .unwrap();
        assert!(rules.iter().all(|r| r.provenance.origin == Origin::Source));
        assert_eq!(evaluate(&rules, &s.examples, &s.ctx, EvalOptions::default()).unwrap().f1, 1.0);
    }

    #[test]
    fn flips_exactly_the_requested_share() {
        let s = scenario();
        let pipeline = LearnerPipeline::default();
        let plain = derive_source_policies(&s.examples, &pipeline, &s.ctx, Perturbation::default(), 1).unwrap();
        let flip = Perturbation { flip: 0.2, widen: 0.0 };
        let flipped = derive_source_policies(&s.examples, &pipeline, &s.ctx, flip, 1).unwrap();
        let changed = plain.iter().zip(&flipped).filter(|(a, b)| a.decision != b.decision).count();
        assert_eq!(changed, (0.2 * plain.len() as f64).round() as usize);
    }

    #[test]
    fn widening_stays_within_declared_ranges() {
        let s = scenario();
        let widen = Perturbation { flip: 0.0, widen: 1.0 };
        let rules = derive_source_policies(&s.examples, &LearnerPipeline::default(), &s.ctx, widen, 1).unwrap();
        for r in &rules {
            for side in [Side::User, Side::Resource] {
                for (attr, values) in r.expr(side).constraints() {
                    assert!(values.is_subset(s.ctx.side(side).range(attr)), "{r}");
                }
            }
        }
    }
}

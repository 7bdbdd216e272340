use std::sync::Arc;

use maric_core::backend::{encode_image, MockBackend, MockReply, MockRule, RequestMatcher};
use maric_core::cache::TranscriptCache;
use maric_core::fixtures::{oracle_script, synthetic_dataset, ASPECT_REPLY, OUTLINER_REPLY};
use maric_core::pipeline::{Classifier, ClassifierSettings};
use maric_core::prompts::PromptSet;
use maric_core::{AgentRole, LabelSet, MatchMethod, Method};
use proptest::prelude::*;

fn classifier(mock: Arc<MockBackend>, n_aspects: usize) -> Classifier {
    let settings = ClassifierSettings {
        n_aspects,
        ..ClassifierSettings::default()
    };
    Classifier::new(mock, Arc::new(PromptSet::builtin()), settings)
}

fn oracle_mock(labels: &LabelSet, samples: &[maric_core::ImageSample]) -> Arc<MockBackend> {
    Arc::new(MockBackend::from_script(oracle_script(labels, samples, |_| false)).unwrap())
}

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

#[test]
fn maric_transcript_holds_every_stage() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let mock = oracle_mock(&labels, &samples);
    let c = classifier(mock.clone(), 3);
    let t = rt().block_on(c.classify(Method::Maric, &samples[4], &labels));
    assert!(t.correct, "{t:?}");
    assert_eq!(t.prompts.len(), 3);
    assert_eq!(t.prompts[0].prefix, "Focus on the main object in the center.");
    assert_eq!(t.prompts[0].postfix, "Describe its shape and color.");
    assert_eq!(t.descriptions.len(), 3);
    assert!(t.descriptions.iter().all(|d| d.text == ASPECT_REPLY));
    assert_eq!(t.prediction.match_method, MatchMethod::Exact);
    let roles: Vec<AgentRole> = t.calls.iter().map(|c| c.role).collect();
    assert_eq!(
        roles,
        vec![AgentRole::Outliner, AgentRole::Aspect, AgentRole::Aspect, AgentRole::Aspect, AgentRole::Reasoning]
    );

    // The reasoning request carries every aspect description and the class list.
    let calls = mock.calls();
    let reasoning = calls.iter().find(|c| c.role == AgentRole::Reasoning).unwrap();
    let text = reasoning.request.all_text();
    for p in &t.prompts {
        assert!(text.contains(&p.render()), "{text}");
    }
    assert!(text.contains(ASPECT_REPLY));
    assert!(text.contains(&labels.class_list()));
    assert!(text.to_lowercase().contains("reflect"), "reflection instruction missing: {text}");
    assert!(reasoning.request.image().is_some());
}

#[test]
fn aspect_agents_see_their_own_prompt() {
    let labels = LabelSet::weather();
    let (_, samples) = synthetic_dataset(&labels, 1, 9).unwrap();
    let mock = oracle_mock(&labels, &samples);
    let c = classifier(mock.clone(), 2);
    rt().block_on(c.classify(Method::Maric, &samples[0], &labels));
    let aspects: Vec<String> = mock
        .calls()
        .into_iter()
        .filter(|c| c.role == AgentRole::Aspect)
        .map(|c| c.request.all_text())
        .collect();
    assert_eq!(aspects.len(), 2);
    assert!(aspects.iter().any(|t| t.contains("Focus on the main object in the center. Describe its shape and color.")));
    assert!(aspects.iter().any(|t| t.contains("Focus on the background behind the object. Describe the setting.")));
    assert!(aspects.iter().all(|t| !t.contains("Focus on the textures")));
}

#[test]
fn ablation_reasoning_sees_prompts_not_descriptions() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let mock = oracle_mock(&labels, &samples);
    let c = classifier(mock.clone(), 3);
    let t = rt().block_on(c.classify(Method::MaricNoAspects, &samples[2], &labels));
    assert!(t.correct);
    assert_eq!(t.calls.len(), 2);
    assert!(t.descriptions.is_empty());
    let calls = mock.calls();
    assert_eq!(calls[0].role, AgentRole::Outliner);
    assert_eq!(calls[1].role, AgentRole::Reasoning);
    let text = calls[1].request.all_text();
    assert!(!text.contains("Focus on the lighting"));
    for p in &t.prompts {
        assert!(text.contains(&p.render()));
    }
    assert!(!text.contains(ASPECT_REPLY));
}

#[test]
fn baselines_are_single_call() {
    let labels = LabelSet::ood_cv();
    let (_, samples) = synthetic_dataset(&labels, 1, 2).unwrap();
    let mock = oracle_mock(&labels, &samples);
    let c = classifier(mock.clone(), 3);
    let rt = rt();
    for (method, role) in [(Method::Direct, AgentRole::Direct), (Method::Cot, AgentRole::Cot), (Method::Savr, AgentRole::Savr)] {
        mock.clear_calls();
        let t = rt.block_on(c.classify(method, &samples[7], &labels));
        assert!(t.correct, "{method}: {t:?}");
        assert_eq!(mock.call_count(), 1);
        assert_eq!(mock.calls()[0].role, role);
        assert!(mock.calls()[0].request.all_text().contains(&labels.class_list()));
    }
}

#[test]
fn outliner_reask_then_failure_is_recorded() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let short = MockRule::stage(AgentRole::Outliner, "", "1. Only one idea here.");
    let mock = Arc::new(MockBackend::new(vec![short], MockReply::text("<answer>cat</answer>")));
    let c = classifier(mock.clone(), 3);
    let t = rt().block_on(c.classify(Method::Maric, &samples[0], &labels));
    assert!(t.failed());
    assert!(!t.correct);
    assert!(t.prediction.is_unknown());
    assert_eq!(mock.call_count(), 2, "one re-ask, then give up");
    assert!(t.error.unwrap().contains("1"));
}

#[test]
fn missing_answer_tag_is_reasked_once() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let rules = vec![
        MockRule::stage(AgentRole::Cot, "Format reminder", "<reasoning>ok</reasoning><answer>ship</answer>"),
        MockRule::stage(AgentRole::Cot, "", "I think it's a ship"),
    ];
    let mock = Arc::new(MockBackend::new(rules, MockReply::text("")));
    let c = classifier(mock.clone(), 3);
    let t = rt().block_on(c.classify(Method::Cot, &samples[0], &labels));
    assert_eq!(mock.call_count(), 2);
    assert_eq!(t.calls.len(), 1);
    assert_eq!(t.calls[0].retries, 1);
    assert_eq!(t.prediction.matched_label.as_deref(), Some("ship"));
}

#[test]
fn stage_failure_marks_transcript_failed() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let rules = vec![
        MockRule::stage(AgentRole::Outliner, "", OUTLINER_REPLY),
        MockRule::new(RequestMatcher::stage(AgentRole::Aspect, ""), MockReply::Unavailable),
    ];
    let mock = Arc::new(MockBackend::new(rules, MockReply::text("<answer>cat</answer>")));
    let t = rt().block_on(classifier(mock, 3).classify(Method::Maric, &samples[3], &labels));
    assert!(t.failed());
    assert!(!t.correct);
    assert_eq!(t.prediction.match_method, MatchMethod::None);
}

#[test]
fn cache_serves_second_run_without_calls() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mock = oracle_mock(&labels, &samples);
    let c = classifier(mock.clone(), 3).with_cache(TranscriptCache::new(dir.path()).unwrap());
    let rt = rt();
    let first: Vec<_> = samples.iter().map(|s| rt.block_on(c.classify(Method::Maric, s, &labels))).collect();
    assert_eq!(mock.call_count(), 50);
    let cache = TranscriptCache::new(dir.path()).unwrap();
    assert_eq!(cache.len(), 10);

    let mock2 = oracle_mock(&labels, &samples);
    let c2 = classifier(mock2.clone(), 3).with_cache(cache);
    let second: Vec<_> = samples.iter().map(|s| rt.block_on(c2.classify(Method::Maric, s, &labels))).collect();
    assert_eq!(mock2.call_count(), 0);
    assert_eq!(first, second);

    // A different n is a different key.
    let c3 = classifier(mock2.clone(), 2).with_cache(TranscriptCache::new(dir.path()).unwrap());
    rt.block_on(c3.classify(Method::Maric, &samples[0], &labels));
    assert_eq!(mock2.call_count(), 4);
}

#[test]
fn image_bytes_on_the_wire_match_the_sample() {
    let labels = LabelSet::cifar10();
    let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
    let mock = oracle_mock(&labels, &samples);
    rt().block_on(classifier(mock.clone(), 1).classify(Method::Maric, &samples[1], &labels));
    let expected = encode_image(&samples[1]).unwrap();
    for call in mock.calls() {
        assert_eq!(call.request.image(), Some(&expected));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn call_count_matches_method(n in 1usize..=5, idx in 0usize..10, method_ix in 0usize..5) {
        let labels = LabelSet::cifar10();
        let (_, samples) = synthetic_dataset(&labels, 1, 5).unwrap();
        let mock = oracle_mock(&labels, &samples);
        let method = Method::ALL[method_ix];
        let t = rt().block_on(classifier(mock.clone(), n).classify(method, &samples[idx], &labels));
        prop_assert!(!t.failed());
        prop_assert_eq!(mock.call_count(), method.expected_calls(n));
        prop_assert_eq!(t.calls.len(), method.expected_calls(n));
    }
}

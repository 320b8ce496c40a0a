use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use maint_core::fixtures::theta_true;
use maint_core::sim::ScriptedPolicy;
use maint_core::{
    backward_induction, belief_update, optimal_mdp_action, qmdp_action, simulate_episode, stream_rng, ActionIndex, Belief,
    CostTable, PomdpParams, StateIndex,
};
use maint_rl::{Checkpoint, MlpParams};
use maint_service::{router, session_rng, AppState, Artifacts};
use rand::Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const H: usize = 50;

fn posterior() -> Vec<PomdpParams> {
    (0..5)
        .map(|i| {
            let mut t = theta_true();
            let row = &mut t.transition.kernel[0][0];
            let shift = 0.01 * i as f64;
            row[0] -= shift;
            row[1] += shift;
            t.observation.deterioration[1].loc -= 0.02 * i as f64;
            t
        })
        .collect()
}

/// Identity dynamics with the same emission law in every state.
fn uninformative() -> PomdpParams {
    let mut t = theta_true();
    for mat in &mut t.transition.kernel {
        for (s, row) in mat.iter_mut().enumerate() {
            *row = (0..4).map(|j| if j == s { 1.0 } else { 0.0 }).collect();
        }
    }
    let o = &mut t.observation;
    o.initial = vec![o.initial[0]; 4];
    o.deterioration = vec![o.deterioration[0]; 4];
    o.repair = vec![o.repair[0]; 4];
    t.transition.initial = vec![0.1, 0.2, 0.3, 0.4];
    t
}

fn one_hot_start(s: usize) -> PomdpParams {
    let mut t = theta_true();
    t.transition.initial = (0..4).map(|j| if j == s { 1.0 } else { 0.0 }).collect();
    t
}

fn checkpoint() -> Checkpoint {
    let p = MlpParams::init(4, &[16, 16], 3, &mut stream_rng(3, 0));
    Checkpoint::new(p, 4, "test-fingerprint".into(), 1, -1.0, 0.0)
}

fn app() -> Router {
    let artifacts = Artifacts::new(CostTable::railway(), H)
        .with_params("theta_hat", theta_true())
        .with_params("flat", uninformative())
        .with_params("start_s2", one_hot_start(2))
        .with_posterior("posterior", posterior())
        .with_checkpoint("ppo", checkpoint());
    router(AppState::new(artifacts).unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Value) -> Value {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn has_hidden_key(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, x)| k.contains("hidden") || k == "s0" || k == "state" || has_hidden_key(x)),
        Value::Array(a) => a.iter().any(has_hidden_key),
        _ => false,
    }
}

#[tokio::test]
async fn fixed_session_starts_from_t0() {
    let app = app();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 4})).await;
    assert_eq!(v["schema_version"], 1);
    assert_eq!(floats(&v["belief"]), theta_true().transition.initial);
    assert_eq!(v["step"], 0);
    assert_eq!(v["observations"].as_array().unwrap().len(), 1);
    assert!(v["observations"][0].as_f64().unwrap() <= 0.0);
}

#[tokio::test]
async fn same_seed_gives_same_first_observation() {
    let app = app();
    let body = json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 77});
    let a = create(&app, body.clone()).await;
    let b = create(&app, body).await;
    assert_ne!(a["id"], b["id"]);
    assert_eq!(a["observations"][0], b["observations"][0]);
}

#[tokio::test]
async fn initial_state_frequencies_follow_t0() {
    let app = app();
    let t0 = theta_true().transition.initial;
    let mut counts = [0usize; 4];
    for seed in 0..1_000u64 {
        let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": seed, "debug": true})).await;
        counts[v["hidden_state"].as_u64().unwrap() as usize] += 1;
    }
    for s in 0..4 {
        let f = counts[s] as f64 / 1_000.0;
        assert!((f - t0[s]).abs() < 0.05, "state {s}: {f} vs {}", t0[s]);
    }
}

#[tokio::test]
async fn lifecycle_accounting_and_conflict_after_horizon() {
    let app = app();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 2})).await;
    let id = v["id"].as_str().unwrap().to_string();
    let mut total = 0.0;
    for t in 0..H {
        let (status, s) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": t % 3}))).await;
        assert_eq!(status, StatusCode::OK, "{s}");
        total += s["cost"].as_f64().unwrap();
        assert_eq!(s["cumulative_cost"].as_f64().unwrap(), total);
        assert_eq!(s["done"], t + 1 == H);
        assert_eq!(s["step"], t);
    }
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["code"], "conflict");
    assert!(e["message"].as_str().unwrap().contains("finished"));
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["observations"].as_array().unwrap().len(), H + 1);
    assert_eq!(view["beliefs"].as_array().unwrap().len(), H + 1);
    assert_eq!(view["actions"].as_array().unwrap().len(), H);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=qmdp"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn observation_validation() {
    let app = app();
    let sim = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}})).await;
    let id = sim["id"].as_str().unwrap();
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0, "observation": -1.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "validation");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 7}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "mode": "operator"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let op = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "mode": "operator", "initial_observation": -2.0})).await;
    let id = op["id"].as_str().unwrap();
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0, "observation": 0.5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(e["message"].as_str().unwrap().contains("non-positive"));
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"nonsense": true}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["schema_version"], 1);
}

#[tokio::test]
async fn uninformative_operator_step_keeps_belief() {
    let app = app();
    let z0 = -3.0;
    let op = create(&app, json!({"params": {"kind": "fixed", "artifact": "flat"}, "mode": "operator", "initial_observation": z0})).await;
    let id = op["id"].as_str().unwrap();
    let b0 = floats(&op["belief"]);
    let (status, s) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": 0, "observation": z0}))).await;
    assert_eq!(status, StatusCode::OK);
    for (a, b) in floats(&s["belief"]).iter().zip(&b0) {
        assert!((a - b).abs() < 1e-12);
    }
    // expected cost under the belief
    let costs = CostTable::railway();
    let expected: f64 = b0.iter().enumerate().map(|(i, p)| p * costs.reward(StateIndex(i), ActionIndex(0))).sum();
    assert!((s["cost"].as_f64().unwrap() - expected).abs() < 1e-9);
}

#[tokio::test]
async fn qmdp_recommendations_match_offline_rule() {
    let app = app();
    let theta = theta_true();
    let qt = backward_induction(&theta, &CostTable::railway(), H, 1.0).unwrap();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 9})).await;
    let id = v["id"].as_str().unwrap();
    for t in 0..20 {
        let (status, r) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=qmdp"), None).await;
        assert_eq!(status, StatusCode::OK, "{r}");
        let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        let b = Belief { probs: floats(&view["belief"]), step: t };
        assert_eq!(r["action"].as_u64().unwrap() as usize, qmdp_action(&qt, &b, t).0);
        let q = floats(&r["belief_weighted_q"]);
        assert_eq!(q, qt.belief_weighted(&b, t));
        let best = (0..3).max_by(|i, j| q[*i].total_cmp(&q[*j]).then(j.cmp(i))).unwrap();
        assert_eq!(r["action"].as_u64().unwrap() as usize, best);
        let a = r["action"].as_u64().unwrap();
        call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": a}))).await;
    }
}

#[tokio::test]
async fn one_hot_belief_recommends_the_mdp_action() {
    let app = app();
    let theta = one_hot_start(2);
    let qt = backward_induction(&theta, &CostTable::railway(), H, 1.0).unwrap();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "start_s2"}})).await;
    let id = v["id"].as_str().unwrap();
    let (_, r) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=qmdp"), None).await;
    assert_eq!(r["action"].as_u64().unwrap() as usize, optimal_mdp_action(&qt, StateIndex(2), 0).0);
}

#[tokio::test]
async fn ppo_recommendation_and_missing_checkpoint() {
    let app = app();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}})).await;
    let id = v["id"].as_str().unwrap();
    let (status, r) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=ppo"), None).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    let probs = floats(&r["action_probs"]);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(r["checkpoint"], "ppo");
    let (status, e) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=ppo&checkpoint=other"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(e["message"].as_str().unwrap().contains("other"));
    assert_eq!(e["detail"]["name"], "other");
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/recommend?source=magic"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_references_are_not_found() {
    let app = app();
    let (status, e) = call(&app, "POST", "/sessions", Some(json!({"params": {"kind": "fixed", "artifact": "nope"}}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "not_found");
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"params": {"kind": "posterior_draw", "artifact": "nope"}}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/sessions/missing/step", Some(json!({"action": 0}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/no/such/route", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn artifacts_are_listed() {
    let app = app();
    let (status, v) = call(&app, "GET", "/artifacts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["params"], json!(["flat", "start_s2", "theta_hat"]));
    assert_eq!(v["posteriors"][0]["draws"], 5);
    assert_eq!(v["checkpoints"][0]["config_fingerprint"], "test-fingerprint");
    assert_eq!(v["horizon"], H);
}

#[tokio::test]
async fn hidden_state_only_in_debug_sessions() {
    let app = app();
    for (body, debug) in [
        (json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 1}), false),
        (json!({"params": {"kind": "posterior_draw", "artifact": "posterior"}, "seed": 1}), false),
        (json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "mode": "operator", "initial_observation": -1.0, "debug": true}), false),
        (json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "seed": 1, "debug": true}), true),
    ] {
        let operator = body["mode"] == "operator";
        let mut responses = Vec::new();
        let v = create(&app, body).await;
        let id = v["id"].as_str().unwrap().to_string();
        responses.push(v);
        for t in 0..3 {
            let step = if operator { json!({"action": t % 3, "observation": -1.5}) } else { json!({"action": t % 3}) };
            responses.push(call(&app, "POST", &format!("/sessions/{id}/step"), Some(step)).await.1);
            responses.push(call(&app, "GET", &format!("/sessions/{id}"), None).await.1);
            responses.push(call(&app, "GET", &format!("/sessions/{id}/recommend?source=qmdp"), None).await.1);
            responses.push(call(&app, "GET", &format!("/sessions/{id}/recommend?source=ppo"), None).await.1);
        }
        responses.push(call(&app, "GET", "/artifacts", None).await.1);
        let leaked = responses.iter().any(has_hidden_key);
        assert_eq!(leaked, debug, "{responses:?}");
    }
}

#[tokio::test]
async fn simulated_session_replays_offline() {
    let app = app();
    let mut rng = stream_rng(100, 0);
    for seed in [3u64, 8, 21] {
        for source in ["fixed", "posterior_draw"] {
            let artifact = if source == "fixed" { "theta_hat" } else { "posterior" };
            let v = create(&app, json!({"params": {"kind": source, "artifact": artifact}, "seed": seed})).await;
            let id = v["id"].as_str().unwrap().to_string();
            let mut actions = Vec::new();
            for _ in 0..H {
                let a = rng.random_range(0..3);
                actions.push(ActionIndex(a));
                call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": a}))).await;
            }
            let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
            let theta = match view["params"]["draw_index"].as_u64() {
                Some(i) => posterior()[i as usize].clone(),
                None => theta_true(),
            };
            let offline = simulate_episode(&theta, &ScriptedPolicy(actions), &CostTable::railway(), H, &mut session_rng(seed)).unwrap();
            assert_eq!(floats(&view["observations"]), offline.trajectory.observations);
            for (b, o) in view["beliefs"].as_array().unwrap().iter().zip(&offline.beliefs) {
                for (x, y) in floats(b).iter().zip(&o.probs) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
            assert_eq!(view["cumulative_cost"].as_f64().unwrap(), offline.total_cost);
        }
    }
}

#[tokio::test]
async fn operator_session_replays_offline() {
    let app = app();
    let theta = theta_true();
    let mut rng = stream_rng(5, 0);
    let z: Vec<f64> = (0..=H).map(|_| -rng.random_range(0.5..12.0)).collect();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}, "mode": "operator", "initial_observation": z[0]})).await;
    let id = v["id"].as_str().unwrap().to_string();
    let mut b = Belief { probs: theta.transition.initial.clone(), step: 0 };
    for t in 0..H {
        let a = (t / 7) % 3;
        let (status, s) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": a, "observation": z[t + 1]}))).await;
        assert_eq!(status, StatusCode::OK, "{s}");
        b = belief_update(&b, ActionIndex(a), z[t], z[t + 1], &theta).unwrap().belief;
        for (x, y) in floats(&s["belief"]).iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_steps_are_serialized() {
    let app = app();
    let v = create(&app, json!({"params": {"kind": "fixed", "artifact": "theta_hat"}})).await;
    let id = Arc::new(v["id"].as_str().unwrap().to_string());
    for step in 0..5 {
        let mut handles = Vec::new();
        for k in 0..8 {
            let app = app.clone();
            let id = id.clone();
            handles.push(tokio::spawn(async move {
                call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({"action": k % 3, "expected_step": step}))).await.0
            }));
        }
        let mut ok = 0;
        for h in handles {
            match h.await.unwrap() {
                StatusCode::OK => ok += 1,
                StatusCode::CONFLICT => {}
                other => panic!("unexpected status {other}"),
            }
        }
        assert_eq!(ok, 1, "step {step}");
    }
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["step"], 5);
}

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use scenekit::field::FieldRegistry;
use scenekit::guidance::{GuidanceHandle, NullGuidance};
use scenekit::scene::template_scene;
use scenekit::service::{ServerHandle, Service};

struct Client {
    base: String,
    agent: ureq::Agent,
}

struct Reply {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

impl Client {
    fn new(server: &ServerHandle) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { base: server.url(), agent }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.unwrap();
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or_default().to_owned()))
            .collect();
        let body = resp.body_mut().read_to_vec().unwrap();
        Reply { status, headers, body }
    }

    fn get(&self, path: &str) -> Reply {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    fn post(&self, path: &str, body: &Value) -> Reply {
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(body.to_string()),
        )
    }

    fn put(&self, path: &str, body: &Value) -> Reply {
        Self::finish(
            self.agent
                .put(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(body.to_string()),
        )
    }

    fn wait_job(&self, id: &str, timeout: Duration) -> Value {
        let start = Instant::now();
        loop {
            let job = self.get(&format!("/api/jobs/{id}")).json();
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            assert!(start.elapsed() < timeout, "job {id} still {job}");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

fn start(out: &Path) -> (ServerHandle, Service) {
    let scene = template_scene();
    let fields = FieldRegistry::load_for_scene(&scene, Path::new(".")).unwrap();
    let guidance = GuidanceHandle::new(Arc::new(NullGuidance), "none");
    let svc = Service::new(scene, fields, guidance, ".", out).unwrap();
    let server = ServerHandle::start(svc.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
    (server, svc)
}

fn small_train(iters: u64) -> Value {
    json!({
        "total_iters": iters,
        "render_resolution": [4, 4],
        "n_samples_per_ray": 8,
        "shape_loss": { "n_points": 64 },
        "preview_interval": 5,
    })
}

fn render_body() -> Value {
    json!({ "camera": { "eye": [0.0, 1.0, 5.0], "target": [0.0, 0.0, 0.0] }, "resolution": [12, 8], "n_samples": 16 })
}

#[test]
fn scene_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (server, _) = start(dir.path());
    let c = Client::new(&server);
    let scene = c.get("/api/scene");
    assert_eq!(scene.status, 200);
    let mut v = scene.json();
    assert_eq!(v["proxies"].as_array().unwrap().len(), 2);

    let mut bad = v.clone();
    bad["proxies"][0]["field"] = json!("missing");
    bad["proxies"][1]["scale"] = json!([0.0, 1.0, 1.0]);
    let r = c.put("/api/scene", &bad);
    assert_eq!(r.status, 400);
    let violations = r.json()["violations"].as_array().unwrap().clone();
    assert!(violations.len() >= 2, "{violations:?}");

    assert_eq!(c.put("/api/scene", &json!({"nonsense": true})).status, 400);

    v["scene_prompt"] = json!("a different room");
    assert_eq!(c.put("/api/scene", &v).status, 200);
    assert_eq!(c.get("/api/scene").json()["scene_prompt"], "a different room");
}

#[test]
fn renders_are_deterministic_and_have_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let (server, _) = start(dir.path());
    let c = Client::new(&server);
    let a = c.post("/api/render", &render_body());
    let b = c.post("/api/render", &render_body());
    assert_eq!(a.status, 200, "{}", String::from_utf8_lossy(&a.body));
    assert_eq!(a.header("content-type"), Some("image/png"));
    assert_eq!(&a.body[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(a.body, b.body);
    let sidecar = a.header("x-opacity-pfm").expect("opacity header").to_owned();
    let pfm = c.get(&sidecar);
    assert_eq!(pfm.status, 200);
    assert!(pfm.body.starts_with(b"Pf\n12 8\n"), "{:?}", &pfm.body[..12]);

    let obj = c.post("/api/render-object", &json!({ "field_id": "lamp", "camera": render_body()["camera"], "resolution": [6, 6] }));
    assert_eq!(obj.status, 200);
    let missing = c.post("/api/render-object", &json!({ "field_id": "nope", "camera": render_body()["camera"] }));
    assert_eq!(missing.status, 404);
    assert!(missing.json()["error"].as_str().unwrap().contains("nope"));
    assert_eq!(c.post("/api/render", &json!({ "camera": { "eye": [0, 0, 0], "target": [0, 0, 0] } })).status, 400);
    assert_eq!(c.get("/api/renders/nothing.pfm").status, 404);
    assert_eq!(c.get("/api/jobs/job-999").status, 404);
}

#[test]
fn placement_edits_are_synchronous_and_keep_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (server, svc) = start(dir.path());
    let c = Client::new(&server);
    let sum = svc.snapshot().fields.checksum();
    let r = c.post(
        "/api/edit",
        &json!({ "op": "duplicate", "proxy_id": "lamp", "new_id": "lamp2",
                 "placement": { "location": [-1.5, 0.0, 1.5], "rotation_quat": [1, 0, 0, 0], "scale": [0.6, 0.6, 0.6] } }),
    );
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["proxies"].as_array().unwrap().len(), 3);
    assert_eq!(c.post("/api/edit", &json!({ "op": "remove", "proxy_id": "ghost" })).status, 404);
    assert_eq!(c.post("/api/edit", &json!({ "op": "explode" })).status, 400);
    assert_eq!(svc.snapshot().scene.proxies.len(), 3);
    assert_eq!(svc.snapshot().fields.checksum(), sum);
}

#[test]
fn training_job_completes_and_updates_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (server, svc) = start(dir.path());
    let c = Client::new(&server);
    let sum = svc.snapshot().fields.checksum();
    let r = c.post("/api/jobs/train", &small_train(20));
    assert_eq!(r.status, 202, "{}", String::from_utf8_lossy(&r.body));
    let id = r.json()["job_id"].as_str().unwrap().to_owned();
    let job = c.wait_job(&id, Duration::from_secs(120));
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["progress"], json!({ "done": 20, "total": 20 }));
    assert_eq!(c.get(&format!("/api/jobs/{id}/preview")).header("content-type"), Some("image/png"));
    assert_ne!(svc.snapshot().fields.checksum(), sum);
    let fields = c.get("/api/fields").json();
    assert!(fields.as_array().unwrap().iter().all(|f| f["checkpoint"].is_string()), "{fields}");
    let log = std::fs::read_to_string(dir.path().join("jobs").join(&id).join("events.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
}

#[test]
fn mutations_conflict_with_a_running_job() {
    let dir = tempfile::tempdir().unwrap();
    let (server, svc) = start(dir.path());
    let c = Client::new(&server);
    let sum = svc.snapshot().fields.checksum();
    let mut cfg = small_train(1_000_000);
    cfg["preview_interval"] = json!(0);
    let r = c.post("/api/jobs/train", &cfg);
    assert_eq!(r.status, 202);
    let id = r.json()["job_id"].as_str().unwrap().to_owned();

    let moved = json!({ "op": "move", "proxy_id": "lamp",
                        "placement": { "location": [0.0, 0.0, 0.0], "rotation_quat": [1, 0, 0, 0], "scale": [0.5, 0.5, 0.5] } });
    assert_eq!(c.post("/api/edit", &moved).status, 409);
    let scene = c.get("/api/scene").json();
    assert_eq!(c.put("/api/scene", &scene).status, 409);
    assert_eq!(c.post("/api/jobs/train", &small_train(5)).status, 409);
    // Reads and renders stay available.
    assert_eq!(c.post("/api/render", &render_body()).status, 200);

    assert_eq!(c.post(&format!("/api/jobs/{id}/cancel"), &json!({})).status, 200);
    let job = c.wait_job(&id, Duration::from_secs(60));
    assert_eq!(job["state"], "failed");
    assert_eq!(job["error"], "cancelled");
    assert_eq!(svc.snapshot().fields.checksum(), sum);
    assert_eq!(c.post("/api/edit", &moved).status, 200);
}

#[test]
fn color_edit_runs_as_a_job() {
    let dir = tempfile::tempdir().unwrap();
    let (server, svc) = start(dir.path());
    let c = Client::new(&server);
    let before = svc.snapshot().fields.get("lamp").cloned();
    let r = c.post(
        "/api/edit",
        &json!({ "op": "color", "field_id": "lamp", "color": [0.0, 1.0, 0.0], "steps": 4,
                 "finetune": { "render_resolution": [4, 4], "n_samples_per_ray": 8, "preview_interval": 0 } }),
    );
    assert_eq!(r.status, 202, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["kind"], "finetune_color");
    let job = c.wait_job(r.json()["job_id"].as_str().unwrap(), Duration::from_secs(60));
    assert_eq!(job["state"], "done", "{job}");
    assert_ne!(svc.snapshot().fields.get("lamp").cloned(), before);
    let bad = c.post("/api/edit", &json!({ "op": "color", "field_id": "lamp", "steps": 4 }));
    assert_eq!(bad.status, 400);
}

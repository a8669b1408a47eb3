use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use arch_core::dataprep::synth_house;
use arch_core::pipeline::Models;
use arch_core::prior::{save_prior, PriorConfig, PriorTrainer};
use arch_core::voxcore::{read_vxg1, write_vxg1};
use arch_core::vqgan::{save_checkpoint, Trainer, VqganConfig};
use arch_service::{Service, ServiceConfig};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn ckpt() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &Trainer::new(VqganConfig::desk()).unwrap()).unwrap();
        save_prior(dir.path(), &PriorTrainer::new(PriorConfig::desk()).unwrap()).unwrap();
        dir
    })
    .path()
}

fn arch(args: &[&str]) -> i32 {
    let mut full = vec!["arch"];
    full.extend_from_slice(args);
    arch_cli::main_with(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    assert_eq!(arch(&["--help"]), 0);
    for cmd in ["prep", "train", "sample", "complete", "plan-complete", "interpolate", "vary", "detailise", "clean", "metrics", "serve"] {
        assert_eq!(arch(&[cmd, "--help"]), 0, "{cmd}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(arch(&["sample", "--count", "-1"]), 2);
    assert_eq!(arch(&["sample", "--count", "0"]), 2);
    assert_eq!(arch(&["sample", "--bogus"]), 2);
    assert_eq!(arch(&["detailise", "x.vxg", "--level", "4"]), 2);
    assert_eq!(arch(&["complete", "--input", "x.vxg", "--half", "middle"]), 2);
    assert_eq!(arch(&["clean", "x.vxg", "--config", "c.toml"]), 2);
    assert_eq!(arch(&["nonsense"]), 2);
    assert_eq!(arch(&["train", "upsampler"]), 2);
}

#[test]
fn operational_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.vxg");
    assert_eq!(arch(&["clean", s(&missing)]), 1);
    // No checkpoints in an empty directory.
    assert_eq!(arch(&["--ckpt-dir", s(dir.path()), "sample", "--out", s(&dir.path().join("o"))]), 1);
}

#[test]
fn clean_writes_sibling_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.vxg");
    let mut g = synth_house(3, 32).grid;
    // A floating voxel well away from the house.
    assert!(!g.get(1, 1, 28));
    g.set(1, 1, 28, true);
    write_vxg1(&input, &g).unwrap();
    assert_eq!(arch(&["clean", s(&input), "--iters", "32"]), 0);
    let out = read_vxg1(&dir.path().join("in.clean.vxg")).unwrap();
    assert!(!out.get(1, 1, 28));
    assert!(out.occupied_count() < g.occupied_count());
}

#[test]
fn prep_then_config_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_eq!(arch(&["--seed", "4", "prep", "--data-dir", s(&corpus), "--models", "3", "--chunks", "0"]), 0);
    assert!(corpus.join("manifest.json").exists());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epochs = \"many\"\n").unwrap();
    let ck = dir.path().join("ck");
    assert_eq!(arch(&["--config", s(&bad), "--ckpt-dir", s(&ck), "train", "vqgan", "--data-dir", s(&corpus)]), 1);
    assert_eq!(arch(&["train", "upsampler", "--level", "1", "--data-dir", s(&corpus)]), 1);
}

fn vxg_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "vxg")).collect();
    v.sort();
    v
}

#[test]
fn editing_commands_write_grids_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let ck = s(ckpt());
    let samples = dir.path().join("samples");
    assert_eq!(arch(&["--ckpt-dir", ck, "--seed", "2", "sample", "--count", "2", "--out", s(&samples)]), 0);
    let files = vxg_files(&samples);
    assert_eq!(files.len(), 2);
    assert!(samples.join("sample_000.tokens.json").exists());

    let child = dir.path().join("child.vxg");
    assert_eq!(arch(&["--ckpt-dir", ck, "interpolate", s(&files[0]), s(&files[1]), "--out", s(&child)]), 0);
    assert!(dir.path().join("child.tokens.json").exists());

    let vars = dir.path().join("vars");
    assert_eq!(arch(&["--ckpt-dir", ck, "vary", s(&child), "--n", "3", "--out", s(&vars)]), 0);
    assert_eq!(vxg_files(&vars).len(), 3);

    let comp = dir.path().join("comp");
    assert_eq!(arch(&["--ckpt-dir", ck, "complete", "--input", s(&files[0]), "--half", "x-", "--k", "2", "--out", s(&comp)]), 0);
    assert_eq!(vxg_files(&comp).len(), 2);

    let r = Models::load(ckpt()).unwrap().resolution().unwrap();
    let plan = dir.path().join("plan.pbm");
    let mut pbm = format!("P1\n{r} {r}\n");
    for row in 0..r {
        let line: Vec<&str> = (0..r).map(|x| if (8..24).contains(&x) && (8..20).contains(&row) { "1" } else { "0" }).collect();
        pbm.push_str(&line.join(" "));
        pbm.push('\n');
    }
    std::fs::write(&plan, pbm).unwrap();
    let pc = dir.path().join("pc");
    assert_eq!(arch(&["--ckpt-dir", ck, "plan-complete", "--plan", s(&plan), "--k", "1", "--out", s(&pc)]), 0);
    let partial = read_vxg1(&pc.join("partial.vxg")).unwrap();
    assert!(partial.get(8, r - 1 - 8, 0));
    assert!(!partial.get(8, 8, 0));

    let m = dir.path().join("m");
    assert_eq!(arch(&["metrics", "--generated", s(&vars), "--reference", s(&samples), "--out", s(&m)]), 0);
    for f in ["report.json", "report.csv", "novelty.csv", "novelty_histogram.csv"] {
        assert!(m.join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(m.join("report.json")).unwrap()).unwrap();
    assert!(report["cov"].as_f64().is_some(), "{report}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sample_matches_service_generate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cli");
    let ck = ckpt().to_path_buf();
    let o = out.clone();
    let code = tokio::task::spawn_blocking(move || arch(&["--ckpt-dir", s(&ck), "--seed", "11", "sample", "--count", "2", "--out", s(&o)])).await.unwrap();
    assert_eq!(code, 0);

    let config = ServiceConfig { data_dir: dir.path().join("store"), workers: 1, ..ServiceConfig::default() };
    let svc = Service::start(&config, Models::load(ckpt()).unwrap()).unwrap();
    let app = svc.router();
    let body = json!({"kind": "generate", "params": {"count": 2, "seed": 11}}).to_string();
    let req = Request::post("/jobs").header(header::CONTENT_TYPE, "application/json").body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let job: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let id = job["id"].as_str().unwrap().to_string();
    let job = loop {
        let resp = app.clone().oneshot(Request::get(format!("/jobs/{id}")).body(Body::empty()).unwrap()).await.unwrap();
        let j: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
        if j["state"] == "done" {
            break j;
        }
        assert_ne!(j["state"], "failed", "{j}");
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    let ids = job["result_ids"].as_array().unwrap();
    for (i, mid) in ids.iter().enumerate() {
        let uri = format!("/models/{}/voxels", mid.as_str().unwrap());
        let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
        let service_bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        let cli_bytes = std::fs::read(out.join(format!("sample_{i:03}.vxg"))).unwrap();
        assert_eq!(service_bytes, cli_bytes, "sample {i}");
    }
    drop(app);
    tokio::task::spawn_blocking(move || svc.shutdown()).await.unwrap();
}

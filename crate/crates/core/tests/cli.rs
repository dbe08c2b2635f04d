//! End-to-end tests of the command-line interface: exit codes, output
//! files, determinism, and the documented behavior of every subcommand.

mod common;

use common::*;
use cryoalign::transform::rotation_about_axis;
use cryoalign::{RigidTransform, SynthSpec};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use tempfile::TempDir;

/// Builds and writes a small scattered-blob fixture map.
fn small_map(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = scattered_spec(&mut rng, count, 30.0, 5.0, 5.0, 1.0);
    let (map, _) = build(&spec);
    write_map(dir, name, &map)
}

fn code(output: &std::process::Output) -> i32 {
    output.status.code().expect("process must exit normally")
}

fn stdout_json(output: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

#[test]
fn synth_is_deterministic_and_identity_spec_records_identity() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = scattered_spec(&mut rng, 8, 26.0, 5.0, 5.0, 1.0);
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();

    let m1 = dir.path().join("a.mrc");
    let m2 = dir.path().join("b.mrc");
    let truth = dir.path().join("truth.json");
    let spec_arg = spec_path.to_str().unwrap();
    let out1 = run_cli(&[
        "synth",
        "--spec",
        spec_arg,
        "--out-mrc",
        m1.to_str().unwrap(),
        "--truth-out",
        truth.to_str().unwrap(),
    ]);
    assert_eq!(code(&out1), 0, "{}", String::from_utf8_lossy(&out1.stderr));
    let out2 = run_cli(&["synth", "--spec", spec_arg, "--out-mrc", m2.to_str().unwrap()]);
    assert_eq!(code(&out2), 0);

    let bytes1 = std::fs::read(&m1).unwrap();
    let bytes2 = std::fs::read(&m2).unwrap();
    assert_eq!(bytes1, bytes2, "same seed must give byte-identical maps");

    let truth_json = read_json(&truth);
    let expected = serde_json::to_value(RigidTransform::identity()).unwrap();
    assert_eq!(
        truth_json["transform"], expected,
        "spec without a placement must record the identity transform"
    );
}

#[test]
fn global_self_alignment_reports_identity() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "self.mrc", 10, 21);
    let out_path = dir.path().join("global.json");
    let out = run_cli(&[
        "global",
        "-a",
        map.to_str().unwrap(),
        "-b",
        map.to_str().unwrap(),
        "-i",
        "1.5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let report = read_json(&out_path);
    let transform = transform_from_json(&report["transform"]);
    assert!(
        transform.rotation_angle() <= deg(0.01),
        "self-alignment rotation {}° exceeds 0.01°",
        transform.rotation_angle().to_degrees()
    );
    assert!(
        transform.translation.norm() <= 1e-3,
        "self-alignment translation {} Å exceeds 1e-3",
        transform.translation.norm()
    );
    let score = report["score"]["score"].as_f64().unwrap();
    assert!(score >= 0.99, "self-alignment score {score} below 0.99");
}

#[test]
fn global_missing_input_exits_one_without_output() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("never.json");
    let missing = dir.path().join("missing.mrc");
    let out = run_cli(&[
        "global",
        "-a",
        missing.to_str().unwrap(),
        "-b",
        missing.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        !out_path.exists(),
        "a failed run must not leave an output file behind"
    );
    assert!(
        !out.stderr.is_empty(),
        "the failure must be explained on stderr"
    );
}

#[test]
fn global_output_is_deterministic_excluding_timings() {
    let dir = TempDir::new().unwrap();
    let map_a = small_map(dir.path(), "a.mrc", 9, 41);
    let out1 = dir.path().join("r1.json");
    let out2 = dir.path().join("r2.json");
    // Different thread counts too: per-point work is order-independent, so
    // parallelism must not leak into the numbers.
    for (path, threads) in [(&out1, "1"), (&out2, "4")] {
        let out = run_cli(&[
            "global",
            "-a",
            map_a.to_str().unwrap(),
            "-b",
            map_a.to_str().unwrap(),
            "-i",
            "1.5",
            "--seed",
            "9",
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut r1 = read_json(&out1);
    let mut r2 = read_json(&out2);
    r1.as_object_mut().unwrap().remove("timings");
    r2.as_object_mut().unwrap().remove("timings");
    assert_eq!(r1, r2, "repeated runs must agree except for timings");
}

#[test]
fn global_with_too_few_features_exits_two() {
    let dir = TempDir::new().unwrap();
    let single = SynthSpec {
        centers: vec![[0.0, 0.0, 0.0]],
        weights: Vec::new(),
        random_blobs: None,
        resolution: 5.0,
        voxel_size: 1.0,
        padding: None,
        transform: None,
        noise_sigma_frac: 0.0,
        seed: 0,
    };
    let (map, _) = build(&single);
    let path = write_map(dir.path(), "single.mrc", &map);
    let out_path = dir.path().join("never.json");
    let out = run_cli(&[
        "global",
        "-a",
        path.to_str().unwrap(),
        "-b",
        path.to_str().unwrap(),
        "-i",
        "1.5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        2,
        "one keypoint per side cannot support a coarse fit: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!out_path.exists());
}

#[test]
fn local_no_mask_single_candidate_matches_global() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "pair.mrc", 10, 55);
    let g_path = dir.path().join("global.json");
    let l_path = dir.path().join("local.json");
    let map_arg = map.to_str().unwrap();
    let out_g = run_cli(&[
        "global", "-a", map_arg, "-b", map_arg, "-i", "1.5", "--seed", "5", "--out",
        g_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out_g), 0, "{}", String::from_utf8_lossy(&out_g.stderr));
    let out_l = run_cli(&[
        "local", "-a", map_arg, "-b", map_arg, "--no-mask", "-i", "1.5", "--seed", "5", "--out",
        l_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out_l), 0, "{}", String::from_utf8_lossy(&out_l.stderr));

    let global = read_json(&g_path);
    let local = read_json(&l_path);
    let candidates = local["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 1, "--no-mask must emit exactly one candidate");
    assert_eq!(candidates[0]["rank"], 1);
    assert_eq!(
        candidates[0]["transform"], global["transform"],
        "--no-mask rides the global code path, so the transforms must agree exactly"
    );
}

#[test]
fn local_candidates_flag_caps_the_list() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tgt_spec = scattered_spec(&mut rng, 14, 34.0, 6.0, 5.0, 1.0);
    let (tgt_map, tgt_truth) = build(&tgt_spec);

    let mut pose_rng = ChaCha8Rng::seed_from_u64(12);
    let pose = random_pose(&mut pose_rng, 8.0);
    let src_spec = SynthSpec {
        centers: tgt_truth.centers[..6].to_vec(),
        transform: Some(pose.to_mat4_row_major()),
        ..tgt_spec.clone()
    };
    let (src_map, _) = build(&src_spec);

    let tgt_path = write_map(dir.path(), "whole.mrc", &tgt_map);
    let src_path = write_map(dir.path(), "part.mrc", &src_map);
    let out_path = dir.path().join("candidates.json");
    let out = run_cli(&[
        "local",
        "-a",
        src_path.to_str().unwrap(),
        "-b",
        tgt_path.to_str().unwrap(),
        "-i",
        "1.5",
        "--candidates",
        "2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let candidates = read_json(&out_path)["candidates"].as_array().unwrap().len();
    assert!(
        (1..=2).contains(&candidates),
        "--candidates 2 must cap the list, got {candidates}"
    );
    let report = read_json(&out_path);
    for (k, c) in report["candidates"].as_array().unwrap().iter().enumerate() {
        assert_eq!(c["rank"].as_u64().unwrap() as usize, k + 1, "ranks must be 1-based and dense");
    }
}

#[test]
fn score_identity_on_identical_maps_is_unity() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "scored.mrc", 10, 77);
    let t_path = dir.path().join("identity.json");
    std::fs::write(
        &t_path,
        serde_json::to_string(&RigidTransform::identity().to_mat4_row_major().to_vec()).unwrap(),
    )
    .unwrap();
    let out = run_cli(&[
        "score",
        "-a",
        map.to_str().unwrap(),
        "-b",
        map.to_str().unwrap(),
        "-t",
        t_path.to_str().unwrap(),
        "-i",
        "1.5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let score = stdout_json(&out)["score"].as_f64().unwrap();
    assert!(
        (score - 1.0).abs() <= 1e-9,
        "identity on identical maps must score 1, got {score}"
    );
}

#[test]
fn score_rejects_reflection_matrix() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "reflected.mrc", 8, 78);
    let t_path = dir.path().join("reflection.json");
    // det = −1: a mirror, not a rotation.
    let reflection = [
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ];
    std::fs::write(
        &t_path,
        serde_json::json!({ "transform": reflection.to_vec() }).to_string(),
    )
    .unwrap();
    let out = run_cli(&[
        "score",
        "-a",
        map.to_str().unwrap(),
        "-b",
        map.to_str().unwrap(),
        "-t",
        t_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "a reflection must be rejected as invalid input");
}

#[test]
fn score_changes_little_under_dedup_equivalent_perturbation() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "perturbed.mrc", 10, 79);
    let identity_path = dir.path().join("identity.json");
    std::fs::write(
        &identity_path,
        serde_json::to_string(&RigidTransform::identity().to_mat4_row_major().to_vec()).unwrap(),
    )
    .unwrap();
    // Well inside the dedup thresholds (3°, one sampling interval).
    let perturbed = RigidTransform::new(
        rotation_about_axis(&Vector3::z(), deg(0.5)),
        Vector3::new(0.3, 0.0, 0.0),
    );
    let perturbed_path = dir.path().join("perturbed.json");
    std::fs::write(
        &perturbed_path,
        serde_json::to_string(&perturbed.to_mat4_row_major().to_vec()).unwrap(),
    )
    .unwrap();

    let mut scores = Vec::new();
    for t_path in [&identity_path, &perturbed_path] {
        let out = run_cli(&[
            "score",
            "-a",
            map.to_str().unwrap(),
            "-b",
            map.to_str().unwrap(),
            "-t",
            t_path.to_str().unwrap(),
            "-i",
            "1.5",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        scores.push(stdout_json(&out)["score"].as_f64().unwrap());
    }
    let diff = (scores[0] - scores[1]).abs();
    assert!(
        diff < 0.05,
        "dedup-equivalent poses must score nearly alike: |{} − {}| = {diff}",
        scores[0],
        scores[1]
    );
}

#[test]
fn sample_ply_agrees_with_summary_and_flags_keypoints() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "sampled.mrc", 10, 91);
    let ply_path = dir.path().join("cloud.ply");
    let out = run_cli(&[
        "sample",
        "-a",
        map.to_str().unwrap(),
        "-i",
        "1.5",
        "--out",
        ply_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    let points = summary["points"].as_u64().unwrap() as usize;
    let keypoints = summary["keypoints"].as_u64().unwrap() as usize;
    assert!(points > 0 && keypoints > 0);

    let text = std::fs::read_to_string(&ply_path).unwrap();
    let (header, body) = text.split_once("end_header\n").expect("PLY header");
    let declared: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .expect("vertex element")
        .trim()
        .parse()
        .unwrap();
    assert_eq!(declared, points, "PLY vertex count must equal the reported cloud size");

    let keypoint_comments = header
        .lines()
        .filter(|l| l.starts_with("comment keypoint "))
        .count();
    assert_eq!(keypoint_comments, keypoints);

    let mut rows = 0usize;
    let mut flagged = 0usize;
    for line in body.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 7, "vertex rows carry x y z nx ny nz key");
        let n: Vec<f64> = fields[3..6].iter().map(|f| f.parse().unwrap()).collect();
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        assert!((norm - 1.0).abs() <= 1e-5, "non-unit vector in PLY: {norm}");
        let key: i64 = fields[6].parse().unwrap();
        assert!(key >= -1 && (key as i64) < keypoints as i64);
        if key >= 0 {
            flagged += 1;
        }
        rows += 1;
    }
    assert_eq!(rows, points);
    assert!(
        flagged > 0,
        "the scalar key property must flag cluster membership for at least some samples"
    );
}

#[test]
fn sample_with_contour_above_peak_exits_two() {
    let dir = TempDir::new().unwrap();
    let map = small_map(dir.path(), "empty.mrc", 8, 92);
    let out = run_cli(&[
        "sample",
        "-a",
        map.to_str().unwrap(),
        "--contour",
        "1e9",
    ]);
    assert_eq!(
        code(&out),
        2,
        "an empty above-contour set is a no-solution outcome: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

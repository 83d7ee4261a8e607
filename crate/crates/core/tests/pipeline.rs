use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use capforge::dataset::{count_lines, read_enhanced, read_manifest};
use capforge::fixture::write_fixture;
use capforge::gateway::mock::MockFault;
use capforge::gateway::{CaptionerEndpoint, CaptionerPool, GenerationConfig};
use capforge::orchestrator::{
    enhance, merge_shards, plan_shards, process_shard, shard_data_path, DropPolicy, EnhanceContext,
    EnhanceOptions, OrchestratorError, ShardOptions, MERGED_FILE,
};
use capforge::shear::{count_tokens, ShearPolicy, TokenizerSpec};

const MODELS: [(&str, &str); 4] = [
    ("minigpt4", "minigpt4"),
    ("otter", "otter"),
    ("qwen-vl", "qwen-vl"),
    ("llava-1.5", "llava-1.5"),
];

fn mock_pool(seed: u64) -> CaptionerPool {
    CaptionerPool::from_specs(MODELS.iter().map(|(id, preset)| {
        let mut g = GenerationConfig::preset(preset).unwrap();
        g.seed = Some(seed);
        (CaptionerEndpoint::mock(*id), g)
    }))
    .unwrap()
}

fn context(input: &Path, run: &Path, pool: CaptionerPool, drop: DropPolicy) -> EnhanceContext {
    EnhanceContext::new(input, run, pool, ShearPolicy::default(), drop)
}

fn opts(shards: usize) -> EnhanceOptions {
    EnhanceOptions {
        shards,
        workers: 2,
        ..EnhanceOptions::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    input: PathBuf,
}

fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let input = write_fixture(&root, n, 1).unwrap();
    Fixture { _dir: dir, root, input }
}

#[tokio::test]
async fn enhanced_dataset_has_raw_plus_one_caption_per_model() {
    let fx = fixture(12);
    let run = fx.root.join("run");
    let summary = enhance(context(&fx.input, &run, mock_pool(7), DropPolicy::Drop), opts(3))
        .await
        .unwrap();
    let entries = read_enhanced(&summary.output).unwrap();
    assert_eq!(entries.len(), 12);
    let ids: Vec<String> = MODELS.iter().map(|m| m.0.to_string()).collect();
    for e in &entries {
        assert!(!e.caption.is_empty());
        assert_eq!(e.generated.len(), 4);
        assert_eq!(e.generated.iter().map(|g| g.model_id.clone()).collect::<Vec<_>>(), ids);
        for g in &e.generated {
            assert!(g.error.is_none());
            assert!(count_tokens(&g.text, &TokenizerSpec::default()) <= 30);
        }
    }
    let manifest = read_manifest(&summary.output).unwrap();
    assert_eq!(manifest.entry_count, 12);
    assert_eq!(manifest.entry_count, count_lines(&summary.output).unwrap());
    assert_eq!(manifest.pool_ids, ids);
    assert_eq!(summary.report.images_total, 12);
    assert_eq!(summary.report.images_enhanced, 12);
    assert_eq!(summary.report.captions_generated, 48);
    assert!(run.join("report.json").is_file());
}

#[tokio::test]
async fn identical_runs_are_byte_identical() {
    let fx = fixture(12);
    let mut outputs = Vec::new();
    for (name, shards) in [("a", 3), ("b", 3), ("c", 5)] {
        let run = fx.root.join(name);
        let s = enhance(context(&fx.input, &run, mock_pool(7), DropPolicy::Drop), opts(shards))
            .await
            .unwrap();
        outputs.push(fs::read(s.output).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    // shard count changes the work split, not the merged result
    assert_eq!(outputs[0], outputs[2]);
    let other_seed = enhance(
        context(&fx.input, &fx.root.join("d"), mock_pool(8), DropPolicy::Drop),
        opts(3),
    )
    .await
    .unwrap();
    assert_ne!(outputs[0], fs::read(other_seed.output).unwrap());
}

#[tokio::test]
async fn interrupted_run_resumes_to_the_same_output() {
    let fx = fixture(12);
    let clean = enhance(
        context(&fx.input, &fx.root.join("clean"), mock_pool(7), DropPolicy::Drop),
        opts(3),
    )
    .await
    .unwrap();

    let run = fx.root.join("crashy");
    fs::create_dir_all(&run).unwrap();
    let ctx = context(&fx.input, &run, mock_pool(7), DropPolicy::Drop);
    let plan = plan_shards(&fx.input, 3).unwrap();
    // shard 0 stops after 2 lines, shard 1 after 1; shard 2 never starts
    for (shard, lines) in [(0, 2), (1, 1)] {
        let partial = ShardOptions {
            max_lines: Some(lines),
            ..ShardOptions::default()
        };
        let ckpt = process_shard(&ctx, &plan, shard, &partial).await.unwrap();
        assert!(!ckpt.complete);
    }
    // a record written after the last checkpoint, torn mid-line
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(shard_data_path(&run, 0))
        .unwrap();
    f.write_all(b"{\"id\":\"half-writ").unwrap();
    drop(f);

    assert!(matches!(
        merge_shards(&run, 3, &run.join(MERGED_FILE)),
        Err(OrchestratorError::MissingShard(0))
    ));
    let resumed = enhance(
        context(&fx.input, &run, mock_pool(7), DropPolicy::Drop),
        EnhanceOptions {
            resume: true,
            ..opts(3)
        },
    )
    .await
    .unwrap();
    assert_eq!(fs::read(resumed.output).unwrap(), fs::read(clean.output).unwrap());
    assert_eq!(resumed.report.images_total, 12);
}

#[tokio::test]
async fn cancellation_leaves_a_resumable_run() {
    let fx = fixture(6);
    let run = fx.root.join("run");
    let cancel = Arc::new(AtomicBool::new(true));
    let first = enhance(
        context(&fx.input, &run, mock_pool(7), DropPolicy::Drop),
        EnhanceOptions {
            cancel: Some(cancel),
            ..opts(2)
        },
    )
    .await;
    assert!(matches!(first, Err(OrchestratorError::Interrupted)));
    assert!(!run.join(MERGED_FILE).exists());
    let done = enhance(
        context(&fx.input, &run, mock_pool(7), DropPolicy::Drop),
        EnhanceOptions {
            resume: true,
            ..opts(2)
        },
    )
    .await
    .unwrap();
    assert_eq!(done.manifest.entry_count, 6);
}

#[tokio::test]
async fn resume_refuses_a_changed_configuration() {
    let fx = fixture(4);
    let run = fx.root.join("run");
    enhance(context(&fx.input, &run, mock_pool(7), DropPolicy::Drop), opts(2))
        .await
        .unwrap();
    let mut ctx = context(&fx.input, &run, mock_pool(7), DropPolicy::Drop);
    ctx.shear = ShearPolicy::with_max_tokens(12);
    let err = enhance(ctx, EnhanceOptions { resume: true, ..opts(2) }).await.unwrap_err();
    assert!(matches!(err, OrchestratorError::CheckpointMismatch { .. }), "{err:?}");
}

#[tokio::test]
async fn merge_rejects_mixed_shear_policies() {
    let fx = fixture(6);
    let run = fx.root.join("run");
    fs::create_dir_all(&run).unwrap();
    let plan = plan_shards(&fx.input, 2).unwrap();
    let a = context(&fx.input, &run, mock_pool(7), DropPolicy::Drop);
    let mut b = context(&fx.input, &run, mock_pool(7), DropPolicy::Drop);
    b.shear = ShearPolicy::with_max_tokens(15);
    process_shard(&a, &plan, 0, &ShardOptions::default()).await.unwrap();
    process_shard(&b, &plan, 1, &ShardOptions::default()).await.unwrap();
    let err = merge_shards(&run, 2, &run.join(MERGED_FILE)).unwrap_err();
    assert!(matches!(err, OrchestratorError::MixedShearPolicy(1)), "{err:?}");
    assert!(!run.join(MERGED_FILE).exists());
}

#[tokio::test]
async fn unreadable_images_follow_the_drop_policy() {
    let fx = fixture(5);
    fs::remove_file(fx.root.join("images/img_0001.png")).unwrap();
    fs::remove_file(fx.root.join("images/img_0003.png")).unwrap();

    let dropped = enhance(
        context(&fx.input, &fx.root.join("drop"), mock_pool(7), DropPolicy::Drop),
        opts(2),
    )
    .await
    .unwrap();
    let entries = read_enhanced(&dropped.output).unwrap();
    assert_eq!(
        entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
        ["img-0000", "img-0002", "img-0004"]
    );
    assert_eq!(dropped.report.images_dropped, 2);
    assert_eq!(dropped.report.dropped[0].line, 1);
    assert!(dropped.report.dropped[0].reason.starts_with("image_unreadable"));

    let kept = enhance(
        context(&fx.input, &fx.root.join("keep"), mock_pool(7), DropPolicy::Keep),
        opts(2),
    )
    .await
    .unwrap();
    let entries = read_enhanced(&kept.output).unwrap();
    assert_eq!(entries.len(), 5);
    assert!(entries[1].generated.iter().all(|g| g.is_placeholder()));
    assert_eq!(entries[1].generated.len(), 4);
    assert!(entries[2].generated.iter().all(|g| !g.is_placeholder()));
}

#[tokio::test]
async fn failing_endpoint_is_itemized() {
    let fx = fixture(3);
    let mut broken = CaptionerEndpoint::mock("broken");
    broken.mock.fault = Some(MockFault::Status(500));
    broken.retry.max_attempts = 2;
    broken.retry.backoff_base_ms = 1;
    let pool = CaptionerPool::from_specs([
        (CaptionerEndpoint::mock("otter"), GenerationConfig::otter()),
        (broken, GenerationConfig::default()),
    ])
    .unwrap();

    let keep = enhance(context(&fx.input, &fx.root.join("k"), pool.clone(), DropPolicy::Keep), opts(1))
        .await
        .unwrap();
    assert_eq!(keep.report.per_model_failures.get("broken"), Some(&3));
    assert_eq!(keep.report.failures.len(), 3);
    assert_eq!(keep.report.failures[0].error_kind, "http_status");
    let entries = read_enhanced(&keep.output).unwrap();
    assert!(entries.iter().all(|e| e.generated[1].error.as_deref() == Some("http_status")));
    assert!(entries.iter().all(|e| e.generated[0].error.is_none()));

    let drop = enhance(context(&fx.input, &fx.root.join("d"), pool, DropPolicy::Drop), opts(1))
        .await
        .unwrap();
    assert_eq!(drop.manifest.entry_count, 0);
    assert_eq!(drop.report.images_dropped, 3);
}

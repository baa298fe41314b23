//! Forward-pass profiler: per-stage voxel counts, attention-FLOP
//! estimates and wall times across configurations, plus pruning traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::{ParamStore, Tape};
use crate::error::Result;
use crate::pipeline::{forward, init_params, ForwardTrace, ModelConfig};
use crate::text::Vocabulary;
use crate::tgp::PruneTrace;

use super::scene::GroundingSample;

/// One `config,stage` aggregate over the dataset.
#[derive(Clone, Debug)]
pub struct ProfileRow {
    pub config: String,
    pub stage: String,
    pub mean_voxels: f64,
    pub mean_flops: f64,
    pub mean_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub prune_rows: Vec<PruneTrace>,
    /// Per config: per-scene forward wall time (median of the repeats)
    /// and per-scene total voxel-attention FLOPs.
    pub per_scene_ms: BTreeMap<String, Vec<f64>>,
    pub per_scene_flops: BTreeMap<String, Vec<f64>>,
}

const REPEATS: usize = 5;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Runs each configuration over the dataset. A configuration whose
/// parameter shapes do not match `store` gets a fresh seeded store; the
/// counts and FLOPs being profiled do not depend on the weight values.
pub fn profile(
    dataset: &[GroundingSample],
    store: &ParamStore,
    configs: &[(String, ModelConfig)],
    vocab: &Vocabulary,
) -> Result<ProfileReport> {
    let mut report = ProfileReport::default();
    for (name, config) in configs {
        let fallback;
        let active = if store_matches(store, config, vocab) {
            store
        } else {
            fallback = init_params(config, vocab)?;
            &fallback
        };
        let mut stage_acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
        let mut scene_ms = Vec::with_capacity(dataset.len());
        let mut scene_flops = Vec::with_capacity(dataset.len());
        for sample in dataset {
            // median-of-5 wall time per scene to damp jitter
            let mut times = Vec::with_capacity(REPEATS);
            let mut last: Option<ForwardTrace> = None;
            for _ in 0..REPEATS {
                let t = Instant::now();
                let mut tape = Tape::new();
                let out = forward(
                    &mut tape,
                    active,
                    config,
                    vocab,
                    &sample.points,
                    &sample.description,
                )?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
                last = Some(out.trace);
            }
            let trace = last.expect("at least one repeat");
            scene_ms.push(median(&mut times));
            scene_flops.push(trace.vox_attn_flops);
            for stage in &trace.stages {
                let slot = stage_acc.entry(stage.name.clone()).or_insert((0.0, 0.0, 0.0, 0));
                slot.0 += stage.voxels as f64;
                slot.1 += stage.flops;
                slot.2 += stage.ms;
                slot.3 += 1;
            }
            report.prune_rows.extend(trace.prune_traces.iter().copied());
        }
        for (stage, (voxels, flops, ms, n)) in stage_acc {
            report.rows.push(ProfileRow {
                config: name.clone(),
                stage,
                mean_voxels: voxels / n as f64,
                mean_flops: flops / n as f64,
                mean_ms: ms / n as f64,
            });
        }
        report.per_scene_ms.insert(name.clone(), scene_ms);
        report.per_scene_flops.insert(name.clone(), scene_flops);
    }
    Ok(report)
}

fn store_matches(store: &ParamStore, config: &ModelConfig, vocab: &Vocabulary) -> bool {
    match init_params(config, vocab) {
        Ok(wanted) => wanted.iter().all(|t| {
            store
                .get(&t.name)
                .map(|have| have.values.shape() == t.values.shape())
                .unwrap_or(false)
        }),
        Err(_) => false,
    }
}

/// `config,stage,voxels,flops,ms`
pub fn write_profile_csv(report: &ProfileReport, path: &Path) -> Result<()> {
    let mut out = String::from("config,stage,voxels,flops,ms\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.config, r.stage, r.mean_voxels, r.mean_flops, r.mean_ms
        )
        .ok();
    }
    fs::write(path, out)?;
    Ok(())
}

/// `level,before,after,ratio,fallback`
pub fn write_prune_csv(rows: &[PruneTrace], path: &Path) -> Result<()> {
    let mut out = String::from("level,before,after,ratio,fallback\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.level, r.voxels_before, r.voxels_after, r.kept_ratio, r.fallback_used as u8
        )
        .ok();
    }
    fs::write(path, out)?;
    Ok(())
}

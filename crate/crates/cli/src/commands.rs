use std::path::{Path, PathBuf};

use ssmnet::diffcore::gradcheck::primitive_suite;
use ssmnet::encoder::{save_params, ChannelPlan};
use ssmnet::eval::{
    evaluate_corpus, summarize, write_report_csv, write_summary_json, FeatureVariant, ReportSummary, TrackData,
    VariantKind,
};
use ssmnet::frontend::extract_patches;
use ssmnet::ingest::{read_beats, read_manifest, read_wav, uniform_beats};
use ssmnet::optim::{composite_gradcheck, TrainTrack, Trainer};
use ssmnet::synthgen::{gen_corpus, SynthConfig};
use ssmnet::{Error, Result};

use crate::config::{set, set_path, CliConfig};
use crate::{EvalArgs, ExtractArgs, GradcheckArgs, SynthArgs, TrainArgs};

const CHECKPOINT_FILE: &str = "checkpoint.ssmc";

fn required(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Argument(format!("--{flag} is required (or set it under \"paths\" in --config)")))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `model.ssmn` → `model.<suffix>.json`
fn sidecar(model: &Path, suffix: &str) -> PathBuf {
    model.with_extension(format!("{suffix}.json"))
}

pub fn extract(a: &ExtractArgs) -> Result<u8> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    let audio = read_wav(&a.audio)?;
    let beats = match (&a.beats, a.beat_period) {
        (Some(p), _) => read_beats(p)?,
        (None, Some(period)) => uniform_beats(audio.duration(), period)?,
        (None, None) => {
            return Err(Error::Argument(
                "no beats given: pass --beats FILE or --beat-period SECONDS".into(),
            ))
        }
    };
    let patches = extract_patches(&audio, &beats, &cfg.cqt)?;
    patches.save(&a.out)?;
    log::info!("wrote {} patches to {}", patches.len(), a.out.display());
    Ok(0)
}

/// Loads every manifest track, reporting all failures at once.
fn load_corpus(manifest: &Path) -> Result<Vec<TrainTrack>> {
    let entries = read_manifest(manifest)?;
    let mut tracks = Vec::with_capacity(entries.len());
    let mut failures = Vec::new();
    for e in &entries {
        match TrackData::load(e).and_then(|d| TrainTrack::new(d.track_id, d.patches, d.gt)) {
            Ok(t) => tracks.push(t),
            Err(err) => failures.push(format!("{}: {err}", e.track_id)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::validation(format!(
            "{} of {} tracks are unusable:\n  {}",
            failures.len(),
            entries.len(),
            failures.join("\n  ")
        )));
    }
    Ok(tracks)
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    let t = &mut cfg.train;
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.batch_tracks, a.batch_tracks);
    set(&mut t.momentum, a.momentum);
    set(&mut t.max_epochs, a.max_epochs);
    set(&mut t.patience, a.patience);
    set(&mut t.validation_fraction, a.validation_fraction);
    set(&mut t.seed, a.seed);
    set_path(&mut cfg.paths.manifest, &a.manifest);
    set_path(&mut cfg.paths.out_model, &a.out_model);
    set_path(&mut cfg.paths.checkpoint_dir, &a.checkpoint_dir);
    cfg.train.validate()?;
    cfg.loss.validate()?;
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let out_model = required(&cfg.paths.out_model, "out-model")?;

    let corpus = load_corpus(&manifest)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let t = Trainer::resume(ckpt, cfg.train)?;
            log::info!("resuming after epoch {}", t.epochs_done());
            t
        }
        None => Trainer::new(cfg.train, cfg.loss)?,
    };
    if let Some(dir) = &cfg.paths.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while !trainer.is_finished() {
        let r = trainer.run_epoch(&corpus)?;
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  steps {}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.steps, r.wall_seconds
        );
        if let Some(dir) = &cfg.paths.checkpoint_dir {
            trainer.save_checkpoint(dir.join(CHECKPOINT_FILE))?;
        }
    }
    save_params(trainer.best_params(), &out_model)?;
    write_json(&sidecar(&out_model, "history"), trainer.history())?;
    write_json(&sidecar(&out_model, "config"), &cfg)?;
    match trainer.history().best_epoch {
        Some(e) => log::info!("best validation loss at epoch {e}; model written to {}", out_model.display()),
        None => log::warn!("no epoch improved on the initial parameters; wrote them to {}", out_model.display()),
    }
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    set_path(&mut cfg.paths.manifest, &a.manifest);
    set_path(&mut cfg.paths.model, &a.model);
    set_path(&mut cfg.paths.report, &a.report);
    set_path(&mut cfg.paths.render_dir, &a.render_dir);
    cfg.loss.validate()?;
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let report = required(&cfg.paths.report, "report")?;
    let variant = match a.variant {
        VariantKind::Cqt => FeatureVariant::Cqt,
        VariantKind::Convnet => {
            FeatureVariant::convnet(cfg.train.channel_plan, a.seed.unwrap_or(cfg.train.seed))?
        }
        VariantKind::Ssmnet => {
            let model = cfg
                .paths
                .model
                .as_ref()
                .ok_or_else(|| Error::Argument("variant ssmnet needs --model".into()))?;
            FeatureVariant::ssmnet_from_file(model)?
        }
    };
    if let Some(dir) = &cfg.paths.render_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let entries = read_manifest(&manifest)?;
    let rows = evaluate_corpus(&entries, &variant, &cfg.loss, cfg.paths.render_dir.as_deref())?;
    write_report_csv(&report, &rows)?;
    let mut summary = ReportSummary::default();
    let s = summarize(&rows, &variant);
    if let (Some(l), Some(auc)) = (s.loss, s.auc) {
        log::info!(
            "{}: median loss {:.4}, median auc {:.4} over {} tracks ({} failed)",
            variant.kind(),
            l.median,
            auc.median,
            s.tracks,
            s.failed
        );
    }
    let failed = s.failed;
    summary.variants.insert(variant.kind(), s);
    write_summary_json(report.with_extension("json"), &summary)?;
    if failed > 0 {
        log::warn!("{failed} track(s) could not be scored; see the status column");
    }
    Ok(0)
}

pub fn synth(a: &SynthArgs) -> Result<u8> {
    let base = SynthConfig {
        noise: a.noise,
        beats_per_section: a.beats_per_section,
        beat_period: a.beat_period,
        frames_per_beat: a.frames_per_beat,
        peaks: a.peaks,
        ..SynthConfig::default()
    };
    let entries = gen_corpus(a.n, &base, a.seed, &a.out_dir)?;
    log::info!("wrote {} tracks and manifest.json to {}", entries.len(), a.out_dir.display());
    Ok(0)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let mut ok = true;
    let mut line = |name: &str, r: &ssmnet::diffcore::GradCheckReport| {
        let pass = r.passes(a.tolerance);
        ok &= pass;
        println!(
            "{name:<14} max_rel_error {:.3e}  checked {:>4}  skipped {:>3}  unresolved {:>3}  {}",
            r.max_rel_error,
            r.checked,
            r.skipped,
            r.unresolved,
            if pass { "ok" } else { "FAIL" }
        );
    };
    for (name, r) in primitive_suite(a.seed, a.points)? {
        line(name, &r);
    }
    let r = composite_gradcheck(ChannelPlan::default(), a.patches, a.coords, a.seed)?;
    line("composite", &r);
    Ok(if ok { 0 } else { 4 })
}

//! Pipeline stages behind the CLI verbs. Each stage reads its inputs from
//! the run directory, verifies provenance hashes, and writes its artifacts
//! back under the same root, so stages can run separately or chained.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::clustering::{self, SubjectState};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::inference::{ChainConfig, ChainRunner, PosteriorSample};
use crate::pipeline::config::{LoadedConfig, SimulateSection, sha256_file, sha256_hex};
use crate::pipeline::files::{
    CHECKPOINT_SCHEMA, CLUSTERS_SCHEMA, Checkpoint, ClusterManifest, ClusterStateEntry, CsvWriter,
    JsonlWriter, OBSERVATIONS_SCHEMA, ObservationRecord, ObservationsHeader, ReportSummary,
    SAMPLES_SCHEMA, SUMMARY_SCHEMA, SampleRecord, SamplesHeader, read_hypnogram,
    read_json, read_observations, read_samples, read_samples_file, write_json,
};
use crate::signal::{
    BandSpec, ObservationSet, SpectralAnalyzer, WindowObservation, compute_dpss,
    extract_band_observations, multitaper_psd, reject_artifacts, remove_mean, segment_windows,
};
use crate::simulator;

pub struct Ctx {
    pub loaded: LoadedConfig,
    pub quiet: bool,
}

impl Ctx {
    pub fn new(loaded: LoadedConfig, quiet: bool) -> Self {
        Ctx { loaded, quiet }
    }

    fn say(&self, msg: std::fmt::Arguments) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn out(&self) -> PathBuf {
        self.loaded.output_dir()
    }

    fn subject_dir(&self, id: &str) -> PathBuf {
        self.out().join("subjects").join(id)
    }

    fn window_len(&self) -> Result<usize> {
        let j_real = self.loaded.config.window_seconds * self.loaded.config.fs;
        let j = j_real.round() as usize;
        if j == 0 || (j_real - j as f64).abs() > 1e-9 * j_real.max(1.0) {
            return Err(Error::validation(format!(
                "window of {} s at {} Hz is not a whole number of samples",
                self.loaded.config.window_seconds, self.loaded.config.fs
            )));
        }
        Ok(j)
    }

    fn selected_subjects(&self, filter: Option<&str>) -> Result<Vec<(usize, &crate::pipeline::config::SubjectConfig)>> {
        match filter {
            None => {
                if self.loaded.config.subjects.is_empty() {
                    return Err(Error::validation("config lists no subjects"));
                }
                Ok(self.loaded.config.subjects.iter().enumerate().collect())
            }
            Some(id) => Ok(vec![self.loaded.subject(id)?]),
        }
    }
}

fn float(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn resolve_fixture(section: &SimulateSection) -> Result<(Vec<simulator::SimStage>, Vec<Vec<f64>>)> {
    if !section.stages.is_empty() {
        if section.transition.is_empty() {
            return Err(Error::validation("explicit stages need an explicit transition matrix"));
        }
        return Ok((section.stages.clone(), section.transition.clone()));
    }
    match section.builtin.as_deref() {
        Some("five-stage") => Ok(simulator::five_stage_fixture()),
        Some("three-stage") => Ok(simulator::three_stage_fixture()),
        Some(other) => Err(Error::validation(format!("unknown builtin fixture '{other}'"))),
        None => Err(Error::validation("simulate section needs stages or a builtin fixture name")),
    }
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let config = &ctx.loaded.config;
    let section = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::validation("config has no simulate section"))?;
    let (stages, transition) = resolve_fixture(section)?;
    let window_len = ctx.window_len()?;
    ctx.say(format_args!(
        "simulate: {} stages, {} windows of {} samples",
        stages.len(),
        section.n_windows,
        window_len
    ));
    let truth = simulator::simulate(
        &stages,
        &transition,
        section.n_windows,
        window_len,
        config.fs,
        section.seed,
    )?;

    let dir = ctx.out().join("sim");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = ctx.loaded.config_hash.clone();
    let provenance: Vec<(&str, &str)> =
        vec![("config", &ctx.loaded.config_hash), ("manifest", &manifest)];

    let mut samples_csv = CsvWriter::create(&dir.join("samples.csv"), &provenance, &["sample"])?;
    for s in &truth.samples {
        samples_csv.row(&[float(*s)])?;
    }
    samples_csv.finish()?;

    let mut truth_csv = CsvWriter::create(&dir.join("truth.csv"), &provenance, &["window", "stage"])?;
    for (t, s) in truth.stage_seq.iter().enumerate() {
        truth_csv.row(&[t.to_string(), s.to_string()])?;
    }
    truth_csv.finish()?;

    if stages.len() <= 5 {
        // ground truth doubles as a reference annotation: stage index is
        // arousal-ordered in the fixtures, labels are 1-based
        let mut hyp_csv = CsvWriter::create(&dir.join("hypnogram.csv"), &provenance, &["stage"])?;
        for s in &truth.stage_seq {
            hyp_csv.row(&[(s + 1).to_string()])?;
        }
        hyp_csv.finish()?;
    }

    let mut trans_csv = CsvWriter::create(
        &dir.join("transition.csv"),
        &provenance,
        &(0..stages.len()).map(|k| format!("to_{k}")).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    )?;
    for row in &transition {
        trans_csv.row(&row.iter().map(|p| float(*p)).collect::<Vec<_>>())?;
    }
    trans_csv.finish()?;

    let freqs = simulator::bin_frequencies(config.fs, window_len);
    let mut columns = vec!["freq_hz".to_string()];
    columns.extend((0..stages.len()).map(|k| format!("stage_{k}")));
    let mut psd_csv = CsvWriter::create(
        &dir.join("theoretical_psd.csv"),
        &provenance,
        &columns.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    )?;
    let per_stage: Vec<Vec<f64>> = stages
        .iter()
        .map(|st| simulator::theoretical_psd(st, config.fs, window_len, &freqs))
        .collect::<Result<_>>()?;
    for (j, &f) in freqs.iter().enumerate() {
        let mut row = vec![float(f)];
        row.extend(per_stage.iter().map(|p| float(p[j])));
        psd_csv.row(&row)?;
    }
    psd_csv.finish()?;

    #[derive(serde::Serialize)]
    struct SimMeta<'a> {
        schema: &'a str,
        config_hash: &'a str,
        manifest: &'a str,
        fs: f64,
        window_len: usize,
        n_windows: usize,
        seed: u64,
        stages: &'a [simulator::SimStage],
        transition: &'a [Vec<f64>],
    }
    write_json(
        &dir.join("meta.json"),
        &SimMeta {
            schema: "spindle.sim/1",
            config_hash: &ctx.loaded.config_hash,
            manifest: &manifest,
            fs: config.fs,
            window_len,
            n_windows: section.n_windows,
            seed: section.seed,
            stages: &stages,
            transition: &transition,
        },
    )?;
    ctx.say(format_args!("simulate: wrote {}", dir.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// spectra
// ---------------------------------------------------------------------------

pub fn cmd_spectra(ctx: &Ctx, filter: Option<&str>) -> Result<()> {
    let config = &ctx.loaded.config;
    let window_len = ctx.window_len()?;
    let band_spec = BandSpec::new(config.bands.clone())?;
    let band_bins = band_spec.bin_indices(config.fs, window_len)?;
    let bank = compute_dpss(window_len, config.taper.time_bandwidth, config.taper.taper_count)?;
    let analyzer = SpectralAnalyzer::new(bank);

    for (_, subject) in ctx.selected_subjects(filter)? {
        let input = ctx.loaded.resolve(&subject.input);
        let input_sha = sha256_file(&input)?;
        let samples = read_samples(&input, subject.format)?;
        let mut ws = segment_windows(samples, config.fs, config.window_seconds)?;
        let mask = reject_artifacts(&ws, config.artifact_percentile)?;
        ws.set_valid(mask);
        let rejected = ws.valid().iter().filter(|&&v| !v).count();
        ctx.say(format_args!(
            "spectra[{}]: {} windows of {} samples, {} rejected",
            subject.id,
            ws.n_windows(),
            window_len,
            rejected
        ));

        let mut histogram: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); band_spec.count()];
        let mut windows: Vec<WindowObservation> = Vec::with_capacity(ws.n_windows());
        for t in 0..ws.n_windows() {
            if !ws.valid()[t] {
                windows.push(WindowObservation { window: t, bands: None });
                continue;
            }
            let detrended = remove_mean(ws.window(t));
            let coeffs = analyzer.tapered_dft(&detrended)?;
            let psd = multitaper_psd(&coeffs);
            let bands = extract_band_observations(&coeffs, &psd, &band_bins);
            for (h, b) in histogram.iter_mut().zip(&bands) {
                *h.entry(b.bin).or_insert(0) += 1;
            }
            windows.push(WindowObservation { window: t, bands: Some(bands) });
        }

        let manifest = sha256_hex(format!("{}:{input_sha}", ctx.loaded.config_hash).as_bytes());
        let header = ObservationsHeader {
            schema: OBSERVATIONS_SCHEMA.to_string(),
            config_hash: ctx.loaded.config_hash.clone(),
            manifest,
            subject: subject.id.clone(),
            fs: config.fs,
            window_seconds: config.window_seconds,
            window_len,
            taper_count: config.taper.taper_count,
            time_bandwidth: config.taper.time_bandwidth,
            bands: config.bands.clone(),
            n_windows: ws.n_windows(),
            rejected,
            input_sha256: input_sha,
            selected_bin_histogram: histogram
                .into_iter()
                .map(|h| h.into_iter().collect())
                .collect(),
        };
        let path = ctx.subject_dir(&subject.id).join("observations.jsonl");
        let mut writer = JsonlWriter::create(&path, &ObservationRecord::Header(header))?;
        for w in windows {
            writer.write(&ObservationRecord::Window(w))?;
        }
        writer.finish()?;
        ctx.say(format_args!("spectra[{}]: wrote {}", subject.id, path.display()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn chain_config_for(ctx: &Ctx, subject_index: usize) -> ChainConfig {
    let inf = &ctx.loaded.config.inference;
    ChainConfig {
        k_max: inf.k_max,
        burn_in: inf.burn_in,
        n_samples: inf.n_samples,
        thin: inf.thin,
        seed: inf.seed.wrapping_add(subject_index as u64),
        hyper: inf.hyperpriors,
        ig_shape: inf.ig_shape,
    }
}

pub fn cmd_infer(ctx: &Ctx, filter: Option<&str>, resume: bool) -> Result<()> {
    cmd_infer_inner(ctx, filter, resume, None)
}

/// `stop_after` interrupts the run after that many total sweeps, writing a
/// checkpoint; used to exercise resume behaviour.
pub fn cmd_infer_inner(
    ctx: &Ctx,
    filter: Option<&str>,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<()> {
    for (idx, subject) in ctx.selected_subjects(filter)? {
        infer_subject(ctx, idx, &subject.id, resume, stop_after)?;
    }
    Ok(())
}

fn infer_subject(
    ctx: &Ctx,
    subject_index: usize,
    subject: &str,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<()> {
    let dir = ctx.subject_dir(subject);
    let obs_path = dir.join("observations.jsonl");
    let (header, windows) = read_observations(&obs_path)?;
    if header.config_hash != ctx.loaded.config_hash {
        return Err(Error::validation(format!(
            "observations were produced under config {} but the current config hashes to {}",
            header.config_hash, ctx.loaded.config_hash
        )));
    }
    let obs = ObservationSet::from_windows(&windows, header.taper_count, header.bands.len())?;
    let chain_cfg = chain_config_for(ctx, subject_index);
    let samples_path = dir.join("samples.jsonl");
    let checkpoint_path = dir.join("checkpoint.json");
    let trace_path = dir.join("trace.csv");

    let (mut runner, mut samples_out, mut trace_out) = if resume {
        let cp: Checkpoint = read_json(&checkpoint_path)?;
        if cp.schema != CHECKPOINT_SCHEMA {
            return Err(Error::format(&checkpoint_path, format!("unexpected schema '{}'", cp.schema)));
        }
        if cp.config_hash != ctx.loaded.config_hash || cp.manifest != header.manifest {
            return Err(Error::validation(format!(
                "checkpoint mismatch: checkpoint carries config {} / manifest {}, current run has config {} / manifest {}",
                cp.config_hash, cp.manifest, ctx.loaded.config_hash, header.manifest
            )));
        }
        if cp.chain != chain_cfg {
            return Err(Error::validation(
                "checkpoint was written under a different sampler configuration",
            ));
        }
        ctx.say(format_args!(
            "infer[{subject}]: resuming at sweep {} of {}",
            cp.state.iteration,
            chain_cfg.total_sweeps()
        ));
        (
            ChainRunner::from_state(obs, chain_cfg.clone(), cp.state)?,
            JsonlWriter::append(&samples_path)?,
            CsvWriter::append(&trace_path)?,
        )
    } else {
        let samples_header = SamplesHeader {
            schema: SAMPLES_SCHEMA.to_string(),
            config_hash: ctx.loaded.config_hash.clone(),
            manifest: header.manifest.clone(),
            subject: subject.to_string(),
            n_windows: header.n_windows,
            band_count: header.bands.len(),
            taper_count: header.taper_count,
            chain: chain_cfg.clone(),
        };
        let samples_out = JsonlWriter::create(&samples_path, &SampleRecord::Header(samples_header))?;
        let trace_out = CsvWriter::create(
            &trace_path,
            &[("config", &ctx.loaded.config_hash), ("manifest", &header.manifest)],
            &["iteration", "log_joint", "occupied", "capped"],
        )?;
        (ChainRunner::new(obs, chain_cfg.clone())?, samples_out, trace_out)
    };

    let total = chain_cfg.total_sweeps();
    let checkpoint_every = ctx.loaded.config.inference.checkpoint_every.max(1);
    let write_checkpoint = |runner: &ChainRunner| -> Result<()> {
        write_json(
            &checkpoint_path,
            &Checkpoint {
                schema: CHECKPOINT_SCHEMA.to_string(),
                config_hash: ctx.loaded.config_hash.clone(),
                manifest: header.manifest.clone(),
                subject: subject.to_string(),
                sweeps_done: runner.state().iteration,
                chain: chain_cfg.clone(),
                state: runner.state().clone(),
            },
        )
    };

    while !runner.finished() {
        let stats = runner.sweep()?;
        let it = runner.state().iteration;
        trace_out.row(&[
            it.to_string(),
            float(stats.log_joint),
            stats.occupied.to_string(),
            (stats.capped as u8).to_string(),
        ])?;
        if runner.is_retained() {
            samples_out.write(&SampleRecord::Sample(runner.extract_sample()))?;
        }
        if it % checkpoint_every == 0 {
            write_checkpoint(&runner)?;
        }
        if it % 500 == 0 {
            ctx.say(format_args!(
                "infer[{subject}]: sweep {it}/{total} occupied={} log_joint={:.1}",
                stats.occupied, stats.log_joint
            ));
        }
        if stop_after.is_some_and(|stop| it >= stop) {
            write_checkpoint(&runner)?;
            samples_out.finish()?;
            trace_out.finish()?;
            ctx.say(format_args!("infer[{subject}]: interrupted at sweep {it}"));
            return Ok(());
        }
    }
    write_checkpoint(&runner)?;
    samples_out.finish()?;
    trace_out.finish()?;
    if runner.state().cap_hits > 0 {
        eprintln!(
            "infer[{subject}]: warning: truncation cap limited state growth in {} sweeps",
            runner.state().cap_hits
        );
    }
    ctx.say(format_args!("infer[{subject}]: wrote {}", samples_path.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

struct SubjectSamples {
    id: String,
    manifest: String,
    taper_count: usize,
    samples: Vec<PosteriorSample>,
}

fn load_all_samples(ctx: &Ctx) -> Result<Vec<SubjectSamples>> {
    let mut out = Vec::new();
    for (_, subject) in ctx.selected_subjects(None)? {
        let path = ctx.subject_dir(&subject.id).join("samples.jsonl");
        let (header, samples) = read_samples_file(&path)?;
        if header.config_hash != ctx.loaded.config_hash {
            return Err(Error::validation(format!(
                "samples for '{}' were produced under config {} but the current config hashes to {}",
                subject.id, header.config_hash, ctx.loaded.config_hash
            )));
        }
        if samples.is_empty() {
            return Err(Error::validation(format!("no retained samples for '{}'", subject.id)));
        }
        out.push(SubjectSamples {
            id: subject.id.clone(),
            manifest: header.manifest,
            taper_count: header.taper_count,
            samples,
        });
    }
    Ok(out)
}

pub fn cmd_cluster(ctx: &Ctx) -> Result<()> {
    let config = &ctx.loaded.config;
    let loaded = load_all_samples(ctx)?;
    let b_prior_mean = config.inference.hyperpriors.b_shape / config.inference.hyperpriors.b_rate;

    let mut all_states: Vec<SubjectState> = Vec::new();
    for subject in &loaded {
        let states = clustering::pool_subject_states(
            &subject.id,
            &subject.samples,
            subject.taper_count,
            config.inference.ig_shape,
            b_prior_mean,
        )?;
        all_states.extend(states);
    }
    let weighted: Vec<SubjectState> =
        all_states.iter().filter(|s| s.occurrences > 0).cloned().collect();
    ctx.say(format_args!(
        "cluster: {} states ({} weighted) across {} subjects into {} clusters",
        all_states.len(),
        weighted.len(),
        loaded.len(),
        config.clustering.n_clusters
    ));
    let model = clustering::weighted_kmeans(
        &weighted,
        config.clustering.n_clusters,
        config.clustering.restarts,
        config.clustering.seed,
    )?;

    // assignment lookup, including zero-weight states mapped to their
    // nearest centroid
    let mut assignment: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for (s, &c) in weighted.iter().zip(&model.assignments) {
        assignment.insert((s.subject.clone(), s.state), c);
    }
    let mut entries: Vec<ClusterStateEntry> = Vec::with_capacity(all_states.len());
    for s in &all_states {
        let cluster = match assignment.get(&(s.subject.clone(), s.state)) {
            Some(&c) => c,
            None => {
                let (mut best, mut best_d) = (0usize, f64::INFINITY);
                for (c, centroid) in model.centroids.iter().enumerate() {
                    let d = clustering::symmetric_kl(&s.spectrum, centroid)?;
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                assignment.insert((s.subject.clone(), s.state), best);
                best
            }
        };
        entries.push(ClusterStateEntry {
            subject: s.subject.clone(),
            state: s.state,
            occurrences: s.occurrences,
            cluster,
            spectrum: s.spectrum.clone(),
        });
    }

    // clusters ordered by ascending alpha share of their centroids
    let alpha_idx =
        evaluation::alpha_band_indices(&config.bands, config.evaluation.alpha_band)?;
    let mut alpha_order: Vec<usize> = (0..model.centroids.len()).collect();
    let share = |c: &Vec<f64>| -> f64 { alpha_idx.iter().map(|&j| c[j]).sum() };
    alpha_order.sort_by(|&a, &b| {
        share(&model.centroids[a])
            .partial_cmp(&share(&model.centroids[b]))
            .expect("finite alpha share")
            .then(a.cmp(&b))
    });

    let mut manifest_input = ctx.loaded.config_hash.clone();
    for subject in &loaded {
        manifest_input.push(':');
        manifest_input.push_str(&subject.manifest);
    }
    let manifest = sha256_hex(manifest_input.as_bytes());

    let cluster_dir = ctx.out().join("clusters");
    write_json(
        &cluster_dir.join("model.json"),
        &ClusterManifest {
            schema: CLUSTERS_SCHEMA.to_string(),
            config_hash: ctx.loaded.config_hash.clone(),
            manifest: manifest.clone(),
            n_clusters: config.clustering.n_clusters,
            band_count: config.bands.len(),
            distortion: model.distortion,
            alpha_order,
            centroids: model.centroids.clone(),
            states: entries,
        },
    )?;

    // per-subject cluster trajectory from the modal state per window
    for subject in &loaded {
        let modal = evaluation::modal_trajectory(&subject.samples)?;
        let path = cluster_dir.join(format!("{}_trajectory.csv", subject.id));
        let mut csv = CsvWriter::create(
            &path,
            &[("config", &ctx.loaded.config_hash), ("manifest", &manifest)],
            &["window", "cluster"],
        )?;
        for (t, &state) in modal.iter().enumerate() {
            let cluster = assignment.get(&(subject.id.clone(), state)).ok_or_else(|| {
                Error::invariant(format!(
                    "modal state {state} of '{}' has no cluster assignment",
                    subject.id
                ))
            })?;
            csv.row(&[t.to_string(), cluster.to_string()])?;
        }
        csv.finish()?;
    }
    ctx.say(format_args!("cluster: wrote {}", cluster_dir.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(ctx: &Ctx, filter: Option<&str>) -> Result<()> {
    let config = &ctx.loaded.config;
    let cluster_path = ctx.out().join("clusters").join("model.json");
    let cluster_model: Option<ClusterManifest> = if cluster_path.exists() {
        let m: ClusterManifest = read_json(&cluster_path)?;
        if m.config_hash != ctx.loaded.config_hash {
            return Err(Error::validation(format!(
                "cluster model was produced under config {} but the current config hashes to {}",
                m.config_hash, ctx.loaded.config_hash
            )));
        }
        Some(m)
    } else {
        None
    };

    for (_, subject) in ctx.selected_subjects(filter)? {
        let dir = ctx.subject_dir(&subject.id);
        let (header, samples) = read_samples_file(&dir.join("samples.jsonl"))?;
        if header.config_hash != ctx.loaded.config_hash {
            return Err(Error::validation(format!(
                "samples for '{}' were produced under config {} but the current config hashes to {}",
                subject.id, header.config_hash, ctx.loaded.config_hash
            )));
        }
        if samples.is_empty() {
            return Err(Error::validation(format!("no retained samples for '{}'", subject.id)));
        }
        let report_dir = ctx.out().join("reports").join(&subject.id);
        let modal = evaluation::modal_trajectory(&samples)?;
        let n_windows = modal.len();

        // modal occupied-state count across samples
        let mut occ_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &samples {
            *occ_counts.entry(s.occupied).or_insert(0) += 1;
        }
        let occupied_modal =
            *occ_counts.iter().max_by_key(|(_, &c)| c).map(|(k, _)| k).expect("samples nonempty");

        // optional cluster track
        let cluster_track: Option<(Vec<usize>, Vec<usize>)> = match &cluster_model {
            None => None,
            Some(model) => {
                let mut map: BTreeMap<usize, usize> = BTreeMap::new();
                for entry in &model.states {
                    if entry.subject == subject.id {
                        map.insert(entry.state, entry.cluster);
                    }
                }
                let track = modal
                    .iter()
                    .map(|s| {
                        map.get(s).copied().ok_or_else(|| {
                            Error::invariant(format!(
                                "modal state {s} of '{}' missing from the cluster model",
                                subject.id
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((track, model.alpha_order.clone()))
            }
        };

        // optional reference annotation
        let hyp_windows: Option<Vec<u8>> = match &subject.hypnogram {
            None => None,
            Some(path) => {
                let hyp = read_hypnogram(
                    &ctx.loaded.resolve(path),
                    config.evaluation.hypnogram_epoch_seconds,
                )?;
                Some(hyp.to_windows(config.window_seconds, n_windows)?)
            }
        };

        let mut median_rho = None;
        let mut rho_count = 0usize;
        if let Some(hyp) = &hyp_windows {
            let dist = evaluation::rho_distribution(
                &samples,
                hyp,
                &config.bands,
                config.evaluation.alpha_band,
            )?;
            let mut rho_csv = CsvWriter::create(
                &report_dir.join("rho.csv"),
                &[("config", &ctx.loaded.config_hash), ("manifest", &header.manifest)],
                &["iteration", "rho"],
            )?;
            for (s, &rho) in samples.iter().zip(&dist.rhos) {
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&rho) {
                    return Err(Error::invariant(format!("rho {rho} outside [-1, 1]")));
                }
                rho_csv.row(&[s.iteration.to_string(), float(rho)])?;
            }
            rho_csv.finish()?;
            median_rho = Some(dist.median);
            rho_count = dist.rhos.len();
        }

        let mut empty_stages = Vec::new();
        let mut transition_rates = BTreeMap::new();
        if let (Some(hyp), Some((track, alpha_order))) = (&hyp_windows, &cluster_track) {
            let len = hyp.len().min(track.len());
            let heatmap = evaluation::stage_cluster_heatmap(&hyp[..len], &track[..len], alpha_order)?;
            // column normalization is the load-bearing property of the table
            for stage in 1u8..=5 {
                if heatmap.empty_stages.contains(&stage) {
                    continue;
                }
                let sum: f64 =
                    heatmap.proportions.iter().map(|row| row[(stage - 1) as usize]).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::invariant(format!(
                        "heatmap column for stage {stage} sums to {sum}"
                    )));
                }
            }
            let mut heatmap_csv = CsvWriter::create(
                &report_dir.join("heatmap.csv"),
                &[("config", &ctx.loaded.config_hash), ("manifest", &header.manifest)],
                &["cluster", "nrem3", "nrem2", "nrem1", "rem", "wake"],
            )?;
            for (row, &cluster) in heatmap.proportions.iter().zip(&heatmap.cluster_order) {
                let mut fields = vec![cluster.to_string()];
                fields.extend(row.iter().map(|p| float(*p)));
                heatmap_csv.row(&fields)?;
            }
            heatmap_csv.finish()?;
            empty_stages = heatmap.empty_stages.clone();
            for stage in 1u8..=5 {
                if !heatmap.empty_stages.contains(&stage) {
                    let rate = evaluation::transition_rate_per_minute(
                        &hyp[..len],
                        &track[..len],
                        stage,
                        config.window_seconds,
                    )?;
                    transition_rates.insert(stage, rate);
                }
            }
        }

        // long-format trajectory table
        let mut traj_csv = CsvWriter::create(
            &report_dir.join("trajectory.csv"),
            &[("config", &ctx.loaded.config_hash), ("manifest", &header.manifest)],
            &["window", "seconds", "hypnogram", "state", "cluster"],
        )?;
        for t in 0..n_windows {
            let hyp = hyp_windows
                .as_ref()
                .and_then(|h| h.get(t))
                .map(|v| v.to_string())
                .unwrap_or_default();
            let cluster = cluster_track
                .as_ref()
                .and_then(|(track, _)| track.get(t))
                .map(|v| v.to_string())
                .unwrap_or_default();
            traj_csv.row(&[
                t.to_string(),
                float(t as f64 * config.window_seconds),
                hyp,
                modal[t].to_string(),
                cluster,
            ])?;
        }
        traj_csv.finish()?;

        let cap_warnings = {
            let checkpoint_path = dir.join("checkpoint.json");
            if checkpoint_path.exists() {
                let cp: Checkpoint = read_json(&checkpoint_path)?;
                cp.state.cap_hits
            } else {
                0
            }
        };
        write_json(
            &report_dir.join("summary.json"),
            &ReportSummary {
                schema: SUMMARY_SCHEMA.to_string(),
                config_hash: ctx.loaded.config_hash.clone(),
                manifest: header.manifest.clone(),
                subject: subject.id.clone(),
                n_windows,
                occupied_states_modal: occupied_modal,
                median_rho,
                rho_count,
                transition_rates,
                empty_stages,
                cap_warnings,
            },
        )?;
        ctx.say(format_args!("report[{}]: wrote {}", subject.id, report_dir.display()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

/// Self-contained demonstration: writes a small config into `out_dir`,
/// simulates a three-stage recording, and runs every stage on it.
pub fn cmd_demo(out_dir: &Path, seed: u64, quiet: bool) -> Result<()> {
    use crate::pipeline::config::*;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = RunConfig {
        output_dir: PathBuf::from("."),
        fs: 40.0,
        window_seconds: 5.0,
        bands: vec![(0.5, 2.5), (2.5, 4.5), (4.5, 6.5), (6.5, 8.5), (10.5, 12.5), (12.5, 19.5)],
        taper: TaperConfig { time_bandwidth: 4.0, taper_count: 5 },
        artifact_percentile: 95.0,
        subjects: vec![SubjectConfig {
            id: "sim".into(),
            input: PathBuf::from("sim/samples.csv"),
            format: InputFormat::Csv,
            hypnogram: Some(PathBuf::from("sim/hypnogram.csv")),
        }],
        inference: InferenceSection {
            k_max: 12,
            burn_in: 250,
            n_samples: 20,
            thin: 5,
            seed,
            checkpoint_every: 200,
            ..InferenceSection::default()
        },
        clustering: ClusteringSection {
            n_clusters: 3,
            restarts: 10,
            seed: seed.wrapping_add(1),
        },
        evaluation: EvaluationSection {
            alpha_band: (10.5, 12.5),
            hypnogram_epoch_seconds: 5.0,
        },
        simulate: Some(SimulateSection {
            builtin: Some("three-stage".into()),
            stages: vec![],
            transition: vec![],
            n_windows: 240,
            seed: seed.wrapping_add(2),
        }),
    };
    let config_path = out_dir.join("config.json");
    write_json(&config_path, &config)?;
    let loaded = LoadedConfig::from_path(&config_path)?;
    let ctx = Ctx::new(loaded, quiet);
    cmd_simulate(&ctx)?;
    cmd_spectra(&ctx, None)?;
    cmd_infer(&ctx, None, false)?;
    cmd_cluster(&ctx)?;
    cmd_report(&ctx, None)?;
    Ok(())
}

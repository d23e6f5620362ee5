use std::io::Write;

use crate::curve::ScaleSchedule;
use crate::rope::{decay_curve, default_peak_layer, extrapolation_schedule, Probe};
use crate::toy::{
    entropy_profile, first_block_ablation, middle_last_sweep, random_tokens, spearman, ToyModel,
};

use super::config::RunConfig;
use super::{parse_list, write_output, AnalyzeCommand, CliError};

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, CliError> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|e| CliError::Config(format!("bad layer range `{s}`: {e}")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a > b {
        return Err(CliError::Config(format!("empty layer range `{s}`")));
    }
    Ok(a..=b)
}

pub(crate) fn cmd_analyze(cmd: &AnalyzeCommand, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        AnalyzeCommand::Decay {
            config,
            dim,
            base,
            scales,
            max_dist,
            out,
        } => {
            let mut rope = RunConfig::load_or_default(config.as_deref())?.rope;
            if let Some(d) = dim {
                rope.head_dim = *d;
            }
            if let Some(b) = base {
                rope.base = *b;
            }
            let mut w = csv_writer();
            w.write_record(["scale", "distance", "score", "envelope"])
                .map_err(csv_err)?;
            for s in parse_list(scales)? {
                let curve = decay_curve(&Probe::AllOnes, &rope.with_scale(s), *max_dist)
                    .map_err(config_err)?;
                for ((d, score), env) in curve.distances.iter().zip(&curve.scores).zip(&curve.envelope) {
                    w.write_record([s.to_string(), d.to_string(), score.to_string(), env.to_string()])
                        .map_err(csv_err)?;
                }
            }
            write_output(out.as_deref(), stdout, &finish(w)?)
        }
        AnalyzeCommand::Entropy { scale, toy, out } => {
            let cfg = toy.resolve()?;
            let schedule = ScaleSchedule::uniform(cfg.n_layers, *scale).map_err(config_err)?;
            let profile = entropy_profile(&cfg, &schedule, cfg.seq_len, toy.token_seed)
                .map_err(config_err)?;
            let mut w = csv_writer();
            w.write_record(["layer", "entropy"]).map_err(csv_err)?;
            for (layer, h) in profile.iter().enumerate() {
                w.write_record([layer.to_string(), h.to_string()])
                    .map_err(csv_err)?;
            }
            write_output(out.as_deref(), stdout, &finish(w)?)
        }
        AnalyzeCommand::Schedule {
            pretrained,
            target,
            interval,
            layers,
            peak,
            out,
        } => {
            let peak = peak.unwrap_or_else(|| default_peak_layer(*layers));
            let schedule = extrapolation_schedule(*layers, *pretrained, *target, *interval, peak)
                .map_err(config_err)?;
            let mut text = serde_json::to_string_pretty(&schedule).expect("serializable");
            text.push('\n');
            write_output(out.as_deref(), stdout, text.as_bytes())
        }
        AnalyzeCommand::ProbeFirstBlock {
            toy,
            layer,
            ablate,
            block,
            out,
        } => {
            let cfg = toy.resolve()?;
            let model = ToyModel::new(cfg.clone()).map_err(config_err)?;
            let tokens = random_tokens(cfg.seq_len, cfg.d_model(), 1.0, toy.token_seed);
            let cmp = first_block_ablation(&model, &tokens, *layer, parse_range(ablate)?, *block)
                .map_err(config_err)?;
            let mut w = csv_writer();
            w.write_record(["position", "similarity", "similarity_ablated"])
                .map_err(csv_err)?;
            let ablated: std::collections::HashMap<usize, f64> = cmp
                .ablated
                .positions
                .iter()
                .copied()
                .zip(cmp.ablated.similarity.iter().copied())
                .collect();
            for (p, s) in cmp.normal.positions.iter().zip(&cmp.normal.similarity) {
                let a = ablated.get(p).map(f64::to_string).unwrap_or_default();
                w.write_record([p.to_string(), s.to_string(), a]).map_err(csv_err)?;
            }
            eprintln!(
                "last-quartile mean similarity: {:.6} normal, {:.6} ablated",
                cmp.normal.last_quartile_mean(),
                cmp.ablated.last_quartile_mean()
            );
            write_output(out.as_deref(), stdout, &finish(w)?)
        }
        AnalyzeCommand::ProbeMiddleLast {
            toy,
            scales,
            layer,
            samples,
            out,
        } => {
            let cfg = toy.resolve()?;
            let model = ToyModel::new(cfg.clone()).map_err(config_err)?;
            let token_sets: Vec<_> = (0..*samples as u64)
                .map(|i| random_tokens(cfg.seq_len, cfg.d_model(), 1.0, toy.token_seed + i))
                .collect();
            let layer = layer.unwrap_or(cfg.n_layers - 1);
            let sweep = middle_last_sweep(&model, &token_sets, layer, &parse_list(scales)?)
                .map_err(config_err)?;
            let mut w = csv_writer();
            w.write_record(["scale", "similarity"]).map_err(csv_err)?;
            for (s, sim) in &sweep {
                w.write_record([s.to_string(), sim.to_string()]).map_err(csv_err)?;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = sweep.into_iter().unzip();
            match spearman(&xs, &ys) {
                Some(rho) => eprintln!("spearman rho: {rho:.4}"),
                None => eprintln!("spearman rho: undefined"),
            }
            write_output(out.as_deref(), stdout, &finish(w)?)
        }
    }
}

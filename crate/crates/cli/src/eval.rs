use std::collections::BTreeMap;

use anyhow::{Context, Result};
use rayon::prelude::*;

use stemeval::audio::{downmix_mono, ensure_same_rate, load_wav, AudioBuffer, StemKind};
use stemeval::correlation::{sort_scores, write_scores, ConditionKey, MetricScoreRecord};
use stemeval::energy::{
    self, bsseval_targets, parse_reweighted_name, reweighted_name, si_decompose, si_metrics, BssConfig, MetricValue,
    SiEnergies,
};
use stemeval::fad::fad_score;

use crate::layout::{Layout, TrackFiles};
use crate::{cli_error, CliError};

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Bss(&'static str),
    Si(&'static str),
    Reweighted(f64),
    /// Empty model for plain `FAD`.
    Fad(String),
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Bss(n) | Metric::Si(n) => (*n).to_owned(),
            Metric::Reweighted(w) => reweighted_name(*w),
            Metric::Fad(m) if m.is_empty() => "FAD".to_owned(),
            Metric::Fad(m) => format!("FAD-{m}"),
        }
    }

    fn parse(raw: &str) -> Result<Metric> {
        let name = raw.trim();
        for n in [energy::SDR, energy::ISR, energy::SIR, energy::SAR] {
            if name.eq_ignore_ascii_case(n) {
                return Ok(Metric::Bss(n));
            }
        }
        for n in [energy::SI_SDR, energy::SI_SIR, energy::SI_SAR, energy::SD_SDR] {
            if name.eq_ignore_ascii_case(n) {
                return Ok(Metric::Si(n));
            }
        }
        if let Some(w) = parse_reweighted_name(name) {
            if !(0.0..=1.0).contains(&w) {
                return Err(cli_error(format!("weight in {name} outside [0, 1]")).into());
            }
            return Ok(Metric::Reweighted(w));
        }
        if name == "FAD" {
            return Ok(Metric::Fad(String::new()));
        }
        if let Some(model) = name.strip_prefix("FAD-").filter(|m| !m.is_empty() && !m.contains(['/', '\\'])) {
            return Ok(Metric::Fad(model.to_owned()));
        }
        Err(cli_error(format!("unknown metric {raw:?}")).into())
    }
}

pub fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = Vec::new();
    for n in names.iter().filter(|n| !n.trim().is_empty()) {
        let m = Metric::parse(n)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(cli_error("no metrics requested".into()).into());
    }
    Ok(out)
}

/// Every file the requested metrics will read, or the complete list of the
/// missing ones.
fn check_files(layout: &Layout, metrics: &[Metric]) -> Result<()> {
    let models: Vec<&str> = metrics
        .iter()
        .filter_map(|m| match m {
            Metric::Fad(model) => Some(model.as_str()),
            _ => None,
        })
        .collect();
    let needs_audio = metrics.iter().any(|m| !matches!(m, Metric::Fad(_)));
    let mut missing = Vec::new();
    for t in &layout.tracks {
        if t.systems.is_empty() {
            missing.push(format!("{}: no systems", t.track_id));
        }
        for (system, stems) in &t.systems {
            for (&stem, path) in stems {
                if needs_audio {
                    match t.references.get(&stem) {
                        Some(r) if r.is_file() => {}
                        Some(r) => missing.push(r.display().to_string()),
                        None => missing.push(format!("{}: reference {}", t.track_id, stem)),
                    }
                    if !path.is_file() {
                        missing.push(path.display().to_string());
                    }
                }
                for model in &models {
                    for cond in ["reference", system.as_str()] {
                        match t.embedding(model, cond, stem) {
                            Some(p) if p.is_file() => {}
                            Some(p) => missing.push(p.display().to_string()),
                            None => missing.push(format!(
                                "{}: embedding {}/{}/{}",
                                t.track_id,
                                if model.is_empty() { "FAD" } else { model },
                                cond,
                                stem
                            )),
                        }
                    }
                }
            }
        }
    }
    missing.sort();
    missing.dedup();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingFiles(missing).into())
    }
}

struct TrackAudio {
    stems: Vec<StemKind>,
    references: Vec<AudioBuffer>,
    mono_references: Vec<Vec<f64>>,
}

impl TrackAudio {
    fn load(t: &TrackFiles) -> Result<Self> {
        let mut stems = Vec::new();
        let mut references = Vec::new();
        for (&stem, path) in &t.references {
            stems.push(stem);
            references.push(load_wav(path).with_context(|| format!("track {}", t.track_id))?);
        }
        ensure_same_rate(&references).with_context(|| format!("track {} references", t.track_id))?;
        let mono_references = references
            .iter()
            .map(|r| Ok(downmix_mono(r)?.into_channels().remove(0)))
            .collect::<Result<_>>()?;
        Ok(Self { stems, references, mono_references })
    }

    fn index(&self, stem: StemKind) -> usize {
        self.stems.iter().position(|&s| s == stem).expect("checked against the layout")
    }
}

fn load_estimates(t: &TrackFiles, system: &str, audio: &TrackAudio) -> Result<Vec<(usize, StemKind, AudioBuffer)>> {
    t.systems[system]
        .iter()
        .map(|(&stem, path)| {
            let buf = load_wav(path).with_context(|| format!("track {} system {system}", t.track_id))?;
            let r = &audio.references[audio.index(stem)];
            if buf.sample_rate() != r.sample_rate() {
                return Err(anyhow::Error::new(stemeval::Error::SampleRateMismatch {
                    expected: r.sample_rate(),
                    found: buf.sample_rate(),
                })
                .context(format!("{}", path.display())));
            }
            Ok((audio.index(stem), stem, buf))
        })
        .collect()
}

fn si_for(audio: &TrackAudio, idx: usize, est: &AudioBuffer) -> Result<(stemeval::energy::SiScores, SiEnergies)> {
    let mono = downmix_mono(est)?.into_channels().remove(0);
    let d = si_decompose(&mono, &audio.mono_references, idx)?;
    Ok((si_metrics(&d, &mono, &audio.mono_references[idx]), d.energies()))
}

fn score_track(t: &TrackFiles, metrics: &[Metric], bss: &BssConfig) -> Result<Vec<MetricScoreRecord>> {
    let needs_audio = metrics.iter().any(|m| !matches!(m, Metric::Fad(_)));
    let needs_bss = metrics.iter().any(|m| matches!(m, Metric::Bss(_)));
    let needs_si = metrics.iter().any(|m| matches!(m, Metric::Si(_) | Metric::Reweighted(_)));
    let audio = if needs_audio { Some(TrackAudio::load(t)?) } else { None };
    let mut rows = Vec::new();
    for (system, stems) in &t.systems {
        let mut push = |stem: StemKind, metric: String, value: MetricValue| {
            rows.push(MetricScoreRecord {
                track_id: t.track_id.clone(),
                stem,
                condition: system.clone(),
                metric,
                value,
            })
        };
        if let Some(audio) = &audio {
            let ctx = || format!("track {} system {system}", t.track_id);
            let estimates = load_estimates(t, system, audio)?;
            if needs_bss {
                let pairs: Vec<(usize, &AudioBuffer)> = estimates.iter().map(|(i, _, b)| (*i, b)).collect();
                let scores = bsseval_targets(&audio.references, &pairs, bss).with_context(ctx)?;
                for ((_, stem, _), s) in estimates.iter().zip(&scores) {
                    let agg = s.aggregate();
                    for m in metrics {
                        let Metric::Bss(name) = m else { continue };
                        let v = match *name {
                            energy::SDR => agg.sdr,
                            energy::ISR => agg.isr,
                            energy::SIR => agg.sir,
                            _ => agg.sar,
                        };
                        let v = v.ok_or_else(|| {
                            stemeval::Error::DegenerateReference(format!(
                                "track {} reference {stem} is silent in every frame",
                                t.track_id
                            ))
                        })?;
                        push(*stem, m.name(), v);
                    }
                }
            }
            if needs_si {
                for (idx, stem, est) in &estimates {
                    let (scores, energies) = si_for(audio, *idx, est).with_context(|| format!("{} stem {stem}", ctx()))?;
                    for m in metrics {
                        let v = match m {
                            Metric::Si(energy::SI_SDR) => scores.si_sdr,
                            Metric::Si(energy::SI_SIR) => scores.si_sir,
                            Metric::Si(energy::SI_SAR) => scores.si_sar,
                            Metric::Si(_) => scores.sd_sdr,
                            Metric::Reweighted(w) => energies.reweighted(*w)?,
                            _ => continue,
                        };
                        push(*stem, m.name(), v);
                    }
                }
            }
        }
        for m in metrics {
            let Metric::Fad(model) = m else { continue };
            for &stem in stems.keys() {
                let reference = t.embedding(model, "reference", stem).expect("checked");
                let estimate = t.embedding(model, system, stem).expect("checked");
                let s = fad_score(&reference, &estimate)
                    .with_context(|| format!("track {} system {system} stem {stem} {}", t.track_id, m.name()))?;
                push(stem, m.name(), MetricValue::Finite(s.inverted));
            }
        }
    }
    Ok(rows)
}

/// Scores every (track, stem, system, metric) and returns the CSV bytes,
/// sorted so that parallelism never changes the output.
pub fn run(layout: &Layout, metrics: &[Metric], bss: &BssConfig) -> Result<Vec<u8>> {
    check_files(layout, metrics)?;
    let per_track: Vec<Vec<MetricScoreRecord>> = layout
        .tracks
        .par_iter()
        .map(|t| score_track(t, metrics, bss))
        .collect::<Result<_>>()?;
    let mut rows: Vec<MetricScoreRecord> = per_track.into_iter().flatten().collect();
    sort_scores(&mut rows);
    let mut out = Vec::new();
    write_scores(&mut out, &rows)?;
    Ok(out)
}

/// SI energies of every estimate, for the weight sweep.
pub fn si_energies(layout: &Layout) -> Result<BTreeMap<ConditionKey, SiEnergies>> {
    check_files(layout, &[Metric::Si(energy::SI_SDR)])?;
    let per_track: Vec<Vec<(ConditionKey, SiEnergies)>> = layout
        .tracks
        .par_iter()
        .map(|t| {
            let audio = TrackAudio::load(t)?;
            let mut out = Vec::new();
            for system in t.systems.keys() {
                for (idx, stem, est) in load_estimates(t, system, &audio)? {
                    let (_, e) = si_for(&audio, idx, &est)
                        .with_context(|| format!("track {} system {system} stem {stem}", t.track_id))?;
                    out.push((
                        ConditionKey { track_id: t.track_id.clone(), stem, condition: system.clone() },
                        e,
                    ));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_track.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names() {
        let m = parse_metrics(&["sdr".into(), "SI-SAR".into(), "RW-SISDR(0.25)".into(), "FAD-vggish".into(), "FAD".into(), "SDR".into()])
            .unwrap();
        let names: Vec<String> = m.iter().map(Metric::name).collect();
        assert_eq!(names, vec!["SDR", "SI-SAR", "RW-SISDR(0.25)", "FAD-vggish", "FAD"]);
        assert!(parse_metrics(&["PESQ".into()]).is_err());
        assert!(parse_metrics(&["RW-SISDR(1.5)".into()]).is_err());
        assert!(parse_metrics(&["FAD-../x".into()]).is_err());
    }
}

//! Line-delimited JSON trajectory dumps and the plot-data derived from them.
//!
//! A dump is one `header` record, any number of `step` records and one
//! closing `end` record. A file without the `end` record, or with a line
//! that does not parse, is rejected with the offending line number.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::{Task, P2};
use crate::error::{DairError, Result};
use crate::metrics::csv_err;
use crate::rollout::EpisodeResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DumpRecord {
    Header {
        task: Task,
        method: String,
        n_agents: usize,
        n_regions: usize,
        /// Column labels for attention rows: agents, then regions.
        entities: Vec<String>,
    },
    Step {
        episode: usize,
        step: usize,
        agents: Vec<P2>,
        objects: Vec<P2>,
        goals: Vec<P2>,
        door: f64,
        alpha: Option<Vec<Vec<f64>>>,
    },
    End {
        episodes: usize,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub header: DumpRecord,
    pub steps: Vec<DumpRecord>,
}

impl Dump {
    pub fn entities(&self) -> &[String] {
        match &self.header {
            DumpRecord::Header { entities, .. } => entities,
            _ => &[],
        }
    }
}

pub fn entity_labels(n_agents: usize, n_regions: usize) -> Vec<String> {
    (0..n_agents)
        .map(|i| format!("agent{i}"))
        .chain((0..n_regions).map(|k| format!("region{k}")))
        .collect()
}

fn line(w: &mut impl Write, rec: &DumpRecord) -> Result<()> {
    let text = serde_json::to_string(rec).map_err(|e| DairError::Config(e.to_string()))?;
    writeln!(w, "{text}")?;
    Ok(())
}

pub fn write_dump(mut w: impl Write, task: Task, method: &str, n_agents: usize, n_regions: usize, episodes: &[EpisodeResult]) -> Result<()> {
    line(
        &mut w,
        &DumpRecord::Header {
            task,
            method: method.to_string(),
            n_agents,
            n_regions,
            entities: entity_labels(n_agents, n_regions),
        },
    )?;
    let mut steps = 0;
    for (e, ep) in episodes.iter().enumerate() {
        for r in &ep.trace {
            line(
                &mut w,
                &DumpRecord::Step {
                    episode: e,
                    step: r.step,
                    agents: r.agents.clone(),
                    objects: r.objects.clone(),
                    goals: r.goals.clone(),
                    door: r.door,
                    alpha: r.alpha.clone(),
                },
            )?;
            steps += 1;
        }
    }
    line(
        &mut w,
        &DumpRecord::End {
            episodes: episodes.len(),
            steps,
        },
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_dump(r: impl BufRead) -> Result<Dump> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut ended = false;
    let mut last = 0;
    for (i, text) in r.lines().enumerate() {
        let n = i + 1;
        last = n;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        if ended {
            return Err(DairError::Trajectory {
                line: n,
                msg: "content after end record".into(),
            });
        }
        let rec: DumpRecord = serde_json::from_str(&text).map_err(|e| DairError::Trajectory {
            line: n,
            msg: e.to_string(),
        })?;
        match (&rec, header.is_some()) {
            (DumpRecord::Header { .. }, false) => header = Some(rec),
            (DumpRecord::Header { .. }, true) => {
                return Err(DairError::Trajectory {
                    line: n,
                    msg: "second header".into(),
                })
            }
            (_, false) => {
                return Err(DairError::Trajectory {
                    line: n,
                    msg: "missing header".into(),
                })
            }
            (DumpRecord::Step { .. }, true) => steps.push(rec),
            (DumpRecord::End { .. }, true) => ended = true,
        }
    }
    if !ended {
        return Err(DairError::Trajectory {
            line: last + 1,
            msg: "truncated dump: no end record".into(),
        });
    }
    Ok(Dump {
        header: header.expect("end implies header"),
        steps,
    })
}

/// Attention heat-map rows: `episode,step,agent,<entity...>`. One row per
/// agent per step, so each step forms an `agents x entities` matrix.
pub fn write_alpha_csv(w: impl Write, dump: &Dump) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["episode".to_string(), "step".into(), "agent".into()];
    head.extend(dump.entities().iter().cloned());
    out.write_record(&head).map_err(csv_err)?;
    for rec in &dump.steps {
        if let DumpRecord::Step {
            episode,
            step,
            alpha: Some(alpha),
            ..
        } = rec
        {
            for (i, row) in alpha.iter().enumerate() {
                let mut f = vec![episode.to_string(), step.to_string(), i.to_string()];
                f.extend(row.iter().map(|v| v.to_string()));
                out.write_record(&f).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Positions per step: `episode,step,entity,x,y`.
pub fn write_trace_csv(w: impl Write, dump: &Dump) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "step", "entity", "x", "y"]).map_err(csv_err)?;
    for rec in &dump.steps {
        if let DumpRecord::Step {
            episode,
            step,
            agents,
            objects,
            goals,
            door,
            ..
        } = rec
        {
            let named = agents
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("agent{i}"), *p))
                .chain(objects.iter().enumerate().map(|(i, p)| (format!("object{i}"), *p)))
                .chain(goals.iter().enumerate().map(|(i, p)| (format!("goal{i}"), *p)))
                .chain(std::iter::once(("door".to_string(), [0.0, *door])));
            for (name, p) in named {
                out.write_record([episode.to_string(), step.to_string(), name, p[0].to_string(), p[1].to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

//! On-disk formats: response and panel CSVs, parameter and posterior JSON.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use beta3_irt::params::{Family, ModelParams};
use beta3_irt::response::{Observation, ResponseMatrix};
use beta3_irt::synth::ClassifierResponseSet;
use beta3_irt::vi::PosteriorSet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

pub const FORMAT_VERSION: u32 = 1;

const SIMPLEX_TOLERANCE: f64 = 1e-6;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// 1-based line and column of the first occurrence of `"key"` in a JSON
/// document, used to point validation errors at the offending field.
pub fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    let offset = text.find(&needle)?;
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Some((line, column))
}

/// Parses a JSON document, reporting syntax and type errors with their
/// position.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_text(path)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Assigns dense indices to string IDs in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids(ids: &[String]) -> Self {
        let mut m = Self::default();
        for id in ids {
            m.intern(id);
        }
        m
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn into_ids(self) -> Vec<String> {
        self.ids
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            CliError::format(path, line, format!("expected {expected_len} fields, found {len}"))
        }
        csv::ErrorKind::Utf8 { .. } => CliError::format(path, line, "invalid UTF-8"),
        kind => CliError::format(path, line, format!("{kind:?}")),
    }
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(CliError::format(
            path,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, field: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| CliError::format(path, line, format!("{field} {text:?} is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::format(path, line, format!("{field} {text:?} is not finite")));
    }
    Ok(v)
}

/// Response data with the string IDs of its rows and columns.
#[derive(Debug, Clone)]
pub struct Responses {
    pub data: ResponseMatrix,
    pub respondent_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Reads `respondent_id,item_id,response` rows.
pub fn read_responses(path: &Path) -> Result<Responses> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &["respondent_id", "item_id", "response"])?;
    let mut respondents = IdMap::default();
    let mut items = IdMap::default();
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let p = parse_f64(path, line, "response", &rec[2])?;
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::format(path, line, format!("response {p} is outside [0, 1]")));
        }
        let i = respondents.intern(&rec[0]);
        let j = items.intern(&rec[1]);
        obs.push(Observation::new(i, j, p));
    }
    if obs.is_empty() {
        return Err(CliError::format(path, 1, "no data rows"));
    }
    let data = ResponseMatrix::new(respondents.len(), items.len(), obs)
        .context(|| path.display().to_string())?;
    Ok(Responses { data, respondent_ids: respondents.into_ids(), item_ids: items.into_ids() })
}

pub fn responses_csv(r: &Responses) -> Vec<u8> {
    let mut out = String::from("respondent_id,item_id,response\n");
    for o in r.data.observations() {
        for _ in 0..o.multiplicity {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.respondent_ids[o.respondent],
                r.item_ids[o.item],
                num(o.response)
            );
        }
    }
    out.into_bytes()
}

/// Reads `classifier_id,instance_id,label,p_class0,p_class1[,...]` rows.
///
/// Every classifier must score every instance exactly once, and all rows of
/// an instance must agree on its label.
pub fn read_panel(path: &Path) -> Result<ClassifierResponseSet> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let k = header.len().saturating_sub(3);
    let mut expected = vec!["classifier_id".to_string(), "instance_id".into(), "label".into()];
    expected.extend((0..k).map(|c| format!("p_class{c}")));
    if k < 2 {
        return Err(CliError::format(path, 1, "need at least the columns p_class0 and p_class1"));
    }
    check_header(path, &header, &expected.iter().map(String::as_str).collect::<Vec<_>>())?;

    let mut classifiers = IdMap::default();
    let mut instances = IdMap::default();
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut rows: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = classifiers.intern(&rec[0]);
        let j = instances.intern(&rec[1]);
        let label: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| CliError::format(path, line, format!("label {:?} is not a class index", &rec[2])))?;
        if label >= k {
            return Err(CliError::format(path, line, format!("label {label} needs column p_class{label}")));
        }
        if labels.len() <= j {
            labels.resize(j + 1, None);
        }
        match labels[j] {
            Some(y) if y != label => {
                return Err(CliError::format(
                    path,
                    line,
                    format!("instance {} was labelled {y} on an earlier row", &rec[1]),
                ))
            }
            _ => labels[j] = Some(label),
        }
        let probs = (0..k)
            .map(|c| parse_f64(path, line, &format!("p_class{c}"), &rec[3 + c]))
            .collect::<Result<Vec<f64>>>()?;
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CliError::format(path, line, "probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(CliError::format(path, line, format!("probabilities sum to {total}, not 1")));
        }
        if rows.insert((i, j), probs).is_some() {
            return Err(CliError::format(
                path,
                line,
                format!("duplicate row for classifier {} and instance {}", &rec[0], &rec[1]),
            ));
        }
    }
    let (m, n) = (classifiers.len(), instances.len());
    if m == 0 {
        return Err(CliError::format(path, 1, "no data rows"));
    }
    let mut probs = Vec::with_capacity(m * n * k);
    for i in 0..m {
        for j in 0..n {
            let row = rows.get(&(i, j)).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: classifier {} has no row for instance {}",
                    path.display(),
                    classifiers.ids[i],
                    instances.ids[j]
                ))
            })?;
            probs.extend_from_slice(row);
        }
    }
    let labels = labels.into_iter().map(|y| y.expect("every instance has a row")).collect();
    ClassifierResponseSet::with_tolerance(
        classifiers.into_ids(),
        instances.into_ids(),
        k,
        labels,
        probs,
        SIMPLEX_TOLERANCE,
    )
    .context(|| path.display().to_string())
}

pub fn panel_csv(c: &ClassifierResponseSet) -> Vec<u8> {
    let k = c.num_classes();
    let mut out = String::from("classifier_id,instance_id,label");
    for class in 0..k {
        let _ = write!(out, ",p_class{class}");
    }
    out.push('\n');
    for (i, cid) in c.classifier_ids().iter().enumerate() {
        for (j, iid) in c.instance_ids().iter().enumerate() {
            let _ = write!(out, "{cid},{iid},{}", c.labels()[j]);
            for p in c.probs(i, j) {
                let _ = write!(out, ",{}", num(*p));
            }
            out.push('\n');
        }
    }
    out.into_bytes()
}

/// Point estimates together with the IDs they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format_version: u32,
    pub family: Family,
    pub respondent_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub abilities: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub discriminations: Vec<f64>,
}

impl ParamsFile {
    pub fn new(params: &ModelParams, respondent_ids: Vec<String>, item_ids: Vec<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            family: params.family(),
            respondent_ids,
            item_ids,
            abilities: params.abilities().to_vec(),
            difficulties: params.difficulties().to_vec(),
            discriminations: params.discriminations().to_vec(),
        }
    }

    pub fn read(path: &Path) -> Result<(Self, ModelParams)> {
        let file: Self = read_json(path)?;
        check_version(path, file.format_version)?;
        if file.respondent_ids.len() != file.abilities.len() || file.item_ids.len() != file.difficulties.len() {
            return Err(CliError::Data(format!("{}: ID lists and parameter arrays differ in length", path.display())));
        }
        let params = ModelParams::new(
            file.family,
            file.abilities.clone(),
            file.difficulties.clone(),
            file.discriminations.clone(),
        )
        .context(|| path.display().to_string())?;
        Ok((file, params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorsFile {
    pub format_version: u32,
    pub respondent_ids: Vec<String>,
    pub item_ids: Vec<String>,
    #[serde(flatten)]
    pub posteriors: PosteriorSet,
}

impl PosteriorsFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        check_version(path, file.format_version)?;
        file.posteriors.validate().context(|| path.display().to_string())?;
        if file.item_ids.len() != file.posteriors.num_items()
            || file.respondent_ids.len() != file.posteriors.num_respondents()
        {
            return Err(CliError::Data(format!("{}: ID lists and posteriors differ in length", path.display())));
        }
        Ok(file)
    }
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(CliError::Data(format!("{}: unsupported format_version {v}", path.display())));
    }
    Ok(())
}

/// `respondent_id,item_id` rows resolved against known IDs.
pub fn read_pairs(path: &Path, respondents: &IdMap, items: &IdMap) -> Result<Vec<(String, String, usize, usize)>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &["respondent_id", "item_id"])?;
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = respondents
            .get(&rec[0])
            .ok_or_else(|| CliError::format(path, line, format!("unknown respondent_id {:?}", &rec[0])))?;
        let j = items
            .get(&rec[1])
            .ok_or_else(|| CliError::format(path, line, format!("unknown item_id {:?}", &rec[1])))?;
        pairs.push((rec[0].to_string(), rec[1].to_string(), i, j));
    }
    Ok(pairs)
}

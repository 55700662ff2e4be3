//! Dataset manifests, attribute schemas, stage-wise pairing and subject splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_HEADER: [&str; 4] = ["subject_id", "pose", "expression", "path"];
pub const DATASET_META: &str = "dataset.json";

/// Ordered category list for one attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub categories: Vec<String>,
    pub neutral_index: usize,
}

impl AttributeSchema {
    pub fn new(name: impl Into<String>, categories: Vec<String>, neutral_index: usize) -> Result<Self> {
        let s = AttributeSchema { name: name.into(), categories, neutral_index };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::InvalidSchema(format!("{}: no categories", self.name)));
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if !seen.insert(c) {
                return Err(Error::InvalidSchema(format!("{}: duplicate category `{c}`", self.name)));
            }
        }
        if self.neutral_index >= self.categories.len() {
            return Err(Error::InvalidSchema(format!(
                "{}: neutral index {} out of range for {} categories",
                self.name,
                self.neutral_index,
                self.categories.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.categories.iter().position(|c| c == name).ok_or_else(|| Error::UnknownCategory {
            attribute: self.name.clone(),
            name: name.to_string(),
            known: self.categories.join(", "),
        })
    }

    /// KDEF head angles.
    pub fn kdef_pose() -> Self {
        let cats = ["full_left", "half_left", "straight", "half_right", "full_right"];
        Self::new("pose", cats.iter().map(|s| s.to_string()).collect(), 2).expect("static schema")
    }

    /// KDEF expressions.
    pub fn kdef_expression() -> Self {
        let cats = ["afraid", "angry", "disgusted", "happy", "neutral", "sad", "surprised"];
        Self::new("expression", cats.iter().map(|s| s.to_string()).collect(), 4).expect("static schema")
    }

    /// Cartesian product used by a single-stage model conditioned on both attributes.
    pub fn joint(pose: &AttributeSchema, expr: &AttributeSchema) -> Self {
        let mut cats = Vec::with_capacity(pose.len() * expr.len());
        for p in &pose.categories {
            for e in &expr.categories {
                cats.push(format!("{p}+{e}"));
            }
        }
        AttributeSchema {
            name: "pose+expression".into(),
            categories: cats,
            neutral_index: pose.neutral_index * expr.len() + expr.neutral_index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub pose: usize,
    pub expression: usize,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

/// One-hot attribute condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVector {
    index: usize,
    dim: usize,
}

impl ConditionVector {
    pub fn one_hot(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::LabelOutOfRange { label: index, classes: dim });
        }
        Ok(ConditionVector { index, dim })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoding(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }
}

/// Which attribute a stage edits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Pose,
    Expression,
    /// Both attributes at once (single-model baseline).
    Joint,
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Pose => "pose",
            StageKind::Expression => "expression",
            StageKind::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pose" => Ok(StageKind::Pose),
            "expression" | "expr" => Ok(StageKind::Expression),
            "joint" => Ok(StageKind::Joint),
            other => Err(Error::InvalidConfig(format!("unknown stage `{other}` (pose|expression|joint)"))),
        }
    }

    pub fn schema(&self, pose: &AttributeSchema, expr: &AttributeSchema) -> AttributeSchema {
        match self {
            StageKind::Pose => pose.clone(),
            StageKind::Expression => expr.clone(),
            StageKind::Joint => AttributeSchema::joint(pose, expr),
        }
    }
}

/// Optional attribute constraints for pairing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFilter {
    /// Pose stage: the expression held fixed (default neutral).
    /// Expression stage: ignored.
    pub expression: Option<usize>,
    /// Expression stage: only pair at this pose (default every pose).
    pub pose: Option<usize>,
}

/// Source/target manifest rows plus the condition for one training pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSpec {
    pub subject_id: String,
    pub source: usize,
    pub target: usize,
    pub condition: ConditionVector,
}

#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub input: Arc<Image>,
    pub target: Arc<Image>,
    pub condition: ConditionVector,
    pub subject_id: String,
    /// (pose, expression) of the input image.
    pub source_attrs: (usize, usize),
    /// (pose, expression) of the target image.
    pub target_attrs: (usize, usize),
}

impl SampleRecord {
    pub fn new(input: Arc<Image>, target: Arc<Image>, condition: ConditionVector, subject_id: impl Into<String>) -> Result<Self> {
        if input.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                context: "sample record".into(),
                expected: input.shape().to_vec(),
                actual: target.shape().to_vec(),
            });
        }
        Ok(SampleRecord {
            input,
            target,
            condition,
            subject_id: subject_id.into(),
            source_attrs: (0, 0),
            target_attrs: (0, 0),
        })
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    subject_id: String,
    pose: String,
    expression: String,
    path: String,
}

/// Reads and validates a `subject_id,pose,expression,path` manifest.
pub fn load_manifest(path: &Path, pose: &AttributeSchema, expression: &AttributeSchema) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!("header must be `{}`, got `{}`", MANIFEST_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.deserialize() {
        let raw: RawRow = rec?;
        let p = pose.index_of(&raw.pose)?;
        let e = expression.index_of(&raw.expression)?;
        if !seen.insert((raw.subject_id.clone(), p, e)) {
            return Err(Error::DuplicateRow { subject: raw.subject_id, pose: raw.pose, expression: raw.expression });
        }
        let rel = PathBuf::from(&raw.path);
        if !root.join(&rel).exists() {
            return Err(Error::MissingImage(root.join(&rel)));
        }
        rows.push(ManifestRow { subject_id: raw.subject_id, pose: p, expression: e, path: rel });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow], pose: &AttributeSchema, expression: &AttributeSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.subject_id.as_str(),
            pose.categories[r.pose].as_str(),
            expression.categories[r.expression].as_str(),
            &r.path.to_string_lossy().replace('\\', "/"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Subject ids in order of first appearance.
pub fn subjects(rows: &[ManifestRow]) -> Vec<String> {
    let mut seen = HashSet::new();
    rows.iter().filter(|r| seen.insert(r.subject_id.as_str())).map(|r| r.subject_id.clone()).collect()
}

/// Builds (source → target, condition) pairs for one stage.
pub fn pair_for_stage(
    rows: &[ManifestRow],
    pose: &AttributeSchema,
    expression: &AttributeSchema,
    stage: StageKind,
    filter: StageFilter,
    include_identity: bool,
) -> Result<Vec<PairSpec>> {
    let mut index: HashMap<(&str, usize, usize), usize> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        index.insert((r.subject_id.as_str(), r.pose, r.expression), i);
    }
    let ids = subjects(rows);
    let dim = stage.schema(pose, expression).len();
    let mut missing_source = Vec::new();
    let mut out = Vec::new();

    for subject in &ids {
        // (source attrs, [(target attrs, class index)])
        let mut plans: Vec<((usize, usize), Vec<((usize, usize), usize)>)> = Vec::new();
        match stage {
            StageKind::Pose => {
                let e = filter.expression.unwrap_or(expression.neutral_index);
                let targets = (0..pose.len())
                    .filter(|&k| include_identity || k != pose.neutral_index)
                    .map(|k| ((k, e), k))
                    .collect();
                plans.push(((pose.neutral_index, e), targets));
            }
            StageKind::Expression => {
                let poses: Vec<usize> = match filter.pose {
                    Some(p) => vec![p],
                    None => (0..pose.len()).collect(),
                };
                for p in poses {
                    let targets = (0..expression.len())
                        .filter(|&k| include_identity || k != expression.neutral_index)
                        .map(|k| ((p, k), k))
                        .collect();
                    plans.push(((p, expression.neutral_index), targets));
                }
            }
            StageKind::Joint => {
                let src = (pose.neutral_index, expression.neutral_index);
                let mut targets = Vec::new();
                for p in 0..pose.len() {
                    for e in 0..expression.len() {
                        if include_identity || (p, e) != src {
                            targets.push(((p, e), p * expression.len() + e));
                        }
                    }
                }
                plans.push((src, targets));
            }
        }

        for (src, targets) in plans {
            let Some(&si) = index.get(&(subject.as_str(), src.0, src.1)) else {
                if !missing_source.contains(subject) {
                    missing_source.push(subject.clone());
                }
                continue;
            };
            for ((tp, te), class) in targets {
                match index.get(&(subject.as_str(), tp, te)) {
                    Some(&ti) => out.push(PairSpec {
                        subject_id: subject.clone(),
                        source: si,
                        target: ti,
                        condition: ConditionVector::one_hot(class, dim)?,
                    }),
                    None => log::warn!(
                        "subject {subject}: no image for pose {} / expression {}, pair skipped",
                        pose.categories[tp],
                        expression.categories[te]
                    ),
                }
            }
        }
    }
    if !missing_source.is_empty() {
        return Err(Error::MissingSource(missing_source));
    }
    Ok(out)
}

/// Subject-disjoint split; `round(ratio · n_subjects)` subjects go to training.
pub fn split_subjects(rows: &[ManifestRow], ratio: f64, seed: u64) -> Result<(Vec<ManifestRow>, Vec<ManifestRow>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut ids = subjects(rows);
    if ids.len() < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 subjects to split, got {}", ids.len())));
    }
    let n_train = (ratio * ids.len() as f64).round() as usize;
    if n_train == 0 || n_train == ids.len() {
        return Err(Error::InvalidConfig(format!(
            "ratio {ratio} over {} subjects leaves an empty partition",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train: HashSet<&str> = ids[..n_train].iter().map(String::as_str).collect();
    let (a, b): (Vec<_>, Vec<_>) = rows.iter().cloned().partition(|r| train.contains(r.subject_id.as_str()));
    Ok((a, b))
}

/// Sidecar describing a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub pose: AttributeSchema,
    pub expression: AttributeSchema,
    pub manifest: String,
    #[serde(default)]
    pub image_size: Option<usize>,
    #[serde(default)]
    pub synth: Option<crate::synth::SynthSpec>,
}

/// A loaded manifest with a lazily filled image cache.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub pose: AttributeSchema,
    pub expression: AttributeSchema,
    pub rows: Vec<ManifestRow>,
    pub image_size: usize,
    cache: Mutex<HashMap<PathBuf, Arc<Image>>>,
}

impl Dataset {
    pub fn new(manifest: &Path, pose: AttributeSchema, expression: AttributeSchema, image_size: usize) -> Result<Self> {
        let rows = load_manifest(manifest, &pose, &expression)?;
        Ok(Dataset {
            root: manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
            pose,
            expression,
            rows,
            image_size,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Opens a directory holding `dataset.json` and its manifest. `image_size`
    /// overrides the size recorded in the sidecar.
    pub fn open_dir(dir: &Path, image_size: Option<usize>) -> Result<Self> {
        let meta_path = dir.join(DATASET_META);
        let text = fs::read_to_string(&meta_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(meta_path.clone()),
            _ => Error::io(&meta_path, e),
        })?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        meta.pose.validate()?;
        meta.expression.validate()?;
        let size = image_size
            .or(meta.image_size)
            .ok_or_else(|| Error::InvalidConfig("image size not given and not recorded in dataset.json".into()))?;
        Self::new(&dir.join(&meta.manifest), meta.pose, meta.expression, size)
    }

    pub fn image(&self, row: &ManifestRow) -> Result<Arc<Image>> {
        let path = self.root.join(&row.path);
        if let Some(img) = self.cache.lock().expect("cache poisoned").get(&path) {
            return Ok(img.clone());
        }
        let img = Arc::new(Image::load(&path, self.image_size)?);
        self.cache.lock().expect("cache poisoned").insert(path, img.clone());
        Ok(img)
    }

    pub fn find(&self, subject: &str, pose: usize, expression: usize) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.subject_id == subject && r.pose == pose && r.expression == expression)
    }

    pub fn stage_schema(&self, stage: StageKind) -> AttributeSchema {
        stage.schema(&self.pose, &self.expression)
    }

    /// Pairs `rows` for `stage` and loads the images.
    pub fn records(&self, rows: &[ManifestRow], stage: StageKind, filter: StageFilter, include_identity: bool) -> Result<Vec<SampleRecord>> {
        let pairs = pair_for_stage(rows, &self.pose, &self.expression, stage, filter, include_identity)?;
        pairs
            .into_iter()
            .map(|p| {
                let (src, tgt) = (&rows[p.source], &rows[p.target]);
                Ok(SampleRecord {
                    input: self.image(src)?,
                    target: self.image(tgt)?,
                    condition: p.condition,
                    subject_id: p.subject_id,
                    source_attrs: (src.pose, src.expression),
                    target_attrs: (tgt.pose, tgt.expression),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(name: &str, k: usize, neutral: usize) -> AttributeSchema {
        AttributeSchema::new(name, (0..k).map(|i| format!("{name}{i}")).collect(), neutral).unwrap()
    }

    fn grid_rows(subjects: &[&str], kp: usize, ke: usize) -> Vec<ManifestRow> {
        let mut rows = Vec::new();
        for s in subjects {
            for p in 0..kp {
                for e in 0..ke {
                    rows.push(ManifestRow { subject_id: s.to_string(), pose: p, expression: e, path: format!("{s}_{p}_{e}.png").into() });
                }
            }
        }
        rows
    }

    #[test]
    fn schema_invariants() {
        assert!(AttributeSchema::new("pose", vec![], 0).is_err());
        assert!(AttributeSchema::new("pose", vec!["a".into(), "a".into()], 0).is_err());
        assert!(AttributeSchema::new("pose", vec!["a".into()], 1).is_err());
        let k = AttributeSchema::kdef_expression();
        assert_eq!(k.categories[k.neutral_index], "neutral");
    }

    #[test]
    fn one_hot_sums_to_one() {
        let c = ConditionVector::one_hot(2, 5).unwrap();
        let v = c.encoding();
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(ConditionVector::one_hot(5, 5).is_err());
    }

    #[test]
    fn fei_style_pose_pairs() {
        // 1 frontal + 10 poses, single expression
        let pose = schema("pose", 11, 5);
        let expr = schema("expr", 1, 0);
        let rows = grid_rows(&["a", "b"], 11, 1);
        let pairs = pair_for_stage(&rows, &pose, &expr, StageKind::Pose, StageFilter::default(), false).unwrap();
        assert_eq!(pairs.len(), 2 * 10);
        assert!(pairs.iter().all(|p| p.condition.dim() == 11));
        assert!(pairs.iter().all(|p| p.condition.index() != 5));
    }

    #[test]
    fn kdef_style_pose_pairs_fixed_expression() {
        let pose = AttributeSchema::kdef_pose();
        let expr = AttributeSchema::kdef_expression();
        let rows = grid_rows(&["s"], 5, 7);
        let pairs = pair_for_stage(&rows, &pose, &expr, StageKind::Pose, StageFilter::default(), false).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(rows[p.target].expression, 4);
            assert_eq!(rows[p.source].pose, 2);
        }
    }

    #[test]
    fn yale_style_identity_pairs() {
        let pose = schema("pose", 1, 0);
        let expr = schema("expr", 6, 0);
        let rows = grid_rows(&["y"], 1, 6);
        let without = pair_for_stage(&rows, &pose, &expr, StageKind::Expression, StageFilter::default(), false).unwrap();
        assert_eq!(without.len(), 5);
        let with = pair_for_stage(&rows, &pose, &expr, StageKind::Expression, StageFilter::default(), true).unwrap();
        assert_eq!(with.len(), 6);
        assert_eq!(with.iter().filter(|p| p.source == p.target).count(), 1);
    }

    #[test]
    fn pairing_count_is_subjects_times_k_minus_one() {
        let pose = schema("pose", 5, 2);
        let expr = schema("expr", 7, 3);
        let rows = grid_rows(&["a", "b", "c"], 5, 7);
        let n = pair_for_stage(&rows, &pose, &expr, StageKind::Pose, StageFilter::default(), false).unwrap().len();
        assert_eq!(n, 3 * 4);
        let n = pair_for_stage(&rows, &pose, &expr, StageKind::Expression, StageFilter { pose: Some(2), expression: None }, false)
            .unwrap()
            .len();
        assert_eq!(n, 3 * 6);
        let n = pair_for_stage(&rows, &pose, &expr, StageKind::Joint, StageFilter::default(), false).unwrap().len();
        assert_eq!(n, 3 * 34);
    }

    #[test]
    fn missing_source_lists_subjects() {
        let pose = schema("pose", 3, 1);
        let expr = schema("expr", 1, 0);
        let mut rows = grid_rows(&["a", "b", "c"], 3, 1);
        rows.retain(|r| !(r.subject_id != "b" && r.pose == 1));
        let err = pair_for_stage(&rows, &pose, &expr, StageKind::Pose, StageFilter::default(), false).unwrap_err();
        match err {
            Error::MissingSource(ids) => assert_eq!(ids, vec!["a".to_string(), "c".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_target_is_skipped() {
        let pose = schema("pose", 3, 1);
        let expr = schema("expr", 1, 0);
        let mut rows = grid_rows(&["a"], 3, 1);
        rows.retain(|r| r.pose != 2);
        let pairs = pair_for_stage(&rows, &pose, &expr, StageKind::Pose, StageFilter::default(), false).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn split_70_subjects() {
        let ids: Vec<String> = (0..70).map(|i| format!("s{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rows = grid_rows(&refs, 5, 7);
        // one session; the full set has two sessions (4900 images)
        assert_eq!(rows.len(), 2450);
        let (tr, te) = split_subjects(&rows, 0.8, 11).unwrap();
        assert_eq!(subjects(&tr).len(), 56);
        assert_eq!(subjects(&te).len(), 14);
        let a: HashSet<String> = subjects(&tr).into_iter().collect();
        assert!(subjects(&te).iter().all(|s| !a.contains(s)));
        let (tr2, _) = split_subjects(&rows, 0.8, 11).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn split_two_subjects_half() {
        let rows = grid_rows(&["a", "b"], 1, 1);
        let (tr, te) = split_subjects(&rows, 0.5, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert!(split_subjects(&grid_rows(&["a"], 1, 1), 0.5, 0).is_err());
        assert!(split_subjects(&rows, 1.0, 0).is_err());
    }

    #[test]
    fn manifest_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let pose = schema("pose", 2, 0);
        let expr = schema("expr", 2, 0);
        std::fs::write(dir.path().join("a.png"), b"x").unwrap();
        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, format!("subject_id,pose,expression,path\n{body}")).unwrap();
            p
        };

        assert!(load_manifest(&write("empty.csv", ""), &pose, &expr).unwrap().is_empty());
        let ok = load_manifest(&write("ok.csv", "s,pose1,expr0,a.png\n"), &pose, &expr).unwrap();
        assert_eq!(ok[0].pose, 1);

        let e = load_manifest(&write("u.csv", "s,pose9,expr0,a.png\n"), &pose, &expr).unwrap_err();
        assert!(matches!(e, Error::UnknownCategory { .. }), "{e}");
        let e = load_manifest(&write("d.csv", "s,pose1,expr0,a.png\ns,pose1,expr0,a.png\n"), &pose, &expr).unwrap_err();
        assert!(matches!(e, Error::DuplicateRow { .. }), "{e}");
        let e = load_manifest(&write("m.csv", "s,pose1,expr0,nope.png\n"), &pose, &expr).unwrap_err();
        assert!(matches!(e, Error::MissingImage(_)), "{e}");
        let e = load_manifest(&dir.path().join("absent.csv"), &pose, &expr).unwrap_err();
        assert!(matches!(e, Error::MissingFile(_)), "{e}");
    }
}

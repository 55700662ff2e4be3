//! PSNR / MSE / RMSE metrics, directory evaluation and method comparison tables.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Reference rows (method, P-SNR dB, MSE, R-MSE) of the multi-attribute KDEF comparison.
pub const REFERENCE_TABLE: [(&str, f64, f64, f64); 8] = [
    ("Ours", 17.0296, 0.01394, 0.1158),
    ("PE + Cascade +GP", 16.9893, 0.01411, 0.1163),
    ("PE + Cascade", 16.8210, 0.01451, 0.1183),
    ("PE + GP", 16.9636, 0.01410, 0.1166),
    ("PE", 16.4461, 0.01586, 0.1237),
    ("EP+GP", 16.5461, 0.01547, 0.1222),
    ("EP", 16.4180, 0.01557, 0.1236),
    ("Pix2pix", 17.0004, 0.01556, 0.1230),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// `+inf` when the images are identical.
    pub psnr_db: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// Metrics over all pixels and channels with peak value 1.
pub fn image_metrics(generated: &Image, target: &Image) -> Result<ImageMetrics> {
    if generated.shape() != target.shape() {
        return Err(Error::ShapeMismatch { context: "image metrics".into(), expected: target.shape().to_vec(), actual: generated.shape().to_vec() });
    }
    let n = generated.data().len();
    let sum: f64 = generated.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(metrics_from_mse(sum / n as f64))
}

pub fn metrics_from_mse(mse: f64) -> ImageMetrics {
    let psnr_db = if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() };
    ImageMetrics { psnr_db, mse, rmse: mse.sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: String,
    pub psnr_db: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// Per-image metrics and their means (PSNR capped before averaging).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<PairMetrics>,
    pub aggregate: ImageMetrics,
    pub n_pairs: usize,
}

impl MetricsReport {
    pub fn from_pairs(per_image: Vec<PairMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("metrics report".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&PairMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let aggregate = ImageMetrics {
            psnr_db: mean(|p| p.psnr_db.min(PSNR_CAP_DB)),
            mse: mean(|p| p.mse),
            rmse: mean(|p| p.rmse),
        };
        Ok(MetricsReport { n_pairs: per_image.len(), per_image, aggregate })
    }

    /// Scores `(pair id, generated, target)` triples.
    pub fn from_images<'a>(pairs: impl IntoIterator<Item = (String, &'a Image, &'a Image)>) -> Result<Self> {
        let per = pairs
            .into_iter()
            .map(|(id, g, t)| {
                let m = image_metrics(g, t)?;
                Ok(PairMetrics { pair_id: id, psnr_db: m.psnr_db, mse: m.mse, rmse: m.rmse })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(per)
    }

    /// `pair_id,psnr_db,mse,rmse`, PSNR capped.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair_id", "psnr_db", "mse", "rmse"])?;
        for p in &self.per_image {
            w.write_record([p.pair_id.clone(), p.psnr_db.min(PSNR_CAP_DB).to_string(), p.mse.to_string(), p.rmse.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let per = r.deserialize().collect::<std::result::Result<Vec<PairMetrics>, _>>()?;
        Self::from_pairs(per)
    }
}

/// One line of a pairs manifest: `pair_id,generated,target` (paths relative
/// to the generated and target directories).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub generated: PathBuf,
    pub target: PathBuf,
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<PairEntry>, _>>()?)
}

pub fn write_pairs(path: &Path, pairs: &[PairEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_native(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(Image::from_rgb8(&img.to_rgb8()))
}

/// Scores every pair listed in `pairs`, or, without a list, every PNG in
/// `generated_dir` against the file of the same name in `target_dir`.
/// All missing files are reported together.
pub fn evaluate_pairs(generated_dir: &Path, target_dir: &Path, pairs: Option<&[PairEntry]>) -> Result<MetricsReport> {
    let listed: Vec<PairEntry> = match pairs {
        Some(p) => p.to_vec(),
        None => {
            let mut names: Vec<String> = fs::read_dir(generated_dir)
                .map_err(|e| Error::io(generated_dir, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".png"))
                .collect();
            names.sort();
            names
                .into_iter()
                .map(|n| PairEntry { pair_id: n.trim_end_matches(".png").to_string(), generated: n.clone().into(), target: n.into() })
                .collect()
        }
    };
    if listed.is_empty() {
        return Err(Error::Empty(format!("no image pairs under {}", generated_dir.display())));
    }
    let missing: Vec<String> = listed
        .iter()
        .filter(|p| !generated_dir.join(&p.generated).exists() || !target_dir.join(&p.target).exists())
        .map(|p| p.pair_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPairs(missing));
    }
    let mut per = Vec::with_capacity(listed.len());
    for p in &listed {
        let g = load_native(&generated_dir.join(&p.generated))?;
        let t = load_native(&target_dir.join(&p.target))?;
        let m = image_metrics(&g, &t)?;
        per.push(PairMetrics { pair_id: p.pair_id.clone(), psnr_db: m.psnr_db, mse: m.mse, rmse: m.rmse });
    }
    MetricsReport::from_pairs(per)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub psnr_db: f64,
    pub mse: f64,
    pub rmse: f64,
}

impl AblationRow {
    /// P-SNR with 4 decimals, MSE with 5, R-MSE with 4.
    pub fn formatted(&self) -> [String; 3] {
        [format!("{:.4}", self.psnr_db), format!("{:.5}", self.mse), format!("{:.4}", self.rmse)]
    }
}

/// Method comparison table in the input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_report(entries: &[(String, MetricsReport)]) -> Result<AblationTable> {
    AblationTable::new(
        entries
            .iter()
            .map(|(m, r)| AblationRow { method: m.clone(), psnr_db: r.aggregate.psnr_db, mse: r.aggregate.mse, rmse: r.aggregate.rmse })
            .collect(),
    )
}

impl AblationTable {
    pub fn new(rows: Vec<AblationRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("ablation table".into()));
        }
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.method.as_str()) {
                return Err(Error::DuplicateMethod(r.method.clone()));
            }
        }
        Ok(AblationTable { rows })
    }

    pub fn reference() -> Self {
        let rows = REFERENCE_TABLE
            .iter()
            .map(|&(m, p, s, r)| AblationRow { method: m.to_string(), psnr_db: p, mse: s, rmse: r })
            .collect();
        AblationTable { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("Method,P-SNR,MSE,R-MSE\n");
        for r in &self.rows {
            let [p, m, e] = r.formatted();
            let name = if r.method.contains([',', '"']) { format!("\"{}\"", r.method.replace('"', "\"\"")) } else { r.method.clone() };
            writeln!(out, "{name},{p},{m},{e}").expect("writing to String");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Method | P-SNR | MSE | R-MSE |\n|---|---|---|---|\n");
        for r in &self.rows {
            let [p, m, e] = r.formatted();
            writeln!(out, "| {} | {p} | {m} | {e} |", r.method).expect("writing to String");
        }
        out
    }

    /// Space-aligned columns for terminals.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 4]> = std::iter::once(["Method".into(), "P-SNR".into(), "MSE".into(), "R-MSE".into()])
            .chain(self.rows.iter().map(|r| {
                let [p, m, e] = r.formatted();
                [r.method.clone(), p, m, e]
            }))
            .collect();
        let widths: Vec<usize> = (0..4).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                row[0],
                row[1],
                row[2],
                row[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    /// Writes `{stem}.csv` and `{stem}.md` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let md_path = dir.join(format!("{stem}.md"));
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        fs::write(&md_path, self.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
        Ok((csv_path, md_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 4, 4);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!((m.mse, m.rmse), (0.0, 0.0));
        assert!(m.psnr_db.is_infinite());
        let r = MetricsReport::from_images([("a".to_string(), &a, &a)]).unwrap();
        assert_eq!(r.aggregate.psnr_db, PSNR_CAP_DB);
    }

    #[test]
    fn constant_offset() {
        let a = Image::filled(4, 4, 0.3);
        let b = Image::filled(4, 4, 0.4);
        let m = image_metrics(&b, &a).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-12);
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!((m.psnr_db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn matches_loop_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 4, 4);
        let b = random_image(&mut rng, 4, 4);
        let mut s = 0.0;
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    s += (a.get(c, y, x) - b.get(c, y, x)).powi(2);
                }
            }
        }
        let mse = s / 48.0;
        let m = image_metrics(&a, &b).unwrap();
        assert!((m.mse - mse).abs() < 1e-12);
        assert!((m.rmse - mse.sqrt()).abs() < 1e-12);
        assert!((m.psnr_db + 10.0 * mse.log10()).abs() < 1e-9);
        assert_eq!(m, image_metrics(&b, &a).unwrap());
        assert!(image_metrics(&a, &Image::filled(2, 2, 0.0)).is_err());
    }

    #[test]
    fn golden_row_formatting() {
        let t = AblationTable::reference();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.to_csv().lines().nth(1).unwrap(), "Ours,17.0296,0.01394,0.1158");
        assert_eq!(t.to_markdown().lines().nth(2).unwrap(), "| Ours | 17.0296 | 0.01394 | 0.1158 |");
        assert_eq!(t.to_csv().lines().nth(3).unwrap(), "PE + Cascade,16.8210,0.01451,0.1183");
        for r in &t.rows {
            assert!(r.rmse <= r.mse.sqrt());
        }
        let text = t.to_text();
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn duplicate_methods_rejected() {
        let row = AblationRow { method: "PE".into(), psnr_db: 1.0, mse: 0.1, rmse: 0.3 };
        assert!(matches!(AblationTable::new(vec![row.clone(), row.clone()]), Err(Error::DuplicateMethod(_))));
        assert_eq!(AblationTable::new(vec![row]).unwrap().rows.len(), 1);
        assert!(AblationTable::new(vec![]).is_err());
    }

    #[test]
    fn directory_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let (g, t) = (dir.path().join("g"), dir.path().join("t"));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..3 {
            let img = random_image(&mut rng, 8, 8);
            img.save_png(&g.join(format!("p{i}.png"))).unwrap();
            img.save_png(&t.join(format!("p{i}.png"))).unwrap();
        }
        let r = evaluate_pairs(&g, &t, None).unwrap();
        assert_eq!(r.n_pairs, 3);
        assert_eq!(r.aggregate.mse, 0.0);
        fs::remove_file(t.join("p1.png")).unwrap();
        match evaluate_pairs(&g, &t, None) {
            Err(Error::MissingPairs(ids)) => assert_eq!(ids, vec!["p1".to_string()]),
            other => panic!("{other:?}"),
        }
        let csv = dir.path().join("r.csv");
        r.write_csv(&csv).unwrap();
        let back = MetricsReport::read_csv(&csv).unwrap();
        assert_eq!(back.n_pairs, 3);
        assert_eq!(fs::read_to_string(&csv).unwrap().lines().next().unwrap(), "pair_id,psnr_db,mse,rmse");
    }
}

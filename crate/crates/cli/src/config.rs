use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scrforge::config::KvFile;
use scrforge::eval::Threshold;
use scrforge::pipeline::PipelineConfig;
use scrforge::synth::SceneSpec;

use crate::Command;

/// Paths plus every module configuration, read from one file.
///
/// Keys beyond the library's pipeline keys:
/// - `scene.*`: scene generator keys for `synth`
/// - `paths.out` (default `.`) and `paths.dataset` (default `<out>/dataset`)
/// - `paths.graph`, `paths.encodings`, `paths.checkpoint`, `paths.pq`,
///   `paths.metrics`, `paths.results`, `paths.pointcloud`: default to fixed
///   names inside `<out>`
/// - `paths.gt`: ground-truth query poses for `eval`, default
///   `<dataset>/query_poses.txt`
/// - `eval.thresholds`: `outdoor` (default) or `indoor`
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: PathBuf,
    pub dataset: PathBuf,
    pub graph: PathBuf,
    pub encodings: PathBuf,
    pub checkpoint: PathBuf,
    pub pq: PathBuf,
    pub metrics: PathBuf,
    pub results: PathBuf,
    pub pointcloud: PathBuf,
    pub gt: PathBuf,
    pub thresholds: Vec<Threshold>,
    pub scene: SceneSpec,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, seed, out)
    }

    pub fn parse(text: &str, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let mut scene_kv = kv.take_prefix("scene.");
        if let Some(s) = seed {
            kv.insert("seed", s);
            scene_kv.insert("seed", s);
        }
        let scene = SceneSpec::from_kv(&mut scene_kv)?;
        scene_kv.finish().context("scene keys")?;

        let out = match out {
            Some(p) => p.to_path_buf(),
            None => kv.get::<PathBuf>("paths.out")?.unwrap_or_else(|| PathBuf::from(".")),
        };
        // `paths.out` is always consumed, even when overridden.
        let _ = kv.get::<PathBuf>("paths.out")?;
        let mut path = |key: &str, default: PathBuf| -> Result<PathBuf> { Ok(kv.get::<PathBuf>(key)?.unwrap_or(default)) };
        let dataset = path("paths.dataset", out.join("dataset"))?;
        let graph = path("paths.graph", out.join("graph.txt"))?;
        let encodings = path("paths.encodings", out.join("encodings.bin"))?;
        let checkpoint = path("paths.checkpoint", out.join("model.ckpt"))?;
        let pq = path("paths.pq", out.join("retrieval.pq"))?;
        let metrics = path("paths.metrics", out.join("metrics.csv"))?;
        let results = path("paths.results", out.join("results.csv"))?;
        let pointcloud = path("paths.pointcloud", out.join("points.ply"))?;
        let gt = path("paths.gt", dataset.join("query_poses.txt"))?;
        let thresholds = scrforge::eval::preset(&kv.get_or("eval.thresholds", "outdoor".to_string())?)?;
        let pipeline = PipelineConfig::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(Self { out, dataset, graph, encodings, checkpoint, pq, metrics, results, pointcloud, gt, thresholds, scene, pipeline })
    }

    /// Inputs each subcommand reads must exist before it starts.
    pub fn check_inputs(&self, command: Command) -> Result<()> {
        let dataset = self.dataset.join("scene.txt");
        let needed: Vec<&Path> = match command {
            Command::Synth => vec![],
            Command::Graph => vec![&dataset],
            Command::Embed => vec![&self.graph],
            Command::Train => vec![&dataset, &self.encodings, &self.graph],
            Command::Localize => vec![&dataset, &self.checkpoint, &self.encodings, &self.pq],
            Command::Eval => vec![&self.results, &self.gt],
            Command::Export => vec![&dataset, &self.checkpoint, &self.encodings],
        };
        for p in needed {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("paths.out=run\nscene.n_points=40\nmodel.width=64\n", Some(5), None).unwrap();
        assert_eq!(c.dataset, PathBuf::from("run/dataset"));
        assert_eq!(c.gt, PathBuf::from("run/dataset/query_poses.txt"));
        assert_eq!((c.scene.n_points, c.scene.seed, c.pipeline.seed, c.pipeline.train.seed), (40, 5, 5, 5));
        let c = RunConfig::parse("paths.out=run\n", None, Some(Path::new("elsewhere"))).unwrap();
        assert_eq!(c.checkpoint, PathBuf::from("elsewhere/model.ckpt"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("paths.outt=run\n", None, None).is_err());
        assert!(RunConfig::parse("scene.n_pointz=3\n", None, None).is_err());
        assert!(RunConfig::parse("eval.thresholds=lunar\n", None, None).is_err());
    }
}

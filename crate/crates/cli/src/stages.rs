use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use relbn::count::{Backend, Builtin, ContingencyTable, CountSource, Counter, OnDemand, Precount, Sqlite};
use relbn::dataset::Dataset;
use relbn::learn::learn;
use relbn::model::Model;
use relbn::predict::{
    benchmark_block_vs_single, evaluate, read_test_split, write_test_split, Distribution, PredictionTask, Predictor,
};
use relbn::schema::{analyze, Vdb};
use relbn::synth::{generate, test_split, SyntheticSpec};
use serde_json::json;

use crate::config::{CountMode, PipelineConfig};
use crate::workspace::{hash_tree, prepare_dir, sha256_file, write_json, Stage, StageManifest, Workspace};
use crate::Failure;

const JOINT_CT: &str = "joint_CT.csv";

fn canonical(path: &Path) -> Result<PathBuf, Failure> {
    path.canonicalize()
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Failure::Invalid(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

enum AnyBackend<'a> {
    Builtin(Builtin<'a>),
    Sqlite(Sqlite),
}

impl<'a> AnyBackend<'a> {
    fn open(spec: &str, data: &'a Dataset) -> Result<AnyBackend<'a>, Failure> {
        if spec == "builtin" {
            Ok(AnyBackend::Builtin(Builtin::new(data)))
        } else {
            Ok(AnyBackend::Sqlite(Sqlite::connect(spec, data)?))
        }
    }

    fn get(&self) -> &dyn Backend {
        match self {
            AnyBackend::Builtin(b) => b,
            AnyBackend::Sqlite(s) => s,
        }
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub ws: Workspace,
}

/// Dataset and VDB rebuilt from the manifest path recorded by `analyze`.
struct Loaded {
    data: Dataset,
    vdb: Vdb,
    upstream: BTreeMap<&'static str, StageManifest>,
}

impl Pipeline {
    fn load(&self, stage: Stage) -> Result<Loaded, Failure> {
        let upstream = self.ws.require_upstream(stage)?;
        let manifest = upstream["analyze"].config["manifest"]
            .as_str()
            .ok_or_else(|| Failure::Invalid("vdb/manifest.json does not record a dataset manifest".into()))?;
        let data = Dataset::load(Path::new(manifest))?;
        let vdb = analyze(&data)?;
        Ok(Loaded { data, vdb, upstream })
    }

    fn upstream_input(&self, stage: Stage) -> Result<BTreeMap<String, String>, Failure> {
        let path = self.ws.stage_dir(stage).join("manifest.json");
        Ok([self.ws.input(&path)?].into())
    }

    pub fn analyze(&self) -> Result<(), Failure> {
        let manifest = self
            .config
            .manifest
            .as_ref()
            .ok_or_else(|| Failure::Invalid("analyze needs a dataset manifest (--manifest)".into()))?;
        let manifest = canonical(manifest)?;
        let data = Dataset::load(&manifest)?;
        let vdb = analyze(&data)?;
        let dir = self.ws.begin(Stage::Analyze)?;
        vdb.export(&dir)?;

        let mut inputs = BTreeMap::new();
        inputs.insert(manifest.to_string_lossy().into_owned(), sha256_file(&manifest)?);
        let root = manifest.parent().unwrap_or(Path::new("/"));
        for t in &data.manifest().tables {
            let p = root.join(&t.file);
            inputs.insert(p.to_string_lossy().into_owned(), sha256_file(&p)?);
        }
        let config = json!({ "manifest": manifest.to_string_lossy() });
        self.ws.finish(Stage::Analyze, inputs, config)?;
        println!(
            "analyze: {} par-RVs over {} first-order variables, {} excluded tables -> {}",
            vdb.ids().len(),
            vdb.pvariables.len(),
            vdb.excluded_tables.len(),
            dir.display()
        );
        for (table, reason) in &vdb.excluded_tables {
            println!("  excluded {table}: {reason}");
        }
        Ok(())
    }

    pub fn count(&self) -> Result<(), Failure> {
        let l = self.load(Stage::Count)?;
        let backend = AnyBackend::open(&self.config.backend, &l.data)?;
        let counter = Counter::new(&l.vdb, backend.get()).with_log();
        let mode = self.config.count_mode;
        let joint = match mode {
            CountMode::Precount => Some(counter.joint_ct(self.config.max_joint_rows)?),
            CountMode::OnDemand => None,
        };
        let dir = self.ws.begin(Stage::Count)?;
        if let Some(joint) = &joint {
            joint.write_csv(&dir.join(JOINT_CT))?;
            let sql = dir.join("sql");
            fs::create_dir_all(&sql).map_err(|e| Failure::Invalid(format!("{}: {e}", sql.display())))?;
            let log = counter.take_log();
            let text: String = log.iter().map(|q| format!("{q};\n")).collect();
            fs::write(sql.join("joint.sql"), text).map_err(|e| Failure::Invalid(e.to_string()))?;
        }
        let config = json!({
            "count_mode": mode,
            "backend": self.config.backend,
            "max_joint_rows": self.config.max_joint_rows,
        });
        self.ws.finish(Stage::Count, self.upstream_input(Stage::Analyze)?, config)?;
        match joint {
            Some(j) => println!(
                "count: joint table with {} rows over {} groundings ({} queries) -> {}",
                j.len(),
                j.total(),
                counter.queries_executed(),
                dir.display()
            ),
            None => println!("count: on-demand mode, family tables are counted during learning"),
        }
        Ok(())
    }

    pub fn learn(&self) -> Result<(), Failure> {
        let l = self.load(Stage::Learn)?;
        let mode: CountMode = serde_json::from_value(l.upstream["count"].config["count_mode"].clone())
            .map_err(|e| Failure::Invalid(format!("cdb/manifest.json: {e}")))?;
        let backend = AnyBackend::open(&self.config.backend, &l.data)?;
        let scope = self.config.learn.count_scope;
        let source: Box<dyn CountSource> = match mode {
            CountMode::Precount => {
                let path = self.ws.stage_dir(Stage::Count).join(JOINT_CT);
                Box::new(Precount::new(&l.vdb, ContingencyTable::read_csv(&path)?, scope))
            }
            CountMode::OnDemand => Box::new(OnDemand::new(Counter::new(&l.vdb, backend.get()), scope)),
        };
        let outcome = learn(source.as_ref(), &self.config.learn)?;
        let dir = self.ws.begin(Stage::Learn)?;
        outcome.model.persist(&dir)?;
        write_rows(
            &dir.join("steps.csv"),
            &["iteration", "op", "parent", "child", "delta", "total_aic"],
            outcome.steps.iter().map(|s| {
                vec![
                    s.iteration.to_string(),
                    s.mv.op.to_string(),
                    s.mv.parent.clone(),
                    s.mv.child.clone(),
                    float(s.delta),
                    float(s.total_aic),
                ]
            }),
        )?;
        let config = serde_json::to_value(&self.config.learn).map_err(|e| Failure::Invalid(e.to_string()))?;
        self.ws.finish(Stage::Learn, self.upstream_input(Stage::Count)?, config)?;
        let totals = outcome.model.totals();
        println!(
            "learn: {} edges after {} steps ({}), AIC {:.6} -> {}",
            outcome.model.bn.edges().len(),
            outcome.steps.len(),
            if outcome.converged { "converged" } else { "iteration limit" },
            totals.aic,
            dir.display()
        );
        Ok(())
    }

    fn with_predictor<T>(
        &self,
        stage: Stage,
        f: impl FnOnce(&Predictor<'_>) -> Result<T, Failure>,
    ) -> Result<T, Failure> {
        let l = self.load(stage)?;
        let model = Model::load(&self.ws.stage_dir(Stage::Learn), &l.vdb)?;
        let backend = AnyBackend::open(&self.config.backend, &l.data)?;
        let counter = Counter::new(&l.vdb, backend.get());
        let predictor = Predictor::new(&l.vdb, &model, &counter, self.config.predict.alpha)?;
        f(&predictor)
    }

    pub fn predict(&self, target: &str, entities: &[String]) -> Result<(), Failure> {
        let dists: Vec<(String, Distribution)> = self.with_predictor(Stage::Predict, |p| {
            if entities.is_empty() {
                Ok(p.predict_block(target)?.into_iter().collect())
            } else {
                entities
                    .iter()
                    .map(|e| {
                        let task = PredictionTask {
                            target: target.into(),
                            entity: e.clone(),
                        };
                        Ok((e.clone(), p.predict(&task)?))
                    })
                    .collect()
            }
        })?;
        let dir = self.ws.begin(Stage::Predict)?;
        write_rows(
            &dir.join("predictions.csv"),
            &["target", "entity", "label", "probability", "log_score"],
            dists.iter().flat_map(|(e, d)| {
                d.labels.iter().enumerate().map(move |(i, label)| {
                    vec![target.to_string(), e.clone(), label.clone(), float(d.probs[i]), float(d.log_scores[i])]
                })
            }),
        )?;
        let config = json!({
            "target": target,
            "entities": entities,
            "alpha": self.config.predict.alpha,
            "backend": self.config.backend,
        });
        self.ws.finish(Stage::Predict, self.upstream_input(Stage::Learn)?, config)?;
        println!("predict: {} entities for {target} -> {}", dists.len(), dir.display());
        Ok(())
    }

    fn test_inputs(&self, test: &Path) -> Result<BTreeMap<String, String>, Failure> {
        let mut inputs = self.upstream_input(Stage::Learn)?;
        let test = canonical(test)?;
        inputs.insert(test.to_string_lossy().into_owned(), sha256_file(&test)?);
        Ok(inputs)
    }

    pub fn evaluate(&self, test: &Path) -> Result<(), Failure> {
        let instances = read_test_split(test)?;
        let mode = self.config.predict.mode;
        let report = self.with_predictor(Stage::Evaluate, |p| Ok(evaluate(p, &instances, mode.into())?))?;
        let dir = self.ws.begin(Stage::Evaluate)?;
        write_rows(
            &dir.join("instances.csv"),
            &["target", "entity", "label", "predicted", "p_true"],
            report.results.iter().map(|r| {
                vec![
                    r.instance.target.clone(),
                    r.instance.entity.clone(),
                    r.instance.label.clone(),
                    r.predicted.clone(),
                    float(r.p_true),
                ]
            }),
        )?;
        write_rows(
            &dir.join("skipped.csv"),
            &["target", "entity", "label", "reason"],
            report.skipped.iter().map(|(i, why)| vec![i.target.clone(), i.entity.clone(), i.label.clone(), why.clone()]),
        )?;
        write_rows(
            &dir.join("summary.csv"),
            &["metric", "value"],
            [
                vec!["instances".into(), report.results.len().to_string()],
                vec!["skipped".into(), report.skipped.len().to_string()],
                vec!["cll".into(), float(report.cll)],
                vec!["accuracy".into(), float(report.accuracy)],
            ],
        )?;
        let config = json!({
            "test": canonical(test)?.to_string_lossy(),
            "alpha": self.config.predict.alpha,
            "mode": mode,
            "backend": self.config.backend,
        });
        self.ws.finish(Stage::Evaluate, self.test_inputs(test)?, config)?;
        println!(
            "evaluate: {} instances ({} skipped), CLL {:.6}, accuracy {:.4} -> {}",
            report.results.len(),
            report.skipped.len(),
            report.cll,
            report.accuracy,
            dir.display()
        );
        Ok(())
    }

    pub fn bench(&self, test: &Path) -> Result<(), Failure> {
        let instances = read_test_split(test)?;
        let report = self.with_predictor(Stage::Bench, |p| Ok(benchmark_block_vs_single(p, &instances)?))?;
        let dir = self.ws.begin(Stage::Bench)?;
        write_rows(
            &dir.join("bench.csv"),
            &["mode", "instances", "seconds"],
            [
                vec!["single".into(), report.instances.to_string(), format!("{:.6}", report.single_seconds)],
                vec!["block".into(), report.instances.to_string(), format!("{:.6}", report.block_seconds)],
            ],
        )?;
        write_rows(
            &dir.join("summary.csv"),
            &["metric", "value"],
            [
                vec!["speedup".into(), format!("{:.3}", report.speedup())],
                vec!["max_abs_diff".into(), format!("{:e}", report.max_abs_diff)],
            ],
        )?;
        let config = json!({
            "test": canonical(test)?.to_string_lossy(),
            "alpha": self.config.predict.alpha,
            "backend": self.config.backend,
        });
        self.ws.finish(Stage::Bench, self.test_inputs(test)?, config)?;
        println!(
            "bench: {} instances, single {:.3}s, block {:.3}s, speedup {:.1}x -> {}",
            report.instances,
            report.single_seconds,
            report.block_seconds,
            report.speedup(),
            dir.display()
        );
        Ok(())
    }

    pub fn synth(&self, spec_path: &Path, out: &Path) -> Result<(), Failure> {
        let text = fs::read_to_string(spec_path)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", spec_path.display())))?;
        let mut spec = SyntheticSpec::parse(&text)?;
        if let Some(seed) = self.config.seed {
            spec.seed = seed;
        }
        let data = generate(&spec)?;
        prepare_dir(out, self.ws.overwrite())?;
        let manifest = data.write_to(out)?;
        fs::write(out.join("spec.toml"), spec.to_toml()).map_err(|e| Failure::Invalid(e.to_string()))?;
        let mut tests = 0;
        if spec.test.is_some() {
            let vdb = analyze(&data)?;
            let instances = test_split(&spec, &data, &vdb)?;
            tests = instances.len();
            write_test_split(&out.join("test.csv"), &instances)?;
        }
        let record = StageManifest {
            stage: "synth".into(),
            inputs: [(canonical(spec_path)?.to_string_lossy().into_owned(), sha256_file(spec_path)?)].into(),
            config: json!({ "seed": spec.seed }),
            outputs: hash_tree(out)?,
        };
        write_json(&out.join("manifest.json"), &record)?;
        let tuples: usize = data.tables().iter().map(|t| t.num_rows()).sum();
        println!(
            "synth: {} tables, {tuples} tuples, {tests} test instances -> {}",
            data.tables().len(),
            manifest.display()
        );
        Ok(())
    }
}

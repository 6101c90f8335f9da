use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hoi_core::config::Config;
use hoi_core::error::{Error, Result};
use hoi_core::eval::map_role;
use hoi_core::features::encode_image;
use hoi_core::formats::{
    load_detections, load_params, read_json, save_params, write_json, write_tensors, AnnotationFile, ScoreFixture,
    Tensor, TripletFile,
};
use hoi_core::head::{pair_accuracy, train_toy, HeadDims, PairFeatures};
use hoi_core::pipeline::{build_training_pairs, run_inference, Scorer};
use hoi_core::regroup::{compute_exclusive_prior, ExclusivePrior};
use hoi_core::scenes::{generate_scenes, SceneSpec};
use hoi_core::visualize::render_svg;

#[derive(Parser)]
#[command(name = "hoi", version, about = "Human-object interaction post-processing")]
struct Cli {
    /// JSON config; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the per-action exclusive-object prior from annotations.
    Prior {
        annotations: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Encode every human-object pair into raw head inputs.
    Encode {
        detections: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the scoring head on detected pairs labelled from annotations.
    TrainToy {
        detections: PathBuf,
        annotations: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score, select, and regroup triplets.
    Infer {
        detections: PathBuf,
        /// Trained head parameters (with a `.json` manifest beside them).
        #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
        params: Option<PathBuf>,
        /// Precomputed head scores instead of a trained head.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        no_regroup: bool,
        #[arg(long)]
        s_min: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Role mAP of triplet detections against annotations.
    Eval {
        detections: PathBuf,
        annotations: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write precision/recall points as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// Draw triplets over the detection boxes, one SVG per image.
    Visualize {
        triplets: PathBuf,
        detections: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min_score: f64,
    },
    /// Generate synthetic detections, annotations, and head scores.
    GenScenes {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Makes the feature geometry follow a parameter file's dimensions.
fn align_config(cfg: &mut Config, dims: &HeadDims) {
    cfg.channels = dims.channels;
    cfg.holistic_res = dims.holistic_res;
    cfg.part_res = dims.part_res;
    cfg.spatial_res = dims.spatial_res;
    cfg.grid_size = dims.object_grid;
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Prior {
            annotations,
            output,
            beta,
        } => {
            if let Some(b) = beta {
                cfg.beta = b;
            }
            cfg.validate()?;
            let ann = AnnotationFile::load(&annotations)?;
            let prior = compute_exclusive_prior(ann.pair_instances(), &ann.action_ids(), cfg.beta)?;
            write_json(&output, &prior)?;
            let names: Vec<&str> = prior
                .exclusive_actions()
                .iter()
                .map(|&a| ann.actions[a as usize].as_str())
                .collect();
            eprintln!(
                "{} of {} actions are object-exclusive: {}",
                names.len(),
                ann.actions.len(),
                names.join(", ")
            );
        }
        Command::Encode { detections, output } => {
            cfg.validate()?;
            let dets = load_detections(&detections, &cfg)?;
            let dims = cfg.head_dims(1);
            let person = dets.person_category();
            let mut tensors = Vec::new();
            for rec in &dets.images {
                let feats = encode_image(rec, person, &cfg, &dims)?;
                let (nh, no) = (rec.humans(person).len(), rec.objects(person).len());
                let flat: Vec<f64> = feats.iter().flat_map(PairFeatures::flatten).collect();
                tensors.push(Tensor::from_f64(
                    rec.image_id.clone(),
                    vec![nh, no, PairFeatures::flat_len(&dims)],
                    &flat,
                ));
            }
            write_tensors(&output, &tensors)?;
            let layout: Vec<serde_json::Value> = PairFeatures::layout(&dims)
                .into_iter()
                .map(|(name, len)| serde_json::json!({"name": name, "len": len}))
                .collect();
            write_json(
                &output.with_extension("json"),
                &serde_json::json!({"format": "hoi-pair-features/1", "dims": dims, "layout": layout}),
            )?;
            eprintln!("encoded {} images", tensors.len());
        }
        Command::TrainToy {
            detections,
            annotations,
            output,
            steps,
            seed,
        } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let dets = load_detections(&detections, &cfg)?;
            let ann = AnnotationFile::load(&annotations)?;
            let data = build_training_pairs(&dets, &ann, &cfg)?;
            let dims = cfg.head_dims(ann.actions.len());
            let outcome = train_toy(&data, dims, &cfg.train)?;
            let acc = pair_accuracy(&outcome.params, &data)?;
            save_params(&output, &outcome.params, &ann.actions)?;
            eprintln!(
                "{} pairs, loss {:.4} -> {:.4}, pair accuracy {:.3}",
                data.len(),
                outcome.initial_loss,
                outcome.final_loss,
                acc
            );
        }
        Command::Infer {
            detections,
            params,
            scores,
            prior,
            no_regroup,
            s_min,
            output,
        } => {
            if no_regroup {
                cfg.regroup = false;
            }
            if let Some(s) = s_min {
                cfg.s_min = s;
            }
            let prior: ExclusivePrior = match prior {
                Some(p) => read_json(&p)?,
                None if !cfg.regroup => ExclusivePrior::default(),
                None => return Err(Error::validation("regrouping needs --prior (or pass --no-regroup)")),
            };
            let (triplets, actions) = if let Some(p) = params {
                let (params, manifest) = load_params(&p)?;
                align_config(&mut cfg, &params.dims);
                cfg.validate()?;
                let dets = load_detections(&detections, &cfg)?;
                (
                    run_inference(&dets, Scorer::Head(&params), &prior, &cfg)?,
                    manifest.actions,
                )
            } else {
                let fixture: ScoreFixture = read_json(scores.as_deref().expect("clap enforces one source"))?;
                cfg.validate()?;
                let dets = load_detections(&detections, &cfg)?;
                (
                    run_inference(&dets, Scorer::Fixture(&fixture), &prior, &cfg)?,
                    fixture.actions,
                )
            };
            let n = triplets.len();
            TripletFile {
                actions,
                detections: triplets,
            }
            .save(&output)?;
            eprintln!("wrote {n} triplets");
        }
        Command::Eval {
            detections,
            annotations,
            output,
            pr_csv,
        } => {
            let dets = TripletFile::load(&detections)?;
            let ann = AnnotationFile::load(&annotations)?;
            if dets.actions != ann.actions {
                return Err(Error::validation(
                    "detections and annotations use different action vocabularies",
                ));
            }
            let result = map_role(&dets.detections, &ann.ground_truth(), &ann.action_ids())?;
            write_json(&output, &result)?;
            if let Some(csv_path) = pr_csv {
                let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
                result.write_pr_csv(file)?;
            }
            for (a, ap) in &result.per_action {
                if ap.counted {
                    println!("{:<24} AP {:.4}  (npos {})", ann.actions[*a as usize], ap.ap, ap.npos);
                }
            }
            println!("mAP_role {:.4}", result.map_role);
        }
        Command::Visualize {
            triplets,
            detections,
            output,
            min_score,
        } => {
            let trips = TripletFile::load(&triplets)?;
            let dets = load_detections(&detections, &cfg)?;
            create_dir(&output)?;
            let person = dets.person_category();
            for rec in &dets.images {
                let mine: Vec<_> = trips.detections.iter().filter(|t| t.image_id == rec.image_id).collect();
                let svg = render_svg(rec, &mine, &trips.actions, person, min_score);
                let name: String = rec
                    .image_id
                    .chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                            c
                        } else {
                            '_'
                        }
                    })
                    .collect();
                let path = output.join(format!("{name}.svg"));
                fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            }
            eprintln!("wrote {} overlays", dets.images.len());
        }
        Command::GenScenes { spec, output } => {
            let spec: SceneSpec = read_json(&spec)?;
            let scenes = generate_scenes(&spec)?;
            create_dir(&output)?;
            scenes.detections.save(&output.join("detections.json"))?;
            write_json(&output.join("annotations.json"), &scenes.annotations)?;
            write_json(&output.join("scores.json"), &scenes.scores)?;
            eprintln!("generated {} scenes", scenes.detections.images.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use speckle_auth::dataset::CrpDatabase;
use speckle_auth::protocol::{standard_transforms, AuthPolicy, ROTATION_ANGLES};
use speckle_auth::runner::{
    execute, replay, BenchConfig, BenchSource, Command, EnrollConfig, FhdConfig, IdentifyConfig, MatrixConfig,
    Outcome, RotateConfig, RunConfig, SynthConfig, TransformConfig, VerifyConfig,
};
use speckle_auth::speckle::{derive_seed, AcquisitionParams, Archetype};
use speckle_auth::{Error, SiftParams};

/// Speckle PUF authentication experiments.
#[derive(Parser)]
#[command(name = "speckle-auth", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Worker cap for the run.
    #[arg(long, env = "SPECKLE_AUTH_THREADS")]
    threads: Option<usize>,
    /// Output directory (default: <db>/runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Minimum match count (default: per-archetype value from the database manifest).
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    md: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchetypeArg {
    Ps,
    Pdlc,
    Tio2,
}

impl From<ArchetypeArg> for Archetype {
    fn from(a: ArchetypeArg) -> Self {
        match a {
            ArchetypeArg::Ps => Archetype::Ps,
            ArchetypeArg::Pdlc => Archetype::Pdlc,
            ArchetypeArg::Tio2 => Archetype::Tio2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    /// Calibrated re-acquisition noise for the archetype.
    Default,
    /// Noise-free acquisition.
    None,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a challenge/response database.
    Synth {
        #[arg(long, value_enum, default_value = "ps")]
        archetype: ArchetypeArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "default")]
        noise: NoiseArg,
        /// Also write a re-acquisition of the same challenges.
        #[arg(long, value_enum)]
        t1_noise: Option<NoiseArg>,
        /// Directory for the re-acquisition (default: <out>-t1).
        #[arg(long)]
        t1_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "SPECKLE_AUTH_THREADS")]
        threads: Option<usize>,
    },
    /// Extract and store features for every record.
    Enroll {
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Accept or reject a probe image against a claimed challenge id.
    Verify {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        claim: u32,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Search a probe image against the whole database.
    Identify {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        /// Search only the first N entries.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// N x N match-count matrices for one or more ratio thresholds.
    Matrix {
        #[arg(long)]
        db: PathBuf,
        /// Probe database for the columns (default: same as --db).
        #[arg(long)]
        probe_db: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.7")]
        md: Vec<f64>,
        #[arg(long)]
        cross_check: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Gabor-hash fractional Hamming distance statistics between two acquisitions.
    Fhd {
        #[arg(long)]
        t0: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        wavelength: Option<f64>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rotated responses matched against the originals.
    Rotate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        angles: Option<Vec<f64>>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Scaled and cropped versions of one response searched against the database.
    Transform {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        target: u32,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Time a one-vs-database search at several worker counts.
    Bench {
        /// Enrolled database directory, or a record count to synthesize.
        #[arg(long)]
        db: String,
        #[arg(long, value_enum, default_value = "ps")]
        archetype: ArchetypeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        probe: u32,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        threads: Vec<usize>,
        #[arg(long, default_value_t = 0.7)]
        md: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded run.json.
    Replay {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn out_dir(common: &Common, db: &Path, command: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| db.join("runs").join(command))
}

fn policy(args: &PolicyArgs, db: &Path) -> Result<AuthPolicy, Error> {
    let threshold = match args.threshold {
        Some(t) => t,
        None => {
            let (d, _) = CrpDatabase::load(db)?;
            AuthPolicy::for_archetype(d.manifest.archetype).threshold
        }
    };
    Ok(AuthPolicy { threshold, md: args.md })
}

fn acquisition(noise: NoiseArg, archetype: Archetype, seed: u64) -> AcquisitionParams {
    match noise {
        NoiseArg::Default => AcquisitionParams::calibrated(archetype, seed),
        NoiseArg::None => AcquisitionParams {
            seed,
            ..AcquisitionParams::ideal()
        },
    }
}

fn build_config(cmd: Cmd) -> Result<Option<RunConfig>, Error> {
    let cfg = match cmd {
        Cmd::Replay { .. } => return Ok(None),
        Cmd::Synth {
            archetype,
            n,
            seed,
            noise,
            t1_noise,
            t1_out,
            out,
            threads,
        } => {
            let archetype = Archetype::from(archetype);
            let t1 = t1_noise.map(|nz| {
                let dir = t1_out.unwrap_or_else(|| {
                    let mut s = out.clone().into_os_string();
                    s.push("-t1");
                    PathBuf::from(s)
                });
                (acquisition(nz, archetype, derive_seed(seed, 3, 1)), dir)
            });
            RunConfig {
                out,
                threads: threads.unwrap_or_else(default_threads),
                command: Command::Synth(SynthConfig {
                    archetype,
                    n: n as usize,
                    puf_seed: seed,
                    dataset_seed: seed,
                    acquisition: acquisition(noise, archetype, derive_seed(seed, 3, 0)),
                    t1,
                }),
            }
        }
        Cmd::Enroll { db, common } => RunConfig {
            out: out_dir(&common, &db, "enroll"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Enroll(EnrollConfig {
                db,
                sift: SiftParams::default(),
            }),
        },
        Cmd::Verify {
            db,
            probe,
            claim,
            policy: p,
            common,
        } => RunConfig {
            out: out_dir(&common, &db, "verify"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Verify(VerifyConfig {
                policy: policy(&p, &db)?,
                db,
                probe,
                claimed_id: claim,
            }),
        },
        Cmd::Identify {
            db,
            probe,
            limit,
            policy: p,
            common,
        } => RunConfig {
            out: out_dir(&common, &db, "identify"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Identify(IdentifyConfig {
                policy: policy(&p, &db)?,
                db,
                probe,
                limit,
            }),
        },
        Cmd::Matrix {
            db,
            probe_db,
            n,
            md,
            cross_check,
            common,
        } => RunConfig {
            out: out_dir(&common, &db, "matrix"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Matrix(MatrixConfig {
                db,
                probe_db,
                n,
                mds: md,
                cross_check,
                sift: SiftParams::default(),
            }),
        },
        Cmd::Fhd {
            t0,
            t1,
            wavelength,
            bins,
            common,
        } => RunConfig {
            out: out_dir(&common, &t0, "fhd"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Fhd(FhdConfig {
                t0,
                t1,
                wavelength,
                bins,
            }),
        },
        Cmd::Rotate {
            db,
            n,
            angles,
            policy: p,
            common,
        } => RunConfig {
            out: out_dir(&common, &db, "rotate"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Rotate(RotateConfig {
                policy: policy(&p, &db)?,
                db,
                n,
                angles: angles.unwrap_or_else(|| ROTATION_ANGLES.to_vec()),
            }),
        },
        Cmd::Transform {
            db,
            target,
            limit,
            policy: p,
            common,
        } => RunConfig {
            out: out_dir(&common, &db, "transform"),
            threads: common.threads.unwrap_or_else(default_threads),
            command: Command::Transform(TransformConfig {
                policy: policy(&p, &db)?,
                db,
                target,
                limit,
                transforms: standard_transforms(),
            }),
        },
        Cmd::Bench {
            db,
            archetype,
            seed,
            probe,
            threads,
            md,
            out,
        } => {
            let source = match db.parse::<usize>() {
                Ok(n) => BenchSource::Synth {
                    archetype: archetype.into(),
                    n,
                    seed,
                },
                Err(_) => BenchSource::Path(PathBuf::from(&db)),
            };
            let out = out.unwrap_or_else(|| match &source {
                BenchSource::Path(p) => p.join("runs").join("bench"),
                BenchSource::Synth { .. } => PathBuf::from("bench"),
            });
            RunConfig {
                out,
                threads: threads.iter().copied().max().unwrap_or(1).max(1),
                command: Command::Bench(BenchConfig {
                    source,
                    probe_id: probe,
                    thread_counts: threads,
                    md,
                    sift: SiftParams::default(),
                }),
            }
        }
    };
    Ok(Some(cfg))
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    if let Cmd::Replay { config, out } = cli.command {
        return replay(config, out);
    }
    let cfg = build_config(cli.command)?.expect("replay handled above");
    execute(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.decision {
                Some(false) => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

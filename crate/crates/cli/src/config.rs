//! Scenario configs: JSON parsing, named examples and conversion into
//! library objects.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use safegame::bss::SourceDist;
use safegame::dynamics::{DynamicsConfig, StepSchedule, UpdateOrder};
use safegame::linalg::matrix_from_rows;
use safegame::safety::{FactorizationSpec, SamplerConfig};
use safegame::sampling::{sample_point, stream};
use safegame::{gallery, DenseTensor, FeasibleSet, Game, LossSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EXAMPLES: [&str; 9] = ["ex3", "ex4", "ex5", "ex6", "saddle", "fa", "bss-open", "bss-block", "ica"];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bss: Option<BssConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<FeasibleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    /// Certificate and safety tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A matrix given inline as rows or as a path to a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Rows(Vec<Vec<f64>>),
    Csv(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameConfig {
    Quadratic { types: TypesConfig, losses: Vec<QuadraticLoss> },
    /// `ℓ_n = w[left]ᵀ A w[right]` over coordinate blocks.
    Bilinear { sizes: Vec<usize>, losses: Vec<BilinearLoss> },
    /// One tensor per player, contracted with every player's block.
    Multilinear { sizes: Vec<usize>, losses: Vec<TensorConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TypesConfig {
    Open { dim: usize },
    Block { sizes: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticLoss {
    pub a: MatrixSource,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilinearLoss {
    pub a: MatrixSource,
    pub left: [usize; 2],
    pub right: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorConfig {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeasibleConfig {
    Unconstrained,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    BlockSimplex { sizes: Vec<usize> },
    BlockBall { sizes: Vec<usize>, radius: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant { eta: f64 },
    Decaying { c: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderConfig {
    Simultaneous,
    RoundRobin,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<FeasibleConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BssMode {
    /// Mixing recovery from a single batch.
    Ica,
    /// Open PCA game over one batch per mixing.
    Open,
    /// Block PCA game over one batch per row block.
    Block,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BssConfig {
    pub mode: BssMode,
    /// One distribution name per latent, or a single one for all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MatrixSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixings: Option<Vec<MatrixSource>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub noise: f64,
    /// Recover degenerate kurtosis spectra through a random contraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<bool>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub example: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub rounds: Option<usize>,
    pub tol: Option<f64>,
}

/// A resolved scenario: the config after overrides, its hash, and the
/// directory relative paths are resolved against.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub hash: String,
    base_dir: PathBuf,
}

/// Parses a config document. Errors carry `path:line:column`.
pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig> {
    serde_json::from_str(text).map_err(|e| anyhow!("{origin}:{}:{}: {e}", e.line(), e.column()))
}

impl Scenario {
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let (mut config, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse_config(&text, &p.display().to_string())?, base)
            }
            None => (ScenarioConfig::default(), PathBuf::from(".")),
        };
        if let Some(e) = overrides.example {
            if config.game.is_some() || config.bss.is_some() {
                bail!("--example conflicts with the game or bss section of the config");
            }
            config.example = Some(e);
        }
        if overrides.seed.is_some() {
            config.seed = overrides.seed;
        }
        if overrides.out.is_some() {
            config.out = overrides.out;
        }
        if overrides.tol.is_some() {
            config.tol = overrides.tol;
        }
        if let Some(n) = overrides.samples {
            config.sampler.get_or_insert_with(Default::default).count = Some(n);
        }
        if let Some(n) = overrides.rounds {
            config.dynamics.get_or_insert_with(Default::default).max_rounds = Some(n);
        }
        let scenario = Self::from_config(config, base_dir)?;
        Ok(scenario)
    }

    pub fn from_config(config: ScenarioConfig, base_dir: PathBuf) -> Result<Self> {
        let sources = [config.example.is_some(), config.game.is_some(), config.bss.is_some()];
        match sources.iter().filter(|&&x| x).count() {
            0 => bail!("config needs one of `example`, `game` or `bss`"),
            1 => {}
            _ => bail!("config must give only one of `example`, `game` or `bss`"),
        }
        if let Some(e) = &config.example {
            if !EXAMPLES.contains(&e.as_str()) {
                bail!("unknown example {e:?}; expected one of {}", EXAMPLES.join(", "));
            }
        }
        if let Some(t) = config.tol {
            if !(t > 0.0 && t.is_finite()) {
                bail!("tol must be positive, got {t}");
            }
        }
        let canonical = serde_json::to_string(&config)?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Ok(Self { config, hash, base_dir })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn tol(&self) -> f64 {
        self.config.tol.unwrap_or(1e-9)
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.config.out.as_deref()
    }

    pub fn example(&self) -> Option<&str> {
        self.config.example.as_deref()
    }

    pub fn label(&self) -> String {
        match (&self.config.example, &self.config.game, &self.config.bss) {
            (Some(e), _, _) => e.clone(),
            (_, Some(g), _) => format!("custom {}", g.family()),
            (_, _, Some(b)) => format!("custom bss {:?}", b.mode).to_lowercase(),
            _ => unreachable!("validated on load"),
        }
    }

    pub fn matrix(&self, src: &MatrixSource) -> Result<DMatrix<f64>> {
        load_matrix(src, &self.base_dir)
    }

    /// The BSS section for `bss-*`/`ica` examples or a custom `bss` config.
    pub fn bss(&self) -> Option<BssConfig> {
        if let Some(b) = &self.config.bss {
            return Some(b.clone());
        }
        let base = |mode| BssConfig {
            mode,
            sources: vec![],
            samples: None,
            mixing: None,
            mixings: None,
            sizes: None,
            noise: 0.0,
            fallback: None,
        };
        match self.example()? {
            "bss-open" => Some(base(BssMode::Open)),
            "bss-block" => Some(BssConfig {
                mixing: Some(MatrixSource::Rows(bss_block_mixing())),
                sizes: Some(vec![2, 2]),
                ..base(BssMode::Block)
            }),
            "ica" => Some(BssConfig {
                sources: vec!["laplace".into(), "uniform".into(), "two-point".into()],
                ..base(BssMode::Ica)
            }),
            _ => None,
        }
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let section = self.config.sampler.clone().unwrap_or_default();
        let mut cfg = SamplerConfig::new(section.count.unwrap_or(1000), self.seed()).with_tol(self.tol());
        if let Some(r) = &section.region {
            cfg = cfg.with_region(feasible(r)?);
        }
        Ok(cfg)
    }

    pub fn dynamics(&self, game: &Game) -> Result<DynamicsConfig> {
        let d = self.config.dynamics.clone().unwrap_or_default();
        let schedule = match d.schedule {
            Some(ScheduleConfig::Constant { eta }) => StepSchedule::Constant(eta),
            Some(ScheduleConfig::Decaying { c }) => StepSchedule::Decaying(c),
            None => StepSchedule::default_for(game),
        };
        let mut cfg = DynamicsConfig::new(schedule, d.max_rounds.unwrap_or(10_000));
        if let Some(t) = d.tol {
            cfg = cfg.with_tol(t);
        }
        if let Some(w) = d.weights {
            cfg = cfg.with_weights(w);
        }
        if let Some(o) = d.order {
            cfg = cfg.with_order(match o {
                OrderConfig::Simultaneous => UpdateOrder::Simultaneous,
                OrderConfig::RoundRobin => UpdateOrder::RoundRobin,
            });
        }
        Ok(cfg)
    }

    /// Explicit start, the example's fixture, or a seeded feasible point.
    pub fn start(&self, game: &Game) -> Result<DVector<f64>> {
        if let Some(s) = self.config.dynamics.as_ref().and_then(|d| d.start.clone()) {
            if s.len() != game.dim() {
                bail!("start has {} coordinates, game has {}", s.len(), game.dim());
            }
            return Ok(DVector::from_vec(s));
        }
        let fixture: Option<&[f64]> = match self.example() {
            Some("ex3") => Some(&[0.5, 0.5]),
            Some("ex4") => Some(&[1.0, 0.0]),
            Some("ex5") => Some(&[0.5, 0.5, 0.5, 0.5]),
            Some("ex6") => Some(&[1.0, 1.0]),
            Some("saddle") => Some(&[1.0, 2.0]),
            _ => None,
        };
        Ok(match fixture {
            Some(f) => DVector::from_column_slice(f),
            None => sample_point(game.feasible(), game.dim(), &mut stream(self.seed(), u64::MAX)),
        })
    }

    /// The game for gallery examples and custom game configs, with the
    /// config's feasible set applied on top. `None` for non-game scenarios.
    pub fn game(&self) -> Result<Option<Game>> {
        let game = match (self.example(), &self.config.game) {
            (Some("ex3"), _) => gallery::ex3(),
            (Some("ex4"), _) => gallery::ex4(),
            (Some("ex5"), _) => gallery::ex5(),
            (Some("ex6"), _) => gallery::ex6(),
            (Some("saddle"), _) => gallery::saddle(),
            (_, Some(g)) => self.build_game(g)?,
            _ => return Ok(None),
        };
        Ok(Some(match &self.config.feasible {
            Some(f) => game.with_feasible(feasible(f)?)?,
            None => game,
        }))
    }

    /// Strong-typing factorization known for the example, if any.
    pub fn factorization(&self) -> Option<FactorizationSpec> {
        match self.example() {
            Some("ex3") => Some(gallery::ex3_factorization()),
            Some("ex4") => Some(gallery::ex4_factorization()),
            Some("ex5") => Some(gallery::ex5_factorization()),
            _ => None,
        }
    }

    fn build_game(&self, g: &GameConfig) -> Result<Game> {
        let game = match g {
            GameConfig::Quadratic { types, losses } => {
                let losses = losses
                    .iter()
                    .enumerate()
                    .map(|(n, l)| {
                        let a = self.matrix(&l.a).with_context(|| format!("loss {n}"))?;
                        LossSpec::quadratic(a, DVector::from_vec(l.b.clone())).with_context(|| format!("loss {n}"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match types {
                    TypesConfig::Open { dim } => Game::open(*dim, losses, FeasibleSet::Unconstrained)?,
                    TypesConfig::Block { sizes } => Game::block(sizes, losses, FeasibleSet::Unconstrained)?,
                }
            }
            GameConfig::Bilinear { sizes, losses } => {
                let losses = losses
                    .iter()
                    .map(|l| {
                        Ok(LossSpec::Bilinear {
                            a: self.matrix(&l.a)?,
                            left: l.left[0]..l.left[1],
                            right: l.right[0]..l.right[1],
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Game::block(sizes, losses, FeasibleSet::Unconstrained)?
            }
            GameConfig::Multilinear { sizes, losses } => {
                let losses = losses
                    .iter()
                    .map(|t| Ok(LossSpec::Multilinear { tensor: DenseTensor::new(t.dims.clone(), t.data.clone())? }))
                    .collect::<Result<Vec<_>>>()?;
                Game::block(sizes, losses, FeasibleSet::Unconstrained)?
            }
        };
        Ok(game)
    }
}

impl GameConfig {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Quadratic { .. } => "quadratic",
            Self::Bilinear { .. } => "bilinear",
            Self::Multilinear { .. } => "multilinear",
        }
    }
}

impl BssConfig {
    pub fn dists(&self) -> Result<Vec<SourceDist>> {
        if self.sources.is_empty() {
            return Ok(vec![SourceDist::Laplace]);
        }
        self.sources.iter().map(|s| Ok(s.parse::<SourceDist>()?)).collect()
    }
}

/// Rows of the `bss-block` fixture: blocks `P_1·diag(1, 0.6)` and
/// `P_2·[[0, 1.3], [0.8, 0]]` with `P_1`, `P_2` rotations by 25° and −40°.
fn bss_block_mixing() -> Vec<Vec<f64>> {
    let rot = |deg: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    };
    let top = rot(25.0) * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.6]);
    let bottom = rot(-40.0) * DMatrix::from_row_slice(2, 2, &[0.0, 1.3, 0.8, 0.0]);
    top.row_iter()
        .chain(bottom.row_iter())
        .map(|r| r.iter().copied().collect())
        .collect()
}

pub fn feasible(f: &FeasibleConfig) -> Result<FeasibleSet> {
    Ok(match f {
        FeasibleConfig::Unconstrained => FeasibleSet::Unconstrained,
        FeasibleConfig::Ball { center, radius } => FeasibleSet::Ball {
            center: DVector::from_vec(center.clone()),
            radius: *radius,
        },
        FeasibleConfig::Box { lo, hi } => FeasibleSet::Box {
            lo: DVector::from_vec(lo.clone()),
            hi: DVector::from_vec(hi.clone()),
        },
        FeasibleConfig::BlockSimplex { sizes } => FeasibleSet::BlockSimplex { sizes: sizes.clone() },
        FeasibleConfig::BlockBall { sizes, radius } => FeasibleSet::BlockBall {
            sizes: sizes.clone(),
            radius: *radius,
        },
    })
}

/// Inline rows, or a CSV path resolved against `base_dir`.
pub fn load_matrix(src: &MatrixSource, base_dir: &Path) -> Result<DMatrix<f64>> {
    match src {
        MatrixSource::Rows(rows) => Ok(matrix_from_rows(rows)?),
        MatrixSource::Csv(p) => {
            let path = base_dir.join(p);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            read_matrix_csv(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

/// Comma-separated rows, blank lines ignored.
pub fn read_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| anyhow!("line {}: {e}", i + 1)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(matrix_from_rows(&rows)?)
}

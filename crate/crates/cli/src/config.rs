//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use multiadmm::solver::{AssertLevel, RhoPolicy, SolveOptions};
use serde::{Deserialize, Serialize};

/// Which zoo formulation to build and the parameters of its data.
/// Fields left unset fall back to per-problem defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub zoo: Option<String>,
    /// Data matrix (`.csv` or `.bin`) used instead of synthetic data.
    pub data: Option<PathBuf>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    /// Factorization rank, dictionary size or RPCA rank.
    pub rank: Option<usize>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    /// Nonzeros per code column (dl3) or Bernoulli rate (sbd).
    pub sparsity: Option<f64>,
    pub kernel: Option<usize>,
    /// Noise standard deviation relative to `‖Y‖/n` (sbd).
    pub noise: Option<f64>,
    pub bias: Option<f64>,
    pub edge_prob: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AssertArg {
    #[default]
    Off,
    Check,
    Strict,
}

impl From<AssertArg> for AssertLevel {
    fn from(a: AssertArg) -> Self {
        match a {
            AssertArg::Off => AssertLevel::Off,
            AssertArg::Check => AssertLevel::Check,
            AssertArg::Strict => AssertLevel::Strict,
        }
    }
}

/// Planted NMF and DL instances often need several thousand iterations
/// before every block step falls below the tolerance.
pub const DEFAULT_MAX_ITER: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// Fixed penalty; `None` selects it automatically.
    pub rho: Option<f64>,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_step: f64,
    pub seed: u64,
    pub assert_level: AssertArg,
    pub out: PathBuf,
    /// Write `wall_ms` as 0 so outputs are byte-reproducible.
    pub no_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        RunConfig {
            problem: ProblemSpec::default(),
            rho: None,
            max_iter: DEFAULT_MAX_ITER,
            tol_primal: d.tol_primal,
            tol_step: d.tol_step,
            seed: d.seed,
            assert_level: AssertArg::Off,
            out: PathBuf::from("multiadmm-out"),
            no_timing: false,
        }
    }
}

/// Flags shared by `solve`, `check` and `bench`. Each one overrides the
/// matching config field.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration; flags take precedence over its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub zoo: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long)]
    pub lower: Option<f64>,
    #[arg(long)]
    pub upper: Option<f64>,
    /// Penalty parameter, or `auto`.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<String>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol_primal: Option<f64>,
    #[arg(long)]
    pub tol_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub assert_level: Option<AssertArg>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_timing: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Config file (if any) with every given flag applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let p = &mut c.problem;
        macro_rules! set {
            ($($dst:expr => $src:expr),* $(,)?) => {$(
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            )*};
        }
        set!(
            p.zoo => o.zoo, p.data => o.data, p.rows => o.rows, p.cols => o.cols, p.rank => o.rank,
            p.mu => o.mu, p.lambda => o.lambda, p.sparsity => o.sparsity, p.kernel => o.kernel,
            p.noise => o.noise, p.bias => o.bias, p.edge_prob => o.edge_prob, p.lower => o.lower, p.upper => o.upper,
        );
        if let Some(r) = &o.rho {
            c.rho = match r.as_str() {
                "auto" => None,
                s => Some(s.parse().with_context(|| format!("flag --rho: expected a number or `auto`, got `{s}`"))?),
            };
        }
        if let Some(v) = o.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = o.tol_primal {
            c.tol_primal = v;
        }
        if let Some(v) = o.tol_step {
            c.tol_step = v;
        }
        if let Some(v) = o.seed {
            c.seed = v;
        }
        if let Some(v) = o.assert_level {
            c.assert_level = v;
        }
        if let Some(v) = &o.out {
            c.out = v.clone();
        }
        c.no_timing |= o.no_timing;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rho {
            if !(r > 0.0 && r.is_finite()) {
                bail!("config field `rho`: must be positive and finite, got {r}");
            }
        }
        for (name, v) in [("tol_primal", self.tol_primal), ("tol_step", self.tol_step)] {
            if !(v >= 0.0) {
                bail!("config field `{name}`: must be nonnegative, got {v}");
            }
        }
        Ok(())
    }

    pub fn zoo(&self) -> Result<&str> {
        self.problem.zoo.as_deref().context("config field `problem.zoo` is required (pass --zoo or set it in --config)")
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            rho: self.rho.map_or(RhoPolicy::Auto, RhoPolicy::Fixed),
            max_iter: self.max_iter,
            tol_primal: self.tol_primal,
            tol_step: self.tol_step,
            seed: self.seed,
            assert_level: self.assert_level.into(),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flags_override_file_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"problem": {"zoo": "nmf3", "rows": 10}, "max_iter": 7, "seed": 3}"#).unwrap();
        let o = Overrides { config: Some(path), rows: Some(12), seed: Some(5), rho: Some("2.5".into()), ..Default::default() };
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.problem.rows, Some(12));
        assert_eq!(c.problem.zoo.as_deref(), Some("nmf3"));
        assert_eq!((c.max_iter, c.seed, c.rho), (7, 5, Some(2.5)));
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_json(r#"{"problem": {"rows": "many"}}"#).unwrap_err().to_string();
        assert!(e.contains("problem.rows"), "{e}");
        let e = RunConfig::from_json(r#"{"max_iters": 3}"#).unwrap_err().to_string();
        assert!(e.contains("max_iters"), "{e}");
        let e = RunConfig::from_json(r#"{"rho": -1}"#).unwrap().validate().unwrap_err().to_string();
        assert!(e.contains("rho"), "{e}");
    }

    #[test]
    fn missing_zoo_is_reported() {
        let c = RunConfig::from_json("{}").unwrap();
        assert!(c.zoo().unwrap_err().to_string().contains("problem.zoo"));
    }

    fn opt<T: std::fmt::Debug + Clone + 'static>(s: impl Strategy<Value = T> + 'static) -> BoxedStrategy<Option<T>> {
        proptest::option::of(s).boxed()
    }

    prop_compose! {
        fn configs()(
            zoo in opt("[a-z0-9]{1,8}"), rows in opt(1usize..500), rank in opt(1usize..20),
            mu in opt(1e-3..1e4f64), noise in opt(0.0..1.0f64), rho in opt(1e-6..1e6f64),
            max_iter in 0usize..100_000, tol in 0.0..1.0f64, seed in any::<u64>(), no_timing in any::<bool>(),
            level in prop_oneof![Just(AssertArg::Off), Just(AssertArg::Check), Just(AssertArg::Strict)],
        ) -> RunConfig {
            RunConfig {
                problem: ProblemSpec { zoo, rows, rank, mu, noise, ..Default::default() },
                rho, max_iter, tol_primal: tol, tol_step: tol / 3.0, seed, assert_level: level,
                out: PathBuf::from("o"), no_timing,
            }
        }
    }

    proptest! {
        #[test]
        fn json_round_trip_is_lossless(c in configs()) {
            prop_assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }
}

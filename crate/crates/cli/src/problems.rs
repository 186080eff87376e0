//! Builds zoo instances from a [`ProblemSpec`], generating synthetic data
//! unless a data file is given.

use anyhow::{bail, Context, Result};
use multiadmm::linalg::frob_norm;
use multiadmm::zoo::{self, defaults, ZooInstance};
use ndarray::Array2;

use crate::config::ProblemSpec;
use crate::matio::read_matrix;

/// Synthetic blind deconvolution data with the noise level relative to
/// `‖Y_clean‖/n`.
pub fn sbd_data(spec: &ProblemSpec, seed: u64) -> Result<zoo::SbdData> {
    let n = spec.rows.unwrap_or(defaults::SBD_SIZE);
    let k = spec.kernel.unwrap_or(defaults::SBD_KERNEL.0);
    let theta = spec.sparsity.unwrap_or(defaults::SBD_SPARSITY);
    let bias = spec.bias.unwrap_or(defaults::SBD_BIAS);
    let clean = zoo::gen_sbd_data(n, (k, k), theta, 0.0, bias, seed)?;
    match spec.noise.unwrap_or(0.0) {
        r if r == 0.0 => Ok(clean),
        r => Ok(zoo::gen_sbd_data(n, (k, k), theta, r * frob_norm(clean.y.view()) / n as f64, bias, seed)?),
    }
}

fn data(spec: &ProblemSpec) -> Result<Option<Array2<f64>>> {
    spec.data.as_deref().map(read_matrix).transpose()
}

/// Edges `(i, j, w)` with `i < j` of a symmetric weight matrix.
fn edges_of(adj: &Array2<f64>) -> Result<Vec<zoo::Edge>> {
    let n = adj.nrows();
    if adj.ncols() != n {
        bail!("mc1 data must be a square weight matrix, got {:?}", adj.dim());
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if adj[[i, j]] != adj[[j, i]] {
                bail!("mc1 weight matrix is not symmetric at ({i}, {j})");
            }
            if adj[[i, j]] != 0.0 {
                edges.push((i, j, adj[[i, j]]));
            }
        }
    }
    Ok(edges)
}

pub fn build(spec: &ProblemSpec, seed: u64) -> Result<ZooInstance> {
    let name = spec.zoo.as_deref().context("config field `problem.zoo` is required")?;
    let given = data(spec)?;
    let mu = spec.mu.unwrap_or(1.0);
    let inst = match name {
        "nmf3" => {
            let rank = spec.rank.unwrap_or(5);
            let b = match given {
                Some(b) => b,
                None => zoo::planted_nmf(spec.rows.unwrap_or(50), spec.cols.unwrap_or(50), rank, seed).b,
            };
            zoo::nmf3(&b, rank, mu)?
        }
        "dl3" => {
            let d = spec.rank.unwrap_or(10);
            let b = match given {
                Some(b) => b,
                None => {
                    let s = spec.sparsity.unwrap_or(3.0);
                    if !(s >= 0.0 && s.fract() == 0.0) {
                        bail!("config field `problem.sparsity`: dl3 needs a whole number of nonzeros per column, got {s}");
                    }
                    zoo::planted_dictionary(spec.rows.unwrap_or(50), spec.cols.unwrap_or(50), d, s as usize, seed).b
                }
            };
            zoo::dl3_weighted(&b, d, mu, mu, mu, spec.lambda.unwrap_or(1.0))?
        }
        "rp2" => {
            let sigma = match given {
                Some(s) => s,
                None => zoo::random_spd(spec.rows.unwrap_or(5), seed),
            };
            zoo::rp2(&sigma, spec.lower.unwrap_or(0.0), spec.upper.unwrap_or(1.0), mu)?
        }
        "mc1" => match given {
            Some(adj) => zoo::mc1(adj.nrows(), &edges_of(&adj)?, mu, mu)?,
            None => {
                let n = spec.rows.unwrap_or(8);
                zoo::mc1(n, &zoo::random_graph(n, spec.edge_prob.unwrap_or(0.5), seed), mu, mu)?
            }
        },
        "rpca2" | "rpca2-raw" => {
            let k = spec.rank.unwrap_or(2);
            let b = match given {
                Some(b) => b,
                None => zoo::planted_rpca(spec.rows.unwrap_or(50), spec.cols.unwrap_or(50), k, 0.05, 5.0, seed).b,
            };
            let lambda = spec.lambda.unwrap_or(defaults::RPCA_LAMBDA);
            if name == "rpca2" {
                zoo::rpca2_slack(&b, k, lambda, spec.mu.unwrap_or(zoo::rpca::DEFAULT_SLACK_MU))?
            } else {
                zoo::rpca2_raw(&b, k, lambda)?
            }
        }
        "sbd1" | "sbd0" => {
            let k = spec.kernel.unwrap_or(defaults::SBD_KERNEL.0);
            let y = match given {
                Some(y) => y,
                None => sbd_data(spec, seed)?.y,
            };
            if name == "sbd1" {
                zoo::sbd1(&y, (k, k), spec.mu.unwrap_or(defaults::SBD_MU))?
            } else {
                zoo::sbd0(&y, (k, k))?
            }
        }
        other => bail!("config field `problem.zoo`: unknown problem `{other}` (expected one of {})", defaults::NAMES.join(", ")),
    };
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(zoo: &str) -> ProblemSpec {
        ProblemSpec { zoo: Some(zoo.into()), rows: Some(8), cols: Some(8), rank: Some(2), kernel: Some(3), ..Default::default() }
    }

    #[test]
    fn every_name_builds() {
        for name in defaults::NAMES {
            build(&spec(name), 0).unwrap();
        }
        assert!(build(&spec("nope"), 0).unwrap_err().to_string().contains("problem.zoo"));
    }

    #[test]
    fn noise_is_relative_to_clean_signal() {
        let mut s = spec("sbd1");
        let clean = sbd_data(&s, 4).unwrap();
        s.noise = Some(0.05);
        let noisy = sbd_data(&s, 4).unwrap();
        let sigma = 0.05 * frob_norm(clean.y.view()) / 8.0;
        let resid = frob_norm((&noisy.y - &clean.y).view()) / 8.0;
        assert!((resid / sigma - 1.0).abs() < 0.3, "{resid} vs {sigma}");
    }

    #[test]
    fn adjacency_becomes_edges() {
        let adj = ndarray::array![[0.0, 2.0, 0.0], [2.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert_eq!(edges_of(&adj).unwrap(), vec![(0, 1, 2.0), (1, 2, 1.0)]);
        assert!(edges_of(&ndarray::array![[0.0, 1.0], [0.0, 0.0]]).is_err());
    }
}

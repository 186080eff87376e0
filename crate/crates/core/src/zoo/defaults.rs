//! Desk-scale default instances, one per zoo formulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub const NAMES: [&str; 8] = ["nmf3", "dl3", "rp2", "mc1", "rpca2", "rpca2-raw", "sbd1", "sbd0"];

/// Slack weight for SBD. Smaller weights leave a visible misfit after a few
/// hundred iterations because the slack absorbs part of the signal.
pub const SBD_MU: f64 = 1000.0;
pub const SBD_SIZE: usize = 64;
pub const SBD_KERNEL: (usize, usize) = (16, 16);
pub const SBD_SPARSITY: f64 = 0.05;
pub const SBD_BIAS: f64 = 0.5;

pub const RPCA_LAMBDA: f64 = 0.1;

/// Erdős–Rényi graph `G(n, p)` with unit weights; falls back to a single
/// edge if the draw is empty.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Vec<Edge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    if edges.is_empty() && n > 1 {
        edges.push((0, 1, 1.0));
    }
    edges
}

/// Default instance for `name` with data drawn from `seed`.
pub fn default_instance(name: &str, seed: u64) -> Result<ZooInstance> {
    match name {
        "nmf3" => {
            let pl = planted_nmf(50, 50, 5, seed);
            nmf3(&pl.b, 5, 1.0)?.with_ground_truth(&[
                ("X", pl.x.clone()),
                ("Xp", pl.x),
                ("Y", pl.y.clone()),
                ("Yp", pl.y),
                ("Z", pl.b),
            ])
        }
        "dl3" => {
            let pl = planted_dictionary(50, 50, 10, 3, seed);
            dl3(&pl.b, 10, 1.0, 1.0, 1.0)
        }
        "rp2" => rp2(&random_spd(5, seed), 0.0, 1.0, 1.0),
        "mc1" => mc1(8, &random_graph(8, 0.5, seed), 1.0, 1.0),
        "rpca2" | "rpca2-raw" => {
            let d = planted_rpca(50, 50, 2, 0.05, 5.0, seed);
            if name == "rpca2" {
                rpca2_slack(&d.b, 2, RPCA_LAMBDA, rpca::DEFAULT_SLACK_MU)
            } else {
                rpca2_raw(&d.b, 2, RPCA_LAMBDA)
            }
        }
        "sbd1" | "sbd0" => {
            let d = gen_sbd_data(SBD_SIZE, SBD_KERNEL, SBD_SPARSITY, 0.0, SBD_BIAS, seed)?;
            if name == "sbd1" {
                sbd1(&d.y, SBD_KERNEL, SBD_MU)
            } else {
                sbd0(&d.y, SBD_KERNEL)
            }
        }
        other => Err(Error::InvalidArgument(format!("unknown zoo problem `{other}`; expected one of {}", NAMES.join(", ")))),
    }
}

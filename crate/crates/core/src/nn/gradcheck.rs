//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A scalar function of several named parameter blocks with an analytic
/// gradient.
pub trait Objective {
    /// Evaluates the loss; when `with_grad` is set, also refreshes the
    /// gradients returned by [`grad`](Self::grad).
    fn loss(&mut self, with_grad: bool) -> f64;
    /// Names and lengths of the parameter blocks.
    fn blocks(&self) -> Vec<(String, usize)>;
    fn get(&self, block: usize, i: usize) -> f64;
    fn set(&mut self, block: usize, i: usize, v: f64);
    fn grad(&self, block: usize, i: usize) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Coordinates per block; larger blocks are subsampled.
    pub max_coords: usize,
    /// Denominator floor for relative errors of near-zero gradients.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            max_coords: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates where two step sizes disagree with each other (a ReLU kink
    /// or pooling tie within the step), excluded from the error.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance && self.blocks.iter().all(|b| b.checked > 0)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn central_difference<O: Objective + ?Sized>(obj: &mut O, block: usize, i: usize, eps: f64) -> f64 {
    let x = obj.get(block, i);
    obj.set(block, i, x + eps);
    let up = obj.loss(false);
    obj.set(block, i, x - eps);
    let down = obj.loss(false);
    obj.set(block, i, x);
    (up - down) / (2.0 * eps)
}

pub fn grad_check<O: Objective + ?Sized>(obj: &mut O, opts: &GradCheckOptions) -> GradCheckReport {
    obj.loss(true);
    let blocks = obj.blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let analytic: Vec<Vec<(usize, f64)>> = blocks
        .iter()
        .enumerate()
        .map(|(b, (_, len))| {
            let mut idx: Vec<usize> = if *len <= opts.max_coords {
                (0..*len).collect()
            } else {
                sample(&mut rng, *len, opts.max_coords).into_vec()
            };
            idx.sort_unstable();
            idx.into_iter().map(|i| (i, obj.grad(b, i))).collect()
        })
        .collect();

    let mut reports = Vec::with_capacity(blocks.len());
    for (b, (name, _)) in blocks.iter().enumerate() {
        let mut report = BlockReport {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for &(i, a) in &analytic[b] {
            let fd = central_difference(obj, b, i, opts.eps);
            let mut err = rel_err(a, fd, opts.floor);
            if err >= opts.tolerance {
                let fine = central_difference(obj, b, i, opts.eps / 4.0);
                if rel_err(fd, fine, opts.floor) >= opts.tolerance {
                    report.skipped += 1;
                    continue;
                }
                err = err.min(rel_err(a, fine, opts.floor));
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
        }
        reports.push(report);
    }
    GradCheckReport { blocks: reports }
}

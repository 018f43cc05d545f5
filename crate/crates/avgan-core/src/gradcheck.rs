//! Central-difference gradient verification, used by both the test suite and
//! the `gradcheck` CLI command. Always runs at f64.

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Relative error denominator floor: |ad-fd| / max(|ad|,|fd|,FLOOR). Keeps
/// finite-difference noise on near-zero gradients from registering as error
/// while still catching real defects (which show up at gradient scale).
pub const DENOM_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<44} max_rel={:.3e} (tol {:.0e}, {} elements)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tol,
            self.checked
        )
    }
}

/// Compare autodiff gradients of `build`'s scalar output against central
/// finite differences, for each leaf listed in `wrt`.
///
/// `build` must be a pure function of the leaf tensors (capture any noise as
/// fixed tensors). At most `samples` elements per tensor are probed, chosen
/// deterministically from `rng`.
pub fn finite_diff_check<F>(
    name: &str,
    leaves: &[Tensor<f64>],
    wrt: &[usize],
    samples: usize,
    h: f64,
    tol: f64,
    rng: &mut Rng,
    build: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &[Value]) -> Result<Value>,
{
    // Autodiff pass.
    let mut g = Graph::new();
    let vals: Vec<Value> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let root = build(&mut g, &vals)?;
    if g.value(root).numel() != 1 {
        return Err(Error::GradCheck(format!("{name}: build output is not scalar")));
    }
    let map = g.backward(root)?;
    let ad_grads: Vec<Tensor<f64>> = wrt.iter().map(|&i| g.grad_or_zeros(&map, vals[i])).collect();

    let eval = |leaves_mod: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vals: Vec<Value> = leaves_mod.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let root = build(&mut g, &vals)?;
        Ok(g.value(root).item())
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (wi, &leaf_idx) in wrt.iter().enumerate() {
        let n = leaves[leaf_idx].numel();
        let idxs: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            // Distinct sample positions.
            let mut set = std::collections::BTreeSet::new();
            while set.len() < samples {
                set.insert(rng.below(n));
            }
            set.into_iter().collect()
        };
        for idx in idxs {
            let orig = leaves[leaf_idx].data()[idx];
            let ad = ad_grads[wi].data()[idx];
            // On failure, retry with a smaller step: piecewise-linear kinks
            // (LeakyReLU) within h of the base point corrupt the central
            // difference, and shrinking h moves the stencil off the kink. A
            // wrong adjoint disagrees at every step size.
            let mut rel = f64::INFINITY;
            for hs in [h, h * 0.1, h * 0.01] {
                work[leaf_idx].data_mut()[idx] = orig + hs;
                let fp = eval(&work)?;
                work[leaf_idx].data_mut()[idx] = orig - hs;
                let fm = eval(&work)?;
                work[leaf_idx].data_mut()[idx] = orig;
                let fd = (fp - fm) / (2.0 * hs);
                rel = rel.min((ad - fd).abs() / ad.abs().max(fd.abs()).max(DENOM_FLOOR));
                if rel <= tol {
                    break;
                }
            }
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(CheckReport { name: name.to_string(), max_rel_err: max_rel, tol, checked, pass: max_rel <= tol })
}

/// All registered suites; `scope` filters by module name. Used by the
/// `gradcheck` command and by the acceptance test.
pub fn run_suites(scope: Option<&str>) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    let want = |name: &str| scope.map_or(true, |s| s == name);
    if want("tensor") {
        reports.extend(suite_tensor()?);
    }
    if want("motion") {
        reports.extend(crate::motion::gradcheck_suite()?);
    }
    if want("generator") {
        reports.extend(crate::generator::gradcheck_suite()?);
    }
    if want("predictor") {
        reports.extend(crate::predictor::gradcheck_suite()?);
    }
    if want("discriminator") {
        reports.extend(crate::discriminator::gradcheck_suite()?);
    }
    if want("losses") {
        reports.extend(crate::losses::gradcheck_suite()?);
    }
    if reports.is_empty() {
        return Err(Error::GradCheck(format!(
            "unknown gradcheck scope {:?}",
            scope.unwrap_or("")
        )));
    }
    Ok(reports)
}

/// Every primitive differentiable op, each at 3 seeds, random inputs in [-1,1].
fn suite_tensor() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for seed in [11u64, 22, 33] {
        let mut rng = Rng::seed_from(seed);
        fn r(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
            Tensor::rand_uniform(shape, -1.0, 1.0, rng)
        }

        // elementwise binary + scalar ops + neg, folded to a scalar via sums
        let leaves = vec![r(&mut rng, &[3, 4]), r(&mut rng, &[3, 4])];
        out.push(finite_diff_check(
            &format!("tensor/elementwise_mix seed{seed}"),
            &leaves,
            &[0, 1],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let s = g.sub(v[0], v[1])?;
                let m = g.mul(s, v[0])?;
                let sc = g.mul_scalar(m, 1.7)?;
                let a = g.add_scalar(sc, 0.3)?;
                let d = g.add_scalar(v[1], 3.0)?; // keep denominator away from 0
                let q = g.div(a, d)?;
                let n = g.neg(q)?;
                let t = g.add(n, v[0])?;
                g.sum_all(t)
            },
        )?);

        // activations
        let leaves = vec![r(&mut rng, &[5, 3])];
        out.push(finite_diff_check(
            &format!("tensor/activations seed{seed}"),
            &leaves,
            &[0],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let a = g.leaky_relu(v[0], 0.2)?;
                let b = g.sigmoid(a)?;
                let c = g.tanh(b)?;
                let d = g.add_scalar(c, 2.0)?;
                let e = g.sqrt(d)?;
                g.sum_all(e)
            },
        )?);

        // matmul / transpose / reshape / linear
        let leaves = vec![r(&mut rng, &[3, 4]), r(&mut rng, &[4, 2]), r(&mut rng, &[2])];
        out.push(finite_diff_check(
            &format!("tensor/matmul_linear seed{seed}"),
            &leaves,
            &[0, 1, 2],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                let yt = g.transpose(y)?;
                let yr = g.reshape(yt, &[6])?;
                let q = g.mul(yr, yr)?;
                g.sum_all(q)
            },
        )?);

        // conv2d w.r.t. both input and weights, with a bias
        let leaves = vec![r(&mut rng, &[2, 5, 6]), r(&mut rng, &[3, 2, 3, 3]), r(&mut rng, &[3])];
        out.push(finite_diff_check(
            &format!("tensor/conv2d seed{seed}"),
            &leaves,
            &[0, 1, 2],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let y = g.conv_bias(v[0], v[1], v[2])?;
                let q = g.mul(y, y)?;
                g.sum_all(q)
            },
        )?);

        // conv3d
        let leaves = vec![r(&mut rng, &[2, 4, 4, 4]), r(&mut rng, &[2, 2, 3, 3, 3]), r(&mut rng, &[2])];
        out.push(finite_diff_check(
            &format!("tensor/conv3d seed{seed}"),
            &leaves,
            &[0, 1, 2],
            6,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let y = g.conv_bias(v[0], v[1], v[2])?;
                let q = g.mul(y, y)?;
                g.sum_all(q)
            },
        )?);

        // pooling / resampling family
        let leaves = vec![r(&mut rng, &[2, 4, 4])];
        out.push(finite_diff_check(
            &format!("tensor/pool_resample2 seed{seed}"),
            &leaves,
            &[0],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let u = g.upsample2(v[0])?;
                let s = g.subsample2(u)?;
                let p = g.avg_pool2(s)?;
                let t = g.translate2(p, 1, -1)?;
                let q = g.mul(t, t)?;
                g.sum_all(q)
            },
        )?);

        let leaves = vec![r(&mut rng, &[2, 2, 4, 4])];
        out.push(finite_diff_check(
            &format!("tensor/pool3 seed{seed}"),
            &leaves,
            &[0],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let p = g.avg_pool3(v[0])?;
                let u = g.upsample3(p)?;
                let q = g.mul(u, v[0])?;
                g.sum_all(q)
            },
        )?);

        // reductions / broadcasts
        let leaves = vec![r(&mut rng, &[3, 2, 2]), r(&mut rng, &[3])];
        out.push(finite_diff_check(
            &format!("tensor/reduce_broadcast seed{seed}"),
            &leaves,
            &[0, 1],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let m = g.mean_keep0(v[0])?;
                let d = g.sub(m, v[1])?;
                let b = g.broadcast_channel(d, &[3, 2, 2])?;
                let x = g.mul(b, v[0])?;
                let s = g.mean_all(x)?;
                let n = g.l2_norm(v[0], 1e-12)?;
                let ns = g.reshape(n, &[])?;
                g.add(s, ns)
            },
        )?);

        // concat / slice / stack / index
        let leaves = vec![r(&mut rng, &[2, 3, 3]), r(&mut rng, &[1, 3, 3])];
        out.push(finite_diff_check(
            &format!("tensor/concat_stack seed{seed}"),
            &leaves,
            &[0, 1],
            8,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                let c = g.concat0(&[v[0], v[1]])?;
                let s = g.slice0(c, 1, 2)?;
                let st = g.stack_axis1(&[s, s])?;
                let i = g.index_axis1(st, 1)?;
                let q = g.mul(i, i)?;
                g.sum_all(q)
            },
        )?);

        // second-order: gradient-of-gradient through conv, the GP pattern
        let leaves = vec![r(&mut rng, &[1, 4, 4]), r(&mut rng, &[2, 1, 3, 3])];
        out.push(finite_diff_check(
            &format!("tensor/second_order_conv seed{seed}"),
            &leaves,
            &[0, 1],
            6,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            |g, v| {
                // D(x) = sum(sigmoid(conv(x, w))); penalty = ||dD/dx||^2
                let y = g.conv2d(v[0], v[1])?;
                let a = g.sigmoid(y)?;
                let d = g.sum_all(a)?;
                let map = g.backward_wrt(d, &[v[0]])?;
                let gx = map.get(v[0]).ok_or_else(|| {
                    Error::GradCheck("no input gradient in second_order_conv".into())
                })?;
                let q = g.mul(gx, gx)?;
                g.sum_all(q)
            },
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_suite_all_pass() {
        let reports = run_suites(Some("tensor")).unwrap();
        assert!(!reports.is_empty());
        for r in &reports {
            assert!(r.pass, "{r}");
        }
    }
}
